#ifndef STREAMID_EVALX_HPP_
#define STREAMID_EVALX_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamid/backbone.hpp"
#include "streamid/baselines.hpp"
#include "streamid/flowio.hpp"
#include "streamid/gallery.hpp"
#include "streamid/metriclearn.hpp"

namespace streamid {

// One item of the in-vs-out detection task: a confidence and whether it came
// from a correctly classified in-distribution stream (true) or an OOD stream.
struct RankedDetection {
  double score = 0.0;
  bool is_positive = false;
};

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels);

// Sort by score descending with positives ranked after negatives on ties
// (pessimistic); AP = mean over positive ranks i of positives_at_or_above(i)/i.
// Throws "AP undefined" without positives.
double average_precision(std::vector<RankedDetection> detections);

// Fraction of positives ranked strictly above the best-scoring negative;
// 1.0 when no negative exists. Ties with the top negative count as missed.
double recall_at_full_precision(std::vector<RankedDetection> detections);

struct MetricStat {
  double mean = 0.0;
  double stdev = 0.0;  // population std over runs
};

struct RunMetrics {
  double accuracy = 0.0;
  double ap = 0.0;
  double recall = 0.0;
  bool has_detections = true;
};

struct MetricsReport {
  MetricStat accuracy;
  MetricStat map;
  MetricStat recall_at_full_precision;
  int runs = 0;
  std::vector<std::uint64_t> seeds;
  bool has_detections = true;

  nlohmann::json to_json() const;
};

MetricsReport aggregate_runs(const std::vector<RunMetrics>& per_run,
                             const std::vector<std::uint64_t>& seeds);

// Closed-set classifier surface shared by the gallery model and baselines:
// per sample, a class index into class_ids() plus a confidence.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<std::pair<int, double>> classify(const Dataset& ds) = 0;
  virtual const std::vector<std::string>& class_ids() const = 0;
};

class GalleryScorer : public Scorer {
 public:
  GalleryScorer(EmbeddingModel& model, const Gallery& gallery)
      : model_(model), gallery_(gallery) {}
  std::vector<std::pair<int, double>> classify(const Dataset& ds) override;
  const std::vector<std::string>& class_ids() const override {
    return gallery_.class_ids;
  }

 private:
  EmbeddingModel& model_;
  const Gallery& gallery_;
};

class CeScorer : public Scorer {
 public:
  explicit CeScorer(CeClassifier& clf) : clf_(clf) {}
  std::vector<std::pair<int, double>> classify(const Dataset& ds) override;
  const std::vector<std::string>& class_ids() const override {
    return clf_.class_ids();
  }

 private:
  CeClassifier& clf_;
};

class KnnScorer : public Scorer {
 public:
  explicit KnnScorer(const KnnModel& model) : model_(model) {}
  std::vector<std::pair<int, double>> classify(const Dataset& ds) override;
  const std::vector<std::string>& class_ids() const override {
    return model_.class_ids;
  }

 private:
  const KnnModel& model_;
};

// Accuracy over test_ds plus the detection metrics: positives are the
// correctly classified test streams, negatives all out_ds streams,
// misclassified test streams excluded entirely. out_ds video ids must be
// disjoint from the scorer's classes.
RunMetrics robustness_eval(Scorer& scorer, const Dataset& test_ds,
                           const Dataset& out_ds);

struct LeaveOutConfig {
  double fraction = 0.1;
  std::vector<int> shots{1};
  BackboneConfig backbone;
  TrainConfig train_cfg;
  std::vector<std::uint64_t> seeds{0};
};

struct LeaveOutResult {
  std::vector<int> shots;
  // indexed [shot]; accuracies over kept-class and left-out-class test samples
  std::vector<MetricStat> trained_accuracy;
  std::vector<MetricStat> nshot_accuracy;
  std::vector<std::vector<double>> trained_per_seed;  // [shot][seed]
  std::vector<std::vector<double>> nshot_per_seed;
  std::vector<std::uint64_t> seeds;

  nlohmann::json to_json() const;
};

// Trains on a kept subset of classes, adds the left-out classes to the
// gallery with n shots each, and reports both accuracy groups per n.
LeaveOutResult leave_out_protocol(const Dataset& train_test,
                                  const LeaveOutConfig& cfg);

struct TransferConfig {
  std::vector<int> shots{0, 1, 3};
  BackboneConfig backbone;
  TrainConfig train_cfg;
  std::vector<std::uint64_t> seeds{0};
  bool train_target_baseline = true;
};

struct TransferResult {
  std::vector<int> shots;
  std::vector<MetricsReport> by_shot;
  MetricsReport target_baseline;
  bool baseline_trained = false;

  nlohmann::json to_json() const;
};

// Trains on the source train split; evaluates on the target test split with
// centroids from the source (0-shot) or rebuilt from n target train streams
// per class. target_out (optional) supplies OOD negatives for the detection
// metrics. Also trains a from-scratch target model when configured.
TransferResult transfer_protocol(const Dataset& source, const Dataset& target,
                                 const Dataset* target_out,
                                 const TransferConfig& cfg);

}  // namespace streamid

#endif  // STREAMID_EVALX_HPP_

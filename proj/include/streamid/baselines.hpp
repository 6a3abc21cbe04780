#ifndef STREAMID_BASELINES_HPP_
#define STREAMID_BASELINES_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "streamid/backbone.hpp"
#include "streamid/flowio.hpp"

namespace streamid {

// Raw-feature kNN over the flattened 2x240 standardized matrices.
struct KnnModel {
  int k = 1;
  int dim = StreamSample::kFeatureSize;
  std::vector<double> features;  // N x dim
  std::vector<int> labels;       // class indices into class_ids
  std::vector<std::string> class_ids;
  double cv_accuracy = 0.0;      // mean fold accuracy of the selected k
};

// Selects k from k_candidates by maximizing mean fold accuracy over a seeded
// cv_folds-fold split (ties -> smallest k), then stores the full training set.
KnnModel knn_fit(const Dataset& train_ds, const std::vector<int>& k_candidates,
                 int cv_folds, std::uint64_t seed);

// Majority vote among the k nearest by Euclidean distance (distance ties ->
// lower training index). A vote tie resolves to the nearest neighbor whose
// label is among the tied winners. Confidence is the winning vote fraction.
std::pair<int, double> knn_predict(const KnnModel& model, const double* x);

// Softmax cross-entropy classifier: the embedding backbone plus a K-way
// linear head (closed-set by construction).
class CeClassifier {
 public:
  CeClassifier(BackboneConfig cfg, std::vector<std::string> class_ids,
               std::uint64_t init_seed);

  const std::vector<std::string>& class_ids() const { return class_ids_; }
  int num_classes() const { return static_cast<int>(class_ids_.size()); }
  const BackboneConfig& config() const { return backbone_.config(); }
  EmbeddingModel& backbone() { return backbone_; }

  std::vector<ParamView> parameters();
  std::vector<double> logits(const std::vector<double>& x, int batch,
                             bool training, Rng* dropout_rng = nullptr);
  void backward(const std::vector<double>& dlogits);
  void zero_grad();

  // Softmax probability rows for a batch.
  std::vector<double> score_batch(const std::vector<double>& x, int batch);

  void save(const std::string& path) const;
  static CeClassifier load(const std::string& path);

 private:
  EmbeddingModel backbone_;
  std::vector<std::string> class_ids_;
  std::vector<double> head_w_, head_b_, head_dw_, head_db_;
  std::vector<double> emb_cache_;
  int last_batch_ = 0;
};

struct CeTrainConfig {
  int epochs = 50;
  int batch_size = 128;
  double lr = 3e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct CeTrainResult {
  std::vector<double> step_losses;
};

CeClassifier ce_train(const Dataset& train_ds, const BackboneConfig& backbone,
                      const CeTrainConfig& cfg,
                      CeTrainResult* result = nullptr);

std::vector<double> softmax_row(const double* logits, int n);

}  // namespace streamid

#endif  // STREAMID_BASELINES_HPP_

#ifndef STREAMID_METRICLEARN_HPP_
#define STREAMID_METRICLEARN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamid/backbone.hpp"
#include "streamid/flowio.hpp"
#include "streamid/rng.hpp"

namespace streamid {

// Indices into the embedding batch. For pool-mined triplets, negative indexes
// the OOD pool instead and from_pool is set.
struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
  bool from_pool = false;
};

enum class MiningStrategy { kSemiHard, kHardest };

struct TrainConfig {
  double margin = 0.2;
  int epochs = 250;
  int semi_hard_epochs = 10;
  double lr = 3e-4;
  double weight_decay = 0.01;
  int videos_per_batch = 5;   // P
  int samples_per_video = 25; // K
  double ol_weight = 1.0;     // lambda in the combined loss
  bool use_ol = false;
  int ol_pool_size = 0;       // 0 -> P*K
  int runs = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);

// Symmetric B x B Euclidean distance matrix (row-major).
std::vector<double> pairwise_distances(const std::vector<double>& emb,
                                       int batch, int dim);

struct LossResult {
  double value = 0.0;
  std::size_t n_triplets = 0;  // 0 means "no triplets": value is defined as 0
};

// Mean over triplets of max{0, margin + d(a,p) - d(a,n)}.
LossResult triplet_loss(const std::vector<double>& emb, int batch, int dim,
                        const std::vector<Triplet>& triplets, double margin);

// Accumulates d(loss)/d(embeddings) into grad ([rows][dim], rows >= batch;
// pool triplets address rows pool_offset + n).
void triplet_loss_backward(const std::vector<double>& emb, int rows, int dim,
                           const std::vector<Triplet>& triplets, double margin,
                           int pool_offset, std::vector<double>& grad);

// For every ordered same-label (a,p) pair, samples one negative uniformly
// from {n : d(a,p) < d(a,n) < d(a,p) + margin}; pairs without candidates are
// skipped. Candidates are collected in ascending batch index order and
// exactly one rng draw is consumed per non-empty candidate set.
std::vector<Triplet> mine_semi_hard(const std::vector<double>& dists, int batch,
                                    const std::vector<int>& labels,
                                    double margin, Rng& rng);

// For every ordered same-label (a,p) pair, picks the negative minimizing
// d(a,n) (ties -> lowest index); keeps the triplet only if its hinge loss is
// strictly positive.
std::vector<Triplet> mine_hardest(const std::vector<double>& dists, int batch,
                                  const std::vector<int>& labels,
                                  double margin);

// Pool-negative variants over explicit anchor-positive pairs: dists_pool is
// row-major [batch][pool] of anchor-to-pool distances; emitted negatives
// index the pool.
std::vector<Triplet> mine_semi_hard_pool(
    const std::vector<double>& dists_in, const std::vector<double>& dists_pool,
    int batch, int pool, const std::vector<std::pair<int, int>>& pairs,
    double margin, Rng& rng);
std::vector<Triplet> mine_hardest_pool(
    const std::vector<double>& dists_in, const std::vector<double>& dists_pool,
    int batch, int pool, const std::vector<std::pair<int, int>>& pairs,
    double margin);

// Ordered same-label (a,p) pairs, a != p, in batch-index order (the
// enumeration triplet mining iterates over).
std::vector<std::pair<int, int>> anchor_positive_pairs(
    const std::vector<int>& labels);

// Outlier-leveraging loss over the given in-batch anchor-positive pairs:
// negatives are mined from the OOD pool with the active strategy. Throws
// "OL requires tune split" when the pool is empty.
LossResult ol_loss(const std::vector<double>& emb_in, int batch,
                   const std::vector<std::pair<int, int>>& pairs,
                   const std::vector<double>& emb_pool, int pool, int dim,
                   double margin, MiningStrategy strategy, Rng& rng);

double combined_loss(double loss_triplet, double loss_ol, double lambda);

// P*K sample indices, K per each of P distinct classes. Classes with fewer
// than K samples are drawn with replacement.
std::vector<int> sample_balanced_batch(const std::vector<int>& labels,
                                       int n_classes, int videos_per_batch,
                                       int samples_per_video, Rng& rng);

struct StepLog {
  int step = 0;   // 1-based optimization step
  int epoch = 0;  // 1-based
  MiningStrategy strategy = MiningStrategy::kSemiHard;
  std::size_t n_triplets = 0;  // in-distribution triplets mined this step
  double loss_triplet = 0.0;
  double loss_ol = 0.0;
  double loss_total = 0.0;
};

struct TrainResult {
  std::vector<StepLog> log;
};

// Balanced-batch triplet training with the epoch-10 semi-hard -> hardest
// switch and AdamW. tune_ds supplies the OL pool and is required when
// cfg.use_ol. Steps with no mined triplets at all skip the optimizer update.
// Throws on non-finite loss, naming the step.
TrainResult train(EmbeddingModel& model, const Dataset& train_ds,
                  const TrainConfig& cfg, const Dataset* tune_ds = nullptr);

void write_loss_log_csv(const std::string& path,
                        const std::vector<StepLog>& log);

}  // namespace streamid

#endif  // STREAMID_METRICLEARN_HPP_

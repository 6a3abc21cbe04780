#ifndef STREAMID_BACKBONE_HPP_
#define STREAMID_BACKBONE_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamid/rng.hpp"

namespace streamid {

enum class BnOrder { kConvReluBn, kConvBnRelu };

struct BackboneConfig {
  int in_channels = 2;
  int input_len = 240;
  std::vector<int> block_channels{128, 256, 512};
  int kernel_size = 7;
  int convs_per_block = 2;
  int head_hidden = 1024;
  int embedding_dim = 1024;
  BnOrder bn_order = BnOrder::kConvReluBn;
  double dropout = 0.0;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

BackboneConfig backbone_config_from_json(const nlohmann::json& j);

// Trainable array of one layer, exposed for the optimizer and checkpoints.
struct ParamView {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
};

namespace detail {
struct Conv1d;
struct BatchNorm1d;
struct Dense;
}  // namespace detail

// The embedding network: conv blocks (two same-padded convs each, ReLU and
// batch norm per the configured order), max-pool/2 after all but the last
// block, global average pooling, then a hidden+linear head producing the
// embedding. Training-mode forward caches activations for backward();
// eval-mode forward uses batch-norm running statistics and is a
// deterministic, batch-composition-independent function of the parameters.
class EmbeddingModel {
 public:
  EmbeddingModel(BackboneConfig cfg, std::uint64_t init_seed);
  ~EmbeddingModel();
  EmbeddingModel(EmbeddingModel&&) noexcept;
  EmbeddingModel& operator=(EmbeddingModel&&) noexcept;
  EmbeddingModel(const EmbeddingModel&) = delete;
  EmbeddingModel& operator=(const EmbeddingModel&) = delete;

  const BackboneConfig& config() const { return cfg_; }
  std::size_t parameter_count() const;
  std::vector<ParamView> parameters();

  // x is row-major [batch][in_channels][input_len]; returns
  // [batch][embedding_dim]. dropout_rng is only consumed when training and
  // cfg.dropout > 0.
  std::vector<double> forward(const std::vector<double>& x, int batch,
                              bool training, Rng* dropout_rng = nullptr);
  // d_embedding is [batch][embedding_dim] from the last training forward;
  // accumulates parameter gradients.
  void backward(const std::vector<double>& d_embedding);
  void zero_grad();

  void save(const std::string& path) const;
  static EmbeddingModel load(const std::string& path);

  // Running batch-norm stats, exposed for checkpointing and tests.
  std::vector<ParamView> running_stats();

  struct Impl;

 private:
  BackboneConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

// L2 distance between f(x) and f(x circularly shifted by s buckets), eval
// mode. Used by shift_sensitivity; s may be any integer (mod input_len).
double embedding_shift_distance(EmbeddingModel& model,
                                const std::vector<double>& features, int shift);

// Distances for shifts 1..max_shift_buckets (diagnostic).
std::vector<double> shift_sensitivity(EmbeddingModel& model,
                                      const std::vector<double>& features,
                                      int max_shift_buckets);

}  // namespace streamid

#endif  // STREAMID_BACKBONE_HPP_

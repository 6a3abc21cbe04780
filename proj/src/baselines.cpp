#include "streamid/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "streamid/kernels.hpp"
#include "streamid/optim.hpp"

namespace streamid {

using nlohmann::json;

namespace {

// Neighbor order: ascending distance, ties by training index.
std::vector<int> nearest_indices(const double* x, const std::vector<double>& feats,
                                 const std::vector<int>& pool, int dim, int k) {
  std::vector<std::pair<double, int>> d;
  d.reserve(pool.size());
  for (const int i : pool) {
    const double* f = feats.data() + static_cast<std::size_t>(i) * dim;
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double diff = f[j] - x[j];
      acc += diff * diff;
    }
    d.emplace_back(acc, i);
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
  std::vector<int> out;
  out.reserve(kk);
  for (std::size_t i = 0; i < kk; ++i) out.push_back(d[i].second);
  return out;
}

std::pair<int, double> vote(const std::vector<int>& neighbor_labels_ranked,
                            int n_classes) {
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (const int l : neighbor_labels_ranked) ++counts[static_cast<std::size_t>(l)];
  const int best_count = *std::max_element(counts.begin(), counts.end());
  // scan in rank order for the first label among the tied winners
  for (const int l : neighbor_labels_ranked) {
    if (counts[static_cast<std::size_t>(l)] == best_count) {
      return {l, static_cast<double>(best_count) /
                     static_cast<double>(neighbor_labels_ranked.size())};
    }
  }
  return {0, 0.0};  // unreachable for non-empty input
}

}  // namespace

KnnModel knn_fit(const Dataset& train_ds, const std::vector<int>& k_candidates,
                 int cv_folds, std::uint64_t seed) {
  if (k_candidates.empty()) throw std::runtime_error("knn_fit: empty candidate list");
  if (cv_folds < 2) throw std::runtime_error("knn_fit: cv_folds must be >= 2");
  const auto n = static_cast<int>(train_ds.size());
  if (n < cv_folds) throw std::runtime_error("knn_fit: fewer samples than folds");
  for (const int k : k_candidates) {
    if (k < 1) throw std::runtime_error("knn_fit: k must be >= 1");
  }

  KnnModel model;
  model.class_ids = train_ds.class_ids();
  model.labels = train_ds.labels();
  model.features.resize(static_cast<std::size_t>(n) * model.dim);
  for (int i = 0; i < n; ++i) {
    const auto& s = train_ds.samples[static_cast<std::size_t>(i)];
    if (s.features.size() != static_cast<std::size_t>(model.dim)) {
      throw std::runtime_error("knn_fit: feature shape mismatch for " + s.stream_id);
    }
    std::copy(s.features.begin(), s.features.end(),
              model.features.begin() + static_cast<std::size_t>(i) * model.dim);
  }

  // seeded fold assignment: shuffled indices dealt round-robin
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        i % cv_folds;
  }

  const int k_max = *std::max_element(k_candidates.begin(), k_candidates.end());
  const int n_classes = static_cast<int>(model.class_ids.size());
  std::vector<double> fold_acc_sum(k_candidates.size(), 0.0);
  int folds_used = 0;
  for (int fold = 0; fold < cv_folds; ++fold) {
    std::vector<int> pool;
    std::vector<int> val;
    for (int i = 0; i < n; ++i) {
      (fold_of[static_cast<std::size_t>(i)] == fold ? val : pool).push_back(i);
    }
    if (pool.empty() || val.empty()) continue;
    std::vector<char> hit(val.size() * k_candidates.size(), 0);
    const long long vn = static_cast<long long>(val.size());
#pragma omp parallel for schedule(static)
    for (long long vi = 0; vi < vn; ++vi) {
      const int q = val[static_cast<std::size_t>(vi)];
      const auto nb = nearest_indices(
          model.features.data() + static_cast<std::size_t>(q) * model.dim,
          model.features, pool, model.dim, k_max);
      std::vector<int> nb_labels;
      nb_labels.reserve(nb.size());
      for (const int i : nb) nb_labels.push_back(model.labels[static_cast<std::size_t>(i)]);
      for (std::size_t ci = 0; ci < k_candidates.size(); ++ci) {
        const auto kk = std::min<std::size_t>(
            static_cast<std::size_t>(k_candidates[ci]), nb_labels.size());
        const std::vector<int> head(nb_labels.begin(),
                                    nb_labels.begin() + static_cast<std::ptrdiff_t>(kk));
        const auto [pred, conf] = vote(head, n_classes);
        (void)conf;
        if (pred == model.labels[static_cast<std::size_t>(q)]) {
          hit[static_cast<std::size_t>(vi) * k_candidates.size() + ci] = 1;
        }
      }
    }
    ++folds_used;
    for (std::size_t ci = 0; ci < k_candidates.size(); ++ci) {
      long long correct = 0;
      for (std::size_t vi = 0; vi < val.size(); ++vi) {
        correct += hit[vi * k_candidates.size() + ci];
      }
      fold_acc_sum[ci] += static_cast<double>(correct) / static_cast<double>(val.size());
    }
  }

  int best_k = 0;
  double best_acc = -1.0;
  for (std::size_t ci = 0; ci < k_candidates.size(); ++ci) {
    const double acc = fold_acc_sum[ci] / folds_used;
    const int k = k_candidates[ci];
    if (acc > best_acc || (acc == best_acc && k < best_k)) {
      best_acc = acc;
      best_k = k;
    }
  }
  model.k = best_k;
  model.cv_accuracy = best_acc;
  return model;
}

std::pair<int, double> knn_predict(const KnnModel& model, const double* x) {
  std::vector<int> pool(model.labels.size());
  std::iota(pool.begin(), pool.end(), 0);
  const auto nb = nearest_indices(x, model.features, pool, model.dim, model.k);
  std::vector<int> nb_labels;
  nb_labels.reserve(nb.size());
  for (const int i : nb) nb_labels.push_back(model.labels[static_cast<std::size_t>(i)]);
  return vote(nb_labels, static_cast<int>(model.class_ids.size()));
}

std::vector<double> softmax_row(const double* logits, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
    total += out[static_cast<std::size_t>(i)];
  }
  for (auto& v : out) v /= total;
  return out;
}

CeClassifier::CeClassifier(BackboneConfig cfg, std::vector<std::string> class_ids,
                           std::uint64_t init_seed)
    : backbone_(std::move(cfg), init_seed), class_ids_(std::move(class_ids)) {
  if (class_ids_.size() < 2) {
    throw std::runtime_error("ce classifier: need at least 2 classes");
  }
  const int in = backbone_.config().embedding_dim;
  const int out = num_classes();
  head_w_.resize(static_cast<std::size_t>(out) * in);
  // head init continues the backbone's seed stream deterministically
  Rng rng(seed_mix(init_seed, fnv1a64("ce-head")));
  const double scale = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& v : head_w_) v = scale * rng.normal();
  head_b_.assign(static_cast<std::size_t>(out), 0.0);
  head_dw_.assign(head_w_.size(), 0.0);
  head_db_.assign(head_b_.size(), 0.0);
}

std::vector<ParamView> CeClassifier::parameters() {
  auto views = backbone_.parameters();
  views.push_back({"head.weight", head_w_.data(), head_dw_.data(), head_w_.size()});
  views.push_back({"head.bias", head_b_.data(), head_db_.data(), head_b_.size()});
  return views;
}

std::vector<double> CeClassifier::logits(const std::vector<double>& x, int batch,
                                         bool training, Rng* dropout_rng) {
  emb_cache_ = backbone_.forward(x, batch, training, dropout_rng);
  last_batch_ = batch;
  const int in = backbone_.config().embedding_dim;
  const int out = num_classes();
  std::vector<double> y(static_cast<std::size_t>(batch) * out);
  kernels::dense_forward(emb_cache_.data(), head_w_.data(), head_b_.data(),
                         y.data(), batch, in, out);
  return y;
}

void CeClassifier::backward(const std::vector<double>& dlogits) {
  const int in = backbone_.config().embedding_dim;
  const int out = num_classes();
  kernels::dense_backward_params(dlogits.data(), emb_cache_.data(),
                                 head_dw_.data(), head_db_.data(), last_batch_,
                                 in, out);
  std::vector<double> demb(static_cast<std::size_t>(last_batch_) * in);
  kernels::dense_backward_data(dlogits.data(), head_w_.data(), demb.data(),
                               last_batch_, in, out);
  backbone_.backward(demb);
}

void CeClassifier::zero_grad() {
  backbone_.zero_grad();
  std::fill(head_dw_.begin(), head_dw_.end(), 0.0);
  std::fill(head_db_.begin(), head_db_.end(), 0.0);
}

std::vector<double> CeClassifier::score_batch(const std::vector<double>& x,
                                              int batch) {
  const auto lg = logits(x, batch, false);
  const int out = num_classes();
  std::vector<double> probs(lg.size());
  for (int b = 0; b < batch; ++b) {
    const auto row = softmax_row(lg.data() + static_cast<std::size_t>(b) * out, out);
    std::copy(row.begin(), row.end(),
              probs.begin() + static_cast<std::size_t>(b) * out);
  }
  return probs;
}

void CeClassifier::save(const std::string& path) const {
  json j;
  j["format"] = "streamid-ce-checkpoint/1";
  auto* self = const_cast<CeClassifier*>(this);
  json backbone_json;
  {
    // serialize via the backbone's own writer into a temp buffer-free path:
    // reuse parameter views directly instead
    json cfg;
    const auto& c = backbone_.config();
    cfg["in_channels"] = c.in_channels;
    cfg["input_len"] = c.input_len;
    cfg["block_channels"] = c.block_channels;
    cfg["kernel_size"] = c.kernel_size;
    cfg["convs_per_block"] = c.convs_per_block;
    cfg["head_hidden"] = c.head_hidden;
    cfg["embedding_dim"] = c.embedding_dim;
    cfg["bn_order"] =
        c.bn_order == BnOrder::kConvReluBn ? "conv_relu_bn" : "conv_bn_relu";
    cfg["dropout"] = c.dropout;
    backbone_json["config"] = std::move(cfg);
  }
  json params = json::object();
  for (const auto& v : self->parameters()) {
    params[v.name] = std::vector<double>(v.value, v.value + v.size);
  }
  json running = json::object();
  for (const auto& v : self->backbone_.running_stats()) {
    running[v.name] = std::vector<double>(v.value, v.value + v.size);
  }
  j["backbone"] = std::move(backbone_json);
  j["class_ids"] = class_ids_;
  j["parameters"] = std::move(params);
  j["running_stats"] = std::move(running);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << j.dump() << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

CeClassifier CeClassifier::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid checkpoint: " + e.what());
  }
  if (j.value("format", "") != "streamid-ce-checkpoint/1") {
    throw std::runtime_error(path +
                             ": incompatible artifacts: not a ce checkpoint");
  }
  const BackboneConfig cfg = backbone_config_from_json(j.at("backbone").at("config"));
  auto ids = j.at("class_ids").get<std::vector<std::string>>();
  CeClassifier clf(cfg, std::move(ids), 0);
  const auto& params = j.at("parameters");
  for (auto& v : clf.parameters()) {
    if (!params.contains(v.name)) {
      throw std::runtime_error(path + ": incompatible artifacts: missing " + v.name);
    }
    const auto arr = params.at(v.name).get<std::vector<double>>();
    if (arr.size() != v.size) {
      throw std::runtime_error(path + ": incompatible artifacts: size mismatch for " +
                               v.name);
    }
    std::copy(arr.begin(), arr.end(), v.value);
  }
  const auto& running = j.at("running_stats");
  for (auto& v : clf.backbone_.running_stats()) {
    if (!running.contains(v.name)) {
      throw std::runtime_error(path + ": incompatible artifacts: missing " + v.name);
    }
    const auto arr = running.at(v.name).get<std::vector<double>>();
    if (arr.size() != v.size) {
      throw std::runtime_error(path + ": incompatible artifacts: size mismatch for " +
                               v.name);
    }
    std::copy(arr.begin(), arr.end(), v.value);
  }
  return clf;
}

CeClassifier ce_train(const Dataset& train_ds, const BackboneConfig& backbone,
                      const CeTrainConfig& cfg, CeTrainResult* result) {
  const auto class_ids = train_ds.class_ids();
  if (class_ids.size() < 2) throw std::runtime_error("ce_train: need >= 2 classes");
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::runtime_error("ce_train: bad epochs/batch_size");
  }
  const auto labels = train_ds.labels();
  const int n = static_cast<int>(train_ds.size());
  const int feat = backbone.in_channels * backbone.input_len;
  const int n_classes = static_cast<int>(class_ids.size());

  CeClassifier clf(backbone, class_ids, seed_mix(cfg.seed, fnv1a64("ce-init")));
  AdamW opt(clf.parameters(), cfg.lr, cfg.weight_decay);
  Rng rng(cfg.seed);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      if (b < 1) break;
      ++step;
      std::vector<double> x(static_cast<std::size_t>(b) * feat);
      std::vector<int> y(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        const auto& s = train_ds.samples[static_cast<std::size_t>(idx)];
        std::copy(s.features.begin(), s.features.end(),
                  x.begin() + static_cast<std::size_t>(i) * feat);
        y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
      }
      const auto lg = clf.logits(x, b, true, &rng);
      std::vector<double> dlogits(lg.size());
      double loss = 0.0;
      for (int i = 0; i < b; ++i) {
        const auto probs =
            softmax_row(lg.data() + static_cast<std::size_t>(i) * n_classes,
                        n_classes);
        const int yi = y[static_cast<std::size_t>(i)];
        loss -= std::log(std::max(probs[static_cast<std::size_t>(yi)], 1e-300));
        for (int c = 0; c < n_classes; ++c) {
          dlogits[static_cast<std::size_t>(i) * n_classes + c] =
              (probs[static_cast<std::size_t>(c)] - (c == yi ? 1.0 : 0.0)) / b;
        }
      }
      loss /= b;
      if (!std::isfinite(loss)) {
        throw std::runtime_error("ce training diverged (non-finite loss) at step " +
                                 std::to_string(step));
      }
      clf.zero_grad();
      clf.backward(dlogits);
      opt.step();
      if (result != nullptr) result->step_losses.push_back(loss);
    }
  }
  return clf;
}

}  // namespace streamid

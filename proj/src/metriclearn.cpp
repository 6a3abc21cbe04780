#include "streamid/metriclearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "streamid/kernels.hpp"
#include "streamid/optim.hpp"

namespace streamid {

using nlohmann::json;

void TrainConfig::validate() const {
  if (videos_per_batch < 2 || samples_per_video < 2) {
    throw std::runtime_error("train config: P and K must be >= 2");
  }
  if (margin <= 0.0) throw std::runtime_error("train config: margin must be > 0");
  if (epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
  if (semi_hard_epochs < 0) {
    throw std::runtime_error("train config: semi_hard_epochs must be >= 0");
  }
  if (ol_weight < 0.0) throw std::runtime_error("train config: lambda must be >= 0");
  if (runs < 1) throw std::runtime_error("train config: runs must be >= 1");
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.margin = j.value("margin", 0.2);
  c.epochs = j.value("epochs", 250);
  c.semi_hard_epochs = j.value("semi_hard_epochs", 10);
  c.lr = j.value("lr", 3e-4);
  c.weight_decay = j.value("weight_decay", 0.01);
  c.videos_per_batch = j.value("videos_per_batch", 5);
  c.samples_per_video = j.value("samples_per_video", 25);
  c.ol_weight = j.value("ol_weight", 1.0);
  c.use_ol = j.value("use_ol", false);
  c.ol_pool_size = j.value("ol_pool_size", 0);
  c.runs = j.value("runs", 10);
  c.seed = j.value("seed", 0ULL);
  c.validate();
  return c;
}

std::vector<double> pairwise_distances(const std::vector<double>& emb,
                                       int batch, int dim) {
  if (emb.size() != static_cast<std::size_t>(batch) * dim) {
    throw std::runtime_error("pairwise_distances: shape mismatch");
  }
  std::vector<double> dists(static_cast<std::size_t>(batch) * batch);
  kernels::pairwise_distances(emb.data(), dists.data(), batch, dim);
  return dists;
}

namespace {

double row_distance(const std::vector<double>& emb, int dim, int i, int j) {
  const double* a = emb.data() + static_cast<std::size_t>(i) * dim;
  const double* b = emb.data() + static_cast<std::size_t>(j) * dim;
  double acc = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double diff = a[d] - b[d];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace

LossResult triplet_loss(const std::vector<double>& emb, int batch, int dim,
                        const std::vector<Triplet>& triplets, double margin) {
  LossResult res;
  if (triplets.empty()) return res;  // defined as 0 with n_triplets == 0
  double acc = 0.0;
  for (const auto& t : triplets) {
    if (t.from_pool) {
      throw std::runtime_error("triplet_loss: pool triplet without pool embeddings");
    }
    const double dap = row_distance(emb, dim, t.anchor, t.positive);
    const double dan = row_distance(emb, dim, t.anchor, t.negative);
    acc += std::max(0.0, margin + dap - dan);
    (void)batch;
  }
  res.value = acc / static_cast<double>(triplets.size());
  res.n_triplets = triplets.size();
  return res;
}

void triplet_loss_backward(const std::vector<double>& emb, int rows, int dim,
                           const std::vector<Triplet>& triplets, double margin,
                           int pool_offset, std::vector<double>& grad) {
  if (triplets.empty()) return;
  const double inv_n = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    const int a = t.anchor;
    const int p = t.positive;
    const int n = t.from_pool ? pool_offset + t.negative : t.negative;
    if (a >= rows || p >= rows || n >= rows) {
      throw std::runtime_error("triplet_loss_backward: index out of range");
    }
    const double dap = row_distance(emb, dim, a, p);
    const double dan = row_distance(emb, dim, a, n);
    if (margin + dap - dan <= 0.0) continue;
    const double* ea = emb.data() + static_cast<std::size_t>(a) * dim;
    const double* ep = emb.data() + static_cast<std::size_t>(p) * dim;
    const double* en = emb.data() + static_cast<std::size_t>(n) * dim;
    double* ga = grad.data() + static_cast<std::size_t>(a) * dim;
    double* gp = grad.data() + static_cast<std::size_t>(p) * dim;
    double* gn = grad.data() + static_cast<std::size_t>(n) * dim;
    const double iap = inv_n / std::max(dap, 1e-12);
    const double ian = inv_n / std::max(dan, 1e-12);
    for (int d = 0; d < dim; ++d) {
      const double vap = (ea[d] - ep[d]) * iap;
      const double van = (ea[d] - en[d]) * ian;
      ga[d] += vap - van;
      gp[d] -= vap;
      gn[d] += van;
    }
  }
}

std::vector<std::pair<int, int>> anchor_positive_pairs(
    const std::vector<int>& labels) {
  const int batch = static_cast<int>(labels.size());
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < batch; ++a) {
    for (int p = 0; p < batch; ++p) {
      if (a == p || labels[static_cast<std::size_t>(a)] !=
                        labels[static_cast<std::size_t>(p)]) {
        continue;
      }
      pairs.emplace_back(a, p);
    }
  }
  return pairs;
}

namespace {

template <typename EmitFn>
void for_each_anchor_positive(int batch, const std::vector<int>& labels,
                              EmitFn emit) {
  (void)batch;
  for (const auto& [a, p] : anchor_positive_pairs(labels)) emit(a, p);
}

}  // namespace

std::vector<Triplet> mine_semi_hard(const std::vector<double>& dists, int batch,
                                    const std::vector<int>& labels,
                                    double margin, Rng& rng) {
  std::vector<Triplet> out;
  std::vector<int> candidates;
  for_each_anchor_positive(
      batch, labels, [&](int a, int p) {
        const double dap = dists[static_cast<std::size_t>(a) * batch + p];
        candidates.clear();
        for (int n = 0; n < batch; ++n) {
          if (labels[static_cast<std::size_t>(n)] ==
              labels[static_cast<std::size_t>(a)]) {
            continue;
          }
          const double dan = dists[static_cast<std::size_t>(a) * batch + n];
          if (dap < dan && dan < dap + margin) candidates.push_back(n);
        }
        if (candidates.empty()) return;
        const int pick = candidates[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(candidates.size())))];
        out.push_back({a, p, pick, false});
      });
  return out;
}

std::vector<Triplet> mine_hardest(const std::vector<double>& dists, int batch,
                                  const std::vector<int>& labels,
                                  double margin) {
  std::vector<Triplet> out;
  for_each_anchor_positive(
      batch, labels, [&](int a, int p) {
        const double dap = dists[static_cast<std::size_t>(a) * batch + p];
        int best = -1;
        double best_d = 0.0;
        for (int n = 0; n < batch; ++n) {
          if (labels[static_cast<std::size_t>(n)] ==
              labels[static_cast<std::size_t>(a)]) {
            continue;
          }
          const double dan = dists[static_cast<std::size_t>(a) * batch + n];
          if (best < 0 || dan < best_d) {
            best = n;
            best_d = dan;
          }
        }
        if (best >= 0 && margin + dap - best_d > 0.0) {
          out.push_back({a, p, best, false});
        }
      });
  return out;
}

std::vector<Triplet> mine_semi_hard_pool(const std::vector<double>& dists_in,
                                         const std::vector<double>& dists_pool,
                                         int batch, int pool,
                                         const std::vector<std::pair<int, int>>& pairs,
                                         double margin, Rng& rng) {
  std::vector<Triplet> out;
  std::vector<int> candidates;
  for (const auto& [a, p] : pairs) {
    const double dap = dists_in[static_cast<std::size_t>(a) * batch + p];
    candidates.clear();
    for (int n = 0; n < pool; ++n) {
      const double dan = dists_pool[static_cast<std::size_t>(a) * pool + n];
      if (dap < dan && dan < dap + margin) candidates.push_back(n);
    }
    if (candidates.empty()) continue;
    const int pick = candidates[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(candidates.size())))];
    out.push_back({a, p, pick, true});
  }
  return out;
}

std::vector<Triplet> mine_hardest_pool(const std::vector<double>& dists_in,
                                       const std::vector<double>& dists_pool,
                                       int batch, int pool,
                                       const std::vector<std::pair<int, int>>& pairs,
                                       double margin) {
  std::vector<Triplet> out;
  for (const auto& [a, p] : pairs) {
    const double dap = dists_in[static_cast<std::size_t>(a) * batch + p];
    int best = -1;
    double best_d = 0.0;
    for (int n = 0; n < pool; ++n) {
      const double dan = dists_pool[static_cast<std::size_t>(a) * pool + n];
      if (best < 0 || dan < best_d) {
        best = n;
        best_d = dan;
      }
    }
    if (best >= 0 && margin + dap - best_d > 0.0) {
      out.push_back({a, p, best, true});
    }
  }
  return out;
}

namespace {

std::vector<double> anchor_pool_distances(const std::vector<double>& emb_in,
                                          int batch,
                                          const std::vector<double>& emb_pool,
                                          int pool, int dim) {
  std::vector<double> d(static_cast<std::size_t>(batch) * pool);
  for (int a = 0; a < batch; ++a) {
    const double* ea = emb_in.data() + static_cast<std::size_t>(a) * dim;
    for (int n = 0; n < pool; ++n) {
      const double* en = emb_pool.data() + static_cast<std::size_t>(n) * dim;
      double acc = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double diff = ea[k] - en[k];
        acc += diff * diff;
      }
      d[static_cast<std::size_t>(a) * pool + n] = std::sqrt(acc);
    }
  }
  return d;
}

double hinge_mean_pool(const std::vector<double>& dists_in,
                       const std::vector<double>& dists_pool, int batch,
                       int pool, const std::vector<Triplet>& triplets,
                       double margin) {
  if (triplets.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& t : triplets) {
    const double dap =
        dists_in[static_cast<std::size_t>(t.anchor) * batch + t.positive];
    const double dan =
        dists_pool[static_cast<std::size_t>(t.anchor) * pool + t.negative];
    acc += std::max(0.0, margin + dap - dan);
  }
  return acc / static_cast<double>(triplets.size());
}

}  // namespace

LossResult ol_loss(const std::vector<double>& emb_in, int batch,
                   const std::vector<std::pair<int, int>>& pairs,
                   const std::vector<double>& emb_pool, int pool, int dim,
                   double margin, MiningStrategy strategy, Rng& rng) {
  if (pool < 1 || emb_pool.empty()) {
    throw std::runtime_error("OL requires tune split");
  }
  const auto dists_in = pairwise_distances(emb_in, batch, dim);
  const auto dists_pool = anchor_pool_distances(emb_in, batch, emb_pool, pool, dim);
  std::vector<Triplet> triplets;
  if (strategy == MiningStrategy::kSemiHard) {
    triplets = mine_semi_hard_pool(dists_in, dists_pool, batch, pool, pairs,
                                   margin, rng);
  } else {
    triplets = mine_hardest_pool(dists_in, dists_pool, batch, pool, pairs,
                                 margin);
  }
  LossResult res;
  res.value = hinge_mean_pool(dists_in, dists_pool, batch, pool, triplets, margin);
  res.n_triplets = triplets.size();
  return res;
}

double combined_loss(double loss_triplet, double loss_ol, double lambda) {
  if (lambda < 0.0) throw std::runtime_error("lambda must be >= 0");
  return loss_triplet + lambda * loss_ol;
}

std::vector<int> sample_balanced_batch(const std::vector<int>& labels,
                                       int n_classes, int videos_per_batch,
                                       int samples_per_video, Rng& rng) {
  if (n_classes < videos_per_batch) {
    throw std::runtime_error("balanced batch: fewer classes than videos_per_batch");
  }
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  const auto classes = rng.sample_without_replacement(n_classes, videos_per_batch);
  std::vector<int> batch;
  batch.reserve(static_cast<std::size_t>(videos_per_batch) * samples_per_video);
  for (const int cls : classes) {
    const auto& members = by_class[static_cast<std::size_t>(cls)];
    if (members.empty()) {
      throw std::runtime_error("balanced batch: class without samples");
    }
    if (static_cast<int>(members.size()) >= samples_per_video) {
      const auto idx = rng.sample_without_replacement(
          static_cast<int>(members.size()), samples_per_video);
      for (const int i : idx) batch.push_back(members[static_cast<std::size_t>(i)]);
    } else {
      for (int s = 0; s < samples_per_video; ++s) {
        batch.push_back(
            members[rng.uniform_index(members.size())]);
      }
    }
  }
  return batch;
}

TrainResult train(EmbeddingModel& model, const Dataset& train_ds,
                  const TrainConfig& cfg, const Dataset* tune_ds) {
  cfg.validate();
  const auto class_ids = train_ds.class_ids();
  if (class_ids.size() < 2) {
    throw std::runtime_error("train: need at least 2 classes");
  }
  const bool ol = cfg.use_ol && cfg.ol_weight > 0.0;
  if (ol && (tune_ds == nullptr || tune_ds->samples.empty())) {
    throw std::runtime_error("OL requires tune split");
  }
  const auto labels_all = train_ds.labels();
  const int n_classes = static_cast<int>(class_ids.size());
  const int batch_size = cfg.videos_per_batch * cfg.samples_per_video;
  const int pool_size = ol ? (cfg.ol_pool_size > 0 ? cfg.ol_pool_size : batch_size)
                           : 0;
  const int steps_per_epoch = std::max(
      1, static_cast<int>((train_ds.size() + batch_size - 1) / batch_size));

  const auto& bcfg = model.config();
  const int feat = bcfg.in_channels * bcfg.input_len;
  const int dim = bcfg.embedding_dim;

  Rng rng(cfg.seed);
  AdamW opt(model.parameters(), cfg.lr, cfg.weight_decay);

  TrainResult result;
  std::vector<double> x(static_cast<std::size_t>(batch_size + pool_size) * feat);
  std::vector<int> batch_labels(static_cast<std::size_t>(batch_size));
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const MiningStrategy strategy = epoch <= cfg.semi_hard_epochs
                                        ? MiningStrategy::kSemiHard
                                        : MiningStrategy::kHardest;
    for (int s = 0; s < steps_per_epoch; ++s) {
      ++step;
      const auto idx = sample_balanced_batch(
          labels_all, n_classes, cfg.videos_per_batch, cfg.samples_per_video, rng);
      for (int i = 0; i < batch_size; ++i) {
        const auto& sample = train_ds.samples[static_cast<std::size_t>(
            idx[static_cast<std::size_t>(i)])];
        std::copy(sample.features.begin(), sample.features.end(),
                  x.begin() + static_cast<std::size_t>(i) * feat);
        batch_labels[static_cast<std::size_t>(i)] =
            labels_all[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
      }
      for (int i = 0; i < pool_size; ++i) {
        const auto& sample =
            tune_ds->samples[rng.uniform_index(tune_ds->samples.size())];
        std::copy(sample.features.begin(), sample.features.end(),
                  x.begin() + static_cast<std::size_t>(batch_size + i) * feat);
      }

      // one concatenated forward so batch-norm statistics are shared
      const auto emb_all = model.forward(x, batch_size + pool_size, true, &rng);
      std::vector<double> emb_in(
          emb_all.begin(),
          emb_all.begin() + static_cast<std::size_t>(batch_size) * dim);

      const auto dists = pairwise_distances(emb_in, batch_size, dim);
      std::vector<Triplet> triplets;
      if (strategy == MiningStrategy::kSemiHard) {
        triplets = mine_semi_hard(dists, batch_size, batch_labels, cfg.margin, rng);
      } else {
        triplets = mine_hardest(dists, batch_size, batch_labels, cfg.margin);
      }
      const LossResult lt =
          triplet_loss(emb_in, batch_size, dim, triplets, cfg.margin);

      std::vector<Triplet> ol_triplets;
      LossResult lo;
      if (ol) {
        std::vector<double> emb_pool(
            emb_all.begin() + static_cast<std::size_t>(batch_size) * dim,
            emb_all.end());
        const auto dists_pool = anchor_pool_distances(emb_in, batch_size,
                                                      emb_pool, pool_size, dim);
        const auto pairs = anchor_positive_pairs(batch_labels);
        if (strategy == MiningStrategy::kSemiHard) {
          ol_triplets = mine_semi_hard_pool(dists, dists_pool, batch_size,
                                            pool_size, pairs, cfg.margin, rng);
        } else {
          ol_triplets = mine_hardest_pool(dists, dists_pool, batch_size,
                                          pool_size, pairs, cfg.margin);
        }
        lo.value = hinge_mean_pool(dists, dists_pool, batch_size, pool_size,
                                   ol_triplets, cfg.margin);
        lo.n_triplets = ol_triplets.size();
      }

      const double total = combined_loss(lt.value, lo.value, ol ? cfg.ol_weight : 0.0);
      if (!std::isfinite(total)) {
        throw std::runtime_error("training diverged (non-finite loss) at step " +
                                 std::to_string(step));
      }

      if (lt.n_triplets + lo.n_triplets > 0) {
        model.zero_grad();
        std::vector<double> grad(
            static_cast<std::size_t>(batch_size + pool_size) * dim, 0.0);
        triplet_loss_backward(emb_all, batch_size + pool_size, dim, triplets,
                              cfg.margin, batch_size, grad);
        if (ol && !ol_triplets.empty()) {
          // lambda-weighted OL term shares the backward pass
          std::vector<double> grad_ol(grad.size(), 0.0);
          triplet_loss_backward(emb_all, batch_size + pool_size, dim,
                                ol_triplets, cfg.margin, batch_size, grad_ol);
          for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] += cfg.ol_weight * grad_ol[i];
          }
        }
        model.backward(grad);
        opt.step();
      }

      StepLog log;
      log.step = step;
      log.epoch = epoch;
      log.strategy = strategy;
      log.n_triplets = lt.n_triplets;
      log.loss_triplet = lt.value;
      log.loss_ol = lo.value;
      log.loss_total = total;
      result.log.push_back(log);
    }
  }
  return result;
}

void write_loss_log_csv(const std::string& path,
                        const std::vector<StepLog>& log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "step,epoch,strategy,n_triplets,loss_triplet,loss_ol,loss_total\n";
  for (const auto& row : log) {
    f << row.step << ',' << row.epoch << ','
      << (row.strategy == MiningStrategy::kSemiHard ? "semi_hard" : "hardest")
      << ',' << row.n_triplets << ',' << format_exact(row.loss_triplet) << ','
      << format_exact(row.loss_ol) << ',' << format_exact(row.loss_total)
      << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace streamid

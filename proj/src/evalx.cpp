#include "streamid/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace streamid {

using nlohmann::json;

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::runtime_error("accuracy: length mismatch");
  }
  if (predictions.empty()) throw std::runtime_error("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace {

// score descending; on ties negatives first (positives lose ties)
void sort_pessimistic(std::vector<RankedDetection>& d) {
  std::sort(d.begin(), d.end(),
            [](const RankedDetection& a, const RankedDetection& b) {
              if (a.score != b.score) return a.score > b.score;
              return !a.is_positive && b.is_positive;
            });
}

}  // namespace

double average_precision(std::vector<RankedDetection> detections) {
  std::size_t n_pos = 0;
  for (const auto& d : detections) n_pos += d.is_positive ? 1 : 0;
  if (n_pos == 0) throw std::runtime_error("AP undefined: no positives");
  sort_pessimistic(detections);
  double ap = 0.0;
  std::size_t seen_pos = 0;
  for (std::size_t rank = 0; rank < detections.size(); ++rank) {
    if (detections[rank].is_positive) {
      ++seen_pos;
      ap += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

double recall_at_full_precision(std::vector<RankedDetection> detections) {
  std::size_t n_pos = 0;
  bool any_neg = false;
  double max_neg = 0.0;
  for (const auto& d : detections) {
    if (d.is_positive) {
      ++n_pos;
    } else if (!any_neg || d.score > max_neg) {
      any_neg = true;
      max_neg = d.score;
    }
  }
  if (n_pos == 0) throw std::runtime_error("recall undefined: no positives");
  if (!any_neg) return 1.0;
  std::size_t retrieved = 0;
  for (const auto& d : detections) {
    if (d.is_positive && d.score > max_neg) ++retrieved;
  }
  return static_cast<double>(retrieved) / static_cast<double>(n_pos);
}

namespace {

MetricStat stat_over(const std::vector<double>& values) {
  MetricStat s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (const double v : values) {
    const double d = v - s.mean;
    var += d * d;
  }
  s.stdev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

json stat_json(const MetricStat& s) {
  return json{{"mean", s.mean}, {"std", s.stdev}};
}

}  // namespace

json MetricsReport::to_json() const {
  json j;
  j["accuracy"] = stat_json(accuracy);
  j["map"] = stat_json(map);
  j["recall_at_full_precision"] = stat_json(recall_at_full_precision);
  j["runs"] = runs;
  j["seeds"] = seeds;
  j["has_detections"] = has_detections;
  return j;
}

MetricsReport aggregate_runs(const std::vector<RunMetrics>& per_run,
                             const std::vector<std::uint64_t>& seeds) {
  if (per_run.empty()) throw std::runtime_error("aggregate_runs: no runs");
  MetricsReport rep;
  std::vector<double> acc, ap, rec;
  bool has_detections = true;
  for (const auto& r : per_run) {
    acc.push_back(r.accuracy);
    ap.push_back(r.ap);
    rec.push_back(r.recall);
    has_detections = has_detections && r.has_detections;
  }
  rep.accuracy = stat_over(acc);
  rep.map = stat_over(ap);
  rep.recall_at_full_precision = stat_over(rec);
  rep.runs = static_cast<int>(per_run.size());
  rep.seeds = seeds;
  rep.has_detections = has_detections;
  return rep;
}

std::vector<std::pair<int, double>> GalleryScorer::classify(const Dataset& ds) {
  const auto emb = embed_dataset(model_, ds);
  const int dim = gallery_.dim;
  std::vector<std::pair<int, double>> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* e = emb.data() + i * static_cast<std::size_t>(dim);
    const auto s = score(e, gallery_);
    int best = 0;
    for (int k = 1; k < gallery_.num_classes(); ++k) {
      if (s[static_cast<std::size_t>(k)] > s[static_cast<std::size_t>(best)]) {
        best = k;
      }
    }
    out.emplace_back(best, s[static_cast<std::size_t>(best)]);
  }
  return out;
}

std::vector<std::pair<int, double>> CeScorer::classify(const Dataset& ds) {
  const auto& cfg = clf_.config();
  const int feat = cfg.in_channels * cfg.input_len;
  const int n_classes = clf_.num_classes();
  std::vector<std::pair<int, double>> out;
  out.reserve(ds.size());
  constexpr int kBatch = 64;
  std::size_t done = 0;
  std::vector<double> x;
  while (done < ds.size()) {
    const int b = static_cast<int>(std::min<std::size_t>(kBatch, ds.size() - done));
    x.assign(static_cast<std::size_t>(b) * feat, 0.0);
    for (int i = 0; i < b; ++i) {
      const auto& s = ds.samples[done + static_cast<std::size_t>(i)];
      std::copy(s.features.begin(), s.features.end(),
                x.begin() + static_cast<std::size_t>(i) * feat);
    }
    const auto probs = clf_.score_batch(x, b);
    for (int i = 0; i < b; ++i) {
      const double* row = probs.data() + static_cast<std::size_t>(i) * n_classes;
      int best = 0;
      for (int k = 1; k < n_classes; ++k) {
        if (row[k] > row[best]) best = k;
      }
      out.emplace_back(best, row[best]);
    }
    done += static_cast<std::size_t>(b);
  }
  return out;
}

std::vector<std::pair<int, double>> KnnScorer::classify(const Dataset& ds) {
  std::vector<std::pair<int, double>> out(ds.size());
  const long long n = static_cast<long long>(ds.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = knn_predict(
        model_, ds.samples[static_cast<std::size_t>(i)].features.data());
  }
  return out;
}

RunMetrics robustness_eval(Scorer& scorer, const Dataset& test_ds,
                           const Dataset& out_ds) {
  const auto& ids = scorer.class_ids();
  const std::set<std::string> class_set(ids.begin(), ids.end());
  for (const auto& s : out_ds.samples) {
    if (class_set.count(s.video_id) > 0) {
      throw std::runtime_error(
          "robustness_eval: out split overlaps gallery class " + s.video_id);
    }
  }
  if (test_ds.samples.empty()) {
    throw std::runtime_error("robustness_eval: empty test split");
  }

  const auto preds = scorer.classify(test_ds);
  std::vector<RankedDetection> detections;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test_ds.size(); ++i) {
    const auto& [cls, conf] = preds[i];
    const bool correct =
        cls >= 0 && cls < static_cast<int>(ids.size()) &&
        ids[static_cast<std::size_t>(cls)] == test_ds.samples[i].video_id;
    if (correct) {
      ++hits;
      detections.push_back({conf, true});
    }
    // misclassified in-distribution streams stay out of the detection task
  }
  const auto out_preds = scorer.classify(out_ds);
  for (const auto& [cls, conf] : out_preds) {
    (void)cls;
    detections.push_back({conf, false});
  }

  RunMetrics m;
  m.accuracy = static_cast<double>(hits) / static_cast<double>(test_ds.size());
  m.ap = average_precision(detections);
  m.recall = recall_at_full_precision(detections);
  return m;
}

namespace {

int leave_out_count(int n_classes, double fraction) {
  if (!(fraction > 0.0) || !(fraction < 1.0)) {
    throw std::runtime_error("leave_out: fraction must be in (0,1)");
  }
  int k = static_cast<int>(std::ceil(n_classes * fraction - 0.5));
  k = std::max(1, std::min(n_classes - 1, k));
  return k;
}

Dataset subset_by_ids(const Dataset& ds, const std::set<std::string>& ids,
                      Split split) {
  Dataset out;
  for (const auto& s : ds.samples) {
    if (s.split == split && ids.count(s.video_id) > 0) out.samples.push_back(s);
  }
  return out;
}

}  // namespace

json LeaveOutResult::to_json() const {
  json j;
  j["shots"] = shots;
  json per_shot = json::array();
  for (std::size_t i = 0; i < shots.size(); ++i) {
    json row;
    row["shots"] = shots[i];
    row["trained_accuracy"] = stat_json(trained_accuracy[i]);
    row["nshot_accuracy"] = stat_json(nshot_accuracy[i]);
    row["trained_per_seed"] = trained_per_seed[i];
    row["nshot_per_seed"] = nshot_per_seed[i];
    per_shot.push_back(std::move(row));
  }
  j["results"] = std::move(per_shot);
  j["seeds"] = seeds;
  return j;
}

LeaveOutResult leave_out_protocol(const Dataset& train_test,
                                  const LeaveOutConfig& cfg) {
  if (cfg.shots.empty()) throw std::runtime_error("leave_out: no shot counts");
  const auto all_ids = train_test.class_ids();
  const int n_classes = static_cast<int>(all_ids.size());
  if (n_classes < 2) throw std::runtime_error("leave_out: need >= 2 classes");
  const int n_leave = leave_out_count(n_classes, cfg.fraction);

  LeaveOutResult res;
  res.shots = cfg.shots;
  res.seeds = cfg.seeds;
  res.trained_per_seed.assign(cfg.shots.size(), {});
  res.nshot_per_seed.assign(cfg.shots.size(), {});

  for (const std::uint64_t seed : cfg.seeds) {
    Rng rng(seed_mix(seed, fnv1a64("leave-out")));
    const auto left_idx = rng.sample_without_replacement(n_classes, n_leave);
    std::set<std::string> left_ids;
    for (const int i : left_idx) {
      left_ids.insert(all_ids[static_cast<std::size_t>(i)]);
    }
    std::set<std::string> kept_ids;
    for (const auto& id : all_ids) {
      if (left_ids.count(id) == 0) kept_ids.insert(id);
    }

    const Dataset kept_train = subset_by_ids(train_test, kept_ids, Split::kTrain);
    const Dataset kept_test = subset_by_ids(train_test, kept_ids, Split::kTest);
    const Dataset left_train = subset_by_ids(train_test, left_ids, Split::kTrain);
    const Dataset left_test = subset_by_ids(train_test, left_ids, Split::kTest);

    TrainConfig tc = cfg.train_cfg;
    tc.seed = seed;
    EmbeddingModel model(cfg.backbone, seed_mix(seed, fnv1a64("model-init")));
    train(model, kept_train, tc, nullptr);
    const Gallery base = build_gallery(model, kept_train);

    // per left-out class: its train-sample indices, for seeded shot picks
    std::vector<std::string> left_sorted(left_ids.begin(), left_ids.end());
    for (std::size_t si = 0; si < cfg.shots.size(); ++si) {
      const int n_shots = cfg.shots[si];
      if (n_shots < 1) throw std::runtime_error("leave_out: shots must be >= 1");
      Gallery g = base;
      for (const auto& vid : left_sorted) {
        std::vector<StreamSample> pool;
        for (const auto& s : left_train.samples) {
          if (s.video_id == vid) pool.push_back(s);
        }
        if (static_cast<int>(pool.size()) < n_shots) {
          throw std::runtime_error("leave_out: requested " +
                                   std::to_string(n_shots) +
                                   " shots but only " +
                                   std::to_string(pool.size()) +
                                   " available for " + vid);
        }
        const auto pick = rng.sample_without_replacement(
            static_cast<int>(pool.size()), n_shots);
        std::vector<StreamSample> shots;
        for (const int i : pick) {
          shots.push_back(pool[static_cast<std::size_t>(i)]);
        }
        g = add_class(g, model, shots);
      }
      GalleryScorer scorer(model, g);
      const auto& gids = scorer.class_ids();
      auto group_accuracy = [&](const Dataset& ds) {
        const auto preds = scorer.classify(ds);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
          if (gids[static_cast<std::size_t>(preds[i].first)] ==
              ds.samples[i].video_id) {
            ++hits;
          }
        }
        return ds.size() == 0
                   ? 0.0
                   : static_cast<double>(hits) / static_cast<double>(ds.size());
      };
      res.trained_per_seed[si].push_back(group_accuracy(kept_test));
      res.nshot_per_seed[si].push_back(group_accuracy(left_test));
    }
  }

  for (std::size_t si = 0; si < cfg.shots.size(); ++si) {
    res.trained_accuracy.push_back(stat_over(res.trained_per_seed[si]));
    res.nshot_accuracy.push_back(stat_over(res.nshot_per_seed[si]));
  }
  return res;
}

json TransferResult::to_json() const {
  json j;
  j["shots"] = shots;
  json per_shot = json::array();
  for (std::size_t i = 0; i < shots.size(); ++i) {
    json row;
    row["shots"] = shots[i];
    row["report"] = by_shot[i].to_json();
    per_shot.push_back(std::move(row));
  }
  j["results"] = std::move(per_shot);
  if (baseline_trained) j["target_trained_baseline"] = target_baseline.to_json();
  return j;
}

TransferResult transfer_protocol(const Dataset& source, const Dataset& target,
                                 const Dataset* target_out,
                                 const TransferConfig& cfg) {
  if (cfg.shots.empty()) throw std::runtime_error("transfer: no shot counts");
  const Dataset source_train = source.filter_split(Split::kTrain);
  const Dataset target_train = target.filter_split(Split::kTrain);
  const Dataset target_test = target.filter_split(Split::kTest);
  if (target_test.samples.empty()) {
    throw std::runtime_error("transfer: target has no test split");
  }

  // protocol hygiene: centroid-building shots never appear among eval streams
  {
    std::set<std::string> eval_ids;
    for (const auto& s : target_test.samples) eval_ids.insert(s.stream_id);
    for (const auto& s : target_train.samples) {
      if (eval_ids.count(s.stream_id) > 0) {
        throw std::runtime_error("transfer: shot stream " + s.stream_id +
                                 " also present in the eval split");
      }
    }
  }

  TransferResult res;
  res.shots = cfg.shots;
  std::vector<std::vector<RunMetrics>> by_shot_runs(cfg.shots.size());
  std::vector<RunMetrics> baseline_runs;

  for (const std::uint64_t seed : cfg.seeds) {
    TrainConfig tc = cfg.train_cfg;
    tc.seed = seed;
    EmbeddingModel model(cfg.backbone, seed_mix(seed, fnv1a64("model-init")));
    train(model, source_train, tc, nullptr);
    const Gallery source_gallery = build_gallery(model, source_train);
    Rng rng(seed_mix(seed, fnv1a64("transfer-shots")));

    auto eval_gallery = [&](EmbeddingModel& m, const Gallery& g) {
      GalleryScorer scorer(m, g);
      if (target_out != nullptr && !target_out->samples.empty()) {
        return robustness_eval(scorer, target_test, *target_out);
      }
      const auto preds = scorer.classify(target_test);
      RunMetrics rm;
      rm.has_detections = false;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < target_test.size(); ++i) {
        if (g.class_ids[static_cast<std::size_t>(preds[i].first)] ==
            target_test.samples[i].video_id) {
          ++hits;
        }
      }
      rm.accuracy =
          static_cast<double>(hits) / static_cast<double>(target_test.size());
      return rm;
    };

    for (std::size_t si = 0; si < cfg.shots.size(); ++si) {
      const int n_shots = cfg.shots[si];
      if (n_shots == 0) {
        by_shot_runs[si].push_back(eval_gallery(model, source_gallery));
        continue;
      }
      Dataset shot_ds;
      for (const auto& vid : source_gallery.class_ids) {
        std::vector<const StreamSample*> pool;
        for (const auto& s : target_train.samples) {
          if (s.video_id == vid) pool.push_back(&s);
        }
        if (static_cast<int>(pool.size()) < n_shots) {
          throw std::runtime_error("transfer: requested " +
                                   std::to_string(n_shots) +
                                   " shots but only " +
                                   std::to_string(pool.size()) +
                                   " available for " + vid);
        }
        const auto pick = rng.sample_without_replacement(
            static_cast<int>(pool.size()), n_shots);
        for (const int i : pick) {
          shot_ds.samples.push_back(*pool[static_cast<std::size_t>(i)]);
        }
      }
      const Gallery g = replace_centroids(source_gallery, model, shot_ds);
      by_shot_runs[si].push_back(eval_gallery(model, g));
    }

    if (cfg.train_target_baseline) {
      TrainConfig btc = cfg.train_cfg;
      btc.seed = seed_mix(seed, fnv1a64("target-baseline"));
      EmbeddingModel bmodel(cfg.backbone,
                            seed_mix(seed, fnv1a64("target-baseline-init")));
      train(bmodel, target_train, btc, nullptr);
      const Gallery bg = build_gallery(bmodel, target_train);
      baseline_runs.push_back(eval_gallery(bmodel, bg));
    }
  }

  for (std::size_t si = 0; si < cfg.shots.size(); ++si) {
    res.by_shot.push_back(aggregate_runs(by_shot_runs[si], cfg.seeds));
  }
  if (cfg.train_target_baseline) {
    res.target_baseline = aggregate_runs(baseline_runs, cfg.seeds);
    res.baseline_trained = true;
  }
  return res;
}

}  // namespace streamid

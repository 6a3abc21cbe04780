#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "streamid/evalx.hpp"
#include "streamid/rng.hpp"

using namespace streamid;

namespace {

std::vector<RankedDetection> make(const std::vector<std::pair<double, bool>>& v) {
  std::vector<RankedDetection> out;
  for (const auto& [s, p] : v) out.push_back({s, p});
  return out;
}

// threshold-sweep oracle: max recall among thresholds with precision == 1
double recall_sweep_oracle(const std::vector<RankedDetection>& d) {
  double best = 0.0;
  std::size_t n_pos = 0;
  for (const auto& x : d) n_pos += x.is_positive ? 1 : 0;
  std::vector<double> thresholds;
  for (const auto& x : d) thresholds.push_back(x.score);
  bool any_neg = false;
  for (const auto& x : d) any_neg = any_neg || !x.is_positive;
  if (!any_neg) return 1.0;
  for (const double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const auto& x : d) {
      if (x.score > t) {  // strictly above: positives tied with a negative lose
        (x.is_positive ? tp : fp)++;
      }
    }
    if (tp > 0 && fp == 0) {
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(n_pos));
    }
  }
  return best;
}

// per-rank oracle: precision at every positive, pessimistic tie order
double ap_oracle(std::vector<RankedDetection> d) {
  std::stable_sort(d.begin(), d.end(),
                   [](const RankedDetection& a, const RankedDetection& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return !a.is_positive && b.is_positive;
                   });
  double sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d[i].is_positive) continue;
    ++pos;
    std::size_t at_or_above = 0;
    for (std::size_t j = 0; j <= i; ++j) at_or_above += d[j].is_positive ? 1 : 0;
    sum += static_cast<double>(at_or_above) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(pos);
}

}  // namespace

TEST_CASE("accuracy counts exact matches") {
  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(accuracy({1, 2, 3, 4}, {1, 2, 0, 0}) == 0.5);
  CHECK_THROWS(accuracy({1}, {1, 2}));

  Rng rng(3);
  std::vector<int> a(200), b(200);
  for (int i = 0; i < 200; ++i) {
    a[static_cast<std::size_t>(i)] = rng.uniform_int(4);
    b[static_cast<std::size_t>(i)] = rng.uniform_int(4);
  }
  std::size_t hits = 0;
  for (int i = 0; i < 200; ++i) {
    if (a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]) ++hits;
  }
  CHECK(accuracy(a, b) == doctest::Approx(hits / 200.0));
}

TEST_CASE("average precision on canonical rankings") {
  CHECK(average_precision(make({{0.9, true}, {0.8, true}, {0.2, false}})) == 1.0);
  // single positive ranked last of N=4
  CHECK(average_precision(make({{0.9, false}, {0.8, false}, {0.7, false}, {0.1, true}})) ==
        doctest::Approx(0.25));
  CHECK_THROWS_WITH_AS(average_precision(make({{0.5, false}})),
                       doctest::Contains("AP undefined"), std::runtime_error);
}

TEST_CASE("average precision ranks tied positives pessimistically") {
  // a positive tied with a negative ranks below it
  const double ap = average_precision(make({{0.5, true}, {0.5, false}}));
  CHECK(ap == doctest::Approx(0.5));
}

TEST_CASE("average precision matches the per-rank oracle on seeded rankings") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RankedDetection> d;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
      // quantized scores force ties to exercise the tie rule
      d.push_back({std::floor(rng.uniform() * 20.0) / 20.0, rng.uniform() < 0.4});
    }
    bool has_pos = false;
    for (const auto& x : d) has_pos = has_pos || x.is_positive;
    if (!has_pos) d.push_back({0.5, true});
    CHECK(std::abs(average_precision(d) - ap_oracle(d)) < 1e-9);
  }
}

TEST_CASE("recall at full precision on canonical rankings") {
  CHECK(recall_at_full_precision(
            make({{0.9, true}, {0.8, true}, {0.5, false}, {0.4, true}})) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(recall_at_full_precision(make({{0.9, false}, {0.5, true}})) == 0.0);
  CHECK(recall_at_full_precision(make({{0.9, true}, {0.5, true}})) == 1.0);
  // a positive tied with the top negative is not retrieved
  CHECK(recall_at_full_precision(make({{0.5, true}, {0.5, false}})) == 0.0);
}

TEST_CASE("recall at full precision matches the threshold-sweep oracle") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RankedDetection> d;
    for (int i = 0; i < 150; ++i) {
      d.push_back({std::floor(rng.uniform() * 25.0) / 25.0, rng.uniform() < 0.5});
    }
    d.push_back({0.99, true});
    CHECK(std::abs(recall_at_full_precision(d) - recall_sweep_oracle(d)) < 1e-9);
  }
}

TEST_CASE("both ranking metrics hit 1 exactly on perfect separations") {
  Rng rng(31);
  std::vector<RankedDetection> d;
  for (int i = 0; i < 50; ++i) d.push_back({0.8 + 0.001 * i, true});
  for (int i = 0; i < 50; ++i) d.push_back({0.2 + 0.001 * i, false});
  rng.shuffle(d);
  CHECK(average_precision(d) == 1.0);
  CHECK(recall_at_full_precision(d) == 1.0);
}

TEST_CASE("raising a positive's score never hurts either metric") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<RankedDetection> d;
    for (int i = 0; i < 60; ++i) {
      d.push_back({rng.uniform(), rng.uniform() < 0.5});
    }
    d.push_back({0.3, true});
    const double ap0 = average_precision(d);
    const double r0 = recall_at_full_precision(d);
    d.back().score = 0.9;
    CHECK(average_precision(d) >= ap0 - 1e-12);
    CHECK(recall_at_full_precision(d) >= r0 - 1e-12);
  }
}

namespace {

// fixed-table scorer for protocol-level tests
class TableScorer : public Scorer {
 public:
  TableScorer(std::vector<std::string> ids,
              std::map<std::string, std::pair<int, double>> table)
      : ids_(std::move(ids)), table_(std::move(table)) {}
  std::vector<std::pair<int, double>> classify(const Dataset& ds) override {
    std::vector<std::pair<int, double>> out;
    for (const auto& s : ds.samples) out.push_back(table_.at(s.stream_id));
    return out;
  }
  const std::vector<std::string>& class_ids() const override { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::pair<int, double>> table_;
};

StreamSample sample_of(const std::string& vid, const std::string& sid, Split split) {
  StreamSample s;
  s.video_id = vid;
  s.stream_id = sid;
  s.split = split;
  s.features.assign(StreamSample::kFeatureSize, 0.0);
  return s;
}

}  // namespace

TEST_CASE("robustness_eval on a perfect classifier yields all ones") {
  Dataset test_ds, out_ds;
  std::map<std::string, std::pair<int, double>> table;
  for (int i = 0; i < 6; ++i) {
    const std::string vid = "v" + std::to_string(i % 2);
    const std::string sid = "t" + std::to_string(i);
    test_ds.samples.push_back(sample_of(vid, sid, Split::kTest));
    table[sid] = {i % 2, 0.95};
  }
  for (int i = 0; i < 4; ++i) {
    const std::string sid = "o" + std::to_string(i);
    out_ds.samples.push_back(sample_of("ood" + std::to_string(i), sid, Split::kOut));
    table[sid] = {0, 0.2};
  }
  TableScorer scorer({"v0", "v1"}, table);
  const RunMetrics m = robustness_eval(scorer, test_ds, out_ds);
  CHECK(m.accuracy == 1.0);
  CHECK(m.ap == 1.0);
  CHECK(m.recall == 1.0);
}

TEST_CASE("robustness_eval excludes misclassified streams from the detections") {
  Dataset test_ds, out_ds;
  std::map<std::string, std::pair<int, double>> table;
  test_ds.samples.push_back(sample_of("v0", "t0", Split::kTest));
  table["t0"] = {0, 0.9};  // correct, high confidence
  test_ds.samples.push_back(sample_of("v0", "t1", Split::kTest));
  table["t1"] = {1, 0.99};  // wrong, very high confidence: must not pollute
  out_ds.samples.push_back(sample_of("x", "o0", Split::kOut));
  table["o0"] = {0, 0.5};
  TableScorer scorer({"v0", "v1"}, table);
  const RunMetrics m = robustness_eval(scorer, test_ds, out_ds);
  CHECK(m.accuracy == 0.5);
  // detection task is exactly {0.9 pos, 0.5 neg}: perfect separation
  CHECK(m.ap == 1.0);
  CHECK(m.recall == 1.0);
}

TEST_CASE("robustness_eval rejects class overlap with the out split") {
  Dataset test_ds, out_ds;
  std::map<std::string, std::pair<int, double>> table;
  test_ds.samples.push_back(sample_of("v0", "t0", Split::kTest));
  table["t0"] = {0, 0.9};
  out_ds.samples.push_back(sample_of("v0", "o0", Split::kOut));
  table["o0"] = {0, 0.5};
  TableScorer scorer({"v0"}, table);
  CHECK_THROWS_WITH_AS(robustness_eval(scorer, test_ds, out_ds),
                       doctest::Contains("overlap"), std::runtime_error);
}

TEST_CASE("random confidences give AP near the positive base rate") {
  Rng rng(43);
  const int n_pos = 300, n_neg = 300;
  double total = 0.0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    std::vector<RankedDetection> d;
    for (int i = 0; i < n_pos; ++i) d.push_back({rng.uniform(), true});
    for (int i = 0; i < n_neg; ++i) d.push_back({rng.uniform(), false});
    total += average_precision(d);
  }
  const double base_rate = static_cast<double>(n_pos) / (n_pos + n_neg);
  CHECK(std::abs(total / reps - base_rate) < 0.03);
}

TEST_CASE("aggregate_runs computes mean and population std") {
  RunMetrics a{0.8, 0.8, 0.8, true};
  RunMetrics b{1.0, 1.0, 1.0, true};
  const MetricsReport rep = aggregate_runs({a, b}, {1, 2});
  CHECK(rep.accuracy.mean == doctest::Approx(0.9));
  CHECK(rep.accuracy.stdev == doctest::Approx(0.1));
  CHECK(rep.runs == 2);

  const MetricsReport single = aggregate_runs({a}, {1});
  CHECK(single.accuracy.stdev == 0.0);

  Rng rng(51);
  std::vector<RunMetrics> runs;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accs;
  for (int i = 0; i < 10; ++i) {
    RunMetrics m;
    m.accuracy = rng.uniform();
    runs.push_back(m);
    seeds.push_back(static_cast<std::uint64_t>(i));
    accs.push_back(m.accuracy);
  }
  double mean = 0.0;
  for (const double v : accs) mean += v;
  mean /= 10.0;
  double var = 0.0;
  for (const double v : accs) var += (v - mean) * (v - mean);
  const MetricsReport rep10 = aggregate_runs(runs, seeds);
  CHECK(rep10.accuracy.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(rep10.accuracy.stdev == doctest::Approx(std::sqrt(var / 10.0)).epsilon(1e-12));
}

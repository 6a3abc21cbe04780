#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#ifdef STREAMID_HAVE_OPENSSL
#include <openssl/evp.h>
#endif

#include "doctest.h"
#include "streamid/flowio.hpp"
#include "streamid/rng.hpp"

using namespace streamid;
namespace fs = std::filesystem;

namespace {

Capture capture_with_bytes(const std::string& id, long long total) {
  Capture c;
  c.capture_id = id;
  FlowRecord r;
  r.ts_rel = 0.0;
  r.direction = Direction::kIncoming;
  r.bytes = total;
  c.records.push_back(r);
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "streamid_flowio_test";
  fs::create_directories(dir);
  return dir;
}

#ifdef STREAMID_HAVE_OPENSSL
std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}
#endif

}  // namespace

TEST_CASE("select_video_flow prefers a dns hint match") {
  Capture a = capture_with_bytes("a", 100);
  a.meta["dns_name"] = "cdn.example";
  Capture b = capture_with_bytes("b", 1000000);
  const Capture chosen = select_video_flow({a, b}, std::string("cdn.example"));
  CHECK(chosen.capture_id == "a");
  CHECK(chosen.meta.count("warning") == 0);
}

TEST_CASE("select_video_flow falls back to byte volume") {
  const Capture small = capture_with_bytes("small", 10 * 1024);
  const Capture big = capture_with_bytes("big", 4 * 1024 * 1024);
  CHECK(select_video_flow({small, big}, std::nullopt).capture_id == "big");

  // unmatched hint: same answer, plus a warning in the metadata
  const Capture chosen =
      select_video_flow({small, big}, std::string("nosuch.example"));
  CHECK(chosen.capture_id == "big");
  CHECK(chosen.meta.count("warning") == 1);
}

TEST_CASE("select_video_flow agrees with a linear-scan maximum oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Capture> captures;
    for (int i = 0; i < 5; ++i) {
      captures.push_back(capture_with_bytes("cap" + std::to_string(i),
                                            1 + rng.uniform_int(1 << 20)));
    }
    long long best = -1;
    std::string best_id;
    for (const auto& c : captures) {
      const long long total = c.records.front().bytes;
      if (total > best || (total == best && c.capture_id < best_id)) {
        best = total;
        best_id = c.capture_id;
      }
    }
    CHECK(select_video_flow(captures, std::nullopt).capture_id == best_id);
  }
}

TEST_CASE("select_video_flow is permutation invariant") {
  std::vector<Capture> captures;
  for (int i = 0; i < 4; ++i) {
    captures.push_back(capture_with_bytes("c" + std::to_string(i), 500));
  }
  const std::string first = select_video_flow(captures, std::nullopt).capture_id;
  CHECK(first == "c0");  // byte tie resolves to lexicographic order
  std::reverse(captures.begin(), captures.end());
  CHECK(select_video_flow(captures, std::nullopt).capture_id == first);
}

TEST_CASE("select_video_flow rejects empty input") {
  CHECK_THROWS_WITH_AS(select_video_flow({}, std::nullopt),
                       doctest::Contains("no flows"), std::runtime_error);
}

TEST_CASE("bucketize maps an empty capture to zeros") {
  Capture c;
  c.capture_id = "empty";
  const auto m = bucketize(c);
  REQUIRE(m.size() == 480);
  for (const double v : m) CHECK(v == 0.0);
}

TEST_CASE("bucketize boundary arithmetic") {
  Capture c;
  c.capture_id = "one";
  FlowRecord r;
  r.ts_rel = 0.30;
  r.direction = Direction::kIncoming;
  r.bytes = 700;
  c.records.push_back(r);
  const auto m = bucketize(c);
  CHECK(m[1] == 700.0);  // 0.30 / 0.25 -> bucket 1
  double total = 0.0;
  for (const double v : m) total += v;
  CHECK(total == 700.0);
}

TEST_CASE("bucketize conserves bytes per direction") {
  Rng rng(7);
  Capture c;
  c.capture_id = "random";
  long long in_total = 0, out_total = 0;
  for (int i = 0; i < 1000; ++i) {
    FlowRecord r;
    r.ts_rel = rng.uniform(0.0, 70.0);  // some records fall outside the window
    r.direction = rng.uniform() < 0.5 ? Direction::kIncoming : Direction::kOutgoing;
    r.bytes = rng.uniform_int(1500);
    if (r.ts_rel < 60.0) {
      (r.direction == Direction::kIncoming ? in_total : out_total) += r.bytes;
    }
    c.records.push_back(r);
  }
  const auto m = bucketize(c);
  double in_sum = 0.0, out_sum = 0.0;
  for (int i = 0; i < 240; ++i) {
    in_sum += m[static_cast<std::size_t>(i)];
    out_sum += m[static_cast<std::size_t>(240 + i)];
  }
  CHECK(in_sum == static_cast<double>(in_total));
  CHECK(out_sum == static_cast<double>(out_total));
}

TEST_CASE("bucketize rejects non-integer bucket counts") {
  Capture c;
  c.capture_id = "x";
  CHECK_THROWS_WITH_AS(bucketize(c, 60.0, 0.7),
                       doctest::Contains("invalid binning"), std::runtime_error);
}

TEST_CASE("standardize maps constant rows to zeros") {
  const std::vector<double> raw(480, 3.5);
  const auto out = standardize(raw, 2, 240);
  for (const double v : out) CHECK(v == 0.0);
}

TEST_CASE("standardize preserves a period-2 pattern up to scale") {
  std::vector<double> raw(240);
  for (int i = 0; i < 240; ++i) raw[static_cast<std::size_t>(i)] = i % 2 == 0 ? 1.0 : -1.0;
  const auto out = standardize(raw, 1, 240);
  // mean 0, sample std 1, same alternating shape (scaled by one constant)
  const double scale = out[0];
  CHECK(scale > 0.0);
  double mean = 0.0, var = 0.0;
  for (int i = 0; i < 240; ++i) {
    CHECK(out[static_cast<std::size_t>(i)] ==
          doctest::Approx(scale * raw[static_cast<std::size_t>(i)]).epsilon(1e-12));
    mean += out[static_cast<std::size_t>(i)];
  }
  mean /= 240.0;
  for (int i = 0; i < 240; ++i) {
    var += (out[static_cast<std::size_t>(i)] - mean) * (out[static_cast<std::size_t>(i)] - mean);
  }
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::sqrt(var / 239.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standardize moments verified by an independent two-pass oracle") {
  Rng rng(13);
  std::vector<double> raw(240);
  for (auto& v : raw) v = rng.uniform(0.0, 5e6);
  const auto out = standardize(raw, 1, 240);

  double mean = 0.0;
  for (const double v : out) mean += v;
  mean /= 240.0;
  double var = 0.0;
  for (const double v : out) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / 239.0);  // sample std
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::abs(sd - 1.0) < 1e-5);
}

TEST_CASE("standardize is idempotent on non-constant rows") {
  Rng rng(29);
  std::vector<double> raw(480);
  for (auto& v : raw) v = rng.normal() * 100.0;
  const auto once = standardize(raw, 2, 240);
  const auto twice = standardize(once, 2, 240);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(std::abs(once[i] - twice[i]) < 1e-6);
  }
}

namespace {

Dataset random_dataset(int n, Rng& rng) {
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    StreamSample s;
    s.video_id = "vid" + std::to_string(i % 7);
    s.stream_id = "stream" + std::to_string(i);
    s.split = i % 2 == 0 ? Split::kTrain : Split::kTest;
    std::vector<double> raw(StreamSample::kFeatureSize);
    for (auto& v : raw) v = rng.uniform(0.0, 1e6);
    s.features = standardize(raw, 2, 240);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("dataset io: empty file loads as an empty dataset") {
  const auto path = (temp_dir() / "empty.ndjson").string();
  std::ofstream(path).close();
  const Dataset ds = load_dataset(path);
  CHECK(ds.size() == 0);
}

TEST_CASE("dataset io: three samples round trip") {
  Rng rng(1);
  Dataset ds = random_dataset(3, rng);
  const auto path = (temp_dir() / "three.ndjson").string();
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.samples[i].video_id == ds.samples[i].video_id);
    CHECK(back.samples[i].stream_id == ds.samples[i].stream_id);
    CHECK(back.samples[i].split == ds.samples[i].split);
  }
}

TEST_CASE("dataset io: save/load/save is byte stable") {
  Rng rng(2);
  Dataset ds = random_dataset(100, rng);
  const auto p1 = (temp_dir() / "hash1.ndjson").string();
  const auto p2 = (temp_dir() / "hash2.ndjson").string();
  save_dataset(ds, p1);
  const Dataset back = load_dataset(p1);
  save_dataset(back, p2);
  const std::string bytes1 = read_file(p1);
  const std::string bytes2 = read_file(p2);
#ifdef STREAMID_HAVE_OPENSSL
  CHECK(sha256_hex(bytes1) == sha256_hex(bytes2));
#endif
  CHECK(bytes1 == bytes2);

  // and a second load yields bit-identical features
  const Dataset again = load_dataset(p2);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(again.samples[i].features == back.samples[i].features);
  }
}

TEST_CASE("dataset io: malformed line is reported with its line number") {
  const auto path = (temp_dir() / "bad.ndjson").string();
  {
    Rng rng(3);
    Dataset ds = random_dataset(2, rng);
    save_dataset(ds, path);
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 3"),
                       std::runtime_error);
}

TEST_CASE("dataset io: wrong feature shape is rejected") {
  const auto path = (temp_dir() / "shape.ndjson").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << R"({"video_id":"v","stream_id":"s","split":"train","incoming":[1,2,3],"outgoing":[1,2,3]})"
      << "\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("expected 2x240"),
                       std::runtime_error);
}

TEST_CASE("capture csv parsing and error reporting") {
  const auto dir = temp_dir();
  const auto good = (dir / "cap1.csv").string();
  {
    std::ofstream f(good, std::ios::binary);
    f << "ts_rel,direction,bytes\n0.0,out,400\n0.1,in,14000\n0.35,in,2800\n";
  }
  const Capture c = parse_capture_csv(good);
  CHECK(c.capture_id == "cap1");
  REQUIRE(c.records.size() == 3);
  CHECK(c.records[1].bytes == 14000);
  CHECK(c.records[0].direction == Direction::kOutgoing);

  const auto bad = (dir / "cap2.csv").string();
  {
    std::ofstream f(bad, std::ios::binary);
    f << "ts_rel,direction,bytes\n0.0,sideways,400\n";
  }
  CHECK_THROWS_WITH_AS(parse_capture_csv(bad), doctest::Contains("line 2"),
                       std::runtime_error);
}

TEST_CASE("shift_to_origin rebases the earliest record to zero") {
  Capture c;
  c.capture_id = "s";
  for (const double t : {5.5, 3.25, 9.0}) {
    FlowRecord r;
    r.ts_rel = t;
    r.direction = Direction::kIncoming;
    r.bytes = 10;
    c.records.push_back(r);
  }
  const Capture shifted = shift_to_origin(c);
  CHECK(shifted.records[1].ts_rel == 0.0);
  CHECK(shifted.records[0].ts_rel == doctest::Approx(2.25));
  CHECK(shifted.records[2].ts_rel == doctest::Approx(5.75));
}

#include "streamid/flowio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "json.hpp"

namespace streamid {

using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kTest:
      return "test";
    case Split::kTune:
      return "tune";
    case Split::kOut:
      return "out";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  if (name == "tune") return Split::kTune;
  if (name == "out") return Split::kOut;
  throw std::runtime_error("unknown split: " + name);
}

std::vector<std::string> Dataset::class_ids() const {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.video_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<int> Dataset::labels() const {
  const auto ids = class_ids();
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto it = std::lower_bound(ids.begin(), ids.end(), s.video_id);
    out.push_back(static_cast<int>(it - ids.begin()));
  }
  return out;
}

Dataset Dataset::filter_split(Split s) const {
  Dataset out;
  for (const auto& sample : samples) {
    if (sample.split == s) out.samples.push_back(sample);
  }
  return out;
}

namespace {

long long total_bytes(const Capture& c) {
  long long total = 0;
  for (const auto& r : c.records) total += r.bytes;
  return total;
}

}  // namespace

Capture select_video_flow(const std::vector<Capture>& captures,
                          const std::optional<std::string>& dns_hint) {
  if (captures.empty()) throw std::runtime_error("no flows");

  if (dns_hint.has_value()) {
    const Capture* best = nullptr;
    for (const auto& c : captures) {
      const auto it = c.meta.find("dns_name");
      if (it != c.meta.end() && it->second == *dns_hint) {
        if (best == nullptr || c.capture_id < best->capture_id) best = &c;
      }
    }
    if (best != nullptr) return *best;
  }

  const Capture* best = &captures.front();
  long long best_total = total_bytes(*best);
  for (const auto& c : captures) {
    const long long t = total_bytes(c);
    if (t > best_total || (t == best_total && c.capture_id < best->capture_id)) {
      best = &c;
      best_total = t;
    }
  }
  Capture out = *best;
  if (dns_hint.has_value()) {
    out.meta["warning"] = "dns_hint '" + *dns_hint + "' unmatched; fell back to byte-volume rule";
  }
  return out;
}

std::vector<double> bucketize(const Capture& capture, double window_s,
                              double bin_s) {
  if (!(bin_s > 0.0) || !(window_s > 0.0)) {
    throw std::runtime_error("invalid binning: window and bin must be positive");
  }
  const double ratio = window_s / bin_s;
  const long long buckets = std::llround(ratio);
  if (buckets < 1 || std::abs(ratio - static_cast<double>(buckets)) > 1e-9) {
    throw std::runtime_error("invalid binning: window_s/bin_s must be a positive integer");
  }
  const int n = static_cast<int>(buckets);
  std::vector<double> m(static_cast<std::size_t>(2) * n, 0.0);
  for (const auto& r : capture.records) {
    if (r.ts_rel < 0.0 || r.ts_rel >= window_s) continue;
    int k = static_cast<int>(r.ts_rel / bin_s);
    if (k >= n) k = n - 1;  // guard against FP edge at the window boundary
    const int row = r.direction == Direction::kIncoming ? 0 : 1;
    m[static_cast<std::size_t>(row) * n + k] += static_cast<double>(r.bytes);
  }
  return m;
}

std::vector<double> standardize(const std::vector<double>& raw, int rows,
                                int cols) {
  constexpr double kEps = 1e-8;
  std::vector<double> out(raw.size());
  for (int r = 0; r < rows; ++r) {
    const double* src = raw.data() + static_cast<std::size_t>(r) * cols;
    double* dst = out.data() + static_cast<std::size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += src[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = src[c] - mean;
      var += d * d;
    }
    // sample std (n-1 divisor); a constant row gets std 0 and maps to zeros
    const double sd = cols > 1 ? std::sqrt(var / (cols - 1)) : 0.0;
    const double denom = std::max(sd, kEps);
    for (int c = 0; c < cols; ++c) dst[c] = (src[c] - mean) / denom;
  }
  return out;
}

Capture shift_to_origin(Capture capture) {
  if (capture.records.empty()) return capture;
  double t0 = capture.records.front().ts_rel;
  for (const auto& r : capture.records) t0 = std::min(t0, r.ts_rel);
  for (auto& r : capture.records) r.ts_rel -= t0;
  return capture;
}

StreamSample make_sample(const Capture& capture, const std::string& video_id,
                         const std::string& stream_id, Split split,
                         double window_s, double bin_s) {
  StreamSample s;
  s.video_id = video_id;
  s.stream_id = stream_id;
  s.split = split;
  const auto raw = bucketize(capture, window_s, bin_s);
  const int cols = static_cast<int>(raw.size() / 2);
  s.features = standardize(raw, 2, cols);
  return s;
}

std::string format_sig9(double v) {
  char buf[64];
  const auto res =
      std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

std::string format_exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

void append_feature_row(std::string& out, const double* row, int n) {
  out.push_back('[');
  for (int i = 0; i < n; ++i) {
    if (i > 0) out.push_back(',');
    out += format_sig9(row[i]);
  }
  out.push_back(']');
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::string line;
  for (const auto& s : ds.samples) {
    if (s.features.size() != StreamSample::kFeatureSize) {
      throw std::runtime_error("expected 2x240 features for stream " + s.stream_id);
    }
    line.clear();
    line += "{\"video_id\":";
    line += json(s.video_id).dump();
    line += ",\"stream_id\":";
    line += json(s.stream_id).dump();
    line += ",\"split\":\"";
    line += split_name(s.split);
    line += "\",\"incoming\":";
    append_feature_row(line, s.features.data(), StreamSample::kBuckets);
    line += ",\"outgoing\":";
    append_feature_row(line, s.features.data() + StreamSample::kBuckets,
                       StreamSample::kBuckets);
    line += "}\n";
    f << line;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": malformed JSON: " + e.what());
    }
    StreamSample s;
    try {
      s.video_id = j.at("video_id").get<std::string>();
      s.stream_id = j.at("stream_id").get<std::string>();
      s.split = split_from_name(j.at("split").get<std::string>());
      const auto& in = j.at("incoming");
      const auto& out = j.at("outgoing");
      if (!in.is_array() || !out.is_array() ||
          in.size() != StreamSample::kBuckets ||
          out.size() != StreamSample::kBuckets) {
        throw std::runtime_error("expected 2x240");
      }
      s.features.resize(StreamSample::kFeatureSize);
      for (int i = 0; i < StreamSample::kBuckets; ++i) {
        s.features[static_cast<std::size_t>(i)] = in[i].get<double>();
        s.features[static_cast<std::size_t>(StreamSample::kBuckets + i)] =
            out[i].get<double>();
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": " +
                               e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Capture parse_capture_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  Capture c;
  // capture_id defaults to the file stem; a sidecar may override it
  std::string stem = path;
  if (const auto pos = stem.find_last_of('/'); pos != std::string::npos) {
    stem = stem.substr(pos + 1);
  }
  if (const auto pos = stem.rfind(".csv"); pos != std::string::npos) {
    stem = stem.substr(0, pos);
  }
  c.capture_id = stem;

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(f, line)) return c;  // empty file: no records
  ++lineno;
  // tolerate \r\n input
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "ts_rel,direction,bytes") {
    throw std::runtime_error(path + ": line 1: expected header ts_rel,direction,bytes");
  }
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": expected 3 comma-separated fields");
    }
    FlowRecord r;
    char* end = nullptr;
    const std::string ts = line.substr(0, c1);
    r.ts_rel = std::strtod(ts.c_str(), &end);
    if (end == ts.c_str() || *end != '\0' || !(r.ts_rel >= 0.0)) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": bad ts_rel '" + ts + "'");
    }
    const std::string dir = line.substr(c1 + 1, c2 - c1 - 1);
    if (dir == "in") {
      r.direction = Direction::kIncoming;
    } else if (dir == "out") {
      r.direction = Direction::kOutgoing;
    } else {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": direction must be in|out, got '" + dir + "'");
    }
    const std::string by = line.substr(c2 + 1);
    r.bytes = std::strtoll(by.c_str(), &end, 10);
    if (end == by.c_str() || *end != '\0' || r.bytes < 0) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": bad bytes '" + by + "'");
    }
    c.records.push_back(r);
  }
  return c;
}

}  // namespace streamid

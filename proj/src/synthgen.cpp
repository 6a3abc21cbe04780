#include "streamid/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "streamid/rng.hpp"

namespace streamid {

using nlohmann::json;

namespace {

constexpr double kWindowSeconds = 60.0;

void validate_noise(const NoiseConfig& n) {
  if (n.timing_jitter_s < 0.0 || n.size_noise_frac < 0.0 || n.drop_prob < 0.0 ||
      n.drop_prob > 1.0) {
    throw std::runtime_error("noise config out of range");
  }
}

}  // namespace

std::vector<VideoProfile> make_profiles(int n_videos, std::uint64_t seed,
                                        const std::string& id_prefix) {
  if (n_videos < 1) throw std::runtime_error("n_videos must be >= 1");
  std::vector<VideoProfile> profiles;
  profiles.reserve(static_cast<std::size_t>(n_videos));
  for (int i = 0; i < n_videos; ++i) {
    VideoProfile p;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s%05d", id_prefix.c_str(), i);
    p.video_id = idbuf;
    p.seed = seed_mix(seed, fnv1a64(p.video_id));
    Rng rng(p.seed);
    // continuous period so distinct videos rarely share burst cadence;
    // variable-bitrate-like lognormal sizes
    p.segment_period_s = rng.uniform(1.0, 5.0);
    const double mu = rng.uniform(10.8, 12.6);
    const double sigma = rng.uniform(0.25, 0.7);
    const int n_segments =
        static_cast<int>(std::ceil(kWindowSeconds / p.segment_period_s)) + 2;
    p.segment_sizes.reserve(static_cast<std::size_t>(n_segments));
    for (int s = 0; s < n_segments; ++s) {
      p.segment_sizes.push_back(std::exp(mu + sigma * rng.normal()));
    }
    profiles.push_back(std::move(p));
  }
  return profiles;
}

Capture synthesize_stream(const VideoProfile& profile, const NoiseConfig& noise,
                          std::uint64_t stream_seed, const BurstShape& shape) {
  validate_noise(noise);
  Rng rng(seed_mix(profile.seed, stream_seed));
  Capture c;
  c.capture_id = profile.video_id + "-s" + std::to_string(stream_seed);
  c.flow_key = "synthetic";
  c.meta["dns_name"] = "video.invalid";

  const double period = profile.segment_period_s * shape.time_dilation;
  for (std::size_t i = 0; i < profile.segment_sizes.size(); ++i) {
    const double base_t = static_cast<double>(i) * period;
    const double jitter = noise.timing_jitter_s * rng.normal();
    const double t = std::max(0.0, base_t + jitter);
    const double size = profile.segment_sizes[i] * shape.size_scale *
                        std::exp(noise.size_noise_frac * rng.normal());

    FlowRecord req;
    req.ts_rel = std::max(0.0, t - 0.05);
    req.direction = Direction::kOutgoing;
    req.bytes = std::llround(shape.request_bytes);
    c.records.push_back(req);

    const bool fragmented = rng.uniform() < noise.drop_prob;
    if (fragmented) {
      // part of the burst slips into the next quarter-second bucket
      const double frac = rng.uniform(0.3, 0.7);
      FlowRecord a;
      a.ts_rel = t;
      a.direction = Direction::kIncoming;
      a.bytes = std::llround(size * frac);
      FlowRecord b;
      b.ts_rel = t + 0.25;
      b.direction = Direction::kIncoming;
      b.bytes = std::llround(size * (1.0 - frac));
      c.records.push_back(a);
      c.records.push_back(b);
    } else {
      const int parts = shape.split_parts > 1 ? shape.split_parts : 1;
      for (int pi = 0; pi < parts; ++pi) {
        FlowRecord r;
        r.ts_rel = t + shape.part_gap_s * pi;
        r.direction = Direction::kIncoming;
        r.bytes = std::llround(size / parts);
        c.records.push_back(r);
      }
    }
  }
  return c;
}

namespace {

StreamSample sample_from_stream(const VideoProfile& profile,
                                const NoiseConfig& noise,
                                std::uint64_t stream_seed,
                                const BurstShape& shape, Split split) {
  Capture cap =
      shift_to_origin(synthesize_stream(profile, noise, stream_seed, shape));
  return make_sample(cap, profile.video_id,
                     profile.video_id + "-s" + std::to_string(stream_seed),
                     split);
}

}  // namespace

Benchmark build_benchmark(const BenchmarkSpec& spec) {
  if (spec.n_train_videos < 0 || spec.streams_per_video < 0 || spec.n_tune < 0 ||
      spec.n_out < 0) {
    throw std::runtime_error("benchmark spec: counts must be >= 0");
  }
  if (!(spec.train_fraction > 0.0) || !(spec.train_fraction < 1.0)) {
    throw std::runtime_error("benchmark spec: train_fraction must be in (0,1)");
  }
  if (spec.n_train_videos > 0 && spec.streams_per_video < 2) {
    throw std::runtime_error(
        "benchmark spec: streams_per_video must be >= 2 for a test split");
  }
  validate_noise(spec.noise);

  Benchmark b;
  if (spec.n_train_videos > 0) {
    const auto profiles = make_profiles(spec.n_train_videos, spec.seed, "v");
    int per_train = static_cast<int>(
        std::floor(spec.train_fraction * spec.streams_per_video + 0.5));
    per_train = std::max(1, std::min(spec.streams_per_video - 1, per_train));
    for (const auto& p : profiles) {
      for (int s = 0; s < spec.streams_per_video; ++s) {
        const Split split = s < per_train ? Split::kTrain : Split::kTest;
        b.train_test.samples.push_back(sample_from_stream(
            p, spec.noise, static_cast<std::uint64_t>(s), spec.shape, split));
      }
    }
  }
  if (spec.n_tune > 0) {
    const auto profiles = make_profiles(spec.n_tune, spec.seed, "tune");
    for (const auto& p : profiles) {
      b.tune.samples.push_back(
          sample_from_stream(p, spec.noise, 0, spec.shape, Split::kTune));
    }
  }
  if (spec.n_out > 0) {
    const auto profiles = make_profiles(spec.n_out, spec.seed, "out");
    for (const auto& p : profiles) {
      b.out.samples.push_back(
          sample_from_stream(p, spec.noise, 0, spec.shape, Split::kOut));
    }
  }
  return b;
}

namespace {

NoiseConfig noise_from_json(const json& j) {
  NoiseConfig n;
  n.timing_jitter_s = j.value("timing_jitter_s", 0.0);
  n.size_noise_frac = j.value("size_noise_frac", 0.0);
  n.drop_prob = j.value("drop_prob", 0.0);
  return n;
}

BurstShape shape_from_json(const json& j) {
  BurstShape s;
  s.time_dilation = j.value("time_dilation", 1.0);
  s.size_scale = j.value("size_scale", 1.0);
  s.split_parts = j.value("split_parts", 1);
  s.part_gap_s = j.value("part_gap_s", 0.25);
  s.request_bytes = j.value("request_bytes", 400.0);
  return s;
}

}  // namespace

BenchmarkSpec benchmark_spec_from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  BenchmarkSpec spec;
  try {
    spec.n_train_videos = j.at("n_train_videos").get<int>();
    spec.streams_per_video = j.at("streams_per_video").get<int>();
    spec.n_tune = j.value("n_tune", 0);
    spec.n_out = j.value("n_out", 0);
    spec.seed = j.value("seed", 0ULL);
    spec.train_fraction = j.value("train_fraction", 0.8);
    if (j.contains("noise")) spec.noise = noise_from_json(j.at("noise"));
    if (j.contains("shape")) spec.shape = shape_from_json(j.at("shape"));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": bad benchmark spec: " + e.what());
  }
  return spec;
}

}  // namespace streamid

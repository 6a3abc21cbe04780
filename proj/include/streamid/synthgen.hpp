#ifndef STREAMID_SYNTHGEN_HPP_
#define STREAMID_SYNTHGEN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "streamid/flowio.hpp"

namespace streamid {

// A synthetic video: its segment-size fingerprint and delivery period.
// Generation is a pure function of (video_id, dataset seed).
struct VideoProfile {
  std::string video_id;
  std::vector<double> segment_sizes;  // bytes per segment, > 0
  double segment_period_s = 2.0;
  std::uint64_t seed = 0;  // per-profile seed, derives per-stream seeds
};

struct NoiseConfig {
  double timing_jitter_s = 0.0;   // gaussian std on burst arrival times
  double size_noise_frac = 0.0;   // lognormal sigma on burst sizes
  double drop_prob = 0.0;         // P(segment fragments across adjacent buckets)
};

// Client-side delivery pattern; a second shape stands in for a different
// streaming controller (the transfer experiments' target domain).
struct BurstShape {
  double time_dilation = 1.0;   // stretches the segment clock
  double size_scale = 1.0;      // scales all segment sizes
  int split_parts = 1;          // burst delivered in this many spaced chunks
  double part_gap_s = 0.25;     // spacing between chunks
  double request_bytes = 400.0; // outgoing request preceding each burst
};

std::vector<VideoProfile> make_profiles(int n_videos, std::uint64_t seed,
                                        const std::string& id_prefix = "v");

Capture synthesize_stream(const VideoProfile& profile, const NoiseConfig& noise,
                          std::uint64_t stream_seed,
                          const BurstShape& shape = BurstShape{});

struct BenchmarkSpec {
  int n_train_videos = 20;
  int streams_per_video = 100;
  int n_tune = 0;  // tune videos, one stream each
  int n_out = 0;   // out-of-distribution videos, one stream each
  NoiseConfig noise;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  BurstShape shape;
};

struct Benchmark {
  Dataset train_test;  // train + test splits over the same videos
  Dataset tune;
  Dataset out;
};

// Builds disjoint-video train/test, tune and out datasets. Deterministic:
// the same spec yields byte-identical serialized datasets.
Benchmark build_benchmark(const BenchmarkSpec& spec);

BenchmarkSpec benchmark_spec_from_json_file(const std::string& path);

}  // namespace streamid

#endif  // STREAMID_SYNTHGEN_HPP_

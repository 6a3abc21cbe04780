#ifndef STREAMID_FLOWIO_HPP_
#define STREAMID_FLOWIO_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace streamid {

enum class Direction { kIncoming, kOutgoing };

// One observed transfer: bytes seen in a direction at a capture-relative time.
struct FlowRecord {
  double ts_rel = 0.0;  // seconds since capture start, >= 0
  Direction direction = Direction::kIncoming;
  long long bytes = 0;  // payload size, >= 0
};

// One candidate flow of a recording (e.g. one 5-tuple).
struct Capture {
  std::string capture_id;
  std::vector<FlowRecord> records;
  std::string flow_key;
  std::map<std::string, std::string> meta;  // e.g. dns_name, warning
};

enum class Split { kTrain, kTest, kTune, kOut };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// One labeled stream: the standardized 2x240 bucketed volume matrix.
// Row 0 is incoming, row 1 outgoing; row-major storage.
struct StreamSample {
  static constexpr int kDirections = 2;
  static constexpr int kBuckets = 240;
  static constexpr int kFeatureSize = kDirections * kBuckets;

  std::string video_id;
  std::string stream_id;
  Split split = Split::kTrain;
  std::vector<double> features;  // kDirections * kBuckets
};

// Ordered sample collection with a deterministic class-index mapping
// (distinct video_ids in lexicographic order).
struct Dataset {
  std::vector<StreamSample> samples;

  std::vector<std::string> class_ids() const;
  // Index into class_ids() per sample.
  std::vector<int> labels() const;
  Dataset filter_split(Split s) const;
  std::size_t size() const { return samples.size(); }
};

// Picks the video-bearing flow of one recording: the dns_name match when a
// hint is given, otherwise the capture with the largest byte total. Ties and
// multiple hint matches resolve to the lexicographically smallest capture_id,
// so the choice is permutation-invariant. An unmatched hint falls back to the
// byte-volume rule and sets meta["warning"] on the returned capture.
Capture select_video_flow(const std::vector<Capture>& captures,
                          const std::optional<std::string>& dns_hint);

// Sums bytes per direction into floor(ts_rel / bin_s) buckets over
// [0, window_s); records at or beyond window_s are discarded. Returns a
// row-major 2 x (window_s/bin_s) matrix. Throws "invalid binning" when
// window_s/bin_s is not a positive integer.
std::vector<double> bucketize(const Capture& capture, double window_s = 60.0,
                              double bin_s = 0.25);

// Per-row (x - mean) / max(std, 1e-8) with the sample (n-1) standard
// deviation; constant rows map to zeros.
std::vector<double> standardize(const std::vector<double>& raw, int rows,
                                int cols);

// Shifts all records so the earliest one sits at t=0. Applied at ingestion so
// features do not depend on absolute capture start time.
Capture shift_to_origin(Capture capture);

StreamSample make_sample(const Capture& capture, const std::string& video_id,
                         const std::string& stream_id, Split split,
                         double window_s = 60.0, double bin_s = 0.25);

// NDJSON dataset format, one object per line:
// {"video_id": str, "stream_id": str, "split": str,
//  "incoming": [240 numbers], "outgoing": [240 numbers]}
// Numbers are written with 9 significant digits; a save/load/save cycle is
// byte-stable.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// CSV flow-record input: header "ts_rel,direction,bytes", direction in
// {in,out}. Malformed lines raise an error naming the line number.
Capture parse_capture_csv(const std::string& path);

// Decimal formatting helpers shared by the file writers.
std::string format_sig9(double v);
std::string format_exact(double v);

}  // namespace streamid

#endif  // STREAMID_FLOWIO_HPP_

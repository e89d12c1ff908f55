#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trajq/encoder.hpp"
#include "trajq/store.hpp"
#include "trajq/types.hpp"

namespace trajq {

struct SearchConfig {
  int stride_frames = 4;
  std::vector<double> length_factors{0.5, 1.0, 1.5, 2.0};
  int k = 10;
  double nms_iou = 0.5;
  int max_assignments_per_window = 256;
  // Panel ticks per second of store time; unset means one tick per frame.
  std::optional<double> ticks_per_second;
  int threads = 1;

  /// Throws FieldError naming the offending field.
  void validate() const;
  friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

struct MatchResult {
  Frame start_frame = 0;
  Frame end_frame = 0;
  std::vector<std::string> object_ids;  // aligned with query object order
  double score = 0.0;

  FrameRange range() const { return {start_frame, end_frame}; }
  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

struct Candidate {
  FrameRange window;
  std::vector<std::string> object_ids;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Number of store frames the query covers, counting both ends.
double query_span_frames(const VisualQuery& query, double store_fps, const SearchConfig& cfg);

/// Distinct window lengths (>= 2 frames) in ascending order.
std::vector<Frame> window_lengths(const VisualQuery& query, double store_fps, const SearchConfig& cfg);

/// Whether `traj` may fill a query role over `window`: its frame span covers
/// at least half the window and it has two or more boxes inside it.
bool eligible(const Trajectory& traj, FrameRange window);

/// Windows by ascending length then start; assignments in lexicographic order.
std::vector<Candidate> enumerate_candidates(const TrackStore& store, const VisualQuery& query, const SearchConfig& cfg);

/// Tracks of `object_ids` restricted to what resampling over `window` reads.
ClipWindow candidate_window(const TrackStore& store, const Candidate& candidate);

/// Sorted by descending score, then start, object ids and end.
std::vector<MatchResult> search(const TrackStore& store, const VisualQuery& query, const nn::EncoderWeights& weights,
                                const SearchConfig& cfg);

/// Straight-line reimplementation of search for small stores; throws
/// Error(kCapacity) "oracle scale exceeded" beyond 10 objects or 2000 frames.
std::vector<MatchResult> brute_force_search(const TrackStore& store, const VisualQuery& query,
                                            const nn::EncoderWeights& weights, const SearchConfig& cfg);

/// True if `a` sorts before `b` in result order.
bool result_before(const MatchResult& a, const MatchResult& b);

/// Greedy suppression of results sharing an object with an accepted result
/// at temporal IoU above `nms_iou`; input must be in result order.
std::vector<MatchResult> suppress(const std::vector<MatchResult>& sorted, double nms_iou, int k);

/// DTW over time with per-step cost equal to the mean Euclidean distance of
/// corresponding objects; masked steps carry the last present value.
double dtw_distance(const FeatureGrid& a, const FeatureGrid& b);

}  // namespace trajq

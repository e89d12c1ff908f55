#pragma once

#include <span>
#include <string>
#include <vector>

#include "trajq/types.hpp"

namespace trajq {

inline constexpr int kDefaultResampleLength = 32;

/// T uniformly spaced samples of one object over a time interval.
struct ResampledTrack {
  std::vector<BoxFeature> values;
  std::vector<std::uint8_t> mask;
};

/// Linear interpolation of (cx, cy, w, h) at T uniform positions across
/// `range`. Positions outside the trajectory's frame span are masked out and
/// carry the nearest endpoint's values.
ResampledTrack resample(const Trajectory& traj, FrameRange range, int T);

/// Joint, aspect-preserving normalization of several resampled objects into
/// the unit square (see README for the exact rule).
FeatureGrid normalize(std::span<const ResampledTrack> tracks);

/// Resample each window track over the window range, then normalize.
FeatureGrid window_to_grid(const ClipWindow& window, int T);

/// Throws Error(kInvalidArgument) naming the offending field path, e.g.
/// "objects[1].segments[0].points". `allowed_types` empty means any type.
void validate_query(const VisualQuery& q, std::span<const std::string> allowed_types = {});

/// Sketch to encoder input; objects keep query order.
FeatureGrid query_to_grid(const VisualQuery& q, int T);

/// Builds a sketch that replays a window: one segment per run of consecutive
/// frames, panel ticks equal to frames, nominal size = mean box size.
VisualQuery query_from_window(const ClipWindow& window, double canvas_w, double canvas_h);

/// |a ∩ b| / |a ∪ b| over inclusive integer ranges.
double temporal_iou(FrameRange a, FrameRange b);

}  // namespace trajq

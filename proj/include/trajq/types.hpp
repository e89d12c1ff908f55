#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace trajq {

using Frame = std::int64_t;

struct BoundingBox {
  Frame frame = 0;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Trajectory {
  std::string object_id;
  std::string object_type;
  std::vector<BoundingBox> boxes;  // strictly increasing frames

  Frame first_frame() const { return boxes.front().frame; }
  Frame last_frame() const { return boxes.back().frame; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Inclusive frame interval.
struct FrameRange {
  Frame start = 0;
  Frame end = 0;

  Frame length() const { return end - start + 1; }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

struct ClipWindow {
  FrameRange range;
  std::vector<Trajectory> tracks;  // canonical object order
};

struct QueryPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const QueryPoint&, const QueryPoint&) = default;
};

struct QuerySegment {
  double panel_start = 0.0;
  double panel_end = 0.0;
  std::vector<QueryPoint> points;
  friend bool operator==(const QuerySegment&, const QuerySegment&) = default;
};

struct QueryObject {
  std::string object_id;
  std::string object_type;
  double nominal_w = 0.0;
  double nominal_h = 0.0;
  std::vector<QuerySegment> segments;
  friend bool operator==(const QueryObject&, const QueryObject&) = default;
};

struct VisualQuery {
  double canvas_w = 0.0;
  double canvas_h = 0.0;
  std::vector<QueryObject> objects;

  double panel_begin() const;
  double panel_finish() const;
  friend bool operator==(const VisualQuery&, const VisualQuery&) = default;
};

/// Wildcard object type accepted by queries.
inline constexpr const char* kAnyType = "any";

using BoxFeature = std::array<double, 4>;  // cx, cy, w, h

/// Fixed-shape encoder input: num_objects x T x 4 values plus a presence mask.
struct FeatureGrid {
  int num_objects = 0;
  int T = 0;
  std::vector<double> values;        // [object][t][4]
  std::vector<std::uint8_t> mask;    // [object][t]

  FeatureGrid() = default;
  FeatureGrid(int objects, int steps)
      : num_objects(objects),
        T(steps),
        values(static_cast<std::size_t>(objects) * steps * 4, 0.0),
        mask(static_cast<std::size_t>(objects) * steps, 0) {}

  double& at(int o, int t, int c) { return values[(static_cast<std::size_t>(o) * T + t) * 4 + c]; }
  double at(int o, int t, int c) const { return values[(static_cast<std::size_t>(o) * T + t) * 4 + c]; }
  bool present(int o, int t) const { return mask[static_cast<std::size_t>(o) * T + t] != 0; }
  void set_present(int o, int t, bool p) { mask[static_cast<std::size_t>(o) * T + t] = p ? 1 : 0; }
  int count_present() const;

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;
};

}  // namespace trajq

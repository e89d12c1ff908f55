#include "trajq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "trajq/error.hpp"

namespace trajq {

namespace {

double uniform_position(double begin, double end, int i, int T) {
  return begin + (end - begin) * static_cast<double>(i) / static_cast<double>(T - 1);
}

BoxFeature feature_of(const BoundingBox& b) { return {b.cx, b.cy, b.w, b.h}; }

BoxFeature lerp(const BoxFeature& a, const BoxFeature& b, double alpha) {
  BoxFeature out{};
  for (int c = 0; c < 4; ++c) out[c] = a[c] + alpha * (b[c] - a[c]);
  return out;
}

std::string segment_path(std::size_t o, std::size_t s) {
  return "objects[" + std::to_string(o) + "].segments[" + std::to_string(s) + "]";
}

}  // namespace

int FeatureGrid::count_present() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

double VisualQuery::panel_begin() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& o : objects)
    for (const auto& s : o.segments) lo = std::min(lo, s.panel_start);
  return lo;
}

double VisualQuery::panel_finish() const {
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& o : objects)
    for (const auto& s : o.segments) hi = std::max(hi, s.panel_end);
  return hi;
}

ResampledTrack resample(const Trajectory& traj, FrameRange range, int T) {
  if (traj.boxes.empty()) throw Error(ErrorKind::kInvalidArgument, "empty trajectory");
  if (T < 2) throw Error(ErrorKind::kInvalidArgument, "invalid resample length");

  const auto& boxes = traj.boxes;
  const double first = static_cast<double>(boxes.front().frame);
  const double last = static_cast<double>(boxes.back().frame);

  ResampledTrack out;
  out.values.resize(T);
  out.mask.assign(T, 0);
  for (int i = 0; i < T; ++i) {
    const double p = uniform_position(static_cast<double>(range.start),
                                      static_cast<double>(range.end), i, T);
    if (p < first) {
      out.values[i] = feature_of(boxes.front());
      continue;
    }
    if (p > last) {
      out.values[i] = feature_of(boxes.back());
      continue;
    }
    out.mask[i] = 1;
    auto upper = std::upper_bound(boxes.begin(), boxes.end(), p,
                                  [](double v, const BoundingBox& b) { return v < static_cast<double>(b.frame); });
    if (upper == boxes.end()) {
      out.values[i] = feature_of(boxes.back());
      continue;
    }
    const BoundingBox& b = *upper;
    const BoundingBox& a = *(upper - 1);
    const double alpha = (p - static_cast<double>(a.frame)) / static_cast<double>(b.frame - a.frame);
    out.values[i] = lerp(feature_of(a), feature_of(b), alpha);
  }
  return out;
}

FeatureGrid normalize(std::span<const ResampledTrack> tracks) {
  if (tracks.empty()) throw Error(ErrorKind::kInvalidArgument, "empty window");
  const int T = static_cast<int>(tracks.front().values.size());
  for (const auto& t : tracks) {
    if (static_cast<int>(t.values.size()) != T || static_cast<int>(t.mask.size()) != T)
      throw Error(ErrorKind::kInvalidArgument, "inconsistent resample lengths");
  }

  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  bool any = false;
  for (const auto& t : tracks) {
    for (int i = 0; i < T; ++i) {
      if (!t.mask[i]) continue;
      any = true;
      const auto& v = t.values[i];
      min_x = std::min(min_x, v[0] - 0.5 * v[2]);
      max_x = std::max(max_x, v[0] + 0.5 * v[2]);
      min_y = std::min(min_y, v[1] - 0.5 * v[3]);
      max_y = std::max(max_y, v[1] + 0.5 * v[3]);
    }
  }
  if (!any) throw Error(ErrorKind::kInvalidArgument, "empty window");

  const double extent = std::max(max_x - min_x, max_y - min_y);
  const bool degenerate = !(extent > 0.0);
  const double scale = degenerate ? 1.0 : 1.0 / extent;

  FeatureGrid grid(static_cast<int>(tracks.size()), T);
  for (int o = 0; o < grid.num_objects; ++o) {
    const auto& t = tracks[o];
    for (int i = 0; i < T; ++i) {
      const auto& v = t.values[i];
      if (degenerate) {
        grid.at(o, i, 0) = 0.5;
        grid.at(o, i, 1) = 0.5;
      } else {
        grid.at(o, i, 0) = (v[0] - min_x) * scale;
        grid.at(o, i, 1) = (v[1] - min_y) * scale;
      }
      grid.at(o, i, 2) = v[2] * scale;
      grid.at(o, i, 3) = v[3] * scale;
      grid.set_present(o, i, t.mask[i] != 0);
    }
  }
  return grid;
}

FeatureGrid window_to_grid(const ClipWindow& window, int T) {
  std::vector<ResampledTrack> tracks;
  tracks.reserve(window.tracks.size());
  for (const auto& tr : window.tracks) tracks.push_back(resample(tr, window.range, T));
  return normalize(tracks);
}

void validate_query(const VisualQuery& q, std::span<const std::string> allowed_types) {
  if (!(q.canvas_w > 0.0) || !std::isfinite(q.canvas_w)) throw FieldError("canvasW", "must be a positive number");
  if (!(q.canvas_h > 0.0) || !std::isfinite(q.canvas_h)) throw FieldError("canvasH", "must be a positive number");
  if (q.objects.empty()) throw FieldError("objects", "query needs at least one object");

  std::set<std::string> ids;
  for (std::size_t o = 0; o < q.objects.size(); ++o) {
    const auto& obj = q.objects[o];
    const std::string path = "objects[" + std::to_string(o) + "]";
    if (obj.object_id.empty()) throw FieldError(path + ".id", "must be non-empty");
    if (!ids.insert(obj.object_id).second) throw FieldError(path + ".id", "duplicate object id '" + obj.object_id + "'");
    if (obj.object_type.empty()) throw FieldError(path + ".type", "must be non-empty");
    if (!allowed_types.empty() && obj.object_type != kAnyType &&
        std::find(allowed_types.begin(), allowed_types.end(), obj.object_type) == allowed_types.end())
      throw FieldError(path + ".type", "unknown object type '" + obj.object_type + "'");
    if (!(obj.nominal_w > 0.0) || !std::isfinite(obj.nominal_w)) throw FieldError(path + ".nominalW", "must be a positive number");
    if (!(obj.nominal_h > 0.0) || !std::isfinite(obj.nominal_h)) throw FieldError(path + ".nominalH", "must be a positive number");
    if (obj.segments.empty()) throw FieldError(path + ".segments", "object has no trajectory segments");

    for (std::size_t s = 0; s < obj.segments.size(); ++s) {
      const auto& seg = obj.segments[s];
      const std::string sp = segment_path(o, s);
      if (!std::isfinite(seg.panel_start)) throw FieldError(sp + ".panelStart", "must be finite");
      if (!std::isfinite(seg.panel_end)) throw FieldError(sp + ".panelEnd", "must be finite");
      if (!(seg.panel_start < seg.panel_end)) throw FieldError(sp + ".panelEnd", "panelEnd must exceed panelStart");
      if (seg.points.size() < 2) throw FieldError(sp + ".points", "need at least 2 points");
      for (std::size_t p = 0; p < seg.points.size(); ++p) {
        if (!std::isfinite(seg.points[p].x) || !std::isfinite(seg.points[p].y))
          throw FieldError(sp + ".points[" + std::to_string(p) + "]", "coordinates must be finite");
      }
      if (s > 0 && seg.panel_start < obj.segments[s - 1].panel_end)
        throw FieldError(sp + ".panelStart", "segments must be sorted and non-overlapping in panel time");
    }
  }
}

FeatureGrid query_to_grid(const VisualQuery& q, int T) {
  validate_query(q);
  if (T < 2) throw Error(ErrorKind::kInvalidArgument, "invalid resample length");

  const double begin = q.panel_begin();
  const double finish = q.panel_finish();

  std::vector<ResampledTrack> tracks;
  tracks.reserve(q.objects.size());
  for (const auto& obj : q.objects) {
    const auto& segs = obj.segments;
    auto point_feature = [&](const QueryPoint& p) { return BoxFeature{p.x, p.y, obj.nominal_w, obj.nominal_h}; };

    ResampledTrack tr;
    tr.values.resize(T);
    tr.mask.assign(T, 0);
    for (int i = 0; i < T; ++i) {
      const double u = uniform_position(begin, finish, i, T);
      if (u < segs.front().panel_start) {
        tr.values[i] = point_feature(segs.front().points.front());
        continue;
      }
      if (u > segs.back().panel_end) {
        tr.values[i] = point_feature(segs.back().points.back());
        continue;
      }
      tr.mask[i] = 1;
      auto it = std::upper_bound(segs.begin(), segs.end(), u,
                                 [](double v, const QuerySegment& s) { return v < s.panel_start; });
      const QuerySegment& seg = *(it - 1);
      if (u > seg.panel_end) {
        // idle between drags
        tr.values[i] = point_feature(seg.points.back());
        continue;
      }
      const auto n = static_cast<double>(seg.points.size() - 1);
      const double tau = (u - seg.panel_start) / (seg.panel_end - seg.panel_start) * n;
      auto j = static_cast<std::size_t>(std::floor(tau));
      j = std::min(j, seg.points.size() - 2);
      const double alpha = tau - static_cast<double>(j);
      tr.values[i] = lerp(point_feature(seg.points[j]), point_feature(seg.points[j + 1]), alpha);
    }
    tracks.push_back(std::move(tr));
  }
  return normalize(tracks);
}

VisualQuery query_from_window(const ClipWindow& window, double canvas_w, double canvas_h) {
  VisualQuery q;
  q.canvas_w = canvas_w;
  q.canvas_h = canvas_h;
  for (const auto& tr : window.tracks) {
    if (tr.boxes.empty()) throw Error(ErrorKind::kInvalidArgument, "empty trajectory");
    QueryObject obj;
    obj.object_id = tr.object_id;
    obj.object_type = tr.object_type;
    double sw = 0.0;
    double sh = 0.0;
    for (const auto& b : tr.boxes) {
      sw += b.w;
      sh += b.h;
    }
    obj.nominal_w = sw / static_cast<double>(tr.boxes.size());
    obj.nominal_h = sh / static_cast<double>(tr.boxes.size());

    std::size_t run_begin = 0;
    for (std::size_t i = 1; i <= tr.boxes.size(); ++i) {
      const bool run_ends = i == tr.boxes.size() || tr.boxes[i].frame != tr.boxes[i - 1].frame + 1;
      if (!run_ends) continue;
      if (i - run_begin >= 2) {
        QuerySegment seg;
        seg.panel_start = static_cast<double>(tr.boxes[run_begin].frame);
        seg.panel_end = static_cast<double>(tr.boxes[i - 1].frame);
        for (std::size_t k = run_begin; k < i; ++k) seg.points.push_back({tr.boxes[k].cx, tr.boxes[k].cy});
        obj.segments.push_back(std::move(seg));
      }
      run_begin = i;
    }
    if (obj.segments.empty())
      throw Error(ErrorKind::kInvalidArgument, "track '" + tr.object_id + "' has no run of consecutive frames");
    q.objects.push_back(std::move(obj));
  }
  return q;
}

double temporal_iou(FrameRange a, FrameRange b) {
  const Frame inter = std::max<Frame>(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
  const Frame uni = a.length() + b.length() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace trajq

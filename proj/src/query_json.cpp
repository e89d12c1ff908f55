#include "trajq/query_json.hpp"

#include <algorithm>
#include <cmath>

#include "trajq/error.hpp"
#include "trajq/geometry.hpp"

namespace trajq {

using nlohmann::json;

namespace {

const json& member(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FieldError(path, "is required");
  return *it;
}

double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) throw FieldError(path, "must be a number");
  return v.get<double>();
}

std::string string_at(const json& v, const std::string& path) {
  if (!v.is_string()) throw FieldError(path, "must be a string");
  return v.get<std::string>();
}

const json& object_at(const json& v, const std::string& path) {
  if (!v.is_object()) throw FieldError(path, "must be an object");
  return v;
}

const json& array_at(const json& v, const std::string& path) {
  if (!v.is_array()) throw FieldError(path, "must be an array");
  return v;
}

int int_at(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw FieldError(path, "must be an integer");
  const auto n = v.get<std::int64_t>();
  if (n < -2147483647 || n > 2147483647) throw FieldError(path, "is out of range");
  return static_cast<int>(n);
}

}  // namespace

VisualQuery query_from_json(const json& j, const std::string& prefix) {
  const std::string root = prefix.empty() ? "" : prefix;
  auto at = [&](const std::string& p) { return root + p; };
  const std::string whole = root.empty() ? "visual_query" : root.substr(0, root.size() - 1);
  object_at(j, whole);

  if (auto it = j.find("schemaVersion"); it != j.end()) {
    if (!it->is_number_integer() || it->get<int>() != kQuerySchemaVersion)
      throw FieldError(at("schemaVersion"), "unsupported schema version (expected 1)");
  }
  VisualQuery q;
  q.canvas_w = number_at(member(j, "canvasW", at("canvasW")), at("canvasW"));
  q.canvas_h = number_at(member(j, "canvasH", at("canvasH")), at("canvasH"));
  const double default_size = 0.1 * std::min(q.canvas_w, q.canvas_h);

  const json& objs = array_at(member(j, "objects", at("objects")), at("objects"));
  for (std::size_t o = 0; o < objs.size(); ++o) {
    const std::string op = at("objects[" + std::to_string(o) + "]");
    const json& jo = object_at(objs[o], op);
    QueryObject obj;
    obj.object_id = string_at(member(jo, "id", op + ".id"), op + ".id");
    obj.object_type = string_at(member(jo, "type", op + ".type"), op + ".type");
    obj.nominal_w = jo.contains("nominalW") ? number_at(jo["nominalW"], op + ".nominalW") : default_size;
    obj.nominal_h = jo.contains("nominalH") ? number_at(jo["nominalH"], op + ".nominalH") : default_size;
    const json& segs = array_at(member(jo, "segments", op + ".segments"), op + ".segments");
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const std::string sp = op + ".segments[" + std::to_string(s) + "]";
      const json& js = object_at(segs[s], sp);
      QuerySegment seg;
      seg.panel_start = number_at(member(js, "panelStart", sp + ".panelStart"), sp + ".panelStart");
      seg.panel_end = number_at(member(js, "panelEnd", sp + ".panelEnd"), sp + ".panelEnd");
      const json& pts = array_at(member(js, "points", sp + ".points"), sp + ".points");
      for (std::size_t k = 0; k < pts.size(); ++k) {
        const std::string pp = sp + ".points[" + std::to_string(k) + "]";
        if (!pts[k].is_array() || pts[k].size() != 2) throw FieldError(pp, "must be an [x, y] pair");
        seg.points.push_back({number_at(pts[k][0], pp), number_at(pts[k][1], pp)});
      }
      obj.segments.push_back(std::move(seg));
    }
    q.objects.push_back(std::move(obj));
  }
  return q;
}

json query_to_json(const VisualQuery& q) {
  json objs = json::array();
  for (const auto& o : q.objects) {
    json segs = json::array();
    for (const auto& s : o.segments) {
      json pts = json::array();
      for (const auto& p : s.points) pts.push_back({p.x, p.y});
      segs.push_back({{"panelStart", s.panel_start}, {"panelEnd", s.panel_end}, {"points", std::move(pts)}});
    }
    objs.push_back({{"id", o.object_id},
                    {"type", o.object_type},
                    {"nominalW", o.nominal_w},
                    {"nominalH", o.nominal_h},
                    {"segments", std::move(segs)}});
  }
  return {{"schemaVersion", kQuerySchemaVersion}, {"canvasW", q.canvas_w}, {"canvasH", q.canvas_h}, {"objects", std::move(objs)}};
}

SearchConfig search_config_from_json(const json& j, SearchConfig base) {
  object_at(j, "search");
  for (const auto& [key, v] : j.items()) {
    const std::string path = "search." + key;
    if (key == "stride_frames") {
      base.stride_frames = int_at(v, path);
    } else if (key == "length_factors") {
      array_at(v, path);
      base.length_factors.clear();
      for (std::size_t i = 0; i < v.size(); ++i)
        base.length_factors.push_back(number_at(v[i], path + "[" + std::to_string(i) + "]"));
    } else if (key == "k") {
      base.k = int_at(v, path);
    } else if (key == "nms_iou") {
      base.nms_iou = number_at(v, path);
    } else if (key == "max_assignments_per_window") {
      base.max_assignments_per_window = int_at(v, path);
    } else if (key == "ticks_per_second") {
      if (v.is_null()) base.ticks_per_second.reset();
      else base.ticks_per_second = number_at(v, path);
    } else if (key == "threads") {
      base.threads = int_at(v, path);
    } else {
      throw FieldError(path, "unknown search option");
    }
  }
  return base;
}

json search_config_to_json(const SearchConfig& c) {
  json j{{"stride_frames", c.stride_frames},
         {"length_factors", c.length_factors},
         {"k", c.k},
         {"nms_iou", c.nms_iou},
         {"max_assignments_per_window", c.max_assignments_per_window},
         {"threads", c.threads}};
  j["ticks_per_second"] = c.ticks_per_second ? json(*c.ticks_per_second) : json(nullptr);
  return j;
}

json grid_to_json(const FeatureGrid& g, std::span<const std::string> object_ids) {
  json tracks = json::array();
  for (int o = 0; o < g.num_objects; ++o) {
    json values = json::array();
    json mask = json::array();
    for (int t = 0; t < g.T; ++t) {
      values.push_back({g.at(o, t, 0), g.at(o, t, 1), g.at(o, t, 2), g.at(o, t, 3)});
      mask.push_back(g.present(o, t));
    }
    json tr{{"values", std::move(values)}, {"mask", std::move(mask)}};
    if (static_cast<std::size_t>(o) < object_ids.size()) tr["object_id"] = object_ids[static_cast<std::size_t>(o)];
    tracks.push_back(std::move(tr));
  }
  return {{"T", g.T}, {"tracks", std::move(tracks)}};
}

json match_to_json(const MatchResult& r) {
  return {{"start_frame", r.start_frame}, {"end_frame", r.end_frame}, {"object_ids", r.object_ids}, {"score", r.score}};
}

QueryOutcome run_query(const TrackStore& store, const VisualQuery& query, const nn::EncoderWeights& weights,
                       const SearchConfig& cfg, std::span<const std::string> allowed_types) {
  validate_query(query, allowed_types);
  cfg.validate();
  QueryOutcome out;
  out.query = query;
  out.results = search(store, query, weights, cfg);
  out.previews.reserve(out.results.size());
  for (const auto& r : out.results)
    out.previews.push_back(window_to_grid(candidate_window(store, {r.range(), r.object_ids}), weights.config().T));
  return out;
}

std::vector<json> result_records(const QueryOutcome& outcome) {
  std::vector<json> records;
  records.reserve(outcome.results.size());
  for (std::size_t i = 0; i < outcome.results.size(); ++i) {
    json rec = match_to_json(outcome.results[i]);
    rec["rank"] = i + 1;
    rec["preview"] = grid_to_json(outcome.previews[i], outcome.results[i].object_ids);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace trajq

#include "track_json.hpp"

#include <charconv>
#include <cmath>

#include "trajq/error.hpp"

namespace trajq::detail {

using nlohmann::json;

const json& require(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::kParse, where + ": missing field '" + key + "'");
  return *it;
}

json track_to_json(const Trajectory& traj) {
  json boxes = json::array();
  for (const auto& b : traj.boxes) boxes.push_back(json::array({b.frame, b.cx, b.cy, b.w, b.h}));
  return json{{"object_id", traj.object_id}, {"object_type", traj.object_type}, {"boxes", std::move(boxes)}};
}

void check_track(const Trajectory& traj, const std::string& where) {
  if (traj.boxes.empty()) throw Error(ErrorKind::kParse, where + ": trajectory has no boxes");
  for (std::size_t i = 0; i < traj.boxes.size(); ++i) {
    const auto& b = traj.boxes[i];
    const std::string at = where + ".boxes[" + std::to_string(i) + "]";
    if (b.frame < 0) throw Error(ErrorKind::kParse, at + ": negative frame");
    if (!(b.w > 0.0) || !(b.h > 0.0)) throw Error(ErrorKind::kParse, at + ": box width and height must be positive");
    if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !std::isfinite(b.w) || !std::isfinite(b.h))
      throw Error(ErrorKind::kParse, at + ": non-finite box value");
    if (i > 0 && b.frame <= traj.boxes[i - 1].frame)
      throw Error(ErrorKind::kParse, at + ": frames must be strictly increasing");
  }
}

Trajectory track_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::kParse, where + ": expected an object");
  Trajectory t;
  const auto& id = require(j, "object_id", where);
  if (id.is_string())
    t.object_id = id.get<std::string>();
  else if (id.is_number_integer())
    t.object_id = std::to_string(id.get<std::int64_t>());
  else
    throw Error(ErrorKind::kParse, where + ".object_id: expected a string");
  const auto& type = require(j, "object_type", where);
  if (!type.is_string()) throw Error(ErrorKind::kParse, where + ".object_type: expected a string");
  t.object_type = type.get<std::string>();

  const auto& boxes = require(j, "boxes", where);
  if (!boxes.is_array()) throw Error(ErrorKind::kParse, where + ".boxes: expected an array");
  t.boxes.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& row = boxes[i];
    const std::string at = where + ".boxes[" + std::to_string(i) + "]";
    if (!row.is_array() || row.size() != 5) throw Error(ErrorKind::kParse, at + ": expected [frame, cx, cy, w, h]");
    if (!row[0].is_number_integer()) throw Error(ErrorKind::kParse, at + ": frame must be an integer");
    for (int c = 1; c < 5; ++c)
      if (!row[c].is_number()) throw Error(ErrorKind::kParse, at + ": expected numeric box values");
    t.boxes.push_back({row[0].get<Frame>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>(),
                       row[4].get<double>()});
  }
  check_track(t, where);
  return t;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace trajq::detail

#include "trajq/store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "track_json.hpp"
#include "trajq/error.hpp"
#include "trajq/simulator.hpp"

namespace trajq {

using nlohmann::json;

TrackStore TrackStore::build(std::vector<Trajectory> trajectories, double fps, std::string dataset_id,
                             std::string name) {
  if (trajectories.empty()) throw Error(ErrorKind::kInvalidArgument, "no trajectories");
  if (!(fps > 0.0) || !std::isfinite(fps)) throw Error(ErrorKind::kInvalidArgument, "fps must be positive");

  TrackStore s;
  s.dataset_id_ = std::move(dataset_id);
  s.name_ = std::move(name);
  s.fps_ = fps;
  for (auto& t : trajectories) {
    detail::check_track(t, "trajectory '" + t.object_id + "'");
    s.frame_count_ = std::max(s.frame_count_, t.last_frame() + 1);
    const std::string id = t.object_id;
    if (!s.trajectories_.emplace(id, std::move(t)).second)
      throw Error(ErrorKind::kParse, "duplicate object id '" + id + "'");
  }
  s.index_.resize(static_cast<std::size_t>(s.frame_count_));
  // map iteration is in id order, so each per-frame list comes out sorted
  for (const auto& [id, t] : s.trajectories_)
    for (const auto& b : t.boxes) s.index_[static_cast<std::size_t>(b.frame)].push_back(id);
  return s;
}

const Trajectory& TrackStore::at(const std::string& object_id) const {
  auto it = trajectories_.find(object_id);
  if (it == trajectories_.end()) throw Error(ErrorKind::kNotFound, "unknown object id '" + object_id + "'");
  return it->second;
}

const std::vector<std::string>& TrackStore::active_at(Frame frame) const {
  static const std::vector<std::string> kNone;
  if (frame < 0 || frame >= frame_count_) return kNone;
  return index_[static_cast<std::size_t>(frame)];
}

std::map<std::string, int> TrackStore::type_histogram() const {
  std::map<std::string, int> h;
  for (const auto& [id, t] : trajectories_) ++h[t.object_type];
  return h;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

// Integral columns are sometimes written as "3.0" by exporters.
bool parse_integral(std::string_view text, long long& out) {
  if (parse_number(text, out)) return true;
  double d = 0.0;
  if (!parse_number(text, d) || std::floor(d) != d || std::abs(d) > 9e15) return false;
  out = static_cast<long long>(d);
  return true;
}

struct MotRow {
  Frame frame = 0;
  long long id = 0;
  double left = 0, top = 0, w = 0, h = 0;
  double conf = 1.0;
  bool has_class = false;
  int cls = -1;
  std::size_t line = 0;
};

}  // namespace

MotParseResult parse_mot(std::istream& in, const MotParseOptions& options) {
  MotParseResult result;
  std::map<long long, std::map<Frame, MotRow>> by_id;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      cols.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    const std::string at = "line " + std::to_string(line_no);
    if (cols.size() < 6) throw Error(ErrorKind::kParse, at + ": expected at least 6 comma-separated fields");

    MotRow row;
    row.line = line_no;
    long long frame = 0;
    if (!parse_integral(cols[0], frame)) throw Error(ErrorKind::kParse, at + ": frame is not an integer");
    if (frame < 1) throw Error(ErrorKind::kParse, at + ": MOT frames are 1-based");
    row.frame = static_cast<Frame>(frame - 1);
    if (!parse_integral(cols[1], row.id)) throw Error(ErrorKind::kParse, at + ": id is not an integer");
    if (!parse_number(cols[2], row.left) || !parse_number(cols[3], row.top) || !parse_number(cols[4], row.w) ||
        !parse_number(cols[5], row.h))
      throw Error(ErrorKind::kParse, at + ": box fields must be numbers");
    if (!std::isfinite(row.left) || !std::isfinite(row.top) || !(row.w > 0.0) || !(row.h > 0.0) ||
        !std::isfinite(row.w) || !std::isfinite(row.h))
      throw Error(ErrorKind::kParse, at + ": box width and height must be positive and finite");
    if (cols.size() > 6 && !trim(cols[6]).empty() && !parse_number(cols[6], row.conf))
      throw Error(ErrorKind::kParse, at + ": confidence is not a number");
    if (cols.size() > 7 && !trim(cols[7]).empty()) {
      long long cls = 0;
      if (!parse_integral(cols[7], cls)) throw Error(ErrorKind::kParse, at + ": class is not an integer");
      row.has_class = true;
      row.cls = static_cast<int>(cls);
    }
    if (row.conf < options.min_confidence) continue;

    auto& frames = by_id[row.id];
    auto [it, inserted] = frames.emplace(row.frame, row);
    if (!inserted) {
      result.warnings.push_back(at + ": duplicate row for frame " + std::to_string(frame) + ", id " +
                                std::to_string(row.id) + "; kept the higher-confidence row");
      if (row.conf > it->second.conf) it->second = row;
    }
  }

  for (const auto& [id, frames] : by_id) {
    Trajectory t;
    t.object_id = std::to_string(id);
    const MotRow& first = frames.begin()->second;
    auto type_of = [&](const MotRow& r) -> std::string {
      if (!r.has_class) return kAnyType;
      auto it = options.type_map.find(r.cls);
      return it == options.type_map.end() ? std::string(kAnyType) : it->second;
    };
    t.object_type = type_of(first);
    for (const auto& [frame, r] : frames) {
      if (type_of(r) != t.object_type) {
        result.warnings.push_back("line " + std::to_string(r.line) + ": id " + std::to_string(id) +
                                  " changes class; keeping type '" + t.object_type + "'");
      }
      t.boxes.push_back({frame, r.left + 0.5 * r.w, r.top + 0.5 * r.h, r.w, r.h});
    }
    result.trajectories.push_back(std::move(t));
  }
  std::sort(result.trajectories.begin(), result.trajectories.end(),
            [](const Trajectory& a, const Trajectory& b) { return a.object_id < b.object_id; });
  return result;
}

std::string serialize_mot(std::span<const Trajectory> trajectories, const std::map<std::string, int>& class_of_type) {
  std::ostringstream out;
  for (const auto& t : trajectories) {
    long long id = 0;
    if (!parse_number(std::string_view(t.object_id), id))
      throw Error(ErrorKind::kInvalidArgument, "MOT export needs integer object ids, got '" + t.object_id + "'");
    auto it = class_of_type.find(t.object_type);
    const int cls = it == class_of_type.end() ? -1 : it->second;
    for (const auto& b : t.boxes) {
      out << (b.frame + 1) << ',' << id << ',' << detail::format_double(b.cx - 0.5 * b.w) << ','
          << detail::format_double(b.cy - 0.5 * b.h) << ',' << detail::format_double(b.w) << ','
          << detail::format_double(b.h) << ",1," << cls << '\n';
    }
  }
  return out.str();
}

std::map<int, std::string> default_mot_type_map() {
  return {{1, "person"}, {2, "person"}, {3, "car"}, {4, "bicycle"}, {5, "motorcycle"}, {7, "person"}};
}

std::vector<std::string> default_object_types() {
  return {"person",        "bicycle",      "car",          "motorcycle",   "airplane",     "bus",
          "train",         "truck",        "boat",         "traffic light", "fire hydrant", "stop sign",
          "parking meter", "bench",        "bird",         "cat",          "dog",          "horse",
          "sheep",         "cow",          "elephant",     "bear",         "zebra",        "giraffe",
          "backpack",      "umbrella",     "handbag",      "tie",          "suitcase",     "frisbee",
          "skis",          "snowboard",    "sports ball",  "kite",         "baseball bat", "baseball glove",
          "skateboard",    "surfboard",    "tennis racket", "bottle",      "wine glass",   "cup",
          "fork",          "knife",        "spoon",        "bowl",         "banana",       "apple",
          "sandwich",      "orange",       "broccoli",     "carrot",       "hot dog",      "pizza",
          "donut",         "cake",         "chair",        "couch",        "potted plant", "bed",
          "dining table",  "toilet",       "tv",           "laptop",       "mouse",        "remote",
          "keyboard",      "cell phone",   "microwave",    "oven",         "toaster",      "sink",
          "refrigerator",  "book",         "clock",        "vase",         "scissors",     "teddy bear",
          "hair drier",    "toothbrush"};
}

TrackStore store_from_clips(std::span<const sim::LabeledClip> clips, Frame gap_frames, std::string dataset_id) {
  if (clips.empty()) throw Error(ErrorKind::kInvalidArgument, "no trajectories");
  std::vector<Trajectory> trajs;
  Frame offset = 0;
  for (const auto& clip : clips) {
    for (const auto& t : clip.tracks) {
      Trajectory shifted = t;
      shifted.object_id = "e" + std::to_string(clip.event_id) + ".c" + std::to_string(clip.camera_index) + "." + t.object_id;
      for (auto& b : shifted.boxes) b.frame += offset;
      trajs.push_back(std::move(shifted));
    }
    offset += clip.frame_count + gap_frames;
  }
  return TrackStore::build(std::move(trajs), clips.front().fps, std::move(dataset_id));
}

void save_store(const std::filesystem::path& path, const TrackStore& store) {
  if (!store.initialized()) throw Error(ErrorKind::kInvalidArgument, "store not initialized");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open '" + tmp + "' for writing");
    out << json{{"format", "trajq-store"},
                {"version", 1},
                {"dataset_id", store.dataset_id()},
                {"name", store.name()},
                {"fps", store.fps()},
                {"frame_count", store.frame_count()},
                {"tracks", store.size()}}
               .dump()
        << '\n';
    for (const auto& [id, t] : store.trajectories()) out << detail::track_to_json(t).dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::kIo, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot move '" + tmp + "' to '" + path.string() + "': " + ec.message());
}

TrackStore parse_store(std::istream& in, const std::string& origin) {
  std::string header_line;
  std::size_t line_no = 0;
  while (header_line.empty() && std::getline(in, header_line)) ++line_no;
  if (header_line.empty()) throw Error(ErrorKind::kParse, origin + ": empty file, missing store header");
  const std::string where = origin + ":" + std::to_string(line_no);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, where + ": header is not valid JSON: " + e.what());
  }
  if (!header.is_object()) throw Error(ErrorKind::kParse, where + ": header must be a JSON object");
  const auto& format = detail::require(header, "format", where);

  if (format == "trajq-dataset") {
    std::stringstream rest;
    rest << header_line << '\n' << in.rdbuf();
    const sim::Dataset ds = sim::parse_dataset(rest, origin);
    return store_from_clips(ds.clips, kClipGapFrames, "");
  }
  if (format != "trajq-store") throw Error(ErrorKind::kParse, where + ": field 'format' must be trajq-store or trajq-dataset");

  auto field = [&](const char* key) -> const json& { return detail::require(header, key, where); };
  if (field("version") != 1) throw Error(ErrorKind::kParse, where + ": unsupported field 'version'");
  const auto& id = field("dataset_id");
  if (!id.is_string()) throw Error(ErrorKind::kParse, where + ": field 'dataset_id' must be a string");
  const auto& fps = field("fps");
  if (!fps.is_number() || !(fps.get<double>() > 0.0)) throw Error(ErrorKind::kParse, where + ": field 'fps' must be positive");
  const auto& frame_count = field("frame_count");
  if (!frame_count.is_number_integer() || frame_count.get<Frame>() < 1)
    throw Error(ErrorKind::kParse, where + ": field 'frame_count' must be a positive integer");
  const auto& n_tracks = field("tracks");
  if (!n_tracks.is_number_integer()) throw Error(ErrorKind::kParse, where + ": field 'tracks' must be an integer");
  std::string name;
  if (auto it = header.find("name"); it != header.end() && it->is_string()) name = it->get<std::string>();

  std::vector<Trajectory> trajs;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string at = origin + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kParse, at + ": invalid JSON: " + e.what());
    }
    trajs.push_back(detail::track_from_json(j, at));
  }
  if (static_cast<std::int64_t>(trajs.size()) != n_tracks.get<std::int64_t>())
    throw Error(ErrorKind::kParse, where + ": field 'tracks' does not match the number of records");
  TrackStore store = TrackStore::build(std::move(trajs), fps.get<double>(), id.get<std::string>(), std::move(name));
  if (store.frame_count() != frame_count.get<Frame>())
    throw Error(ErrorKind::kParse, where + ": field 'frame_count' does not match the tracked frames");
  return store;
}

TrackStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open store '" + path.string() + "'");
  return parse_store(in, path.string());
}

}  // namespace trajq

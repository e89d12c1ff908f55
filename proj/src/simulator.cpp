#include "trajq/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "track_json.hpp"
#include "trajq/error.hpp"
#include "trajq/geometry.hpp"
#include "trajq/rng.hpp"

namespace trajq::sim {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNearPlane = 1e-3;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Vec3 unit(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a.x / n, a.y / n, a.z / n};
}

void require_config(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kConfig, "invalid simulator config: " + what);
}

double quantize(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

std::vector<ActorKind> SimConfig::default_kinds() {
  return {
      {"car", {1.8, 1.5, 4.5}, 3.0, 11.0, 0.55},
      {"person", {0.6, 1.75, 0.6}, 0.8, 2.0, 0.3},
      {"bicycle", {0.6, 1.7, 1.8}, 2.5, 6.0, 0.15},
  };
}

double Actor::total_duration() const {
  double d = 0.0;
  for (const auto& p : primitives) d += p.duration_s;
  return d;
}

Frame SyntheticEvent::frame_count() const {
  const double n = std::ceil(duration_s * fps - 1e-9);
  return std::max<Frame>(1, static_cast<Frame>(n));
}

void validate(const SimConfig& c) {
  require_config(c.fps > 0.0, "fps must be positive");
  require_config(c.actors_min >= 1 && c.actors_min <= c.actors_max, "actor count range");
  require_config(c.primitives_min >= 1 && c.primitives_min <= c.primitives_max, "primitive count range");
  require_config(c.duration_min_s > 0.0 && c.duration_min_s <= c.duration_max_s, "primitive duration range");
  require_config(c.turn_angle_min_rad >= 0.0 && c.turn_angle_min_rad <= c.turn_angle_max_rad &&
                     c.turn_angle_max_rad <= kPi,
                 "turn angle range");
  require_config(c.p_straight >= 0.0 && c.p_turn >= 0.0 && c.p_stop >= 0.0 && c.p_straight + c.p_turn + c.p_stop > 0.0,
                 "motion probabilities");
  require_config(c.spawn_half_extent_m >= 0.0 && c.arena_half_extent_m > c.spawn_half_extent_m,
                 "arena must strictly contain the spawn area");
  require_config(c.max_attempts >= 1, "max_attempts");
  require_config(!c.kinds.empty(), "actor kinds");
  double total_weight = 0.0;
  for (const auto& k : c.kinds) {
    require_config(!k.object_type.empty(), "actor kind type");
    require_config(k.size.x > 0.0 && k.size.y > 0.0 && k.size.z > 0.0, "actor size for " + k.object_type);
    require_config(k.speed_min >= 0.0 && k.speed_min <= k.speed_max, "speed range for " + k.object_type);
    require_config(k.weight >= 0.0, "kind weight");
    total_weight += k.weight;
  }
  require_config(total_weight > 0.0, "kind weights sum to zero");
  const auto& cam = c.camera;
  require_config(cam.radius_min > 0.0 && cam.radius_min <= cam.radius_max, "camera radius range");
  require_config(cam.height_min > 0.0 && cam.height_min <= cam.height_max, "camera height range");
  require_config(cam.focal_min > 0.0 && cam.focal_min <= cam.focal_max, "camera focal range");
  require_config(cam.image_w > 0 && cam.image_h > 0, "image size");
  require_config(cam.jitter_min >= 0.0 && cam.jitter_min <= cam.jitter_max, "jitter range");
  require_config(cam.max_attempts >= 1, "camera max_attempts");
}

PathState advance(const PathState& s, const MotionPrimitive& prim, double t) {
  switch (prim.kind) {
    case MotionKind::kStop:
      return s;
    case MotionKind::kStraight:
      return {s.x + prim.speed_mps * t * std::cos(s.heading), s.z - prim.speed_mps * t * std::sin(s.heading),
              s.heading};
    case MotionKind::kTurn: {
      const double omega = prim.turn_angle_rad / prim.duration_s;
      if (omega == 0.0) return advance(s, {MotionKind::kStraight, prim.duration_s, prim.speed_mps, 0.0}, t);
      const double h = s.heading + omega * t;
      const double r = prim.speed_mps / omega;
      return {s.x + r * (std::sin(h) - std::sin(s.heading)), s.z + r * (std::cos(h) - std::cos(s.heading)), h};
    }
  }
  return s;
}

PathState actor_state(const Actor& actor, double t) {
  PathState s{actor.start_pos.x, actor.start_pos.z, actor.start_heading_rad};
  double elapsed = 0.0;
  for (const auto& p : actor.primitives) {
    if (t <= elapsed + p.duration_s) return advance(s, p, std::max(0.0, t - elapsed));
    s = advance(s, p, p.duration_s);
    elapsed += p.duration_s;
  }
  return s;
}

namespace {

const ActorKind& pick_kind(Rng& rng, const std::vector<ActorKind>& kinds) {
  double total = 0.0;
  for (const auto& k : kinds) total += k.weight;
  double u = rng.uniform() * total;
  for (const auto& k : kinds) {
    if (u < k.weight) return k;
    u -= k.weight;
  }
  return kinds.back();
}

Actor random_actor(Rng& rng, const SimConfig& c) {
  const ActorKind& kind = pick_kind(rng, c.kinds);
  Actor a;
  a.object_type = kind.object_type;
  a.size = kind.size;
  a.start_pos = {rng.uniform(-c.spawn_half_extent_m, c.spawn_half_extent_m), 0.0,
                 rng.uniform(-c.spawn_half_extent_m, c.spawn_half_extent_m)};
  a.start_heading_rad = rng.uniform(0.0, 2.0 * kPi);
  const double base_speed = rng.uniform(kind.speed_min, kind.speed_max);
  const auto n = rng.uniform_int(c.primitives_min, c.primitives_max);
  const double p_total = c.p_straight + c.p_turn + c.p_stop;
  for (std::int64_t i = 0; i < n; ++i) {
    MotionPrimitive p;
    const double u = rng.uniform() * p_total;
    p.kind = u < c.p_straight ? MotionKind::kStraight
             : u < c.p_straight + c.p_turn ? MotionKind::kTurn
                                           : MotionKind::kStop;
    p.duration_s = rng.uniform(c.duration_min_s, c.duration_max_s);
    const double speed = base_speed * rng.uniform(0.85, 1.15);
    p.speed_mps = p.kind == MotionKind::kStop ? 0.0 : std::clamp(speed, kind.speed_min, kind.speed_max);
    if (p.kind == MotionKind::kTurn) {
      const double mag = rng.uniform(c.turn_angle_min_rad, c.turn_angle_max_rad);
      p.turn_angle_rad = rng.bernoulli(0.5) ? mag : -mag;
    }
    a.primitives.push_back(p);
  }
  return a;
}

bool inside_arena(const Actor& a, double fps, double half) {
  const double total = a.total_duration();
  const auto steps = static_cast<int>(std::ceil(total * fps)) + 1;
  for (int k = 0; k <= steps; ++k) {
    const double t = std::min(total, static_cast<double>(k) / fps);
    const PathState s = actor_state(a, t);
    if (std::abs(s.x) > half || std::abs(s.z) > half) return false;
  }
  return true;
}

}  // namespace

SyntheticEvent gen_event(std::uint64_t seed, const SimConfig& config, std::int64_t event_id) {
  validate(config);
  Rng rng(seed);
  SyntheticEvent ev;
  ev.event_id = event_id;
  ev.fps = config.fps;
  const auto n_actors = rng.uniform_int(config.actors_min, config.actors_max);
  for (std::int64_t i = 0; i < n_actors; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      Actor a = random_actor(rng, config);
      if (inside_arena(a, config.fps, config.arena_half_extent_m)) {
        ev.actors.push_back(std::move(a));
        placed = true;
      }
    }
    if (!placed)
      throw Error(ErrorKind::kConfig, "could not keep actor inside the arena after " +
                                          std::to_string(config.max_attempts) + " attempts");
  }
  for (const auto& a : ev.actors) ev.duration_s = std::max(ev.duration_s, a.total_duration());
  return ev;
}

Vec3 event_centroid(const SyntheticEvent& event) {
  double sx = 0.0;
  double sz = 0.0;
  std::int64_t n = 0;
  const Frame frames = event.frame_count();
  for (const auto& a : event.actors) {
    for (Frame k = 0; k < frames; ++k) {
      const PathState s = actor_state(a, static_cast<double>(k) / event.fps);
      sx += s.x;
      sz += s.z;
      ++n;
    }
  }
  if (n == 0) return {};
  return {sx / static_cast<double>(n), 0.0, sz / static_cast<double>(n)};
}

ImagePoint project_point(const CameraPose& cam, const Vec3& p) {
  const Vec3 fwd = unit(sub(cam.look_at, cam.position));
  const Vec3 right = unit(cross(fwd, Vec3{0.0, 1.0, 0.0}));
  const Vec3 up = cross(right, fwd);
  const Vec3 d = sub(p, cam.position);
  const double xc = dot(d, right);
  const double yc = dot(d, up);
  const double zc = dot(d, fwd);
  ImagePoint out;
  out.depth = zc;
  if (zc <= 0.0) return out;
  out.u = 0.5 * cam.image_w + cam.focal * xc / zc;
  out.v = 0.5 * cam.image_h - cam.focal * yc / zc;
  return out;
}

namespace {

bool in_image(const CameraPose& cam, const ImagePoint& p) {
  return p.depth > kNearPlane && p.u >= 0.0 && p.u < cam.image_w && p.v >= 0.0 && p.v < cam.image_h;
}

Vec3 actor_center(const Actor& a, const PathState& s) { return {s.x, 0.5 * a.size.y, s.z}; }

}  // namespace

CameraPose sample_camera(std::uint64_t seed, const CameraConfig& config, const SyntheticEvent& event) {
  Rng rng(seed);
  const Vec3 centroid = event_centroid(event);
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    CameraPose cam;
    const double azimuth = rng.uniform(0.0, 2.0 * kPi);
    const double radius = rng.uniform(config.radius_min, config.radius_max);
    const double height = rng.uniform(config.height_min, config.height_max);
    cam.focal = rng.uniform(config.focal_min, config.focal_max);
    cam.jitter_amp = rng.uniform(config.jitter_min, config.jitter_max);
    cam.image_w = config.image_w;
    cam.image_h = config.image_h;
    cam.look_at = centroid;
    cam.position = {centroid.x + radius * std::cos(azimuth), height, centroid.z + radius * std::sin(azimuth)};

    bool visible = true;
    for (const auto& a : event.actors) {
      const PathState start = actor_state(a, 0.0);
      const PathState finish = actor_state(a, a.total_duration());
      if (!in_image(cam, project_point(cam, actor_center(a, start))) ||
          !in_image(cam, project_point(cam, actor_center(a, finish)))) {
        visible = false;
        break;
      }
    }
    if (visible) return cam;
  }
  throw Error(ErrorKind::kConfig, "no camera pose kept the event in view after " +
                                      std::to_string(config.max_attempts) + " attempts");
}

LabeledClip project(const SyntheticEvent& event, const CameraPose& cam, std::uint64_t jitter_seed, int camera_index) {
  if (!(cam.focal > 0.0)) throw Error(ErrorKind::kInvalidArgument, "camera focal must be positive");
  if (cam.position == cam.look_at) throw Error(ErrorKind::kInvalidArgument, "camera position equals look_at");

  Rng rng(jitter_seed);
  LabeledClip clip;
  clip.event_id = event.event_id;
  clip.camera_index = camera_index;
  clip.fps = event.fps;
  clip.frame_count = event.frame_count();

  std::vector<Trajectory> tracks(event.actors.size());
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    tracks[i].object_id = std::to_string(i);
    tracks[i].object_type = event.actors[i].object_type;
  }

  for (Frame k = 0; k < clip.frame_count; ++k) {
    const double jx = rng.uniform(-cam.jitter_amp, cam.jitter_amp);
    const double jy = rng.uniform(-cam.jitter_amp, cam.jitter_amp);
    const double t = static_cast<double>(k) / event.fps;
    for (std::size_t i = 0; i < event.actors.size(); ++i) {
      const Actor& a = event.actors[i];
      const PathState s = actor_state(a, t);
      if (project_point(cam, actor_center(a, s)).depth <= kNearPlane) continue;

      const double fx = std::cos(s.heading);
      const double fz = -std::sin(s.heading);
      const double lx = -std::sin(s.heading);
      const double lz = -std::cos(s.heading);
      double umin = std::numeric_limits<double>::infinity();
      double vmin = umin;
      double umax = -umin;
      double vmax = -umin;
      bool behind = false;
      for (int corner = 0; corner < 8; ++corner) {
        const double along = (corner & 1 ? 0.5 : -0.5) * a.size.z;
        const double across = (corner & 2 ? 0.5 : -0.5) * a.size.x;
        const double y = corner & 4 ? a.size.y : 0.0;
        const ImagePoint ip = project_point(cam, {s.x + along * fx + across * lx, y, s.z + along * fz + across * lz});
        if (ip.depth <= kNearPlane) {
          behind = true;
          break;
        }
        umin = std::min(umin, ip.u);
        umax = std::max(umax, ip.u);
        vmin = std::min(vmin, ip.v);
        vmax = std::max(vmax, ip.v);
      }
      if (behind) continue;
      if (umax < 0.0 || umin > cam.image_w || vmax < 0.0 || vmin > cam.image_h) continue;
      tracks[i].boxes.push_back({k, 0.5 * (umin + umax) + jx, 0.5 * (vmin + vmax) + jy, umax - umin, vmax - vmin});
    }
  }

  for (auto& tr : tracks)
    if (!tr.boxes.empty()) clip.tracks.push_back(std::move(tr));
  if (clip.tracks.empty()) throw Error(ErrorKind::kInvalidArgument, "event not visible");
  return clip;
}

Dataset make_dataset(std::uint64_t seed, std::int64_t n_events, int cams_per_event, const SimConfig& config) {
  if (n_events < 2) throw Error(ErrorKind::kInvalidArgument, "dataset needs at least 2 events");
  if (cams_per_event < 2) throw Error(ErrorKind::kInvalidArgument, "dataset needs at least 2 cameras per event");
  validate(config);

  Dataset ds;
  ds.manifest = {seed, config_hash(config), n_events, cams_per_event, n_events * cams_per_event};
  ds.clips.reserve(static_cast<std::size_t>(ds.manifest.clips));
  for (std::int64_t e = 0; e < n_events; ++e) {
    const SyntheticEvent event = gen_event(mix_seed(seed, 2 * static_cast<std::uint64_t>(e)), config, e);
    const std::uint64_t camera_stream = mix_seed(seed, 2 * static_cast<std::uint64_t>(e) + 1);
    for (int c = 0; c < cams_per_event; ++c) {
      bool done = false;
      for (int attempt = 0; attempt < config.camera.max_attempts && !done; ++attempt) {
        const std::uint64_t cam_seed = mix_seed(camera_stream, static_cast<std::uint64_t>(c) * 1000 + attempt);
        const CameraPose cam = sample_camera(cam_seed, config.camera, event);
        LabeledClip clip;
        try {
          clip = project(event, cam, mix_seed(cam_seed, 0xC0FFEE), c);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::kInvalidArgument) throw;
          continue;
        }
        for (auto& tr : clip.tracks) {
          for (auto& b : tr.boxes) {
            b.cx = quantize(b.cx);
            b.cy = quantize(b.cy);
            b.w = std::max(0.01, quantize(b.w));
            b.h = std::max(0.01, quantize(b.h));
          }
        }
        ds.clips.push_back(std::move(clip));
        done = true;
      }
      if (!done) throw Error(ErrorKind::kConfig, "event " + std::to_string(e) + " could not be recorded");
    }
  }
  return ds;
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::kConfig, "expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json config_json(const SimConfig& c) {
  json kinds = json::array();
  for (const auto& k : c.kinds)
    kinds.push_back({{"object_type", k.object_type},
                     {"size", vec_json(k.size)},
                     {"speed_min", k.speed_min},
                     {"speed_max", k.speed_max},
                     {"weight", k.weight}});
  const auto& cam = c.camera;
  return json{{"fps", c.fps},
              {"actors_min", c.actors_min},
              {"actors_max", c.actors_max},
              {"primitives_min", c.primitives_min},
              {"primitives_max", c.primitives_max},
              {"duration_min_s", c.duration_min_s},
              {"duration_max_s", c.duration_max_s},
              {"turn_angle_min_rad", c.turn_angle_min_rad},
              {"turn_angle_max_rad", c.turn_angle_max_rad},
              {"p_straight", c.p_straight},
              {"p_turn", c.p_turn},
              {"p_stop", c.p_stop},
              {"spawn_half_extent_m", c.spawn_half_extent_m},
              {"arena_half_extent_m", c.arena_half_extent_m},
              {"max_attempts", c.max_attempts},
              {"kinds", std::move(kinds)},
              {"camera",
               {{"radius_min", cam.radius_min},
                {"radius_max", cam.radius_max},
                {"height_min", cam.height_min},
                {"height_max", cam.height_max},
                {"focal_min", cam.focal_min},
                {"focal_max", cam.focal_max},
                {"image_w", cam.image_w},
                {"image_h", cam.image_h},
                {"jitter_min", cam.jitter_min},
                {"jitter_max", cam.jitter_max},
                {"max_attempts", cam.max_attempts}}}};
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kConfig, std::string("simulator config field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::string config_to_json(const SimConfig& config) { return config_json(config).dump(); }

SimConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("simulator config is not valid JSON: ") + e.what());
  }
  SimConfig c;
  read_opt(j, "fps", c.fps);
  read_opt(j, "actors_min", c.actors_min);
  read_opt(j, "actors_max", c.actors_max);
  read_opt(j, "primitives_min", c.primitives_min);
  read_opt(j, "primitives_max", c.primitives_max);
  read_opt(j, "duration_min_s", c.duration_min_s);
  read_opt(j, "duration_max_s", c.duration_max_s);
  read_opt(j, "turn_angle_min_rad", c.turn_angle_min_rad);
  read_opt(j, "turn_angle_max_rad", c.turn_angle_max_rad);
  read_opt(j, "p_straight", c.p_straight);
  read_opt(j, "p_turn", c.p_turn);
  read_opt(j, "p_stop", c.p_stop);
  read_opt(j, "spawn_half_extent_m", c.spawn_half_extent_m);
  read_opt(j, "arena_half_extent_m", c.arena_half_extent_m);
  read_opt(j, "max_attempts", c.max_attempts);
  if (auto it = j.find("kinds"); it != j.end()) {
    c.kinds.clear();
    for (const auto& k : *it) {
      ActorKind kind;
      read_opt(k, "object_type", kind.object_type);
      if (auto s = k.find("size"); s != k.end()) kind.size = vec_from(*s);
      read_opt(k, "speed_min", kind.speed_min);
      read_opt(k, "speed_max", kind.speed_max);
      read_opt(k, "weight", kind.weight);
      c.kinds.push_back(kind);
    }
  }
  if (auto it = j.find("camera"); it != j.end()) {
    auto& cam = c.camera;
    read_opt(*it, "radius_min", cam.radius_min);
    read_opt(*it, "radius_max", cam.radius_max);
    read_opt(*it, "height_min", cam.height_min);
    read_opt(*it, "height_max", cam.height_max);
    read_opt(*it, "focal_min", cam.focal_min);
    read_opt(*it, "focal_max", cam.focal_max);
    read_opt(*it, "image_w", cam.image_w);
    read_opt(*it, "image_h", cam.image_h);
    read_opt(*it, "jitter_min", cam.jitter_min);
    read_opt(*it, "jitter_max", cam.jitter_max);
    read_opt(*it, "max_attempts", cam.max_attempts);
  }
  validate(c);
  return c;
}

std::string config_hash(const SimConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  const auto& m = dataset.manifest;
  out << json{{"format", "trajq-dataset"},
              {"version", 1},
              {"seed", m.seed},
              {"config_hash", m.config_hash},
              {"events", m.events},
              {"cameras_per_event", m.cameras_per_event},
              {"clips", m.clips}}
             .dump()
      << '\n';
  for (const auto& clip : dataset.clips) {
    json tracks = json::array();
    for (const auto& t : clip.tracks) tracks.push_back(detail::track_to_json(t));
    out << json{{"event_id", clip.event_id},
                {"camera_index", clip.camera_index},
                {"fps", clip.fps},
                {"frame_count", clip.frame_count},
                {"tracks", std::move(tracks)}}
               .dump()
        << '\n';
  }
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, path.string());
}

Dataset parse_dataset(std::istream& in, const std::string& origin) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kParse, where + ": invalid JSON: " + e.what());
    }
    try {
      if (!have_header) {
        const auto& fmt = detail::require(j, "format", where);
        if (fmt != "trajq-dataset") throw Error(ErrorKind::kParse, where + ": field 'format' is not trajq-dataset");
        if (detail::require(j, "version", where) != 1)
          throw Error(ErrorKind::kParse, where + ": unsupported field 'version'");
        ds.manifest.seed = detail::require(j, "seed", where).get<std::uint64_t>();
        ds.manifest.config_hash = detail::require(j, "config_hash", where).get<std::string>();
        ds.manifest.events = detail::require(j, "events", where).get<std::int64_t>();
        ds.manifest.cameras_per_event = detail::require(j, "cameras_per_event", where).get<int>();
        ds.manifest.clips = detail::require(j, "clips", where).get<std::int64_t>();
        have_header = true;
        continue;
      }
      LabeledClip clip;
      clip.event_id = detail::require(j, "event_id", where).get<std::int64_t>();
      clip.camera_index = detail::require(j, "camera_index", where).get<int>();
      clip.fps = detail::require(j, "fps", where).get<double>();
      clip.frame_count = detail::require(j, "frame_count", where).get<Frame>();
      const auto& tracks = detail::require(j, "tracks", where);
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        Trajectory t = detail::track_from_json(tracks[i], where + ": tracks[" + std::to_string(i) + "]");
        if (t.last_frame() >= clip.frame_count)
          throw Error(ErrorKind::kParse, where + ": track frame beyond frame_count");
        clip.tracks.push_back(std::move(t));
      }
      ds.clips.push_back(std::move(clip));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, where + ": " + e.what());
    }
  }
  if (!have_header) throw Error(ErrorKind::kParse, origin + ": missing dataset header");
  if (static_cast<std::int64_t>(ds.clips.size()) != ds.manifest.clips)
    throw Error(ErrorKind::kParse, origin + ": header field 'clips' does not match record count");
  return ds;
}

std::filesystem::path resolve_dataset_path(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return path / kDatasetFileName;
  return path;
}

FeatureGrid clip_to_grid(const LabeledClip& clip, int T) {
  ClipWindow w;
  w.range = {0, std::max<Frame>(0, clip.frame_count - 1)};
  w.tracks = clip.tracks;
  return window_to_grid(w, T);
}

}  // namespace trajq::sim

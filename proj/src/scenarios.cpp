#include "trajq/scenarios.hpp"

#include <cmath>
#include <numbers>

#include "trajq/error.hpp"
#include "trajq/rng.hpp"

namespace trajq::sim {

namespace {

constexpr double kPi = std::numbers::pi;

const ActorKind& kind_named(const std::string& type) {
  static const std::vector<ActorKind> kinds = SimConfig::default_kinds();
  for (const auto& k : kinds)
    if (k.object_type == type) return k;
  throw Error(ErrorKind::kConfig, "unknown actor kind '" + type + "'");
}

Actor make_actor(const std::string& type, double x, double z, double heading) {
  Actor a;
  a.object_type = type;
  a.size = kind_named(type).size;
  a.start_pos = {x, 0.0, z};
  a.start_heading_rad = heading;
  return a;
}

MotionPrimitive straight(double duration, double speed) { return {MotionKind::kStraight, duration, speed, 0.0}; }

// Starting point so that a straight run of `length` metres along `heading` is
// centred on (cx, cz).
std::pair<double, double> centred_start(double cx, double cz, double heading, double length) {
  return {cx - 0.5 * length * std::cos(heading), cz + 0.5 * length * std::sin(heading)};
}

Actor turning_car(Rng& rng, double sign) {
  const double speed = rng.uniform(4.0, 6.0);
  const double lead = rng.uniform(1.8, 2.2);
  const double turn = rng.uniform(1.8, 2.2);
  const double tail = rng.uniform(1.8, 2.2);
  const double angle = sign * rng.uniform(0.45 * kPi, 0.55 * kPi);
  Actor a = make_actor("car", rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.0, 2.0 * kPi));
  a.primitives = {straight(lead, speed), {MotionKind::kTurn, turn, speed, angle}, straight(tail, speed)};
  return a;
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kLeftTurn: return "left_turn";
    case Scenario::kRightTurn: return "right_turn";
    case Scenario::kStraight: return "straight";
    case Scenario::kPerpendicular: return "perpendicular";
    case Scenario::kParallel: return "parallel";
  }
  return "unknown";
}

SyntheticEvent make_scenario_event(Scenario s, std::uint64_t seed, std::int64_t event_id, double fps) {
  if (!(fps > 0.0)) throw Error(ErrorKind::kInvalidArgument, "fps must be positive");
  Rng rng(seed);
  SyntheticEvent ev;
  ev.event_id = event_id;
  ev.fps = fps;
  switch (s) {
    case Scenario::kLeftTurn:
      ev.actors.push_back(turning_car(rng, 1.0));
      break;
    case Scenario::kRightTurn:
      ev.actors.push_back(turning_car(rng, -1.0));
      break;
    case Scenario::kStraight: {
      const double speed = rng.uniform(4.0, 8.0);
      const double duration = rng.uniform(4.0, 6.0);
      const double heading = rng.uniform(0.0, 2.0 * kPi);
      const auto [x, z] = centred_start(0.0, 0.0, heading, speed * duration);
      Actor a = make_actor("car", x, z, heading);
      a.primitives = {straight(duration, speed)};
      ev.actors.push_back(std::move(a));
      break;
    }
    case Scenario::kPerpendicular: {
      const double duration = rng.uniform(4.0, 6.0);
      const double car_speed = rng.uniform(3.0, 6.0);
      const double person_speed = rng.uniform(1.2, 1.8);
      const double heading = rng.uniform(0.0, 2.0 * kPi);
      const double cross = heading + (rng.bernoulli(0.5) ? 0.5 : -0.5) * kPi;
      const auto [cx, cz] = centred_start(0.0, 0.0, heading, car_speed * duration);
      const auto [px, pz] = centred_start(0.0, 0.0, cross, person_speed * duration);
      Actor car = make_actor("car", cx, cz, heading);
      car.primitives = {straight(duration, car_speed)};
      Actor person = make_actor("person", px, pz, cross);
      person.primitives = {straight(duration, person_speed)};
      ev.actors.push_back(std::move(car));
      ev.actors.push_back(std::move(person));
      break;
    }
    case Scenario::kParallel: {
      const double duration = rng.uniform(4.0, 6.0);
      const double speed = rng.uniform(1.2, 1.8);
      const double heading = rng.uniform(0.0, 2.0 * kPi);
      const double offset = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(2.5, 4.0);
      const auto [cx, cz] = centred_start(0.0, 0.0, heading, speed * duration);
      // Lateral left of the heading is (-sin, -cos) in (x, z).
      const double lx = -std::sin(heading) * offset;
      const double lz = -std::cos(heading) * offset;
      Actor car = make_actor("car", cx, cz, heading);
      car.primitives = {straight(duration, speed * rng.uniform(0.95, 1.05))};
      Actor person = make_actor("person", cx + lx, cz + lz, heading);
      person.primitives = {straight(duration, speed)};
      ev.actors.push_back(std::move(car));
      ev.actors.push_back(std::move(person));
      break;
    }
  }
  for (const auto& a : ev.actors) ev.duration_s = std::max(ev.duration_s, a.total_duration());
  return ev;
}

DemoStore build_demo_store(std::uint64_t seed, int per_scenario, const CameraConfig& camera, double fps) {
  if (per_scenario < 1) throw Error(ErrorKind::kInvalidArgument, "per_scenario must be >= 1");
  constexpr Scenario kAll[] = {Scenario::kLeftTurn, Scenario::kRightTurn, Scenario::kStraight, Scenario::kPerpendicular,
                               Scenario::kParallel};
  DemoStore demo;
  std::vector<LabeledClip> clips;
  Frame offset = 0;
  std::int64_t id = 0;
  for (int round = 0; round < per_scenario; ++round) {
    for (Scenario s : kAll) {
      const SyntheticEvent ev = make_scenario_event(s, mix_seed(seed, 2 * static_cast<std::uint64_t>(id)), id, fps);
      const std::uint64_t camera_stream = mix_seed(seed, 2 * static_cast<std::uint64_t>(id) + 1);
      bool done = false;
      for (int attempt = 0; attempt < camera.max_attempts && !done; ++attempt) {
        const std::uint64_t cam_seed = mix_seed(camera_stream, static_cast<std::uint64_t>(attempt));
        const CameraPose cam = sample_camera(cam_seed, camera, ev);
        LabeledClip clip;
        try {
          clip = project(ev, cam, mix_seed(cam_seed, 0xC0FFEE), 0);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::kInvalidArgument) throw;
          continue;
        }
        if (clip.tracks.size() != ev.actors.size()) continue;
        PlantedEvent planted{id, s, {offset, offset + clip.frame_count - 1}, {}};
        for (const auto& t : clip.tracks) planted.object_ids.push_back("e" + std::to_string(id) + ".c0." + t.object_id);
        demo.events.push_back(std::move(planted));
        offset += clip.frame_count + kClipGapFrames;
        clips.push_back(std::move(clip));
        done = true;
      }
      if (!done) throw Error(ErrorKind::kConfig, "scenario event " + std::to_string(id) + " could not be recorded");
      ++id;
    }
  }
  demo.store = store_from_clips(clips, kClipGapFrames, "demo");
  return demo;
}

}  // namespace trajq::sim

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "trajq/simulator.hpp"
#include "trajq/store.hpp"

namespace trajq::sim {

/// Scripted single-maneuver events used by demos and benchmarks.
enum class Scenario {
  kLeftTurn,       // one car: straight, turn left, straight
  kRightTurn,      // mirror of kLeftTurn
  kStraight,       // one car driving straight
  kPerpendicular,  // a car and a person crossing at right angles
  kParallel,       // a car and a person moving side by side
};

std::string_view scenario_name(Scenario s);

/// Timing, speed, heading and turn magnitude are randomized from `seed`.
SyntheticEvent make_scenario_event(Scenario s, std::uint64_t seed, std::int64_t event_id, double fps = 10.0);

struct PlantedEvent {
  std::int64_t event_id = 0;
  Scenario scenario = Scenario::kStraight;
  FrameRange frames;                   // location inside the demo store
  std::vector<std::string> object_ids;  // store ids, actor order
};

struct DemoStore {
  TrackStore store;
  std::vector<PlantedEvent> events;
};

/// Concatenates one camera view of `per_scenario` events of each scenario
/// kind (interleaved) into a single store, separated by idle gaps.
DemoStore build_demo_store(std::uint64_t seed, int per_scenario, const CameraConfig& camera = {}, double fps = 10.0);

}  // namespace trajq::sim

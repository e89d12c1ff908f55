#pragma once

// JSON encoding of trajectories shared by the dataset and store formats.

#include <string>

#include <nlohmann/json.hpp>

#include "trajq/types.hpp"

namespace trajq::detail {

nlohmann::json track_to_json(const Trajectory& traj);

/// `where` prefixes error messages, e.g. "line 3: tracks[1]".
Trajectory track_from_json(const nlohmann::json& j, const std::string& where);

/// Validates BoundingBox/Trajectory invariants; throws Error(kParse).
void check_track(const Trajectory& traj, const std::string& where);

/// Returns j[key] or throws Error(kParse) "<where>: missing field '<key>'".
const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where);

/// Shortest round-trip decimal for a double.
std::string format_double(double v);

}  // namespace trajq::detail

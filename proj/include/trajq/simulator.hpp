#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trajq/types.hpp"

namespace trajq::sim {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

enum class MotionKind { kStraight, kTurn, kStop };

/// One piece of an actor's ground-plane path. Positive turn angles turn left
/// (counter-clockwise seen from above, +y up).
struct MotionPrimitive {
  MotionKind kind = MotionKind::kStraight;
  double duration_s = 1.0;
  double speed_mps = 0.0;
  double turn_angle_rad = 0.0;
};

struct Actor {
  std::string object_type;
  Vec3 size;  // x = width (lateral), y = height, z = depth (along heading)
  Vec3 start_pos;
  double start_heading_rad = 0.0;
  std::vector<MotionPrimitive> primitives;

  double total_duration() const;
};

struct SyntheticEvent {
  std::int64_t event_id = 0;
  std::vector<Actor> actors;
  double fps = 10.0;
  double duration_s = 0.0;

  /// Frames 0..frame_count()-1 sample times k / fps < duration_s.
  Frame frame_count() const;
};

struct CameraPose {
  Vec3 position;
  Vec3 look_at;
  double focal = 800.0;
  int image_w = 1280;
  int image_h = 720;
  double jitter_amp = 0.0;
};

struct LabeledClip {
  std::int64_t event_id = 0;
  int camera_index = 0;
  double fps = 10.0;
  Frame frame_count = 0;
  std::vector<Trajectory> tracks;  // actor order, invisible actors omitted

  friend bool operator==(const LabeledClip&, const LabeledClip&) = default;
};

struct ActorKind {
  std::string object_type;
  Vec3 size;
  double speed_min = 1.0;
  double speed_max = 2.0;
  double weight = 1.0;
};

struct CameraConfig {
  double radius_min = 18.0;
  double radius_max = 40.0;
  double height_min = 6.0;
  double height_max = 25.0;
  double focal_min = 500.0;
  double focal_max = 1100.0;
  int image_w = 1280;
  int image_h = 720;
  double jitter_min = 0.0;
  double jitter_max = 2.0;
  int max_attempts = 100;
};

struct SimConfig {
  double fps = 10.0;
  int actors_min = 1;
  int actors_max = 3;
  int primitives_min = 1;
  int primitives_max = 4;
  double duration_min_s = 1.0;
  double duration_max_s = 3.5;
  double turn_angle_min_rad = 0.5;
  double turn_angle_max_rad = 2.0;
  double p_straight = 0.45;
  double p_turn = 0.4;
  double p_stop = 0.15;
  double spawn_half_extent_m = 10.0;
  double arena_half_extent_m = 35.0;
  int max_attempts = 100;
  std::vector<ActorKind> kinds = default_kinds();
  CameraConfig camera;

  static std::vector<ActorKind> default_kinds();
};

/// Throws Error(kConfig) describing the first unsatisfiable setting.
void validate(const SimConfig& config);

struct PathState {
  double x = 0.0;
  double z = 0.0;
  double heading = 0.0;
};

/// Ground-plane state after `t` seconds of one primitive.
PathState advance(const PathState& start, const MotionPrimitive& prim, double t);

/// Actor state at event time `t`; actors rest at their final pose once their
/// primitives are exhausted.
PathState actor_state(const Actor& actor, double t);

SyntheticEvent gen_event(std::uint64_t seed, const SimConfig& config, std::int64_t event_id = 0);

/// Mean ground position of all actors over all frames.
Vec3 event_centroid(const SyntheticEvent& event);

CameraPose sample_camera(std::uint64_t seed, const CameraConfig& config, const SyntheticEvent& event);

struct ImagePoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // along the optical axis; <= 0 means behind the camera
};

/// Pinhole projection with principal point at the image center.
ImagePoint project_point(const CameraPose& cam, const Vec3& p);

/// Records the event from one camera. Throws Error(kInvalidArgument)
/// "event not visible" if no actor is ever visible.
LabeledClip project(const SyntheticEvent& event, const CameraPose& cam, std::uint64_t jitter_seed, int camera_index = 0);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::int64_t events = 0;
  int cameras_per_event = 0;
  std::int64_t clips = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledClip> clips;  // ordered by (event_id, camera_index)
};

Dataset make_dataset(std::uint64_t seed, std::int64_t n_events, int cams_per_event, const SimConfig& config);

/// Hex FNV-1a of the canonical JSON encoding of the config.
std::string config_hash(const SimConfig& config);

std::string config_to_json(const SimConfig& config);
SimConfig config_from_json(const std::string& text);

void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::istream& in, const std::string& origin);

/// `path` may be a dataset file or a directory holding dataset.jsonl.
std::filesystem::path resolve_dataset_path(const std::filesystem::path& path);

inline constexpr const char* kDatasetFileName = "dataset.jsonl";

/// Whole-clip encoder input over frames [0, frame_count - 1].
FeatureGrid clip_to_grid(const LabeledClip& clip, int T);

}  // namespace trajq::sim

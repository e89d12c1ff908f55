#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "trajq/types.hpp"

namespace trajq {

namespace sim {
struct LabeledClip;
}

/// Immutable set of tracked objects with a frame -> active-objects index.
class TrackStore {
 public:
  TrackStore() = default;

  /// Throws Error(kInvalidArgument) "no trajectories" on empty input and
  /// Error(kParse) on invariant violations (unsorted frames, bad boxes,
  /// duplicate ids).
  static TrackStore build(std::vector<Trajectory> trajectories, double fps, std::string dataset_id = {},
                          std::string name = {});

  bool initialized() const { return !trajectories_.empty(); }
  const std::string& dataset_id() const { return dataset_id_; }
  const std::string& name() const { return name_; }
  double fps() const { return fps_; }
  Frame frame_count() const { return frame_count_; }
  std::size_t size() const { return trajectories_.size(); }

  const std::map<std::string, Trajectory>& trajectories() const { return trajectories_; }
  const Trajectory& at(const std::string& object_id) const;

  /// Sorted ids of objects whose trajectory has a box at `frame`.
  const std::vector<std::string>& active_at(Frame frame) const;

  std::map<std::string, int> type_histogram() const;

  friend bool operator==(const TrackStore&, const TrackStore&) = default;

 private:
  std::string dataset_id_;
  std::string name_;
  double fps_ = 0.0;
  Frame frame_count_ = 0;
  std::map<std::string, Trajectory> trajectories_;
  std::vector<std::vector<std::string>> index_;
};

inline TrackStore build_store(std::vector<Trajectory> trajectories, double fps, std::string dataset_id = {}) {
  return TrackStore::build(std::move(trajectories), fps, std::move(dataset_id));
}

struct MotParseOptions {
  std::map<int, std::string> type_map;
  double min_confidence = 0.0;  // rows with conf below this are dropped
};

struct MotParseResult {
  std::vector<Trajectory> trajectories;  // sorted by object id
  std::vector<std::string> warnings;
};

/// MOT-challenge rows: frame,id,bb_left,bb_top,bb_width,bb_height[,conf[,class[,...]]].
/// Frames are 1-based in the file and 0-based in the result.
MotParseResult parse_mot(std::istream& in, const MotParseOptions& options = {});

/// Inverse of parse_mot; object ids must be integers. `class_of_type` maps
/// types back to class numbers (unknown types are written as -1).
std::string serialize_mot(std::span<const Trajectory> trajectories, const std::map<std::string, int>& class_of_type = {});

/// MOT17 class numbering mapped onto our type names.
std::map<int, std::string> default_mot_type_map();

/// The common-object vocabulary offered to sketches (plus "any").
std::vector<std::string> default_object_types();

/// Concatenates clips along the time axis, `gap_frames` apart. Object ids are
/// "e<event>.c<camera>.<actor>".
TrackStore store_from_clips(std::span<const sim::LabeledClip> clips, Frame gap_frames, std::string dataset_id = {});

inline constexpr Frame kClipGapFrames = 20;

void save_store(const std::filesystem::path& path, const TrackStore& store);

/// Reads a store file, or a simulator dataset file (clips are concatenated
/// with store_from_clips).
TrackStore load_store(const std::filesystem::path& path);

/// Same as load_store but from in-memory text; `origin` labels errors.
TrackStore parse_store(std::istream& in, const std::string& origin);

}  // namespace trajq

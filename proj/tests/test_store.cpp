#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "trajq/error.hpp"
#include "trajq/simulator.hpp"
#include "trajq/store.hpp"

using namespace trajq;

namespace {

MotParseResult parse_text(const std::string& text, MotParseOptions opts = {}) {
  std::istringstream in(text);
  return parse_mot(in, opts);
}

std::string parse_error_of(const std::string& text) {
  try {
    parse_text(text);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("MOT rows become zero-based center boxes grouped by id") {
  MotParseOptions opts;
  opts.type_map = default_mot_type_map();
  const auto r = parse_text("1,7,10,20,4,6,1,3\n2,7,12,20,4,6,1,3\n\n1,2,0,0,2,2,0.5,1\n", opts);
  REQUIRE(r.trajectories.size() == 2);
  const auto& a = r.trajectories[0];
  CHECK(a.object_id == "2");
  CHECK(a.object_type == "person");
  const auto& b = r.trajectories[1];
  CHECK(b.object_type == "car");
  REQUIRE(b.boxes.size() == 2);
  CHECK(b.boxes[0] == BoundingBox{0, 12.0, 23.0, 4.0, 6.0});
  CHECK(b.boxes[1].frame == 1);
}

TEST_CASE("MOT rows without a class get the wildcard type") {
  const auto r = parse_text("1,1,0,0,1,1\n");
  CHECK(r.trajectories[0].object_type == kAnyType);
}

TEST_CASE("MOT parse errors carry the line number") {
  CHECK(parse_error_of("1,1,0,0,1,1\n1,2,0,0\n").find("line 2") == 0);
  CHECK(parse_error_of("0,1,0,0,1,1\n").find("1-based") != std::string::npos);
  CHECK(parse_error_of("1,x,0,0,1,1\n").find("id") != std::string::npos);
  CHECK(parse_error_of("1,1,0,0,-1,1\n").find("positive") != std::string::npos);
  CHECK(parse_error_of("1,1,0,0,1,1,abc\n").find("confidence") != std::string::npos);
}

TEST_CASE("MOT duplicates keep the higher-confidence row with a warning") {
  const auto r = parse_text("1,1,0,0,1,1,0.2\n1,1,5,5,1,1,0.9\n");
  REQUIRE(r.trajectories[0].boxes.size() == 1);
  CHECK(r.trajectories[0].boxes[0].cx == 5.5);
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("MOT confidence filter drops rows") {
  MotParseOptions opts;
  opts.min_confidence = 0.5;
  const auto r = parse_text("1,1,0,0,1,1,0.2\n2,1,0,0,1,1,0.9\n", opts);
  CHECK(r.trajectories[0].boxes.size() == 1);
}

TEST_CASE("MOT export round-trips through the parser") {
  const auto store = testutil::random_store(3, 5, 80);
  std::vector<Trajectory> ts;
  int n = 0;
  for (auto [id, t] : store.trajectories()) {
    t.object_id = std::to_string(++n);
    t.object_type = "car";
    for (auto& b : t.boxes) b.w = std::abs(b.w), b.h = std::abs(b.h);
    ts.push_back(t);
  }
  MotParseOptions opts;
  opts.type_map = {{3, "car"}};
  const auto back = parse_text(serialize_mot(ts, {{"car", 3}}), opts);
  REQUIRE(back.trajectories.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& x = ts[i];
    const auto& y = back.trajectories[i];
    REQUIRE(x.boxes.size() == y.boxes.size());
    CHECK(y.object_type == "car");
    for (std::size_t k = 0; k < x.boxes.size(); ++k) {
      CHECK(y.boxes[k].frame == x.boxes[k].frame);
      CHECK(y.boxes[k].cx == doctest::Approx(x.boxes[k].cx));
      CHECK(y.boxes[k].h == doctest::Approx(x.boxes[k].h));
    }
  }
}

TEST_CASE("store index lists the objects active at each frame") {
  std::vector<Trajectory> ts{{"b", "car", {{2, 0, 0, 1, 1}, {3, 0, 0, 1, 1}}},
                             {"a", "person", {{0, 0, 0, 1, 1}, {5, 0, 0, 1, 1}}}};
  const auto s = TrackStore::build(ts, 25.0, "x");
  CHECK(s.frame_count() == 6);
  CHECK(s.active_at(0) == std::vector<std::string>{"a"});
  CHECK(s.active_at(2) == std::vector<std::string>{"b"});
  CHECK(s.active_at(4).empty());
  CHECK(s.active_at(5) == std::vector<std::string>{"a"});
  CHECK(s.type_histogram() == std::map<std::string, int>{{"car", 1}, {"person", 1}});
  CHECK_THROWS_AS(s.at("zzz"), Error);
}

TEST_CASE("store build rejects invariant violations") {
  CHECK_THROWS_AS(TrackStore::build({}, 10.0), Error);
  std::vector<Trajectory> unsorted{{"a", "car", {{3, 0, 0, 1, 1}, {2, 0, 0, 1, 1}}}};
  CHECK_THROWS_AS(TrackStore::build(unsorted, 10.0), Error);
  std::vector<Trajectory> dup{{"a", "car", {{0, 0, 0, 1, 1}}}, {"a", "car", {{1, 0, 0, 1, 1}}}};
  CHECK_THROWS_AS(TrackStore::build(dup, 10.0), Error);
  std::vector<Trajectory> ok{{"a", "car", {{0, 0, 0, 1, 1}}}};
  CHECK_THROWS_AS(TrackStore::build(ok, 0.0), Error);
}

TEST_CASE("store files round-trip exactly") {
  testutil::TempDir dir("store");
  const auto store = testutil::random_store(11, 6, 120);
  const auto path = dir.path / "s.store.jsonl";
  save_store(path, store);
  const auto back = load_store(path);
  CHECK(back == store);
}

TEST_CASE("store loading reports malformed files") {
  testutil::TempDir dir("badstore");
  auto write = [&](const std::string& text) {
    std::ofstream(dir.path / "bad.jsonl") << text;
    return dir.path / "bad.jsonl";
  };
  CHECK_THROWS_AS(load_store(write("")), Error);
  CHECK_THROWS_AS(load_store(write("{\"format\":\"other\"}\n")), Error);
  CHECK_THROWS_AS(load_store(write("not json\n")), Error);
  CHECK_THROWS_AS(load_store(dir.path / "missing.jsonl"), Error);
}

TEST_CASE("simulator dataset files load directly as stores") {
  testutil::TempDir dir("dsstore");
  const auto ds = sim::make_dataset(5, 3, 2, sim::SimConfig{});
  sim::write_dataset(dir.path / "d.jsonl", ds);
  const auto store = load_store(dir.path / "d.jsonl");
  CHECK(store == store_from_clips(ds.clips, kClipGapFrames, store.dataset_id()));
  std::size_t tracks = 0;
  for (const auto& c : ds.clips) tracks += c.tracks.size();
  CHECK(store.size() == tracks);
  CHECK(store.trajectories().count("e0.c1.0") == 1);
}

TEST_CASE("clips are laid out gap frames apart") {
  const auto all = sim::make_dataset(9, 2, 2, sim::SimConfig{});
  sim::Dataset ds = all;
  ds.clips = {all.clips[0], all.clips[2]};  // camera 0 of each event
  const auto store = store_from_clips(ds.clips, 20, "g");
  Frame second_start = ds.clips[0].frame_count + 20;
  for (const auto& [id, t] : store.trajectories()) {
    if (id.rfind("e1.", 0) == 0) CHECK(t.first_frame() >= second_start);
    else CHECK(t.last_frame() < ds.clips[0].frame_count);
  }
}

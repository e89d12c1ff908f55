#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "trajq/error.hpp"
#include "trajq/geometry.hpp"

using namespace trajq;

namespace {

Trajectory line_track(Frame start, Frame end, double x0, double dx) {
  Trajectory t{"a", "car", {}};
  for (Frame f = start; f <= end; ++f) t.boxes.push_back({f, x0 + dx * static_cast<double>(f - start), 10.0, 4.0, 2.0});
  return t;
}

ClipWindow transformed(const ClipWindow& w, double s, double tx, double ty) {
  ClipWindow out = w;
  for (auto& tr : out.tracks)
    for (auto& b : tr.boxes) b = {b.frame, s * b.cx + tx, s * b.cy + ty, s * b.w, s * b.h};
  return out;
}

}  // namespace

TEST_CASE("resample interpolates linearly and masks outside the track") {
  Trajectory t{"a", "car", {{10, 0.0, 0.0, 2.0, 2.0}, {20, 10.0, 20.0, 4.0, 2.0}}};
  const auto r = resample(t, {5, 25}, 5);  // positions 5, 10, 15, 20, 25
  CHECK(r.mask == std::vector<std::uint8_t>{0, 1, 1, 1, 0});
  CHECK(r.values[2][0] == doctest::Approx(5.0));
  CHECK(r.values[2][1] == doctest::Approx(10.0));
  CHECK(r.values[2][2] == doctest::Approx(3.0));
  CHECK(r.values[0] == BoxFeature{0.0, 0.0, 2.0, 2.0});
  CHECK(r.values[4] == BoxFeature{10.0, 20.0, 4.0, 2.0});
}

TEST_CASE("resample interpolates across gaps in the frame sequence") {
  Trajectory t{"a", "car", {{0, 0.0, 0.0, 1.0, 1.0}, {1, 1.0, 0.0, 1.0, 1.0}, {9, 9.0, 0.0, 1.0, 1.0}}};
  const auto r = resample(t, {0, 8}, 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(r.mask[i] == 1);
    CHECK(r.values[i][0] == doctest::Approx(2.0 * i));
  }
}

TEST_CASE("resample rejects degenerate inputs") {
  CHECK_THROWS_AS(resample(Trajectory{"a", "car", {}}, {0, 4}, 4), Error);
  CHECK_THROWS_AS(resample(line_track(0, 4, 0, 1), {0, 4}, 1), Error);
}

TEST_CASE("normalize maps the joint box extent into the unit square preserving aspect") {
  ClipWindow w{{0, 9}, {line_track(0, 9, 0.0, 10.0)}};
  const auto g = window_to_grid(w, 10);
  // x extent: centers 0..90 plus half-width 2 on each side = 94; y extent 2.
  CHECK(g.at(0, 0, 0) == doctest::Approx(2.0 / 94.0));
  CHECK(g.at(0, 9, 0) == doctest::Approx(92.0 / 94.0));
  CHECK(g.at(0, 0, 1) == doctest::Approx(1.0 / 94.0));
  CHECK(g.at(0, 0, 2) == doctest::Approx(4.0 / 94.0));
  CHECK(g.count_present() == 10);
}

TEST_CASE("normalize of a single zero-size point is centred") {
  ResampledTrack r{{{5.0, 5.0, 0.0, 0.0}, {5.0, 5.0, 0.0, 0.0}}, {1, 1}};
  const std::vector<ResampledTrack> tracks{r};
  const auto g = normalize(tracks);
  CHECK(g.at(0, 0, 0) == 0.5);
  CHECK(g.at(0, 1, 1) == 0.5);
}

TEST_CASE("normalize rejects an all-masked window") {
  ResampledTrack r{{{1, 1, 1, 1}, {1, 1, 1, 1}}, {0, 0}};
  const std::vector<ResampledTrack> tracks{r};
  CHECK_THROWS_AS(normalize(tracks), Error);
}

TEST_CASE("window grids are invariant to translation and uniform scale") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    ClipWindow w;
    const int objects = static_cast<int>(rng.uniform_int(1, 4));
    w.range = {0, 40};
    for (int o = 0; o < objects; ++o) {
      const Frame start = rng.uniform_int(0, 20);
      w.tracks.push_back(testutil::random_track(rng, "o" + std::to_string(o), "car", start, rng.uniform_int(2, 40 - start)));
    }
    const double s = std::exp(rng.uniform(-3.0, 3.0));
    const auto a = window_to_grid(w, 16);
    const auto b = window_to_grid(transformed(w, s, rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3)), 16);
    REQUIRE(a.mask == b.mask);
    for (std::size_t i = 0; i < a.values.size(); ++i) REQUIRE(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-9));
  }
}

TEST_CASE("a sketch replaying a window encodes to the window's own grid") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    ClipWindow w;
    w.range = {100, 160};
    const int objects = static_cast<int>(rng.uniform_int(1, 3));
    for (int o = 0; o < objects; ++o) {
      auto t = testutil::random_track(rng, "o" + std::to_string(o), "car", rng.uniform_int(90, 130), rng.uniform_int(10, 60));
      for (auto& b : t.boxes) b.w = 20.0, b.h = 30.0;
      w.tracks.push_back(t);
    }
    const VisualQuery q = query_from_window(w, 1280, 720);
    // The sketch's panel span is the union of the tracks; compare over that.
    ClipWindow same = w;
    same.range = {static_cast<Frame>(q.panel_begin()), static_cast<Frame>(q.panel_finish())};
    const auto a = query_to_grid(q, 24);
    const auto b = window_to_grid(same, 24);
    REQUIRE(a.mask == b.mask);
    for (std::size_t i = 0; i < a.values.size(); ++i) REQUIRE(std::abs(a.values[i] - b.values[i]) < 1e-9);
  }
}

TEST_CASE("query_to_grid holds the last point between segments") {
  VisualQuery q{100, 100, {{"a", "car", 10, 10, {{0, 1, {{0, 0}, {10, 0}}}, {3, 4, {{10, 10}, {20, 10}}}}}}};
  const auto g = query_to_grid(q, 9);  // ticks 0, 0.5, ..., 4
  CHECK(g.present(0, 0));
  CHECK(g.present(0, 4));  // tick 2 is idle between drags but still present
  CHECK(g.at(0, 3, 0) == g.at(0, 4, 0));
  CHECK(g.at(0, 3, 1) == g.at(0, 4, 1));
}

TEST_CASE("validate_query names the offending field") {
  VisualQuery good{800, 600, {{"a", "car", 10, 10, {{0, 10, {{0, 0}, {5, 5}}}}}}};
  CHECK_NOTHROW(validate_query(good));

  auto expect_field = [](const VisualQuery& q, const std::string& path, std::vector<std::string> types = {}) {
    try {
      validate_query(q, types);
      FAIL("expected FieldError at " << path);
    } catch (const FieldError& e) {
      CHECK(e.field_path() == path);
    }
  };
  auto q = good;
  q.canvas_w = 0;
  expect_field(q, "canvasW");
  q = good;
  q.objects.clear();
  expect_field(q, "objects");
  q = good;
  q.objects[0].segments[0].points.pop_back();
  expect_field(q, "objects[0].segments[0].points");
  q = good;
  q.objects[0].segments[0].panel_end = 0;
  expect_field(q, "objects[0].segments[0].panelEnd");
  q = good;
  q.objects.push_back(q.objects[0]);
  expect_field(q, "objects[1].id");
  q = good;
  q.objects[0].segments.push_back({5, 12, {{1, 1}, {2, 2}}});
  expect_field(q, "objects[0].segments[1].panelStart");
  q = good;
  q.objects[0].object_type = "spaceship";
  expect_field(q, "objects[0].type", {"car", "person"});
  q.objects[0].object_type = kAnyType;
  CHECK_NOTHROW(validate_query(q, std::vector<std::string>{"car"}));
}

TEST_CASE("temporal_iou over inclusive ranges") {
  CHECK(temporal_iou({0, 9}, {0, 9}) == 1.0);
  CHECK(temporal_iou({0, 9}, {10, 19}) == 0.0);
  CHECK(temporal_iou({0, 9}, {5, 14}) == doctest::Approx(5.0 / 15.0));
}

#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "trajq/error.hpp"
#include "trajq/geometry.hpp"
#include "trajq/matcher.hpp"

using namespace trajq;

TEST_CASE("window lengths follow the query span and factors") {
  VisualQuery q{100, 100, {{"a", "car", 5, 5, {{10, 39, {{0, 0}, {1, 1}}}}}}};
  SearchConfig cfg;
  CHECK(query_span_frames(q, 10.0, cfg) == 30.0);
  CHECK(window_lengths(q, 10.0, cfg) == std::vector<Frame>{15, 30, 45, 60});
  cfg.ticks_per_second = 5.0;  // 29 ticks = 5.8 s = 58 frame steps
  CHECK(query_span_frames(q, 10.0, cfg) == 59.0);
  CHECK(window_lengths(q, 10.0, cfg) == std::vector<Frame>{30, 59, 89, 118});
  cfg = {};
  cfg.length_factors = {0.01, 0.02, 1.0, 1.0};
  CHECK(window_lengths(q, 10.0, cfg) == std::vector<Frame>{2, 30});
}

TEST_CASE("eligibility needs half-window coverage and two boxes inside") {
  Trajectory t{"a", "car", {{10, 0, 0, 1, 1}, {11, 0, 0, 1, 1}, {19, 0, 0, 1, 1}}};
  CHECK(eligible(t, {10, 19}));
  CHECK(eligible(t, {6, 25}));    // span 10 of 20
  CHECK_FALSE(eligible(t, {5, 25}));  // span 10 of 21
  CHECK_FALSE(eligible(t, {12, 18}));  // covered but no box inside
  CHECK_FALSE(eligible(t, {16, 21}));  // one box inside
}

TEST_CASE("search config validation names the field") {
  auto field_of = [](SearchConfig c) {
    try {
      c.validate();
    } catch (const FieldError& e) {
      return e.field_path();
    }
    return std::string();
  };
  SearchConfig c;
  CHECK(field_of(c).empty());
  c.stride_frames = 0;
  CHECK(field_of(c) == "search.stride_frames");
  c = {};
  c.k = 0;
  CHECK(field_of(c) == "k");
  c = {};
  c.length_factors = {1.0, -1.0};
  CHECK(field_of(c) == "search.length_factors[1]");
  c = {};
  c.nms_iou = 1.5;
  CHECK(field_of(c) == "search.nms_iou");
  c = {};
  c.ticks_per_second = 0.0;
  CHECK(field_of(c) == "search.ticks_per_second");
}

TEST_CASE("sliding windows step by the stride inside the store") {
  Trajectory t{"a", "car", {}};
  for (Frame f = 0; f < 100; ++f) t.boxes.push_back({f, static_cast<double>(f), 0, 1, 1});
  const auto store = TrackStore::build({t}, 10.0, "s");
  VisualQuery q{100, 100, {{"a", "car", 5, 5, {{0, 19, {{0, 0}, {1, 1}}}}}}};
  SearchConfig cfg;
  cfg.stride_frames = 10;
  cfg.length_factors = {1.0};
  const auto cands = enumerate_candidates(store, q, cfg);
  REQUIRE(cands.size() == 9);
  for (std::size_t i = 0; i < cands.size(); ++i) CHECK(cands[i].window == FrameRange{Frame(10 * i), Frame(10 * i + 19)});
  q.objects[0].object_type = "person";
  CHECK(enumerate_candidates(store, q, cfg).empty());
  q.objects[0].object_type = kAnyType;
  CHECK(enumerate_candidates(store, q, cfg).size() == 9);
}

TEST_CASE("candidates respect types, distinct ids and the assignment cap") {
  std::vector<Trajectory> ts;
  Rng rng(2);
  for (int i = 0; i < 4; ++i) ts.push_back(testutil::random_track(rng, "c" + std::to_string(i), "car", 0, 40));
  ts.push_back(testutil::random_track(rng, "p0", "person", 0, 40));
  const auto store = TrackStore::build(ts, 10.0, "s");
  VisualQuery q{100, 100, {{"a", "car", 5, 5, {{0, 39, {{0, 0}, {1, 1}}}}}, {"b", "any", 5, 5, {{0, 39, {{1, 0}, {1, 1}}}}}}};
  SearchConfig cfg;
  cfg.length_factors = {1.0};
  auto cands = enumerate_candidates(store, q, cfg);
  REQUIRE(cands.size() == 4 * 4);  // one window; 4 cars x 4 others
  CHECK(cands.front().object_ids == std::vector<std::string>{"c0", "c1"});
  CHECK(cands.back().object_ids == std::vector<std::string>{"c3", "p0"});
  for (const auto& c : cands) CHECK(c.object_ids[0] != c.object_ids[1]);
  cfg.max_assignments_per_window = 5;
  CHECK(enumerate_candidates(store, q, cfg).size() == 5);
}

TEST_CASE("candidate windows keep one neighbouring box on each side") {
  Trajectory t{"a", "car", {{0, 0, 0, 1, 1}, {4, 4, 0, 1, 1}, {8, 8, 0, 1, 1}, {12, 12, 0, 1, 1}}};
  const auto store = TrackStore::build({t}, 10.0, "s");
  const auto w = candidate_window(store, {{5, 9}, {"a"}});
  REQUIRE(w.tracks.size() == 1);
  std::vector<Frame> frames;
  for (const auto& b : w.tracks[0].boxes) frames.push_back(b.frame);
  CHECK(frames == std::vector<Frame>{4, 8, 12});
  // Resampling the slice equals resampling the full track.
  const auto a = resample(w.tracks[0], {5, 9}, 8);
  const auto b = resample(t, {5, 9}, 8);
  CHECK(a.values == b.values);
  CHECK(a.mask == b.mask);
}

TEST_CASE("suppression removes overlapping results that share an object") {
  std::vector<MatchResult> rs{{0, 9, {"a"}, 0.9}, {2, 11, {"a"}, 0.8}, {2, 11, {"b"}, 0.7}, {30, 39, {"a"}, 0.6}};
  const auto kept = suppress(rs, 0.5, 10);
  REQUIRE(kept.size() == 3);
  CHECK(kept[1].object_ids == std::vector<std::string>{"b"});
  CHECK(suppress(rs, 0.5, 2).size() == 2);
  CHECK(suppress(rs, 1.0, 10).size() == 4);
}

TEST_CASE("result order breaks score ties deterministically") {
  MatchResult a{5, 9, {"x"}, 0.5}, b{3, 9, {"y"}, 0.5}, c{3, 9, {"x"}, 0.5}, d{0, 0, {"z"}, 0.6};
  CHECK(result_before(d, a));
  CHECK(result_before(b, a));
  CHECK(result_before(c, b));
  CHECK_FALSE(result_before(a, a));
}

TEST_CASE("a sketch of a stored clip retrieves it with score one") {
  Rng rng(3);
  auto t = testutil::random_track(rng, "only", "car", 0, 40);
  for (auto& b : t.boxes) b.w = 30.0, b.h = 30.0;
  const auto store = TrackStore::build({t}, 10.0, "self");
  const auto q = query_from_window({{0, 39}, {t}}, 1280, 720);
  SearchConfig cfg;
  cfg.length_factors = {1.0};
  cfg.stride_frames = 1;
  const auto w = nn::EncoderWeights::random(nn::EncoderConfig{}, 1);
  const auto rs = search(store, q, w, cfg);
  REQUIRE(!rs.empty());
  CHECK(rs[0].start_frame == 0);
  CHECK(rs[0].end_frame == 39);
  CHECK(rs[0].score == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("search equals the brute-force oracle on random stores") {
  const auto w = nn::EncoderWeights::random(testutil::tiny_config(), 12);
  for (std::uint64_t trial = 0; trial < 12; ++trial) {
    Rng rng(mix_seed(77, trial));
    const auto store = testutil::random_store(mix_seed(78, trial), static_cast<int>(rng.uniform_int(2, 6)), rng.uniform_int(40, 160));
    const auto q = testutil::random_query(rng, static_cast<int>(rng.uniform_int(1, 2)));
    SearchConfig cfg;
    cfg.stride_frames = static_cast<int>(rng.uniform_int(1, 6));
    cfg.k = static_cast<int>(rng.uniform_int(1, 8));
    cfg.threads = static_cast<int>(rng.uniform_int(1, 3));
    const auto fast = search(store, q, w, cfg);
    const auto slow = brute_force_search(store, q, w, cfg);
    REQUIRE(fast == slow);
  }
}

TEST_CASE("search is independent of the thread count") {
  const auto w = nn::EncoderWeights::random(testutil::tiny_config(), 13);
  const auto store = testutil::random_store(5, 6, 200);
  Rng rng(5);
  const auto q = testutil::random_query(rng, 2);
  SearchConfig one, many;
  many.threads = 4;
  CHECK(search(store, q, w, one) == search(store, q, w, many));
}

TEST_CASE("search reports capacity and scale limits") {
  auto cfg = testutil::tiny_config();
  cfg.max_objects = 1;
  const auto w = nn::EncoderWeights::random(cfg, 1);
  const auto store = testutil::random_store(5, 4, 100);
  Rng rng(1);
  try {
    search(store, testutil::random_query(rng, 2), w, SearchConfig{});
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCapacity);
  }
  const auto big = testutil::random_store(5, 11, 100);
  CHECK_THROWS_AS(brute_force_search(big, testutil::random_query(rng, 1), w, SearchConfig{}), Error);
}

TEST_CASE("dtw distance") {
  FeatureGrid a(1, 4), b(1, 4);
  for (int t = 0; t < 4; ++t) {
    a.set_present(0, t, true);
    b.set_present(0, t, true);
    a.at(0, t, 0) = t;
    b.at(0, t, 0) = t;
  }
  CHECK(dtw_distance(a, a) == 0.0);
  // A one-step delay costs only the unmatched first step.
  for (int t = 0; t < 4; ++t) b.at(0, t, 0) = std::max(0, t - 1);
  CHECK(dtw_distance(a, b) == doctest::Approx(1.0));
  CHECK(dtw_distance(b, a) == dtw_distance(a, b));
  FeatureGrid c = a;
  for (int t = 0; t < 4; ++t) c.at(0, t, 1) = 3.0;
  CHECK(dtw_distance(a, c) == doctest::Approx(12.0));
  // Masked steps carry the last present value.
  FeatureGrid m = a;
  m.set_present(0, 3, false);
  m.at(0, 3, 0) = 100.0;
  CHECK(dtw_distance(m, a) == doctest::Approx(1.0));
}

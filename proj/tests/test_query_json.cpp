#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "trajq/error.hpp"
#include "trajq/geometry.hpp"
#include "trajq/query_json.hpp"

using namespace trajq;
using nlohmann::json;

namespace {

json load_fixture(const std::string& name) {
  std::ifstream in(std::string(TRAJQ_FIXTURES) + "/" + name);
  REQUIRE(in);
  return json::parse(in);
}

std::string field_error(const json& j, const std::string& prefix = {}) {
  try {
    query_from_json(j, prefix);
  } catch (const FieldError& e) {
    return e.field_path();
  }
  return "";
}

}  // namespace

TEST_CASE("fixture queries parse and validate") {
  const auto q1 = query_from_json(load_fixture("q1_left_turn.json"));
  REQUIRE(q1.objects.size() == 1);
  CHECK(q1.objects[0].object_type == "car");
  CHECK(q1.objects[0].segments.size() == 1);
  CHECK_NOTHROW(validate_query(q1, default_object_types()));
  const auto q2 = query_from_json(load_fixture("q2_perpendicular.json"));
  CHECK(q2.objects.size() == 2);
  CHECK(q2.objects[1].object_type == "person");
}

TEST_CASE("query JSON round-trips") {
  const auto q = query_from_json(load_fixture("q2_perpendicular.json"));
  CHECK(query_from_json(query_to_json(q)) == q);
}

TEST_CASE("missing nominal sizes default to a tenth of the smaller canvas side") {
  json j = load_fixture("q1_left_turn.json");
  j["objects"][0].erase("nominalW");
  j["objects"][0].erase("nominalH");
  const auto q = query_from_json(j);
  CHECK(q.objects[0].nominal_w == 60.0);
  CHECK(q.objects[0].nominal_h == 60.0);
}

TEST_CASE("malformed queries name the field with the caller's prefix") {
  const json good = load_fixture("q1_left_turn.json");
  json j = good;
  j["schemaVersion"] = 2;
  CHECK(field_error(j) == "schemaVersion");
  j = good;
  j.erase("canvasW");
  CHECK(field_error(j, "visual_query.") == "visual_query.canvasW");
  j = good;
  j["objects"][0]["segments"][0]["points"][3] = json::array({1});
  CHECK(field_error(j, "visual_query.") == "visual_query.objects[0].segments[0].points[3]");
  j = good;
  j["objects"][0]["type"] = 5;
  CHECK(field_error(j) == "objects[0].type");
  j = good;
  j["objects"] = json::object();
  CHECK(field_error(j) == "objects");
  CHECK(field_error(json::array(), "visual_query.") == "visual_query");
}

TEST_CASE("search overrides apply on top of a base config") {
  SearchConfig base;
  base.k = 7;
  const auto c = search_config_from_json(json{{"stride_frames", 2}, {"length_factors", {1.0}}, {"ticks_per_second", 30}}, base);
  CHECK(c.k == 7);
  CHECK(c.stride_frames == 2);
  CHECK(c.length_factors == std::vector<double>{1.0});
  CHECK(c.ticks_per_second == 30.0);
  CHECK(search_config_from_json(search_config_to_json(c)) == c);
  try {
    search_config_from_json(json{{"bogus", 1}});
    FAIL("unknown key accepted");
  } catch (const FieldError& e) {
    CHECK(e.field_path() == "search.bogus");
  }
  try {
    search_config_from_json(json{{"stride_frames", 1.5}});
    FAIL("fractional stride accepted");
  } catch (const FieldError& e) {
    CHECK(e.field_path() == "search.stride_frames");
  }
}

TEST_CASE("query outcomes carry previews aligned with results") {
  Rng rng(4);
  const auto store = testutil::random_store(9, 4, 120);
  const auto q = query_from_json(load_fixture("q1_left_turn.json"));
  auto qa = q;
  qa.objects[0].object_type = kAnyType;
  const auto w = nn::EncoderWeights::random(nn::EncoderConfig{}, 2);
  SearchConfig cfg;
  cfg.k = 3;
  const auto out = run_query(store, qa, w, cfg);
  REQUIRE(!out.results.empty());
  REQUIRE(out.previews.size() == out.results.size());
  const auto recs = result_records(out);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i]["rank"] == i + 1);
    CHECK(recs[i]["score"].get<double>() == out.results[i].score);
    CHECK(recs[i]["preview"]["T"] == 32);
    CHECK(recs[i]["preview"]["tracks"].size() == out.results[i].object_ids.size());
    CHECK(recs[i]["preview"]["tracks"][0]["object_id"] == out.results[i].object_ids[0]);
  }
  CHECK_THROWS_AS(run_query(store, q, w, cfg, std::vector<std::string>{"person"}), FieldError);
}

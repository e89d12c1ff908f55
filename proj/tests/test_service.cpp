#include <doctest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "trajq/error.hpp"
#include "trajq/service.hpp"

// After Eigen: httplib pulls in system headers whose macros clash with it.
#include <httplib.h>

using namespace trajq;
using nlohmann::json;

namespace {

std::string fixture_text(const std::string& name) {
  std::ifstream in(std::string(TRAJQ_FIXTURES) + "/" + name, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  testutil::TempDir dir{"service"};
  ServiceConfig config;

  Fixture() {
    config.data_dir = dir.path / "data";
    config.weights_path = dir.path / "w.bin";
    config.cache_size = 2;
    nn::save_weights(config.weights_path, nn::EncoderWeights::random(nn::EncoderConfig{}, 1));
  }
};

Upload mot_upload(const std::string& name = "cam") {
  return {fixture_text("tracks.mot"), "tracks.mot", std::string("10"), name};
}

json body_of(const HttpReply& r) { return json::parse(r.body); }

json any_query_request(const std::string& dataset_id) {
  json q = json::parse(fixture_text("q1_left_turn.json"));
  q["objects"][0]["type"] = "any";
  q["objects"][0]["segments"][0]["panelEnd"] = 3;
  return {{"dataset_id", dataset_id}, {"visual_query", q}, {"k", 3}};
}

}  // namespace

TEST_CASE("service config reads every key and resolves paths") {
  const auto c = service_config_from_json(fixture_text("service_config.json"), "/srv/app");
  CHECK(c.port == 0);
  CHECK(c.cache_size == 4);
  CHECK(c.data_dir == std::filesystem::path("/srv/app/data"));
  CHECK(c.search_defaults.k == 5);
  CHECK(c.search_defaults.stride_frames == 4);
  for (const char* bad : {"{", "[]", "{\"port\":70000}", "{\"cacheSize\":0}", "{\"searchDefaults\":{\"k\":0}}",
                          "{\"searchDefaults\":{\"nope\":1}}", "{\"port\":\"x\"}"}) {
    try {
      service_config_from_json(bad);
      FAIL("accepted " << bad);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kConfig);
    }
  }
}

TEST_CASE("uploads create versioned datasets that survive a restart") {
  Fixture f;
  {
    Service s(f.config);
    const auto r1 = s.upload_dataset(mot_upload());
    REQUIRE(r1.status == 200);
    CHECK(body_of(r1)["dataset_id"] == "cam-v1");
    CHECK(body_of(r1)["object_count"] == 2);
    const auto r2 = s.upload_dataset(mot_upload());
    CHECK(body_of(r2)["dataset_id"] == "cam-v2");
    const auto list = body_of(s.list_datasets())["datasets"];
    REQUIRE(list.size() == 1);
    CHECK(list[0]["dataset_id"] == "cam-v2");
    CHECK(list[0]["type_histogram"]["car"] == 1);
    CHECK(s.dataset("cam-v1") != nullptr);
  }
  Service again(f.config);
  CHECK(again.dataset("cam-v2") != nullptr);
  CHECK(body_of(again.upload_dataset(mot_upload()))["dataset_id"] == "cam-v3");
}

TEST_CASE("store-format uploads keep their own frame rate") {
  Fixture f;
  Service s(f.config);
  const auto store = testutil::random_store(2, 3, 50);
  std::ostringstream text;
  const auto path = f.dir.path / "x.jsonl";
  save_store(path, store);
  std::ifstream in(path);
  text << in.rdbuf();
  const auto r = s.upload_dataset({text.str(), "x.jsonl", std::nullopt, std::nullopt});
  REQUIRE(r.status == 200);
  CHECK(body_of(r)["dataset_id"] == "x-v1");
  CHECK(body_of(r)["fps"] == 10.0);
}

TEST_CASE("bad uploads are rejected with a field path") {
  Fixture f;
  f.config.max_upload_bytes = 1000;
  Service s(f.config);
  auto r = s.upload_dataset({fixture_text("tracks.mot"), "t.mot", std::nullopt, std::nullopt});
  CHECK(r.status == 400);
  CHECK(body_of(r)["field_path"] == "fps");
  r = s.upload_dataset({fixture_text("tracks.mot"), "t.mot", std::string("fast"), std::nullopt});
  CHECK(body_of(r)["field_path"] == "fps");
  r = s.upload_dataset(mot_upload("bad name!"));
  CHECK(r.status == 400);
  CHECK(body_of(r)["field_path"] == "name");
  r = s.upload_dataset({"1,1,0,0\n", "t.mot", std::string("10"), std::nullopt});
  CHECK(r.status == 400);
  CHECK(body_of(r)["code"] == "parse_error");
  CHECK(body_of(r)["message"].get<std::string>().find("line 1") != std::string::npos);
  r = s.upload_dataset({std::string(2000, '1'), "t.mot", std::string("10"), std::nullopt});
  CHECK(r.status == 413);
  CHECK(body_of(s.list_datasets())["datasets"].empty());
}

TEST_CASE("queries validate input and map failures onto status codes") {
  Fixture f;
  Service s(f.config);
  const std::string id = body_of(s.upload_dataset(mot_upload()))["dataset_id"];

  CHECK(s.post_query("{").status == 400);
  auto r = s.post_query(json{{"visual_query", json::object()}}.dump());
  CHECK(r.status == 422);
  CHECK(body_of(r)["field_path"] == "dataset_id");

  json req = any_query_request(id);
  req["visual_query"]["objects"][0]["segments"][0]["points"] = json::array({json::array({1, 1})});
  r = s.post_query(req.dump());
  CHECK(r.status == 422);
  CHECK(body_of(r)["field_path"] == "visual_query.objects[0].segments[0].points");

  req = any_query_request(id);
  req["visual_query"]["objects"][0]["type"] = "spaceship";
  CHECK(body_of(s.post_query(req.dump()))["field_path"] == "visual_query.objects[0].type");

  req = any_query_request(id);
  req["search"] = {{"stride_frames", 0}};
  CHECK(body_of(s.post_query(req.dump()))["field_path"] == "search.stride_frames");

  req = any_query_request("nope-v1");
  r = s.post_query(req.dump());
  CHECK(r.status == 404);
  CHECK(body_of(r)["field_path"] == "dataset_id");

  req = any_query_request(id);
  auto obj = req["visual_query"]["objects"][0];
  for (int i = 1; i <= 4; ++i) {
    obj["id"] = "extra" + std::to_string(i);
    req["visual_query"]["objects"].push_back(obj);
  }
  r = s.post_query(req.dump());
  CHECK(r.status == 409);
  CHECK(body_of(r)["code"] == "capacity_exceeded");
}

TEST_CASE("queries without weights report unavailability") {
  Fixture f;
  f.config.weights_path.clear();
  Service s(f.config);
  CHECK_FALSE(s.weights_loaded());
  const std::string id = body_of(s.upload_dataset(mot_upload()))["dataset_id"];
  CHECK(s.post_query(any_query_request(id).dump()).status == 503);
  CHECK(body_of(s.health())["weights_loaded"] == false);
}

TEST_CASE("results are cached by query id with LRU eviction") {
  Fixture f;
  Service s(f.config);
  const std::string id = body_of(s.upload_dataset(mot_upload()))["dataset_id"];
  const auto first = s.post_query(any_query_request(id).dump());
  REQUIRE(first.status == 200);
  const auto body = body_of(first);
  CHECK(body["dataset_id"] == id);
  CHECK(!body["results"].empty());
  CHECK(body["results"][0]["rank"] == 1);
  CHECK(body["query_echo"]["objects"][0]["type"] == "any");
  const std::string qid = body["query_id"];
  CHECK(s.get_result(qid).body == first.body);
  s.post_query(any_query_request(id).dump());
  s.post_query(any_query_request(id).dump());
  CHECK(s.get_result(qid).status == 404);
  CHECK(s.get_result("q999").status == 404);
}

TEST_CASE("type list offers the wildcard first") {
  Fixture f;
  Service s(f.config);
  const auto types = body_of(s.list_types())["types"];
  CHECK(types[0] == "any");
  CHECK(types.size() == default_object_types().size() + 1);
}

TEST_CASE("HTTP routes, multipart upload and CORS") {
  Fixture f;
  Service s(f.config);
  httplib::Server server;
  s.install(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");

  httplib::MultipartFormDataItems items{{"file", fixture_text("tracks.mot"), "tracks.mot", "text/plain"},
                                        {"fps", "10", "", ""},
                                        {"name", "street", "", ""}};
  res = client.Post("/datasets", items);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["dataset_id"] == "street-v1");

  res = client.Post("/datasets", "{}", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = client.Get("/datasets");
  REQUIRE(res);
  CHECK(json::parse(res->body)["datasets"][0]["name"] == "street");

  res = client.Post("/queries", any_query_request("street-v1").dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  const std::string qid = json::parse(res->body)["query_id"];
  auto again = client.Get("/results/" + qid);
  REQUIRE(again);
  CHECK(again->body == res->body);

  res = client.Options("/queries");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

  res = client.Get("/nowhere");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["code"] == "not_found");

  server.stop();
  t.join();
}

#include "trajq/service.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <csignal>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <pthread.h>

#include "trajq/error.hpp"
#include "trajq/geometry.hpp"
#include "trajq/query_json.hpp"

namespace trajq {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kStoreSuffix = ".store.jsonl";

std::filesystem::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

HttpReply error_reply(int status, const std::string& code, const std::string& message, const std::string& field = {}) {
  return {status, error_body(code, message, field)};
}

HttpReply reply_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kParse: return error_reply(400, "parse_error", e.what());
    case ErrorKind::kCapacity: return error_reply(409, "capacity_exceeded", e.what());
    case ErrorKind::kNotFound: return error_reply(404, "not_found", e.what());
    case ErrorKind::kInvalidArgument: return error_reply(422, "invalid_request", e.what());
    default: return error_reply(500, "internal", e.what());
  }
}

// Version suffix of "<name>-v<N>", or 0.
int version_of(const std::string& id, const std::string& name) {
  const std::string prefix = name + "-v";
  if (id.rfind(prefix, 0) != 0) return 0;
  try {
    return std::stoi(id.substr(prefix.size()));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

std::string error_body(const std::string& code, const std::string& message, const std::string& field_path) {
  json j{{"code", code}, {"message", message}};
  if (!field_path.empty()) j["field_path"] = field_path;
  return j.dump();
}

ServiceConfig service_config_from_json(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("service config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "service config must be a JSON object");
  ServiceConfig c;
  try {
    if (j.contains("host")) c.host = j["host"].get<std::string>();
    if (j.contains("port")) c.port = j["port"].get<int>();
    if (j.contains("weightsPath")) c.weights_path = resolve(base_dir, j["weightsPath"].get<std::string>());
    if (j.contains("dataDir")) c.data_dir = resolve(base_dir, j["dataDir"].get<std::string>());
    if (j.contains("cacheSize")) c.cache_size = j["cacheSize"].get<std::size_t>();
    if (j.contains("maxUploadBytes")) c.max_upload_bytes = j["maxUploadBytes"].get<std::size_t>();
    if (j.contains("objectTypes")) c.object_types = j["objectTypes"].get<std::vector<std::string>>();
    if (j.contains("searchDefaults")) c.search_defaults = search_config_from_json(j["searchDefaults"]);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("service config: ") + e.what());
  } catch (const FieldError& e) {
    throw Error(ErrorKind::kConfig, std::string("service config searchDefaults: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw Error(ErrorKind::kConfig, "service config: port out of range");
  if (c.cache_size < 1) throw Error(ErrorKind::kConfig, "service config: cacheSize must be >= 1");
  try {
    c.search_defaults.validate();
  } catch (const FieldError& e) {
    throw Error(ErrorKind::kConfig, std::string("service config searchDefaults: ") + e.what());
  }
  return c;
}

ServiceConfig load_service_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return service_config_from_json(ss.str(), path.parent_path());
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  if (!config_.weights_path.empty())
    weights_ = std::make_shared<const nn::EncoderWeights>(nn::load_weights(config_.weights_path));
  std::error_code ec;
  fs::create_directories(config_.data_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create data dir '" + config_.data_dir.string() + "': " + ec.message());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(config_.data_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > std::strlen(kStoreSuffix) &&
        name.compare(name.size() - std::strlen(kStoreSuffix), std::string::npos, kStoreSuffix) == 0)
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) register_store(std::make_shared<const TrackStore>(load_store(f)));
}

void Service::register_store(std::shared_ptr<const TrackStore> store) {
  std::lock_guard lock(registry_mutex_);
  const int v = version_of(store->dataset_id(), store->name());
  int& latest = latest_version_[store->name()];
  latest = std::max(latest, v);
  datasets_[store->dataset_id()] = std::move(store);
}

std::shared_ptr<const TrackStore> Service::dataset(const std::string& dataset_id) const {
  std::lock_guard lock(registry_mutex_);
  auto it = datasets_.find(dataset_id);
  return it == datasets_.end() ? nullptr : it->second;
}

HttpReply Service::upload_dataset(const Upload& upload) {
  if (upload.content.size() > config_.max_upload_bytes)
    return error_reply(413, "payload_too_large",
                       "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes", "file");
  std::string name = upload.name.value_or("");
  if (name.empty()) name = fs::path(upload.filename).stem().string();
  static const std::regex kName("[A-Za-z0-9_.-]{1,64}");
  if (!std::regex_match(name, kName))
    return error_reply(400, "bad_request", "dataset name must be 1-64 characters of [A-Za-z0-9_.-]", "name");

  std::optional<double> fps;
  if (upload.fps && !upload.fps->empty()) {
    try {
      std::size_t used = 0;
      fps = std::stod(*upload.fps, &used);
      if (used != upload.fps->size() || !(*fps > 0.0) || !std::isfinite(*fps)) throw std::invalid_argument("fps");
    } catch (const std::exception&) {
      return error_reply(400, "bad_request", "fps must be a positive number", "fps");
    }
  }

  const auto first = upload.content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return error_reply(400, "parse_error", "uploaded file is empty", "file");
  std::vector<Trajectory> trajectories;
  double store_fps = 0.0;
  try {
    std::istringstream in(upload.content);
    if (upload.content[first] == '{') {
      TrackStore parsed = parse_store(in, upload.filename.empty() ? "upload" : upload.filename);
      store_fps = parsed.fps();
      for (const auto& [id, t] : parsed.trajectories()) trajectories.push_back(t);
    } else {
      if (!fps) return error_reply(400, "bad_request", "fps is required for MOT uploads", "fps");
      MotParseOptions opts;
      opts.type_map = default_mot_type_map();
      trajectories = parse_mot(in, opts).trajectories;
      store_fps = *fps;
      if (trajectories.empty()) return error_reply(400, "parse_error", "no trajectories in upload", "file");
    }
  } catch (const Error& e) {
    return error_reply(400, "parse_error", e.what(), "file");
  }

  std::string id;
  {
    std::lock_guard lock(registry_mutex_);
    auto it = latest_version_.find(name);
    id = name + "-v" + std::to_string((it == latest_version_.end() ? 0 : it->second) + 1);
    latest_version_[name] = version_of(id, name);  // reserve the version
  }
  std::shared_ptr<const TrackStore> store;
  try {
    store = std::make_shared<const TrackStore>(TrackStore::build(std::move(trajectories), store_fps, id, name));
    save_store(config_.data_dir / (id + kStoreSuffix), *store);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) return error_reply(500, "internal", e.what());
    return error_reply(400, "parse_error", e.what(), "file");
  }
  register_store(store);
  return {200, json{{"dataset_id", id},
                    {"name", name},
                    {"status", "ready"},
                    {"fps", store->fps()},
                    {"frame_count", store->frame_count()},
                    {"object_count", store->size()}}
                   .dump()};
}

HttpReply Service::list_datasets() const {
  std::vector<std::shared_ptr<const TrackStore>> latest;
  {
    std::lock_guard lock(registry_mutex_);
    for (const auto& [name, v] : latest_version_) {
      auto it = datasets_.find(name + "-v" + std::to_string(v));
      if (it != datasets_.end()) latest.push_back(it->second);
    }
  }
  json list = json::array();
  for (const auto& s : latest) {
    list.push_back({{"dataset_id", s->dataset_id()},
                    {"name", s->name()},
                    {"fps", s->fps()},
                    {"frame_count", s->frame_count()},
                    {"object_count", s->size()},
                    {"type_histogram", s->type_histogram()}});
  }
  return {200, json{{"datasets", std::move(list)}}.dump()};
}

HttpReply Service::list_types() const {
  std::vector<std::string> types{kAnyType};
  types.insert(types.end(), config_.object_types.begin(), config_.object_types.end());
  return {200, json{{"types", types}}.dump()};
}

HttpReply Service::health() const {
  std::size_t n = 0;
  {
    std::lock_guard lock(registry_mutex_);
    n = datasets_.size();
  }
  return {200, json{{"status", "ok"}, {"weights_loaded", weights_loaded()}, {"datasets", n}}.dump()};
}

HttpReply Service::post_query(const std::string& body) {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, "bad_request", std::string("request body is not valid JSON: ") + e.what());
  }
  if (!req.is_object()) return error_reply(400, "bad_request", "request body must be a JSON object");

  try {
    auto id_it = req.find("dataset_id");
    if (id_it == req.end()) throw FieldError("dataset_id", "is required");
    if (!id_it->is_string()) throw FieldError("dataset_id", "must be a string");
    auto vq = req.find("visual_query");
    if (vq == req.end()) throw FieldError("visual_query", "is required");
    const VisualQuery query = query_from_json(*vq, "visual_query.");

    SearchConfig cfg = config_.search_defaults;
    if (auto s = req.find("search"); s != req.end()) cfg = search_config_from_json(*s, cfg);
    if (auto k = req.find("k"); k != req.end()) {
      if (!k->is_number_integer()) throw FieldError("k", "must be an integer");
      cfg.k = k->get<int>();
    }
    cfg.validate();
    try {
      validate_query(query, config_.object_types);
    } catch (const FieldError& e) {
      throw FieldError("visual_query." + e.field_path(), e.message());
    }

    const std::string dataset_id = id_it->get<std::string>();
    auto store = dataset(dataset_id);
    if (!store) return error_reply(404, "not_found", "unknown dataset '" + dataset_id + "'", "dataset_id");
    if (!weights_) return error_reply(503, "unavailable", "no encoder weights are loaded");

    const QueryOutcome outcome = run_query(*store, query, *weights_, cfg, config_.object_types);
    std::string query_id;
    {
      std::lock_guard lock(cache_mutex_);
      query_id = "q" + std::to_string(next_query_++);
    }
    json results = json::array();
    for (auto& rec : result_records(outcome)) results.push_back(std::move(rec));
    const std::string payload = json{{"query_id", query_id},
                                     {"dataset_id", dataset_id},
                                     {"results", std::move(results)},
                                     {"query_echo", query_to_json(outcome.query)},
                                     {"search", search_config_to_json(cfg)}}
                                    .dump();
    {
      std::lock_guard lock(cache_mutex_);
      cache_.emplace_front(query_id, payload);
      while (cache_.size() > config_.cache_size) cache_.pop_back();
    }
    return {200, payload};
  } catch (const FieldError& e) {
    return error_reply(422, "invalid_query", e.message(), e.field_path());
  } catch (const Error& e) {
    return reply_for(e);
  }
}

HttpReply Service::get_result(const std::string& query_id) const {
  std::lock_guard lock(cache_mutex_);
  for (const auto& [id, payload] : cache_)
    if (id == query_id) return {200, payload};
  return error_reply(404, "not_found", "unknown or evicted query '" + query_id + "'");
}

void Service::install(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.set_payload_max_length(config_.max_upload_bytes + (1u << 20));
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server.Get("/types", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_types()); });
  server.Get("/datasets", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_datasets()); });
  server.Post("/datasets", [this, send](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("file")) {
      send(res, error_reply(400, "bad_request", "expected multipart/form-data with a 'file' part", "file"));
      return;
    }
    Upload up;
    const auto file = req.get_file_value("file");
    up.content = file.content;
    up.filename = file.filename;
    if (req.has_file("fps")) up.fps = req.get_file_value("fps").content;
    if (req.has_file("name")) up.name = req.get_file_value("name").content;
    send(res, upload_dataset(up));
  });
  server.Post("/queries", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, post_query(req.body));
  });
  server.Get(R"(/results/([A-Za-z0-9_-]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, get_result(req.matches[1]));
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unexpected error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, "internal", what));
  });
  server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 413) send(res, error_reply(413, "payload_too_large", "request body too large", "file"));
    else if (res.status == 404) send(res, error_reply(404, "not_found", "no such endpoint"));
    else send(res, error_reply(res.status, "bad_request", "request rejected"));
  });
}

void serve(Service& service, const std::function<void(int)>& on_bound) {
  // Block the stop signals before the server spawns its workers so that only
  // the waiter below receives them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  httplib::Server server;
  // Address reuse only: port sharing would let a second server start silently.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  service.install(server);
  const auto& cfg = service.config();
  const int port = cfg.port == 0 ? server.bind_to_any_port(cfg.host) : cfg.port;
  if (port <= 0 || (cfg.port != 0 && !server.bind_to_port(cfg.host, cfg.port)))
    throw Error(ErrorKind::kIo, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  if (on_bound) on_bound(port);

  std::atomic<bool> finished{false};
  std::thread waiter([&] {
    const timespec tick{0, 200'000'000};
    while (!finished.load()) {
      if (sigtimedwait(&stop_signals, nullptr, &tick) > 0) {
        server.stop();
        return;
      }
    }
  });
  const bool ok = server.listen_after_bind();
  finished.store(true);
  waiter.join();
  if (!ok) throw Error(ErrorKind::kIo, "server stopped unexpectedly");
}

}  // namespace trajq

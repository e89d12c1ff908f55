#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "trajq/encoder.hpp"
#include "trajq/matcher.hpp"
#include "trajq/store.hpp"

namespace httplib {
class Server;
}

namespace trajq {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path weights_path;
  std::filesystem::path data_dir = "data";
  std::size_t cache_size = 64;
  SearchConfig search_defaults;
  std::size_t max_upload_bytes = 64u << 20;
  std::vector<std::string> object_types = default_object_types();
};

/// Reads {host, port, weightsPath, dataDir, cacheSize, searchDefaults,
/// maxUploadBytes, objectTypes}; every key is optional. Relative paths are
/// resolved against the config file's directory. Throws Error(kConfig).
ServiceConfig load_service_config(const std::filesystem::path& path);
ServiceConfig service_config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

struct Upload {
  std::string content;
  std::string filename;
  std::optional<std::string> fps;
  std::optional<std::string> name;
};

/// Dataset registry, result cache and request handlers. Thread-safe; stores
/// are immutable snapshots shared with in-flight queries.
class Service {
 public:
  /// Loads the weights (if configured) and every persisted store in data_dir.
  explicit Service(ServiceConfig config);

  HttpReply upload_dataset(const Upload& upload);
  HttpReply list_datasets() const;
  HttpReply list_types() const;
  HttpReply post_query(const std::string& body);
  HttpReply get_result(const std::string& query_id) const;
  HttpReply health() const;

  /// Registers every route (and CORS handling) on `server`.
  void install(httplib::Server& server);

  const ServiceConfig& config() const { return config_; }
  bool weights_loaded() const { return weights_ != nullptr; }
  std::shared_ptr<const TrackStore> dataset(const std::string& dataset_id) const;

 private:
  void register_store(std::shared_ptr<const TrackStore> store);

  ServiceConfig config_;
  std::shared_ptr<const nn::EncoderWeights> weights_;

  mutable std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const TrackStore>> datasets_;
  std::map<std::string, int> latest_version_;  // name -> highest version

  mutable std::mutex cache_mutex_;
  std::list<std::pair<std::string, std::string>> cache_;  // most recent first
  std::uint64_t next_query_ = 1;
};

/// Error payload {code, message, field_path?}.
std::string error_body(const std::string& code, const std::string& message, const std::string& field_path = {});

/// Binds, serves until SIGINT/SIGTERM, then lets in-flight requests finish.
/// Throws Error(kIo) when the port cannot be bound; `on_bound` runs once the
/// port is held and receives the actual port number.
void serve(Service& service, const std::function<void(int)>& on_bound = {});

}  // namespace trajq

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "faircop/corpus.hpp"
#include "faircop/engine.hpp"
#include "json.hpp"

namespace faircop {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path corpus_path;
  std::filesystem::path image_root;
  std::filesystem::path data_dir = "faircop-data";
  nlohmann::json engine_overrides = nlohmann::json::object();
  std::size_t max_iterations = 30;
  std::chrono::seconds idle_timeout{1800};
  std::string cors_origin;  // empty: no CORS headers

  void validate() const;
};

/// Reads a JSON config file (when given), then applies FAIRCOP_ADDR
/// ("host:port"), FAIRCOP_CORPUS and FAIRCOP_IMAGE_ROOT from the environment.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file);
ServiceConfig service_config_from_json(const nlohmann::json& j);

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Session endpoints independent of the transport. Sessions persist under
/// data_dir/sessions/<id>/ and are rebuilt from their event log on demand.
class Service {
 public:
  Service(std::shared_ptr<const Corpus> corpus, ServiceConfig cfg);

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::string& body);

  /// Drops in-memory sessions idle longer than the configured timeout.
  std::size_t evict_idle(std::chrono::steady_clock::time_point now);
  std::size_t live_sessions() const;

  const ServiceConfig& config() const { return cfg_; }

 private:
  struct Entry {
    std::mutex mu;
    std::unique_ptr<Session> session;
    std::chrono::steady_clock::time_point last_used;
  };

  HttpResponse create_session(const std::string& body);
  HttpResponse feedback(const std::string& id, const std::string& body);
  HttpResponse report(const std::string& id, const std::string& body);
  HttpResponse snapshot(const std::string& id);
  HttpResponse image(const std::string& id) const;

  std::shared_ptr<Entry> find_entry(const std::string& id);
  std::filesystem::path session_dir(const std::string& id) const;
  std::unique_ptr<Session> replay(const std::string& id) const;
  void append_event(const std::string& id, const FeedbackEvent& ev) const;
  void write_snapshot(const std::string& id, const Session& s) const;
  nlohmann::json batch_json(const Session& s) const;
  nlohmann::json snapshot_json(const Session& s) const;

  std::shared_ptr<const Corpus> corpus_;
  ServiceConfig cfg_;
  EngineConfig engine_defaults_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

/// HTTP transport over a Service; stop() may be called from any thread.
class HttpFrontend {
 public:
  explicit HttpFrontend(Service& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Blocks until stop(). Returns false when the address cannot be bound.
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving HTTP on cfg.host:cfg.port until the process is stopped.
void serve(Service& service);

}  // namespace faircop

#include "faircop/service.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "faircop/encoding.hpp"
#include "faircop/metrics.hpp"
#include "httplib.h"

namespace faircop {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::int64_t epoch_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump()};
}

HttpResponse error_response(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return json_response(status, extra);
}

bool is_session_id(const std::string& id) {
  return id.size() == 32 && std::all_of(id.begin(), id.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(path);
  while (std::getline(in, cur, '/')) {
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

std::string content_type_for(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::map<std::string, std::string> types{
      {".jpg", "image/jpeg"}, {".jpeg", "image/jpeg"}, {".png", "image/png"},
      {".gif", "image/gif"},  {".webp", "image/webp"}, {".bmp", "image/bmp"},
      {".svg", "image/svg+xml"}};
  auto it = types.find(ext);
  return it == types.end() ? "application/octet-stream" : it->second;
}

AttributeFilter parse_constraints(const json& j) {
  if (j.is_null()) return {};
  if (!j.is_object()) throw std::invalid_argument("constraints must be an object");
  AttributeFilter out;
  for (const auto& [name, values] : j.items()) {
    auto& set = out[name];
    if (values.is_string()) {
      set.insert(values.get<std::string>());
    } else if (values.is_array()) {
      for (const auto& v : values) set.insert(v.get<std::string>());
    } else {
      throw UnknownAttributeError(name, "constraint values for '" + name + "' must be strings");
    }
  }
  return out;
}

json constraints_json(const AttributeFilter& f) {
  json j = json::object();
  for (const auto& [name, values] : f) j[name] = values;
  return j;
}

void write_file_atomic(const fs::path& path, const std::string& data) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << data;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- configuration -------------------------------------------------------------

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw std::invalid_argument("service: port out of range");
  if (corpus_path.empty()) throw std::invalid_argument("service: corpus path is required");
  if (!image_root.empty() && !fs::is_directory(image_root)) {
    throw std::invalid_argument("service: image root '" + image_root.string() + "' is not a directory");
  }
  if (max_iterations < 1) throw std::invalid_argument("service: max_iterations must be >= 1");
  if (!engine_overrides.is_object()) throw std::invalid_argument("service: engine must be an object");
}

ServiceConfig service_config_from_json(const json& j) {
  static const std::set<std::string> known{"host",   "port",           "corpus",      "image_root",
                                           "data_dir", "engine",       "max_iterations",
                                           "idle_timeout_s", "cors_origin"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("service config: unknown field '" + key + "'");
  }
  ServiceConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  if (j.contains("corpus")) c.corpus_path = j["corpus"].get<std::string>();
  if (j.contains("image_root")) c.image_root = j["image_root"].get<std::string>();
  if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
  if (j.contains("engine")) c.engine_overrides = j["engine"];
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.idle_timeout = std::chrono::seconds(j.value("idle_timeout_s", std::int64_t{1800}));
  c.cors_origin = j.value("cors_origin", c.cors_origin);
  return c;
}

ServiceConfig load_service_config(const std::optional<fs::path>& file) {
  ServiceConfig c;
  if (file) c = service_config_from_json(json::parse(read_file(*file)));
  if (const char* addr = std::getenv("FAIRCOP_ADDR")) {
    const std::string a(addr);
    const auto colon = a.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("FAIRCOP_ADDR must be host:port");
    c.host = a.substr(0, colon);
    c.port = std::stoi(a.substr(colon + 1));
  }
  if (const char* p = std::getenv("FAIRCOP_CORPUS")) c.corpus_path = p;
  if (const char* p = std::getenv("FAIRCOP_IMAGE_ROOT")) c.image_root = p;
  return c;
}

// --- service -------------------------------------------------------------------

Service::Service(std::shared_ptr<const Corpus> corpus, ServiceConfig cfg)
    : corpus_(std::move(corpus)), cfg_(std::move(cfg)) {
  if (!corpus_) throw std::invalid_argument("service: corpus is required");
  if (cfg_.max_iterations < 1) throw std::invalid_argument("service: max_iterations must be >= 1");
  engine_defaults_.max_iterations = cfg_.max_iterations;
  engine_defaults_ = apply_overrides(engine_defaults_, cfg_.engine_overrides);
  engine_defaults_.validate(*corpus_);
  fs::create_directories(cfg_.data_dir / "sessions");
}

fs::path Service::session_dir(const std::string& id) const { return cfg_.data_dir / "sessions" / id; }

HttpResponse Service::handle(const std::string& method, const std::string& path,
                             const std::string& body) {
  const auto parts = split_path(path);
  try {
    if (parts.size() < 2 || parts[0] != "v1") return error_response(404, "not found");
    if (method == "GET" && parts.size() == 2 && parts[1] == "healthz") {
      return json_response(200, {{"status", "ok"}, {"records", corpus_->size()}});
    }
    if (parts[1] == "images" && method == "GET") {
      // the raw remainder, so "a/../b" style ids are seen whole
      const std::string prefix = "/v1/images/";
      const auto pos = path.find(prefix);
      const std::string id = pos == std::string::npos ? "" : path.substr(pos + prefix.size());
      return image(id);
    }
    if (parts[1] != "sessions") return error_response(404, "not found");
    if (parts.size() == 2 && method == "POST") return create_session(body);
    if (parts.size() == 3 && method == "GET") return snapshot(parts[2]);
    if (parts.size() == 4 && method == "POST" && parts[3] == "feedback") return feedback(parts[2], body);
    if (parts.size() == 4 && method == "POST" && parts[3] == "report") return report(parts[2], body);
    return error_response(404, "not found");
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

json Service::batch_json(const Session& s) const {
  json items = json::array();
  for (auto idx : s.batch()) {
    const auto& r = corpus_->record(idx);
    items.push_back({{"id", r.id},
                     {"image_uri", r.image_uri.value_or("/v1/images/" + r.id)},
                     {"attributes", r.attributes}});
  }
  return items;
}

json Service::snapshot_json(const Session& s) const {
  return {{"status", to_string(s.status())},
          {"iteration", s.iteration()},
          {"counts",
           {{"similar", s.similar_all().size()},
            {"dissimilar", s.dissimilar_all().size()},
            {"remaining", s.remaining_count()}}},
          {"last_batch", batch_json(s)}};
}

void Service::append_event(const std::string& id, const FeedbackEvent& ev) const {
  std::ofstream out(session_dir(id) / "events.jsonl", std::ios::app);
  if (!out) throw std::runtime_error("cannot append to event log of session " + id);
  out << to_json(ev).dump() << '\n';
  out.flush();
}

void Service::write_snapshot(const std::string& id, const Session& s) const {
  auto j = snapshot_json(s);
  j["session_id"] = id;
  j["updated_ms"] = epoch_ms();
  write_file_atomic(session_dir(id) / "snapshot.json", j.dump(2));
}

HttpResponse Service::create_session(const std::string& body) {
  const json req = body.empty() ? json::object() : json::parse(body);
  if (!req.is_object()) return error_response(400, "request body must be an object");

  AttributeFilter constraints;
  EngineConfig cfg = engine_defaults_;
  try {
    constraints = parse_constraints(req.value("constraints", json()));
    if (req.contains("config_overrides")) cfg = apply_overrides(cfg, req["config_overrides"]);
    validate_filter(*corpus_, constraints);
    cfg.max_iterations = std::min(cfg.max_iterations, cfg_.max_iterations);
    cfg.validate(*corpus_);
  } catch (const UnknownAttributeError& e) {
    return error_response(400, e.what(), {{"attribute", e.attribute()}});
  } catch (const std::invalid_argument& e) {
    return error_response(400, e.what());
  }
  if (req.contains("seed")) {
    cfg.seed = req["seed"].get<std::uint64_t>();
  } else {
    cfg.seed = std::stoull(random_token_hex().substr(0, 16), nullptr, 16);
  }

  std::unique_ptr<Session> session;
  try {
    session = std::make_unique<Session>(*corpus_, constraints, cfg);
  } catch (const SessionError& e) {
    if (e.kind() == SessionError::Kind::no_match) return error_response(404, e.what());
    throw;
  }

  std::string id;
  do {
    id = random_token_hex();
  } while (fs::exists(session_dir(id)));
  fs::create_directories(session_dir(id));
  const json meta{{"session_id", id},
                  {"created_ms", epoch_ms()},
                  {"constraints", constraints_json(constraints)},
                  {"config", to_json(session->config())}};
  write_file_atomic(session_dir(id) / "session.json", meta.dump(2));
  { std::ofstream(session_dir(id) / "events.jsonl", std::ios::trunc); }
  write_snapshot(id, *session);

  json resp{{"session_id", id}, {"iteration", 0}, {"batch", batch_json(*session)}};
  auto entry = std::make_shared<Entry>();
  entry->session = std::move(session);
  entry->last_used = std::chrono::steady_clock::now();
  {
    std::lock_guard lock(mu_);
    sessions_[id] = std::move(entry);
  }
  return json_response(201, resp);
}

std::unique_ptr<Session> Service::replay(const std::string& id) const {
  const auto meta = json::parse(read_file(session_dir(id) / "session.json"));
  const auto constraints = parse_constraints(meta.at("constraints"));
  const auto cfg = apply_overrides(EngineConfig{}, meta.at("config"));
  auto session = std::make_unique<Session>(*corpus_, constraints, cfg);

  std::ifstream in(session_dir(id) / "events.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      // a torn final line from a crash mid-append; nothing after it was acknowledged
      if (in.peek() == EOF) break;
      throw std::runtime_error("session " + id + ": corrupt event log at line " + std::to_string(n));
    }
    const auto ev = feedback_event_from_json(j);
    if (ev.shown != session->batch_ids()) {
      throw std::runtime_error("session " + id + ": event log diverges at line " + std::to_string(n));
    }
    if (ev.reported) {
      session->report_target(*ev.reported);
    } else {
      session->submit_feedback(ev.similar);
    }
  }
  return session;
}

std::shared_ptr<Service::Entry> Service::find_entry(const std::string& id) {
  if (!is_session_id(id)) return nullptr;
  std::shared_ptr<Entry> entry;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) {
      entry = it->second;
    } else {
      if (!fs::exists(session_dir(id) / "session.json")) return nullptr;
      entry = std::make_shared<Entry>();
      sessions_[id] = entry;
    }
  }
  std::lock_guard lock(entry->mu);
  if (!entry->session) entry->session = replay(id);
  entry->last_used = std::chrono::steady_clock::now();
  return entry;
}

HttpResponse Service::feedback(const std::string& id, const std::string& body) {
  auto entry = find_entry(id);
  if (!entry) return error_response(404, "unknown session");
  const json req = body.empty() ? json::object() : json::parse(body);
  if (!req.is_object()) return error_response(400, "request body must be an object");
  const auto similar = req.value("similar_ids", std::vector<std::string>{});

  std::lock_guard lock(entry->mu);
  auto& s = *entry->session;
  if (s.status() != SessionStatus::active) {
    return error_response(409, "session is " + to_string(s.status()),
                          {{"status", to_string(s.status())}});
  }
  if (req.contains("iteration") && req["iteration"].get<std::size_t>() != s.iteration()) {
    return error_response(409, "stale iteration", {{"iteration", s.iteration()}});
  }
  StepResult step;
  try {
    step = s.submit_feedback(similar);
  } catch (const SessionError& e) {
    if (e.kind() == SessionError::Kind::not_in_batch) {
      return error_response(422, e.what(), {{"offenders", e.offenders()}});
    }
    return error_response(409, e.what());
  }
  append_event(id, s.event_log().back());
  write_snapshot(id, s);
  entry->last_used = std::chrono::steady_clock::now();

  if (step.status != SessionStatus::active) {
    return json_response(200, {{"status", to_string(step.status)}, {"iteration", s.iteration()}});
  }
  json resp{{"status", "active"},
            {"iteration", s.iteration()},
            {"batch", batch_json(s)},
            {"trained", step.trained}};
  if (step.loss) resp["loss"] = *step.loss;
  return json_response(200, resp);
}

HttpResponse Service::report(const std::string& id, const std::string& body) {
  auto entry = find_entry(id);
  if (!entry) return error_response(404, "unknown session");
  const json req = body.empty() ? json::object() : json::parse(body);
  if (!req.is_object() || !req.contains("image_id")) return error_response(400, "image_id is required");
  const auto image_id = req["image_id"].get<std::string>();

  std::lock_guard lock(entry->mu);
  auto& s = *entry->session;
  std::size_t n = 0;
  try {
    n = s.report_target(image_id);
  } catch (const SessionError& e) {
    if (e.kind() == SessionError::Kind::not_in_batch) {
      return error_response(422, e.what(), {{"offenders", e.offenders()}});
    }
    return error_response(409, e.what(), {{"status", to_string(s.status())}});
  }
  append_event(id, s.event_log().back());
  write_snapshot(id, s);
  return json_response(200, {{"status", "converged"},
                             {"iterations", n},
                             {"convergence_score",
                              convergence_score(n, s.config().max_iterations, true)}});
}

HttpResponse Service::snapshot(const std::string& id) {
  auto entry = find_entry(id);
  if (!entry) return error_response(404, "unknown session");
  std::lock_guard lock(entry->mu);
  auto j = snapshot_json(*entry->session);
  j["session_id"] = id;
  return json_response(200, j);
}

HttpResponse Service::image(const std::string& id) const {
  const bool unsafe = id.empty() || id.find('/') != std::string::npos ||
                      id.find('\\') != std::string::npos || id.find("..") != std::string::npos ||
                      id.front() == '.' || id.find('\0') != std::string::npos;
  if (unsafe) return error_response(400, "invalid image id");
  if (cfg_.image_root.empty()) return error_response(404, "no image root configured");

  std::vector<fs::path> candidates;
  if (auto idx = corpus_->index_of(id)) {
    const auto& uri = corpus_->record(*idx).image_uri;
    if (uri && uri->find("..") == std::string::npos && !uri->empty() && uri->front() != '/') {
      candidates.push_back(cfg_.image_root / *uri);
    }
  }
  candidates.push_back(cfg_.image_root / id);
  for (const char* ext : {".jpg", ".jpeg", ".png", ".webp", ".gif"}) {
    candidates.push_back(cfg_.image_root / (id + ext));
  }
  for (const auto& p : candidates) {
    if (fs::is_regular_file(p)) return {200, content_type_for(p), read_file(p)};
  }
  return error_response(404, "image not found");
}

std::size_t Service::evict_idle(std::chrono::steady_clock::time_point now) {
  std::lock_guard lock(mu_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    // an entry still referenced elsewhere is mid-request
    if (it->second.use_count() > 1) {
      ++it;
      continue;
    }
    std::unique_lock entry_lock(it->second->mu, std::try_to_lock);
    if (entry_lock.owns_lock() && now - it->second->last_used > cfg_.idle_timeout) {
      entry_lock.unlock();
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

std::size_t Service::live_sessions() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

// --- HTTP transport ------------------------------------------------------------

struct HttpFrontend::Impl {
  Service& service;
  httplib::Server server;
  std::mutex log_mu;
  std::atomic<bool> running{false};
  std::mutex janitor_mu;
  std::condition_variable janitor_cv;

  explicit Impl(Service& s) : service(s) {}
};

HttpFrontend::HttpFrontend(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto* impl = impl_.get();
  const auto& cfg = service.config();
  auto dispatch = [impl, &cfg](const httplib::Request& req, httplib::Response& res) {
    const auto started = std::chrono::steady_clock::now();
    const auto out = impl->service.handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
    if (!cfg.cors_origin.empty()) res.set_header("Access-Control-Allow-Origin", cfg.cors_origin);
    const json line{{"ts_ms", epoch_ms()},
                    {"method", req.method},
                    {"path", req.path},
                    {"status", out.status},
                    {"duration_ms", std::chrono::duration<double, std::milli>(
                                        std::chrono::steady_clock::now() - started)
                                        .count()}};
    std::lock_guard lock(impl->log_mu);
    std::cout << line.dump() << std::endl;
  };
  impl->server.Get(".*", dispatch);
  impl->server.Post(".*", dispatch);
  impl->server.Options(".*", [&cfg](const httplib::Request&, httplib::Response& res) {
    if (!cfg.cors_origin.empty()) {
      res.set_header("Access-Control-Allow-Origin", cfg.cors_origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
    res.status = 204;
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

bool HttpFrontend::listen() {
  auto& impl = *impl_;
  const auto& cfg = impl.service.config();
  impl.running = true;
  std::thread janitor([&impl] {
    std::unique_lock lock(impl.janitor_mu);
    while (impl.running) {
      impl.janitor_cv.wait_for(lock, std::chrono::seconds(1));
      impl.service.evict_idle(std::chrono::steady_clock::now());
    }
  });
  {
    std::lock_guard lock(impl.log_mu);
    std::cout << json{{"event", "listening"}, {"host", cfg.host}, {"port", cfg.port}}.dump()
              << std::endl;
  }
  const bool ok = impl.server.listen(cfg.host, cfg.port);
  {
    std::lock_guard lock(impl.janitor_mu);
    impl.running = false;
  }
  impl.janitor_cv.notify_all();
  janitor.join();
  return ok;
}

void HttpFrontend::stop() {
  if (impl_) impl_->server.stop();
}

void serve(Service& service) {
  HttpFrontend frontend(service);
  const auto& cfg = service.config();
  if (!frontend.listen()) {
    throw std::runtime_error("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
  }
}

}  // namespace faircop

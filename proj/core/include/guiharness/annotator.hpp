#pragma once

// Session store behind the annotation/steering HTTP API. Requests are routed
// through `handle` so the API can be exercised without a socket; `HttpServer`
// binds the same handler to a port.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/endpoints.hpp"
#include "guiharness/episode.hpp"
#include "guiharness/sim_env.hpp"

namespace guiharness::annot {

enum class Mode { annotate, steer };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8765;
  std::vector<std::filesystem::path> packs;
  std::filesystem::path export_dir = "exports";
  /// When set, sessions are written here after every mutation and reloaded at startup.
  std::optional<std::filesystem::path> session_dir;
  std::chrono::seconds ttl{2 * 60 * 60};
  std::uint64_t seed = 0;
  EpisodeConfig episode;

  /// Reads GUIHARNESS_ANNOTATE_{BIND,PORT,PACKS,EXPORT_DIR,SESSION_DIR,TTL_SECONDS}.
  /// PACKS is a ':'-separated list.
  static ServiceConfig from_env();
  static ServiceConfig from_json(const nlohmann::json& j);
};

struct Response {
  int status = 200;
  std::string body;  // JSON text
  std::string content_type = "application/json";
};

using Clock = std::function<std::chrono::system_clock::time_point()>;

class AnnotatorService {
 public:
  /// Loads every pack in cfg.packs. Task ids must be unique across packs.
  /// The planner and grounder are only needed for POST .../propose.
  explicit AnnotatorService(ServiceConfig cfg, PlannerClient* planner = nullptr,
                            GrounderClient* grounder = nullptr, Clock clock = {});
  ~AnnotatorService();

  AnnotatorService(const AnnotatorService&) = delete;
  AnnotatorService& operator=(const AnnotatorService&) = delete;

  Response handle(const std::string& method, const std::string& path, const std::string& body);

  const ServiceConfig& config() const { return cfg_; }
  std::size_t live_sessions() const;

 private:
  struct Session;
  struct PackEntry;

  Response list_tasks() const;
  Response create_session(const std::string& body);
  Response observation(Session& s);
  Response submit_action(Session& s, const std::string& body);
  Response propose_action(Session& s);
  Response finalize(Session& s);

  /// nullptr with `gone` set when the id is known but expired.
  std::shared_ptr<Session> lookup(const std::string& id, bool& gone);
  void persist(const Session& s) const;
  void load_persisted();
  std::string new_id();

  ServiceConfig cfg_;
  PlannerClient* planner_;
  GrounderClient* grounder_;
  Clock clock_;
  std::vector<std::unique_ptr<PackEntry>> packs_;
  std::unordered_map<std::string, std::pair<const PackEntry*, const sim::TaskSpec*>> tasks_;

  mutable std::shared_mutex store_mu_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  std::unordered_set<std::string> expired_;
  std::uint64_t counter_ = 0;
};

/// Serves an AnnotatorService over HTTP on a background thread.
class HttpServer {
 public:
  explicit HttpServer(AnnotatorService& service);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks until stop() is called from another thread.
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace guiharness::annot

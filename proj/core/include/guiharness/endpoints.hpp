#pragma once

// Remote planner / grounder contracts, their JSON-over-HTTP clients, and
// deterministic scripted stubs for tests.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/actions.hpp"
#include "guiharness/model_io.hpp"

namespace guiharness {

struct GrounderRequest {
  std::string element_description;
  std::string screenshot;  // image reference or base64 payload
  Platform platform = Platform::web;
};

struct GrounderResponse {
  Coordinate coord;
};

class PlannerClient {
 public:
  virtual ~PlannerClient() = default;
  virtual std::string complete(const std::vector<Message>& messages, const DecodingParams& params) = 0;
};

class GrounderClient {
 public:
  virtual ~GrounderClient() = default;
  virtual GrounderResponse locate(const GrounderRequest& req) = 0;
};

std::string call_planner(PlannerClient& endpoint, const std::vector<Message>& messages,
                         const DecodingParams& params);
GrounderResponse call_grounder(GrounderClient& endpoint, const GrounderRequest& req);

// Wire formats.
nlohmann::json planner_request_json(const std::vector<Message>& messages, const DecodingParams& params);
/// Throws Error(MalformedResponse).
std::string planner_text_from_json(const nlohmann::json& body);
nlohmann::json grounder_request_json(const GrounderRequest& req);
/// Throws Error(MalformedResponse), including for coordinates outside [0,1].
GrounderResponse grounder_response_from_json(const nlohmann::json& body);

/// Stable 64-bit FNV-1a of the canonical request JSON, printed as 16 hex digits.
std::string request_key(const nlohmann::json& request);

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{100};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{2000};
};

struct EndpointConfig {
  std::string url;  // e.g. http://127.0.0.1:8000/v1/plan
  RetryPolicy retry;
  std::chrono::milliseconds timeout{30000};
  int max_parallel = 4;

  /// Reads `<prefix>_URL`, `<prefix>_RETRIES`, `<prefix>_TIMEOUT_MS`, `<prefix>_PARALLEL`.
  static std::optional<EndpointConfig> from_env(const std::string& prefix);
  static EndpointConfig from_json(const nlohmann::json& j);
};

/// Performs one JSON POST with bounded exponential backoff. Throws
/// Error(EndpointUnavailable) after the last failed attempt.
class JsonHttpEndpoint {
 public:
  explicit JsonHttpEndpoint(EndpointConfig cfg);
  ~JsonHttpEndpoint();

  nlohmann::json post(const nlohmann::json& body);
  const EndpointConfig& config() const { return cfg_; }
  /// Transport attempts made over the endpoint's lifetime.
  int attempts() const;

 private:
  EndpointConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
  std::counting_semaphore<> slots_;
  mutable std::mutex mu_;
  int attempts_ = 0;
};

class HttpPlanner : public PlannerClient {
 public:
  explicit HttpPlanner(EndpointConfig cfg) : http_(std::move(cfg)) {}
  std::string complete(const std::vector<Message>& messages, const DecodingParams& params) override;
  JsonHttpEndpoint& transport() { return http_; }

 private:
  JsonHttpEndpoint http_;
};

class HttpGrounder : public GrounderClient {
 public:
  explicit HttpGrounder(EndpointConfig cfg) : http_(std::move(cfg)) {}
  GrounderResponse locate(const GrounderRequest& req) override;
  JsonHttpEndpoint& transport() { return http_; }

 private:
  JsonHttpEndpoint http_;
};

/// Scripted planner: replies keyed by request hash, else a FIFO of default replies,
/// else a fallback callback. Records every request it sees.
class StubPlanner : public PlannerClient {
 public:
  using Fallback = std::function<std::string(const std::vector<Message>&, int call_index)>;

  StubPlanner() = default;
  explicit StubPlanner(std::vector<std::string> script) : script_(std::move(script)) {}
  explicit StubPlanner(Fallback fn) : fallback_(std::move(fn)) {}

  /// Key under which set_reply() matches a request.
  static std::string key_for(const std::vector<Message>& messages);
  void set_reply(const std::string& key, std::string reply);
  std::string complete(const std::vector<Message>& messages, const DecodingParams& params) override;

  int calls() const;
  std::vector<std::vector<Message>> requests() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> keyed_;
  std::vector<std::string> script_;
  std::size_t next_ = 0;
  Fallback fallback_;
  std::vector<std::vector<Message>> seen_;
};

/// Scripted grounder: element description -> coordinate, with an optional fallback.
class StubGrounder : public GrounderClient {
 public:
  using Fallback = std::function<std::optional<Coordinate>(const GrounderRequest&)>;

  StubGrounder() = default;
  explicit StubGrounder(std::map<std::string, Coordinate> table) : table_(std::move(table)) {}
  explicit StubGrounder(Fallback fn) : fallback_(std::move(fn)) {}

  void set(const std::string& description, Coordinate c);
  GrounderResponse locate(const GrounderRequest& req) override;
  int calls() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Coordinate> table_;
  Fallback fallback_;
  int calls_ = 0;
};

}  // namespace guiharness

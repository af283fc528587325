#include "guiharness/endpoints.hpp"

#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "guiharness/digest.hpp"

namespace guiharness {

std::string call_planner(PlannerClient& endpoint, const std::vector<Message>& messages,
                         const DecodingParams& params) {
  return endpoint.complete(messages, params);
}

GrounderResponse call_grounder(GrounderClient& endpoint, const GrounderRequest& req) {
  GrounderResponse r = endpoint.locate(req);
  if (!in_unit_square(r.coord))
    throw Error(ErrorCode::MalformedResponse,
                fmt::format("grounder coordinate ({}, {}) outside [0,1]", r.coord.x, r.coord.y));
  return r;
}

nlohmann::json planner_request_json(const std::vector<Message>& messages, const DecodingParams& params) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  return {{"messages", std::move(msgs)},
          {"temperature", params.temperature},
          {"top_p", params.top_p},
          {"max_tokens", params.max_context}};
}

std::string planner_text_from_json(const nlohmann::json& body) {
  if (body.is_object()) {
    if (auto it = body.find("text"); it != body.end() && it->is_string()) return it->get<std::string>();
    // OpenAI-compatible servers.
    if (auto it = body.find("choices"); it != body.end() && it->is_array() && !it->empty()) {
      const auto& c = (*it)[0];
      if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
        return c["message"]["content"].get<std::string>();
      if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
    }
  }
  throw Error(ErrorCode::MalformedResponse, "planner response has no text: " + body.dump().substr(0, 200));
}

nlohmann::json grounder_request_json(const GrounderRequest& req) {
  return {{"element_description", req.element_description},
          {"image", req.screenshot},
          {"platform", to_string(req.platform)}};
}

GrounderResponse grounder_response_from_json(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("x") || !body.contains("y") || !body["x"].is_number() ||
      !body["y"].is_number())
    throw Error(ErrorCode::MalformedResponse, "grounder response needs numeric x and y");
  GrounderResponse r{{body["x"].get<double>(), body["y"].get<double>()}};
  if (!in_unit_square(r.coord))
    throw Error(ErrorCode::MalformedResponse,
                fmt::format("grounder coordinate ({}, {}) outside [0,1]", r.coord.x, r.coord.y));
  return r;
}

std::string request_key(const nlohmann::json& request) { return fnv1a64_hex(request.dump()); }

// ---------------------------------------------------------------------------

std::optional<EndpointConfig> EndpointConfig::from_env(const std::string& prefix) {
  const char* url = std::getenv((prefix + "_URL").c_str());
  if (!url || !*url) return std::nullopt;
  EndpointConfig cfg;
  cfg.url = url;
  if (const char* v = std::getenv((prefix + "_RETRIES").c_str())) cfg.retry.max_attempts = std::max(1, std::atoi(v));
  if (const char* v = std::getenv((prefix + "_TIMEOUT_MS").c_str()))
    cfg.timeout = std::chrono::milliseconds(std::atol(v));
  if (const char* v = std::getenv((prefix + "_PARALLEL").c_str())) cfg.max_parallel = std::max(1, std::atoi(v));
  return cfg;
}

EndpointConfig EndpointConfig::from_json(const nlohmann::json& j) {
  EndpointConfig cfg;
  cfg.url = j.at("url").get<std::string>();
  cfg.retry.max_attempts = std::max(1, j.value("max_attempts", cfg.retry.max_attempts));
  cfg.retry.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", 100));
  cfg.retry.max_backoff = std::chrono::milliseconds(j.value("max_backoff_ms", 2000));
  cfg.retry.multiplier = j.value("backoff_multiplier", 2.0);
  cfg.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
  cfg.max_parallel = std::max(1, j.value("max_parallel", 4));
  return cfg;
}

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::EndpointUnavailable, "bad endpoint url '" + url + "'");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

JsonHttpEndpoint::JsonHttpEndpoint(EndpointConfig cfg)
    : cfg_(std::move(cfg)), slots_(std::max(1, cfg_.max_parallel)) {
  std::tie(scheme_host_port_, path_) = split_url(cfg_.url);
}

JsonHttpEndpoint::~JsonHttpEndpoint() = default;

int JsonHttpEndpoint::attempts() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

nlohmann::json JsonHttpEndpoint::post(const nlohmann::json& body) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{slots_};

  const std::string payload = body.dump();
  auto backoff = cfg_.retry.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    {
      std::lock_guard lock(mu_);
      ++attempts_;
    }
    httplib::Client client(scheme_host_port_);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    auto res = client.Post(path_, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) throw Error(ErrorCode::MalformedResponse, "response is not JSON");
      return parsed;
    }
    last_error = res ? fmt::format("HTTP {}", res->status) : httplib::to_string(res.error());
    // Client errors will not improve on retry.
    if (res && res->status >= 400 && res->status < 500) break;
    if (attempt < cfg_.retry.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(cfg_.retry.max_backoff,
                         std::chrono::milliseconds(static_cast<long long>(backoff.count() * cfg_.retry.multiplier)));
    }
  }
  throw Error(ErrorCode::EndpointUnavailable, fmt::format("{}: {}", cfg_.url, last_error));
}

std::string HttpPlanner::complete(const std::vector<Message>& messages, const DecodingParams& params) {
  return planner_text_from_json(http_.post(planner_request_json(messages, params)));
}

GrounderResponse HttpGrounder::locate(const GrounderRequest& req) {
  return grounder_response_from_json(http_.post(grounder_request_json(req)));
}

// ---------------------------------------------------------------------------

namespace {

std::string messages_key(const std::vector<Message>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  return request_key(msgs);
}

}  // namespace

std::string StubPlanner::key_for(const std::vector<Message>& messages) { return messages_key(messages); }

void StubPlanner::set_reply(const std::string& key, std::string reply) {
  std::lock_guard lock(mu_);
  keyed_[key] = std::move(reply);
}

std::string StubPlanner::complete(const std::vector<Message>& messages, const DecodingParams&) {
  std::lock_guard lock(mu_);
  int index = static_cast<int>(seen_.size());
  seen_.push_back(messages);
  if (!keyed_.empty()) {
    if (auto it = keyed_.find(messages_key(messages)); it != keyed_.end()) return it->second;
  }
  if (next_ < script_.size()) return script_[next_++];
  if (fallback_) return fallback_(messages, index);
  throw Error(ErrorCode::EndpointUnavailable, "stub planner has no scripted reply");
}

int StubPlanner::calls() const {
  std::lock_guard lock(mu_);
  return static_cast<int>(seen_.size());
}

std::vector<std::vector<Message>> StubPlanner::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

void StubGrounder::set(const std::string& description, Coordinate c) {
  std::lock_guard lock(mu_);
  table_[description] = c;
}

GrounderResponse StubGrounder::locate(const GrounderRequest& req) {
  std::lock_guard lock(mu_);
  ++calls_;
  if (auto it = table_.find(req.element_description); it != table_.end()) return {it->second};
  if (fallback_) {
    if (auto c = fallback_(req)) return {*c};
  }
  throw Error(ErrorCode::MalformedResponse, "stub grounder cannot locate '" + req.element_description + "'");
}

int StubGrounder::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

}  // namespace guiharness

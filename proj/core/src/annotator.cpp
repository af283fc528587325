#include "guiharness/annotator.hpp"

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "guiharness/datapipe.hpp"
#include "guiharness/digest.hpp"
#include "guiharness/error.hpp"
#include "text_util.hpp"

namespace guiharness::annot {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Mode m) { return m == Mode::annotate ? "annotate" : "steer"; }

Mode mode_from_string(std::string_view s) {
  if (s == "annotate") return Mode::annotate;
  if (s == "steer") return Mode::steer;
  throw Error(ErrorCode::InvalidSpec, fmt::format("mode must be annotate or steer, got '{}'", s));
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  auto get = [](const char* k) -> std::optional<std::string> {
    if (const char* v = std::getenv(k); v && *v) return std::string(v);
    return std::nullopt;
  };
  if (auto v = get("GUIHARNESS_ANNOTATE_BIND")) c.bind = *v;
  if (auto v = get("GUIHARNESS_ANNOTATE_PORT")) c.port = std::stoi(*v);
  if (auto v = get("GUIHARNESS_ANNOTATE_PACKS")) {
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ':'))
      if (!item.empty()) c.packs.emplace_back(item);
  }
  if (auto v = get("GUIHARNESS_ANNOTATE_EXPORT_DIR")) c.export_dir = *v;
  if (auto v = get("GUIHARNESS_ANNOTATE_SESSION_DIR")) c.session_dir = fs::path(*v);
  if (auto v = get("GUIHARNESS_ANNOTATE_TTL_SECONDS")) c.ttl = std::chrono::seconds(std::stoll(*v));
  return c;
}

ServiceConfig ServiceConfig::from_json(const json& j) {
  ServiceConfig c;
  c.bind = j.value("bind", c.bind);
  c.port = j.value("port", c.port);
  for (const auto& p : j.value("packs", std::vector<std::string>{})) c.packs.emplace_back(p);
  c.export_dir = j.value("export_dir", c.export_dir.string());
  if (j.contains("session_dir") && !j["session_dir"].is_null()) c.session_dir = fs::path(j["session_dir"].get<std::string>());
  c.ttl = std::chrono::seconds(j.value("ttl_seconds", static_cast<std::int64_t>(c.ttl.count())));
  c.seed = j.value("seed", c.seed);
  return c;
}

struct AnnotatorService::PackEntry {
  sim::TaskPack pack;
};

struct AnnotatorService::Session {
  std::string id;
  const PackEntry* pack = nullptr;
  const sim::TaskSpec* task = nullptr;
  Mode mode = Mode::annotate;
  std::chrono::system_clock::time_point created;
  std::mutex mu;
  std::unique_ptr<sim::SimEnvironment> env;
  Trajectory traj;
  bool sealed = false;
};

namespace {

Response json_response(int status, const json& body) { return Response{status, body.dump(), "application/json"}; }

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownTask: return 404;
    case ErrorCode::SessionGone: return 410;
    case ErrorCode::NotSealed: return 409;
    case ErrorCode::InvalidAction:
    case ErrorCode::ParseError:
    case ErrorCode::IllegalKindForPlatform:
    case ErrorCode::MissingCoordinate:
    case ErrorCode::MalformedValue:
    case ErrorCode::BadActionKind:
    case ErrorCode::NoActionBlock:
      return 422;
    case ErrorCode::EndpointUnavailable: return 503;
    case ErrorCode::MalformedResponse: return 502;
    case ErrorCode::EnvironmentFault:
    case ErrorCode::Io:
      return 500;
    default: return 400;
  }
}

Response error_response(const Error& e) {
  json err = {{"code", to_string(e.code())}, {"message", e.what()}};
  if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
    err["offset"] = pe->offset();
    err["expected"] = pe->expected();
  }
  return json_response(status_for(e.code()), {{"error", err}});
}

Response error_response(int status, ErrorCode code, const std::string& msg) {
  return json_response(status, {{"error", {{"code", to_string(code)}, {"message", msg}}}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path.substr(0, path.find('?'))) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

json parse_body(const std::string& body) {
  if (text::trim(body).empty()) return json::object();
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ParseError, "request body must be a JSON object");
  return j;
}

/// Typed text makes render keys that cannot all be pre-rendered; those fall
/// back to the screen's generic asset.
fs::path asset_path(const sim::TaskPack& pack, const std::string& ref, const std::string& screen) {
  fs::path exact = pack.root / ref;
  if (fs::exists(exact)) return exact;
  return pack.root / "assets" / (screen + ".png");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::EnvironmentFault, "missing screenshot asset " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json trajectory_records(const Trajectory& t) {
  std::ostringstream out;
  write_jsonl(out, t);
  json lines = json::array();
  std::istringstream in(out.str());
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(json::parse(line));
  return lines;
}

Trajectory trajectory_from_records(const json& lines) {
  std::ostringstream out;
  for (const auto& l : lines) out << l.dump() << '\n';
  std::istringstream in(out.str());
  auto ts = read_trajectories(in);
  if (ts.size() != 1) throw Error(ErrorCode::Io, "persisted session holds no trajectory");
  return std::move(ts.front());
}

std::int64_t epoch_seconds(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count();
}

}  // namespace

AnnotatorService::AnnotatorService(ServiceConfig cfg, PlannerClient* planner, GrounderClient* grounder, Clock clock)
    : cfg_(std::move(cfg)), planner_(planner), grounder_(grounder), clock_(std::move(clock)) {
  if (!clock_) clock_ = [] { return std::chrono::system_clock::now(); };
  for (const auto& dir : cfg_.packs) {
    auto entry = std::make_unique<PackEntry>();
    entry->pack = sim::load_pack(dir, cfg_.seed);
    for (const auto& t : entry->pack.tasks) {
      if (!tasks_.emplace(t.id, std::make_pair(entry.get(), &t)).second)
        throw Error(ErrorCode::InvalidSpec, "task id '" + t.id + "' appears in more than one pack");
    }
    packs_.push_back(std::move(entry));
  }
  if (cfg_.session_dir) load_persisted();
}

AnnotatorService::~AnnotatorService() = default;

std::size_t AnnotatorService::live_sessions() const {
  std::shared_lock lock(store_mu_);
  return sessions_.size();
}

std::string AnnotatorService::new_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  return fmt::format("s{}-{:08x}", ++counter_, static_cast<std::uint32_t>(rng()));
}

std::shared_ptr<AnnotatorService::Session> AnnotatorService::lookup(const std::string& id, bool& gone) {
  gone = false;
  std::shared_ptr<Session> s;
  {
    std::shared_lock lock(store_mu_);
    if (expired_.count(id)) {
      gone = true;
      return nullptr;
    }
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    s = it->second;
  }
  if (clock_() - s->created <= cfg_.ttl) return s;
  std::unique_lock lock(store_mu_);
  sessions_.erase(id);
  expired_.insert(id);
  if (cfg_.session_dir) {
    std::error_code ec;
    fs::remove(*cfg_.session_dir / (id + ".json"), ec);
  }
  gone = true;
  return nullptr;
}

Response AnnotatorService::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    const auto parts = split_path(path);
    if (parts.size() == 1 && parts[0] == "tasks" && method == "GET") return list_tasks();
    if (parts.size() == 1 && parts[0] == "sessions" && method == "POST") return create_session(body);
    if (parts.size() >= 2 && parts[0] == "sessions") {
      bool gone = false;
      auto s = lookup(parts[1], gone);
      if (gone) return error_response(410, ErrorCode::SessionGone, "session " + parts[1] + " has expired");
      if (!s) return error_response(404, ErrorCode::SessionGone, "no session " + parts[1]);
      std::lock_guard lock(s->mu);
      if (parts.size() == 2 && method == "GET")
        return json_response(200, {{"session_id", s->id},
                                   {"task_id", s->task->id},
                                   {"mode", to_string(s->mode)},
                                   {"sealed", s->sealed},
                                   {"status", to_string(s->traj.status)},
                                   {"steps", s->traj.steps.size()}});
      if (parts.size() == 3) {
        const std::string& op = parts[2];
        if (op == "observation" && method == "GET") return observation(*s);
        if (op == "screenshot.png" && method == "GET") {
          const auto& pack = s->pack->pack;
          return Response{200, read_file(asset_path(pack, sim::screenshot_ref(*pack.graph, s->env->state()), s->env->state().screen())), "image/png"};
        }
        if (op == "actions" && method == "POST") return submit_action(*s, body);
        if (op == "propose" && method == "POST") return propose_action(*s);
        if (op == "finalize" && method == "POST") return finalize(*s);
      }
    }
    return error_response(404, ErrorCode::InvalidSpec, fmt::format("no route for {} {}", method, path));
  } catch (const Error& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    return error_response(500, ErrorCode::EnvironmentFault, e.what());
  }
}

Response AnnotatorService::list_tasks() const {
  json tasks = json::array();
  for (const auto& p : packs_)
    for (const auto& t : p->pack.tasks)
      tasks.push_back({{"id", t.id},
                       {"goal", t.goal},
                       {"platform", to_string(t.platform)},
                       {"env", p->pack.graph->name},
                       {"subgoals", t.subgoals.size()}});
  return json_response(200, {{"tasks", tasks}});
}

Response AnnotatorService::create_session(const std::string& body) {
  const json req = parse_body(body);
  if (!req.contains("task_id") || !req["task_id"].is_string())
    return error_response(422, ErrorCode::InvalidSpec, "task_id is required");
  const std::string task_id = req["task_id"].get<std::string>();
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return error_response(404, ErrorCode::UnknownTask, "unknown task '" + task_id + "'");
  const Mode mode = mode_from_string(req.value("mode", "annotate"));

  auto s = std::make_shared<Session>();
  s->pack = it->second.first;
  s->task = it->second.second;
  s->mode = mode;
  s->created = clock_();
  s->env = std::make_unique<sim::SimEnvironment>(s->pack->pack.graph, *s->task);
  s->env->reset();
  s->traj.task_id = s->task->id;
  s->traj.goal = s->task->goal;
  s->traj.platform = s->task->platform;
  s->traj.initial_observation = s->env->observe();
  s->traj.initial_subgoals = s->env->subgoals(std::nullopt);
  s->traj.initial_state_digest = s->env->state_digest();
  {
    std::unique_lock lock(store_mu_);
    s->id = new_id();
    sessions_.emplace(s->id, s);
  }
  persist(*s);
  return json_response(201, {{"session_id", s->id},
                             {"task_id", s->task->id},
                             {"goal", s->task->goal},
                             {"platform", to_string(s->task->platform)},
                             {"mode", to_string(mode)}});
}

Response AnnotatorService::observation(Session& s) {
  const auto& pack = s.pack->pack;
  const Observation obs = s.env->observe();
  const std::vector<bool> sg =
      s.traj.steps.empty() ? s.traj.initial_subgoals : s.traj.steps.back().subgoals;
  json j = {{"session_id", s.id},
            {"step_index", obs.step_index},
            {"screenshot", obs.screenshot},
            {"screenshot_png", base64_encode(read_file(asset_path(pack, obs.screenshot, s.env->state().screen())))},
            {"state_digest", s.env->state_digest()},
            {"subgoals", sg},
            {"subgoal_progress", sim::subgoal_fraction(sg)},
            {"history", format_memory(memory_of(s.traj))},
            {"sealed", s.sealed},
            {"status", to_string(s.traj.status)}};
  j["url"] = obs.url ? json(*obs.url) : json(nullptr);
  return json_response(200, j);
}

Response AnnotatorService::submit_action(Session& s, const std::string& body) {
  if (s.sealed) return error_response(409, ErrorCode::InvalidAction, "session is sealed");
  const json req = parse_body(body);
  const Platform platform = s.task->platform;
  std::optional<std::string> description;
  if (req.contains("description") && req["description"].is_string()) description = req["description"].get<std::string>();

  GroundedAction g;
  HighLevelAction hla;
  if (req.contains("action") && req["action"].is_string()) {
    g = parse_grounded(req["action"].get<std::string>(), platform);
  } else if (req.contains("grounded") && req["grounded"].is_object()) {
    g = grounded_from_json(req["grounded"]);
    if (g.platform != platform)
      throw Error(ErrorCode::IllegalKindForPlatform, "action platform differs from the task platform");
  } else if (req.contains("high_level")) {
    const json& h = req["high_level"];
    if (h.is_string()) {
      hla = parse_planner_output(h.get<std::string>(), {platform, false}).action;
    } else {
      hla = high_level_from_json(h);
    }
    std::optional<Coordinate> coord;
    if (req.contains("coord") && !req["coord"].is_null()) {
      try {
        coord = coordinate_from_json(req["coord"]);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidAction, std::string("bad coord: ") + e.what());
      }
    }
    g = ground(hla, coord, platform);
    description = hla.element_description;
  } else {
    return error_response(422, ErrorCode::InvalidAction,
                          "body needs one of: action (grounded text), grounded (object), high_level (+coord)");
  }

  // The UI asks for a description; if it is blank fall back to the label under the click.
  std::string desc = text::trim(description.value_or(""));
  if (desc.empty() && g.coord) desc = s.env->label_at(*g.coord).value_or("");
  if (desc.empty() && g.coord)
    desc = fmt::format("element at ({}, {})", format_coordinate_axis(g.coord->x), format_coordinate_axis(g.coord->y));
  hla = lift(g, desc);
  validate(hla, platform);

  Step st;
  st.index = static_cast<int>(s.traj.steps.size());
  st.observation = s.env->observe();
  st.thought = req.value("thought", "");
  st.high_level = hla;
  st.grounded = g;
  st.raw_output = format_planner_reply(st.thought, hla);
  st.author = (s.mode == Mode::steer && req.value("proposal_accepted", false)) ? "steer" : "human";

  std::optional<std::string> answer;
  if (g.kind == ActionKind::stop) {
    answer = g.value;
    st.report = ApplyReport{"stop", std::nullopt, false, 1.0};
  } else {
    st.report = s.env->apply(g);
  }
  st.transition_prob = st.report->transition_prob;
  st.subgoals = s.env->subgoals(answer);
  st.post_state_digest = s.env->state_digest();
  s.traj.steps.push_back(st);
  if (g.kind == ActionKind::stop) {
    s.traj.answer = answer;
    s.traj.status = stop_status(answer.value_or("")) == StopStatus::infeasible ? TerminalStatus::infeasible
                                                                                : TerminalStatus::completed;
    s.sealed = true;
  } else if (static_cast<int>(s.traj.steps.size()) >= cfg_.episode.max_steps) {
    s.traj.status = TerminalStatus::step_limit;
    s.sealed = true;
  }
  persist(s);

  json receipt = {{"step_index", st.index},
                  {"grounded", serialize_grounded(g)},
                  {"high_level", to_json(hla)},
                  {"outcome", st.report->outcome},
                  {"state_changed", st.report->state_changed},
                  {"subgoals", st.subgoals},
                  {"subgoal_progress", sim::subgoal_fraction(st.subgoals)},
                  {"state_digest", st.post_state_digest},
                  {"sealed", s.sealed},
                  {"status", to_string(s.traj.status)}};
  receipt["element"] = st.report->element ? json(*st.report->element) : json(nullptr);
  return json_response(200, receipt);
}

Response AnnotatorService::propose_action(Session& s) {
  if (s.mode != Mode::steer) return error_response(409, ErrorCode::InvalidSpec, "session is not in steer mode");
  if (s.sealed) return error_response(409, ErrorCode::InvalidAction, "session is sealed");
  if (!planner_ || !grounder_)
    return error_response(503, ErrorCode::EndpointUnavailable, "no planner/grounder configured");
  Proposal p = propose(s.traj.goal, memory_of(s.traj), s.env->observe(), s.task->platform, *planner_, *grounder_,
                       cfg_.episode);
  json j = {{"raw_output", p.raw_output}, {"thought", p.thought}};
  j["high_level"] = p.high_level ? to_json(*p.high_level) : json(nullptr);
  j["grounded"] = p.grounded ? json(serialize_grounded(*p.grounded)) : json(nullptr);
  j["coord"] = p.grounded && p.grounded->coord ? to_json(*p.grounded->coord) : json(nullptr);
  j["error"] = p.error ? json(*p.error) : json(nullptr);
  return json_response(200, j);
}

Response AnnotatorService::finalize(Session& s) {
  if (!s.sealed) return error_response(409, ErrorCode::NotSealed, "session must end with stop before finalize");
  sim::SimEnvironment fresh(s.pack->pack.graph, *s.task);
  ReplayResult r = replay_verify(s.traj, fresh);
  json out = {{"session_id", s.id}, {"pass", r.pass}, {"final_subgoals", r.final_subgoals}};
  out["diverged_at"] = r.diverged_at ? json(*r.diverged_at) : json(nullptr);
  if (!r.pass) {
    out["exported"] = 0;
    return json_response(200, out);
  }
  fs::create_directories(cfg_.export_dir);
  const json records = trajectory_records(s.traj);
  const fs::path traj_file = cfg_.export_dir / (s.id + ".trajectory.jsonl");
  const fs::path sample_file = cfg_.export_dir / (s.id + ".samples.jsonl");
  {
    std::ofstream f(traj_file, std::ios::binary);
    for (const auto& l : records) f << l.dump() << '\n';
    if (!f) throw Error(ErrorCode::Io, "cannot write " + traj_file.string());
  }
  IngestResult ing = ingest_records(std::vector<json>(records.begin(), records.end()), "vwa_annotations",
                                    IngestOptions{{}, {}, std::nullopt, true});
  {
    std::ofstream f(sample_file, std::ios::binary);
    write_samples(f, ing.samples);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + sample_file.string());
  }
  out["exported"] = ing.samples.size();
  out["files"] = {{"trajectory", traj_file.string()}, {"samples", sample_file.string()}};
  return json_response(200, out);
}

void AnnotatorService::persist(const Session& s) const {
  if (!cfg_.session_dir) return;
  fs::create_directories(*cfg_.session_dir);
  json j = {{"id", s.id},
            {"task_id", s.task->id},
            {"mode", to_string(s.mode)},
            {"created_at", epoch_seconds(s.created)},
            {"sealed", s.sealed},
            {"state", sim::state_to_json(s.env->state())},
            {"trajectory", trajectory_records(s.traj)}};
  const fs::path final_path = *cfg_.session_dir / (s.id + ".json");
  const fs::path tmp = final_path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << j.dump();
    if (!f) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, final_path);
}

void AnnotatorService::load_persisted() {
  if (!fs::exists(*cfg_.session_dir)) return;
  for (const auto& entry : fs::directory_iterator(*cfg_.session_dir)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) continue;
    auto it = tasks_.find(j.value("task_id", ""));
    if (it == tasks_.end()) continue;
    auto s = std::make_shared<Session>();
    s->id = j.at("id").get<std::string>();
    s->pack = it->second.first;
    s->task = it->second.second;
    s->mode = mode_from_string(j.value("mode", "annotate"));
    s->created = std::chrono::system_clock::time_point(std::chrono::seconds(j.at("created_at").get<std::int64_t>()));
    s->sealed = j.value("sealed", false);
    s->traj = trajectory_from_records(j.at("trajectory"));
    s->env = std::make_unique<sim::SimEnvironment>(s->pack->pack.graph, *s->task);
    s->env->restore(sim::state_from_json(j.at("state")), static_cast<int>(s->traj.steps.size()));
    // Ids look like s<counter>-<hex>; keep new ids above any restored one.
    if (s->id.size() > 1 && s->id[0] == 's') {
      try {
        counter_ = std::max<std::uint64_t>(counter_, std::stoull(s->id.substr(1)));
      } catch (...) {
      }
    }
    sessions_.emplace(s->id, std::move(s));
  }
}

// ---------------------------------------------------------------------------
// HTTP binding
// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  AnnotatorService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(AnnotatorService& s) : service(s) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      Response r = service.handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Get(R"(/.*)", route);
    server.Post(R"(/.*)", route);
  }
};

HttpServer::HttpServer(AnnotatorService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::Io, fmt::format("cannot bind {}:{}", host, port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error(ErrorCode::Io, fmt::format("cannot listen on {}:{}", host, port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace guiharness::annot

#include "guiharness/episode.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guiharness/error.hpp"

namespace guiharness {

using nlohmann::json;

std::string_view to_string(TerminalStatus s) {
  switch (s) {
    case TerminalStatus::running: return "running";
    case TerminalStatus::completed: return "completed";
    case TerminalStatus::infeasible: return "infeasible";
    case TerminalStatus::step_limit: return "step_limit";
    case TerminalStatus::aborted: return "aborted";
  }
  return "?";
}

TerminalStatus terminal_status_from_string(std::string_view s) {
  for (auto t : {TerminalStatus::running, TerminalStatus::completed, TerminalStatus::infeasible,
                 TerminalStatus::step_limit, TerminalStatus::aborted})
    if (to_string(t) == s) return t;
  throw Error(ErrorCode::SchemaVersionMismatch, fmt::format("unknown terminal status '{}'", s));
}

std::vector<std::vector<bool>> Trajectory::subgoal_history() const {
  std::vector<std::vector<bool>> h;
  h.reserve(steps.size() + 1);
  h.push_back(initial_subgoals);
  for (const auto& s : steps) h.push_back(s.subgoals);
  return h;
}

const std::vector<bool>& Trajectory::final_subgoals() const {
  return steps.empty() ? initial_subgoals : steps.back().subgoals;
}

bool Trajectory::success() const {
  const auto& f = final_subgoals();
  return !f.empty() && std::all_of(f.begin(), f.end(), [](bool b) { return b; });
}

MemoryView memory_of(const Trajectory& t) {
  MemoryView m;
  for (const auto& s : t.steps)
    if (s.ok() && s.high_level) m.push_back(summarize(*s.high_level));
  return m;
}

Proposal propose(std::string_view goal, const MemoryView& memory, const Observation& obs, Platform platform,
                 PlannerClient& planner, GrounderClient& grounder, const EpisodeConfig& cfg) {
  Proposal p;
  const TemplateId tpl = cfg.prompt_template.value_or(eval_template(platform));
  p.raw_output = call_planner(planner, build_planner_prompt(goal, memory, obs, tpl), cfg.decoding);
  try {
    PlannerOutput out = parse_planner_output(p.raw_output, {platform, cfg.strict_parse});
    p.thought = out.thought;
    p.high_level = out.action;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::EndpointUnavailable) throw;
    p.error = fmt::format("{}: {}", to_string(e.code()), e.what());
    return p;
  }
  std::optional<Coordinate> coord;
  try {
    if (requires_coordinate(p.high_level->kind) ||
        (p.high_level->kind == ActionKind::scroll && !p.high_level->element_description.empty() &&
         platform == Platform::mobile)) {
      coord = call_grounder(grounder, {p.high_level->element_description, obs.screenshot, platform}).coord;
    }
    p.grounded = ground(*p.high_level, coord, platform);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::EndpointUnavailable) throw;
    p.error = fmt::format("{}: {}", to_string(e.code()), e.what());
  }
  return p;
}

Trajectory run_episode(const std::string& task_id, const std::string& goal, Environment& env,
                       PlannerClient& planner, GrounderClient& grounder, const EpisodeConfig& cfg) {
  Trajectory t;
  t.task_id = task_id;
  t.goal = goal;
  t.platform = env.platform();
  env.reset();
  t.initial_observation = env.observe();
  t.initial_subgoals = env.subgoals(std::nullopt);
  t.initial_state_digest = env.state_digest();

  MemoryView memory;
  int failures = 0;
  while (static_cast<int>(t.steps.size()) < cfg.max_steps) {
    Step step;
    step.index = static_cast<int>(t.steps.size());
    step.observation = env.observe();
    Proposal p;
    try {
      p = propose(goal, memory, step.observation, t.platform, planner, grounder, cfg);
    } catch (const Error& e) {
      t.status = TerminalStatus::aborted;
      t.abort_reason = fmt::format("{}: {}", to_string(e.code()), e.what());
      return t;
    }
    step.raw_output = std::move(p.raw_output);
    step.thought = std::move(p.thought);
    step.high_level = std::move(p.high_level);
    step.grounded = std::move(p.grounded);
    step.error = std::move(p.error);

    if (!step.ok()) {
      step.subgoals = t.final_subgoals();
      step.post_state_digest = env.state_digest();
      t.steps.push_back(std::move(step));
      if (++failures >= cfg.max_consecutive_failures) {
        t.status = TerminalStatus::aborted;
        t.abort_reason = fmt::format("{} consecutive unusable planner outputs", failures);
        return t;
      }
      continue;
    }
    failures = 0;

    const GroundedAction& a = *step.grounded;
    if (a.kind == ActionKind::stop) {
      t.answer = a.value;
      step.subgoals = env.subgoals(a.value);
      step.transition_prob = 1.0;
      step.post_state_digest = env.state_digest();
      t.steps.push_back(std::move(step));
      t.status = stop_status(t.answer.value_or("")) == StopStatus::infeasible ? TerminalStatus::infeasible
                                                                              : TerminalStatus::completed;
      return t;
    }
    try {
      step.report = env.apply(a);
    } catch (const Error& e) {
      t.status = TerminalStatus::aborted;
      t.abort_reason = fmt::format("{}: {}", to_string(e.code()), e.what());
      return t;
    }
    step.transition_prob = step.report->transition_prob;
    step.subgoals = env.subgoals(std::nullopt);
    step.post_state_digest = env.state_digest();
    memory.push_back(summarize(*step.high_level));
    t.steps.push_back(std::move(step));
  }
  t.status = TerminalStatus::step_limit;
  return t;
}

std::vector<Trajectory> run_batch(const std::vector<EpisodeJob>& jobs, PlannerClient& planner,
                                  GrounderClient& grounder, const EpisodeConfig& cfg, int threads) {
  std::vector<Trajectory> out(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        auto env = jobs[i].make_env();
        out[i] = run_episode(jobs[i].task_id, jobs[i].goal, *env, planner, grounder, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double trajectory_log_probability(const Trajectory& t) {
  double lp = 0.0;
  for (const auto& s : t.steps) {
    if (!s.policy_prob || !s.transition_prob)
      throw Error(ErrorCode::MissingProbability, fmt::format("step {} has no probability", s.index));
    lp += std::log(*s.policy_prob) + std::log(*s.transition_prob);
  }
  return lp;
}

double trajectory_probability(const Trajectory& t) {
  double p = 1.0;
  for (const auto& s : t.steps) {
    if (!s.policy_prob || !s.transition_prob)
      throw Error(ErrorCode::MissingProbability, fmt::format("step {} has no probability", s.index));
    p *= *s.policy_prob * *s.transition_prob;
  }
  return p;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

json to_json(const Observation& o) {
  json j = {{"screenshot", o.screenshot}, {"step_index", o.step_index}};
  if (o.url) j["url"] = *o.url;
  return j;
}

Observation observation_from_json(const json& j) {
  Observation o;
  o.screenshot = j.value("screenshot", "");
  if (j.contains("url") && j["url"].is_string()) o.url = j["url"].get<std::string>();
  o.step_index = j.value("step_index", 0);
  return o;
}

namespace {

json report_json(const ApplyReport& r) {
  json j = {{"outcome", r.outcome}, {"state_changed", r.state_changed}, {"transition_prob", r.transition_prob}};
  if (r.element) j["element"] = *r.element;
  return j;
}

ApplyReport report_from_json(const json& j) {
  ApplyReport r;
  r.outcome = j.value("outcome", "");
  if (j.contains("element")) r.element = j["element"].get<std::string>();
  r.state_changed = j.value("state_changed", false);
  r.transition_prob = j.value("transition_prob", 1.0);
  return r;
}

void check_schema(const json& j) {
  const int v = j.value("version", 0);
  if (v > kTrajectorySchemaVersion)
    throw Error(ErrorCode::SchemaVersionMismatch,
                fmt::format("trajectory record has version {}; this build reads up to {}", v,
                            kTrajectorySchemaVersion));
  if (v < 1) throw Error(ErrorCode::SchemaVersionMismatch, "trajectory record has no version");
}

}  // namespace

json to_json(const Step& s) {
  json j = {{"record", "step"},
            {"version", kTrajectorySchemaVersion},
            {"index", s.index},
            {"observation", to_json(s.observation)},
            {"raw_output", s.raw_output},
            {"thought", s.thought},
            {"subgoals", s.subgoals},
            {"post_state_digest", s.post_state_digest},
            {"author", s.author}};
  if (s.high_level) j["high_level"] = to_json(*s.high_level);
  if (s.grounded) {
    j["grounded"] = to_json(*s.grounded);
    j["grounded_text"] = serialize_grounded(*s.grounded);
  }
  if (s.error) j["error"] = *s.error;
  if (s.report) j["report"] = report_json(*s.report);
  if (s.policy_prob) j["policy_prob"] = *s.policy_prob;
  if (s.transition_prob) j["transition_prob"] = *s.transition_prob;
  return j;
}

Step step_from_json(const json& j) {
  check_schema(j);
  Step s;
  s.index = j.value("index", 0);
  if (j.contains("observation")) s.observation = observation_from_json(j["observation"]);
  s.raw_output = j.value("raw_output", "");
  s.thought = j.value("thought", "");
  s.subgoals = j.value("subgoals", std::vector<bool>{});
  s.post_state_digest = j.value("post_state_digest", "");
  s.author = j.value("author", "agent");
  if (j.contains("high_level")) s.high_level = high_level_from_json(j["high_level"]);
  if (j.contains("grounded")) s.grounded = grounded_from_json(j["grounded"]);
  if (j.contains("error")) s.error = j["error"].get<std::string>();
  if (j.contains("report")) s.report = report_from_json(j["report"]);
  if (j.contains("policy_prob")) s.policy_prob = j["policy_prob"].get<double>();
  if (j.contains("transition_prob")) s.transition_prob = j["transition_prob"].get<double>();
  return s;
}

json header_json(const Trajectory& t) {
  json j = {{"record", "trajectory"},
            {"schema", kTrajectorySchema},
            {"version", kTrajectorySchemaVersion},
            {"task_id", t.task_id},
            {"goal", t.goal},
            {"platform", to_string(t.platform)},
            {"initial_observation", to_json(t.initial_observation)},
            {"initial_subgoals", t.initial_subgoals},
            {"initial_state_digest", t.initial_state_digest},
            {"status", to_string(t.status)},
            {"num_steps", t.steps.size()}};
  if (t.answer) j["answer"] = *t.answer;
  if (t.abort_reason) j["abort_reason"] = *t.abort_reason;
  return j;
}

void write_jsonl(std::ostream& out, const Trajectory& t) {
  out << header_json(t).dump() << '\n';
  for (const auto& s : t.steps) out << to_json(s).dump() << '\n';
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw Error(ErrorCode::MalformedValue, fmt::format("line {}: not a JSON object", lineno));
    const std::string record = j.value("record", "");
    if (record == "trajectory") {
      check_schema(j);
      if (j.value("schema", "") != kTrajectorySchema)
        throw Error(ErrorCode::SchemaVersionMismatch, fmt::format("line {}: unknown schema", lineno));
      Trajectory t;
      t.task_id = j.value("task_id", "");
      t.goal = j.value("goal", "");
      t.platform = platform_from_string(j.value("platform", "web"));
      if (j.contains("initial_observation")) t.initial_observation = observation_from_json(j["initial_observation"]);
      t.initial_subgoals = j.value("initial_subgoals", std::vector<bool>{});
      t.initial_state_digest = j.value("initial_state_digest", "");
      t.status = terminal_status_from_string(j.value("status", "running"));
      if (j.contains("answer")) t.answer = j["answer"].get<std::string>();
      if (j.contains("abort_reason")) t.abort_reason = j["abort_reason"].get<std::string>();
      out.push_back(std::move(t));
    } else if (record == "step") {
      if (out.empty()) throw Error(ErrorCode::MalformedValue, fmt::format("line {}: step before header", lineno));
      out.back().steps.push_back(step_from_json(j));
    } else {
      throw Error(ErrorCode::MalformedValue, fmt::format("line {}: unknown record '{}'", lineno, record));
    }
  }
  return out;
}

void save_trajectories(const std::string& path, const std::vector<Trajectory>& ts) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  for (const auto& t : ts) write_jsonl(out, t);
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return read_trajectories(in);
}

}  // namespace guiharness

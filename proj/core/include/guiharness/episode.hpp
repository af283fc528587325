#pragma once

// The planner -> grounder -> environment loop, trajectories, and their JSONL form.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/actions.hpp"
#include "guiharness/endpoints.hpp"
#include "guiharness/environment.hpp"
#include "guiharness/model_io.hpp"
#include "guiharness/observation.hpp"

namespace guiharness {

enum class TerminalStatus { running, completed, infeasible, step_limit, aborted };

std::string_view to_string(TerminalStatus s);
TerminalStatus terminal_status_from_string(std::string_view s);

struct Step {
  int index = 0;
  Observation observation;  // what the planner saw
  std::string raw_output;
  std::string thought;
  std::optional<HighLevelAction> high_level;
  std::optional<GroundedAction> grounded;
  /// Set when the planner output could not be parsed or grounded; the
  /// environment is not advanced for such steps.
  std::optional<std::string> error;
  std::optional<ApplyReport> report;
  std::vector<bool> subgoals;  // snapshot after the step
  std::optional<double> policy_prob;
  std::optional<double> transition_prob;
  std::string post_state_digest;
  std::string author = "agent";  // "agent", "human" or "steer"

  bool ok() const { return !error.has_value(); }
};

struct Trajectory {
  std::string task_id;
  std::string goal;
  Platform platform = Platform::web;
  Observation initial_observation;
  std::vector<bool> initial_subgoals;
  std::string initial_state_digest;
  std::vector<Step> steps;
  TerminalStatus status = TerminalStatus::running;
  std::optional<std::string> answer;
  std::optional<std::string> abort_reason;

  /// Subgoal vectors s_0..s_T (initial snapshot first).
  std::vector<std::vector<bool>> subgoal_history() const;
  const std::vector<bool>& final_subgoals() const;
  bool success() const;
};

/// Summaries of the successfully executed steps, oldest first.
MemoryView memory_of(const Trajectory& t);

struct EpisodeConfig {
  int max_steps = 30;
  /// Consecutive unparseable or ungroundable outputs before the episode aborts.
  int max_consecutive_failures = 3;
  DecodingParams decoding;
  std::optional<TemplateId> prompt_template;  // default: evaluation template of the platform
  bool strict_parse = false;
};

/// One planner + grounder round without touching the environment.
struct Proposal {
  std::string raw_output;
  std::string thought;
  std::optional<HighLevelAction> high_level;
  std::optional<GroundedAction> grounded;
  std::optional<std::string> error;
};

/// Throws Error(EndpointUnavailable) if an endpoint is unreachable; model-side
/// failures (bad JSON, bad coordinates) are reported in Proposal::error.
Proposal propose(std::string_view goal, const MemoryView& memory, const Observation& obs, Platform platform,
                 PlannerClient& planner, GrounderClient& grounder, const EpisodeConfig& cfg);

Trajectory run_episode(const std::string& task_id, const std::string& goal, Environment& env,
                       PlannerClient& planner, GrounderClient& grounder, const EpisodeConfig& cfg = {});

struct EpisodeJob {
  std::string task_id;
  std::string goal;
  std::function<std::unique_ptr<Environment>()> make_env;
};

/// Runs jobs on `threads` workers; results keep job order. The clients must be thread-safe.
std::vector<Trajectory> run_batch(const std::vector<EpisodeJob>& jobs, PlannerClient& planner,
                                  GrounderClient& grounder, const EpisodeConfig& cfg, int threads);

/// prod_t pi(a_t|s_t) * P(s_{t+1}|s_t,a_t). Throws Error(MissingProbability).
double trajectory_probability(const Trajectory& t);
double trajectory_log_probability(const Trajectory& t);

// Persistence: one header record followed by one record per step.

inline constexpr int kTrajectorySchemaVersion = 1;
inline constexpr std::string_view kTrajectorySchema = "guiharness.trajectory";

nlohmann::json to_json(const Step& s);
Step step_from_json(const nlohmann::json& j);
nlohmann::json header_json(const Trajectory& t);
nlohmann::json to_json(const Observation& o);
Observation observation_from_json(const nlohmann::json& j);

void write_jsonl(std::ostream& out, const Trajectory& t);
/// Reads every trajectory in the stream. Throws Error(SchemaVersionMismatch)
/// for records written by a newer schema.
std::vector<Trajectory> read_trajectories(std::istream& in);
void save_trajectories(const std::string& path, const std::vector<Trajectory>& ts);
std::vector<Trajectory> load_trajectories(const std::string& path);

}  // namespace guiharness

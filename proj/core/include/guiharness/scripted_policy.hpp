#pragma once

// Stub planner + grounder pair that replays a fixed grounded plan through the
// normal episode loop (prompt in, JSON action block out, description -> coordinate).

#include <memory>
#include <vector>

#include "guiharness/endpoints.hpp"
#include "guiharness/sim_env.hpp"

namespace guiharness::sim {

struct ScriptedPolicy {
  std::unique_ptr<StubPlanner> planner;
  std::unique_ptr<StubGrounder> grounder;
  /// Planner replies in order, for inspection.
  std::vector<std::string> replies;
};

/// Element descriptions come from the label under each coordinate while the
/// plan is simulated from the task's initial state. When the plan does not end
/// in `stop`, a final `stop [completed]` is appended if `append_stop`.
ScriptedPolicy scripted_policy(const ScreenGraph& g, const TaskSpec& task, const std::vector<GroundedAction>& plan,
                               bool append_stop = true);

}  // namespace guiharness::sim

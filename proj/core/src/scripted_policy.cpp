#include "guiharness/scripted_policy.hpp"

#include <map>

#include <fmt/format.h>

#include "guiharness/model_io.hpp"

namespace guiharness::sim {

ScriptedPolicy scripted_policy(const ScreenGraph& g, const TaskSpec& task, const std::vector<GroundedAction>& plan,
                               bool append_stop) {
  ScriptedPolicy p;
  std::map<std::string, Coordinate> table;
  SimState s = initial_state(g, task.start_screen);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const GroundedAction& a = plan[i];
    std::string desc;
    if (a.coord) {
      const Element* el = hit_test(g.at(s.screen()), s, *a.coord);
      desc = el ? el->label : fmt::format("point {}", i);
      // The grounder is keyed by description; keep distinct targets distinct.
      if (auto it = table.find(desc); it != table.end() && !(it->second == *a.coord))
        desc = fmt::format("{} (step {})", desc, i + 1);
      table[desc] = *a.coord;
    }
    p.replies.push_back(format_planner_reply(fmt::format("Step {} of the plan.", i + 1), lift(a, desc)));
    if (a.kind != ActionKind::stop) s = apply(g, s, a).state;
  }
  if (append_stop && (plan.empty() || plan.back().kind != ActionKind::stop)) {
    HighLevelAction stop{"", ActionKind::stop, std::string("completed")};
    p.replies.push_back(format_planner_reply("The task is done.", stop));
  }
  p.planner = std::make_unique<StubPlanner>(p.replies);
  p.grounder = std::make_unique<StubGrounder>(table);
  return p;
}

}  // namespace guiharness::sim

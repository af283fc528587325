#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "guiharness/episode.hpp"
#include "guiharness/metrics.hpp"
#include "guiharness/scripted_policy.hpp"
#include "guiharness/sim_env.hpp"
#include "support.hpp"

using namespace guiharness;
using nlohmann::json;

namespace {

std::string block(const std::string& desc, const std::string& action, const std::string& value = "") {
  return "Thinking.\n```\n" + json{{"Element Description", desc}, {"Action", action}, {"Value", value}}.dump() + "\n```";
}

struct Forum {
  sim::TaskPack pack = sim::load_pack(testsupport::pack_dir("mini-forum"));
  sim::SimEnvironment env(const std::string& id) { return {pack.graph, *pack.find_task(id)}; }
};

}  // namespace

TEST_SUITE("episode") {

TEST_CASE("scripted oracle plan succeeds") {
  Forum f;
  const auto& task = *f.pack.find_task("forum-upvote-top");
  auto plan = sim::oracle_solve(*f.pack.graph, task, 8).plan;
  auto pol = sim::scripted_policy(*f.pack.graph, task, plan);
  auto env = f.env(task.id);
  auto t = run_episode(task.id, task.goal, env, *pol.planner, *pol.grounder);
  CHECK(t.status == TerminalStatus::completed);
  CHECK(t.success());
  CHECK(t.steps.size() == plan.size() + 1);
  CHECK(t.initial_subgoals == std::vector<bool>{false, false});
  CHECK(t.subgoal_history().size() == t.steps.size() + 1);
  CHECK(t.steps.front().observation.step_index == 0);
  CHECK(t.steps.back().grounded->kind == ActionKind::stop);
  auto mem = memory_of(t);
  CHECK(mem.size() == t.steps.size());  // the closing stop is remembered too
  // the planner saw the growing memory
  auto reqs = pol.planner->requests();
  REQUIRE(reqs.size() == t.steps.size());
  CHECK(reqs[0][0].parts[1].text.find("**Previous Actions**: None") != std::string::npos);
  CHECK(reqs[1][0].parts[1].text.find("step 1: ") != std::string::npos);
  CHECK(reqs[0][0].parts[0].image_ref == t.initial_observation.screenshot);
}

TEST_CASE("unparseable outputs are failed steps and abort after three") {
  Forum f;
  auto env = f.env("forum-upvote-top");
  StubPlanner planner(std::vector<std::string>{"no block here", block("Forums link", "click"), "junk", "junk",
                                               "junk"});
  StubGrounder grounder({{"Forums link", {0.19, 0.04}}});
  auto t = run_episode("forum-upvote-top", "g", env, planner, grounder);
  CHECK(t.status == TerminalStatus::aborted);
  REQUIRE(t.steps.size() == 5);
  CHECK_FALSE(t.steps[0].ok());
  CHECK(t.steps[1].ok());
  CHECK(t.steps[1].report->outcome == "hit");
  CHECK(t.steps[0].post_state_digest == t.initial_state_digest);
  CHECK(t.abort_reason.has_value());
  CHECK(memory_of(t).size() == 1);
}

TEST_CASE("ungroundable output is a failed step without advancing") {
  Forum f;
  auto env = f.env("forum-upvote-top");
  StubPlanner planner(std::vector<std::string>{block("missing thing", "click"), block("", "stop", "infeasible")});
  StubGrounder grounder;
  auto t = run_episode("forum-upvote-top", "g", env, planner, grounder);
  REQUIRE(t.steps.size() == 2);
  CHECK_FALSE(t.steps[0].ok());
  CHECK_FALSE(t.steps[0].report.has_value());
  CHECK(t.status == TerminalStatus::infeasible);
  CHECK(t.answer == "infeasible");
}

TEST_CASE("step limit") {
  Forum f;
  auto env = f.env("forum-upvote-top");
  StubPlanner planner(StubPlanner::Fallback([](const std::vector<Message>&, int) { return block("Forums link", "click"); }));
  StubGrounder grounder({{"Forums link", {0.19, 0.04}}});
  EpisodeConfig cfg;
  cfg.max_steps = 4;
  auto t = run_episode("forum-upvote-top", "g", env, planner, grounder, cfg);
  CHECK(t.status == TerminalStatus::step_limit);
  CHECK(t.steps.size() == 4);
  CHECK(score(t).progress == doctest::Approx(0.0));
}

TEST_CASE("unreachable planner aborts the episode") {
  Forum f;
  auto env = f.env("forum-upvote-top");
  StubPlanner planner;
  StubGrounder grounder;
  auto t = run_episode("forum-upvote-top", "g", env, planner, grounder);
  CHECK(t.status == TerminalStatus::aborted);
  CHECK(t.steps.empty());
}

TEST_CASE("answer stop is scored by the answer predicate") {
  auto pack = sim::load_pack(testsupport::pack_dir("mini-gitlab"));
  const auto& task = *pack.find_task("gitlab-count-open-mrs");
  auto r = sim::oracle_solve(*pack.graph, task, 8);
  REQUIRE(r.solvable);
  CHECK(r.plan.back().kind == ActionKind::stop);
  auto pol = sim::scripted_policy(*pack.graph, task, r.plan);
  sim::SimEnvironment env(pack.graph, task);
  auto t = run_episode(task.id, task.goal, env, *pol.planner, *pol.grounder);
  CHECK(t.success());
  CHECK(t.answer == "3");
  CHECK(t.steps.size() == r.plan.size());
}

TEST_CASE("jsonl round trip") {
  Forum f;
  const auto& task = *f.pack.find_task("forum-post-question");
  auto pol = sim::scripted_policy(*f.pack.graph, task, sim::oracle_solve(*f.pack.graph, task, 8).plan);
  auto env = f.env(task.id);
  auto t = run_episode(task.id, task.goal, env, *pol.planner, *pol.grounder);
  std::stringstream ss;
  write_jsonl(ss, t);
  write_jsonl(ss, t);
  auto back = read_trajectories(ss);
  REQUIRE(back.size() == 2);
  const auto& b = back[0];
  CHECK(b.task_id == t.task_id);
  CHECK(b.goal == t.goal);
  CHECK(b.status == t.status);
  CHECK(b.initial_subgoals == t.initial_subgoals);
  CHECK(b.initial_observation == t.initial_observation);
  REQUIRE(b.steps.size() == t.steps.size());
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    CHECK(b.steps[i].grounded == t.steps[i].grounded);
    CHECK(b.steps[i].high_level == t.steps[i].high_level);
    CHECK(b.steps[i].subgoals == t.steps[i].subgoals);
    CHECK(b.steps[i].post_state_digest == t.steps[i].post_state_digest);
    CHECK(b.steps[i].thought == t.steps[i].thought);
    CHECK(b.steps[i].raw_output == t.steps[i].raw_output);
    CHECK(b.steps[i].author == t.steps[i].author);
  }
  std::stringstream again;
  write_jsonl(again, b);
  std::stringstream orig;
  write_jsonl(orig, t);
  CHECK(again.str() == orig.str());
}

TEST_CASE("newer schema is rejected") {
  std::stringstream ss;
  ss << R"({"record":"trajectory","schema":"guiharness.trajectory","version":2,"task_id":"x"})" << "\n";
  try {
    read_trajectories(ss);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaVersionMismatch);
  }
}

TEST_CASE("batch keeps job order") {
  Forum f;
  std::vector<EpisodeJob> jobs;
  std::vector<std::unique_ptr<sim::ScriptedPolicy>> keep;
  for (int i = 0; i < 6; ++i) {
    const auto& task = f.pack.tasks[i % f.pack.tasks.size()];
    jobs.push_back({task.id + "#" + std::to_string(i), task.goal, [&f, task] {
                      return std::make_unique<sim::SimEnvironment>(f.pack.graph, task);
                    }});
  }
  // a planner that always stops, so the result only depends on the job
  StubPlanner planner(StubPlanner::Fallback([](const std::vector<Message>&, int) { return block("", "stop", "completed"); }));
  StubGrounder grounder;
  auto out = run_batch(jobs, planner, grounder, {}, 3);
  REQUIRE(out.size() == jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) CHECK(out[i].task_id == jobs[i].task_id);
}

TEST_CASE("trajectory probability") {
  Trajectory t;
  Step a, b;
  a.policy_prob = 0.5;
  a.transition_prob = 1.0;
  b.policy_prob = 0.25;
  b.transition_prob = 0.5;
  t.steps = {a, b};
  CHECK(trajectory_probability(t) == doctest::Approx(0.0625));
  CHECK(trajectory_log_probability(t) == doctest::Approx(std::log(0.0625)));
  t.steps[1].policy_prob.reset();
  try {
    trajectory_probability(t);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingProbability);
  }
}

}

#pragma once

// Deterministic scripted GUI environment: a screen graph with hit-testable
// elements and typed state variables, subgoal predicates over that state, and
// a breadth-first oracle used as an independent reference in tests.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/actions.hpp"
#include "guiharness/environment.hpp"

namespace guiharness::sim {

using Value = std::variant<bool, std::int64_t, std::string>;

std::string to_string(const Value& v);

enum class VarType { boolean, integer, string };

struct VarDecl {
  VarType type = VarType::string;
  Value initial = std::string{};
};

struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(const Coordinate& c) const { return c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1; }
  Coordinate center() const { return {(x0 + x1) / 2, (y0 + y1) / 2}; }
};

/// State mutation and/or screen transition.
struct Effect {
  std::optional<std::string> navigate;
  std::map<std::string, Value> set;
  std::map<std::string, std::string> copy;  // destination var <- source var
};

struct Element {
  std::string id;
  std::string label;
  BBox bbox;
  std::optional<Effect> on_click;
  std::optional<Effect> on_long_press;
  std::optional<Effect> on_hover;
  std::optional<Effect> on_type;  // applied after the typed text is stored
  bool text_field = false;
  std::string bind;  // variable receiving typed text (text fields only)
  std::map<std::string, Value> visible_if;
  int min_scroll = 0;
  int max_scroll = std::numeric_limits<int>::max();
};

struct Screen {
  std::string id;
  std::string url;                       // web screens
  std::vector<std::string> render_vars;  // variables that change the pixels
  std::vector<Element> elements;         // later elements are drawn on top
  std::map<std::string, Effect> on_key;  // lowercase key name -> effect
  int max_scroll = 0;
};

struct ScreenGraph {
  std::string name;
  Platform platform = Platform::web;
  std::vector<Screen> screens;
  std::string initial_screen;
  std::string home_screen;     // mobile go_home target
  std::string new_tab_screen;  // web new_tab target
  std::map<std::string, VarDecl> state_schema;
  std::map<std::string, std::string> apps;  // app name -> entry screen (mobile)

  const Screen* find(const std::string& id) const;
  const Screen& at(const std::string& id) const;
  const Screen* find_by_url(const std::string& url) const;
};

/// Throws Error(SpecError) naming the offending JSON location.
void validate(const ScreenGraph& g);

struct Tab {
  std::string screen;
  std::vector<std::string> back;
  std::vector<std::string> forward;
  int scroll = 0;

  friend bool operator==(const Tab&, const Tab&) = default;
};

struct SimState {
  std::map<std::string, Value> vars;
  std::vector<Tab> tabs;
  std::size_t active = 0;

  const Tab& tab() const { return tabs.at(active); }
  const std::string& screen() const { return tab().screen; }

  friend bool operator==(const SimState&, const SimState&) = default;
};

SimState initial_state(const ScreenGraph& g, const std::optional<std::string>& start_screen = std::nullopt);

/// Canonical text of the complete state; equal states give equal keys.
std::string state_key(const SimState& s);
std::string state_digest(const SimState& s);
/// Digest of the render-relevant part of the state (screen, render vars, scroll).
std::string render_digest(const ScreenGraph& g, const SimState& s);
/// Relative asset path of the pre-rendered screenshot for this state.
std::string screenshot_ref(const ScreenGraph& g, const SimState& s);

nlohmann::json state_to_json(const SimState& s);
SimState state_from_json(const nlohmann::json& j);

bool is_visible(const Element& e, const SimState& s);
/// Topmost visible element containing the point, or nullptr.
const Element* hit_test(const Screen& screen, const SimState& s, const Coordinate& c);

struct StepResult {
  SimState state;
  ApplyReport report;
};

/// Pure transition function. Interactions that do nothing are reported no-ops.
StepResult apply(const ScreenGraph& g, const SimState& s, const GroundedAction& a);

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct Predicate {
  enum class Op { screen, var_eq, var_ne, var_contains, answer_eq, answer_contains, all, any, not_ };
  Op op = Op::all;
  std::string name;  // screen id or variable name
  Value value;
  std::vector<Predicate> children;
};

struct EvalContext {
  const SimState& state;
  const std::optional<std::string>& answer;
};

bool evaluate(const Predicate& p, const EvalContext& ctx);

struct Subgoal {
  std::string description;
  Predicate predicate;
};

struct TaskSpec {
  std::string id;
  std::string goal;
  Platform platform = Platform::web;
  std::vector<Subgoal> subgoals;
  std::map<std::string, std::string> params;  // instantiated parameter values
  std::optional<std::string> start_screen;
  std::vector<std::string> type_candidates;    // strings the oracle may type
  std::vector<std::string> answer_candidates;  // strings the oracle may stop with
  std::vector<std::string> goto_candidates;    // URLs the oracle may visit directly
  bool tabs = false;                           // let the oracle open and switch tabs
};

std::vector<bool> evaluate_subgoals(const SimState& s, const std::optional<std::string>& answer,
                                    const TaskSpec& task);
double subgoal_fraction(const std::vector<bool>& v);

/// Throws Error(SpecError).
void validate(const TaskSpec& t, const ScreenGraph& g);

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

inline constexpr int kSpecVersion = 1;

ScreenGraph graph_from_json(const nlohmann::json& j);
nlohmann::json graph_to_json(const ScreenGraph& g);
ScreenGraph load_env(const std::filesystem::path& file);

/// Instantiates every task template; parameters are drawn deterministically from `seed`.
std::vector<TaskSpec> tasks_from_json(const nlohmann::json& j, const ScreenGraph& g, std::uint64_t seed);
std::vector<TaskSpec> load_tasks(const std::filesystem::path& file, const ScreenGraph& g, std::uint64_t seed);

/// A directory holding env.json, tasks.json and assets/.
struct TaskPack {
  std::filesystem::path root;
  std::shared_ptr<const ScreenGraph> graph;
  std::vector<TaskSpec> tasks;

  const TaskSpec* find_task(const std::string& id) const;
};

TaskPack load_pack(const std::filesystem::path& dir, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Environment adapter
// ---------------------------------------------------------------------------

class SimEnvironment : public Environment {
 public:
  SimEnvironment(std::shared_ptr<const ScreenGraph> graph, TaskSpec task);

  Platform platform() const override { return graph_->platform; }
  void reset() override;
  Observation observe() const override;
  ApplyReport apply(const GroundedAction& a) override;
  std::vector<bool> subgoals(const std::optional<std::string>& answer) const override;
  std::string state_digest() const override;

  const SimState& state() const { return state_; }
  void restore(SimState s, int step_index);
  const ScreenGraph& graph() const { return *graph_; }
  const TaskSpec& task() const { return task_; }
  /// Label of the element under `c` on the current screen.
  std::optional<std::string> label_at(const Coordinate& c) const;

 private:
  std::shared_ptr<const ScreenGraph> graph_;
  TaskSpec task_;
  SimState state_;
  int step_index_ = 0;
};

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

struct OracleResult {
  bool solvable = false;
  /// Shortest all-subgoals plan when solvable; otherwise the shortest plan
  /// reaching the best achievable subgoal fraction. Ends in `stop` only when
  /// the stop answer is what satisfies the goal.
  std::vector<GroundedAction> plan;
  double best_progress = 0.0;
  std::size_t nodes = 0;
};

/// Actions the oracle considers from a state: one per element effect plus
/// navigation kinds legal on the platform.
std::vector<GroundedAction> enumerate_actions(const ScreenGraph& g, const SimState& s, const TaskSpec& task);

/// Breadth-first search over (screen, state) up to `max_steps` non-stop actions.
/// Throws Error(SearchBudgetExceeded) past `node_cap` distinct states.
OracleResult oracle_solve(const ScreenGraph& g, const TaskSpec& task, int max_steps,
                          std::size_t node_cap = 1'000'000);

}  // namespace guiharness::sim

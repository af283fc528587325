#include <doctest.h>

#include <nlohmann/json.hpp>

#include "guiharness/sim_env.hpp"
#include "support.hpp"

using namespace guiharness;
using namespace guiharness::sim;
using nlohmann::json;

namespace {

GroundedAction click_at(Platform p, Coordinate c) { return {p, ActionKind::click, c, {}, {}, {}}; }

GroundedAction click_el(const ScreenGraph& g, const std::string& screen, const std::string& id) {
  for (const auto& e : g.at(screen).elements)
    if (e.id == id) return click_at(g.platform, e.bbox.center());
  FAIL("no element " << id);
  return {};
}

GroundedAction simple(Platform p, ActionKind k, std::optional<std::string> v = {}) { return {p, k, {}, v, {}, {}}; }

}  // namespace

TEST_SUITE("sim_env") {

TEST_CASE("bundled packs load and validate") {
  for (const char* name : {"mini-gitlab", "mini-forum", "mini-android"}) {
    auto pack = load_pack(testsupport::pack_dir(name));
    CHECK(pack.tasks.size() >= 3);
    CHECK_NOTHROW(validate(*pack.graph));
    for (const auto& t : pack.tasks) CHECK_NOTHROW(validate(t, *pack.graph));
  }
  CHECK(load_pack(testsupport::pack_dir("mini-gitlab")).graph->screens.size() == 12);
}

TEST_CASE("graph json round trip") {
  auto pack = load_pack(testsupport::pack_dir("mini-android"));
  json j = graph_to_json(*pack.graph);
  ScreenGraph back = graph_from_json(j);
  CHECK(graph_to_json(back) == j);
}

TEST_CASE("spec errors name the location") {
  json env = {{"version", 1}, {"name", "x"}, {"platform", "web"},
              {"screens", {{{"id", "a"}, {"elements", {{{"id", "e"}, {"bbox", {0, 0, 1}}}}}}}}};
  try {
    graph_from_json(env);
    FAIL("bad bbox accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SpecError);
    CHECK(std::string(e.what()).find("/screens/0/elements/0/bbox") != std::string::npos);
  }
  json dangling = {{"version", 1}, {"name", "x"}, {"platform", "web"},
                   {"screens", {{{"id", "a"}, {"elements", {{{"id", "e"}, {"bbox", {0, 0, 1, 1}},
                                                              {"on_click", {{"navigate", "nowhere"}}}}}}}}}};
  CHECK_THROWS_AS(validate(graph_from_json(dangling)), Error);
  json future = {{"version", 99}, {"name", "x"}, {"platform", "web"}, {"screens", json::array()}};
  CHECK_THROWS_AS(graph_from_json(future), Error);
}

TEST_CASE("forum transitions") {
  auto pack = load_pack(testsupport::pack_dir("mini-forum"));
  const auto& g = *pack.graph;
  SimState s = initial_state(g);
  CHECK(s.screen() == "home");

  auto miss = apply(g, s, click_at(Platform::web, {0.99, 0.99}));
  CHECK(miss.report.outcome == "miss");
  CHECK_FALSE(miss.report.state_changed);

  auto inert = apply(g, s, click_el(g, "home", "home_hot"));
  CHECK(inert.report.outcome == "hit");
  CHECK_FALSE(inert.report.state_changed);

  auto r = apply(g, s, click_el(g, "home", "nav_forums"));
  CHECK(r.report.state_changed);
  CHECK(r.report.element == "nav_forums");
  CHECK(r.state.screen() == "forums");
  CHECK(r.state.tab().back == std::vector<std::string>{"home"});

  r = apply(g, r.state, click_el(g, "forums", "forums_ask"));
  CHECK(r.state.screen() == "ask");
  GroundedAction type{Platform::web, ActionKind::type, g.at("ask").elements[2].bbox.center(), "Hello there", {}, {}};
  r = apply(g, r.state, type);
  CHECK(r.report.outcome == "typed");
  CHECK(std::get<std::string>(r.state.vars.at("draft_title")) == "Hello there");
  // typing again replaces the text
  type.value = "Other";
  r = apply(g, r.state, type);
  CHECK(std::get<std::string>(r.state.vars.at("draft_title")) == "Other");
  auto cleared = apply(g, r.state, GroundedAction{Platform::web, ActionKind::clear, type.coord, {}, {}, {}});
  CHECK(std::get<std::string>(cleared.state.vars.at("draft_title")).empty());

  r = apply(g, r.state, click_el(g, "ask", "ask_submit"));
  CHECK(r.state.screen() == "question_view");
  CHECK(std::get<std::string>(r.state.vars.at("posted_title")) == "Other");

  auto back = apply(g, r.state, simple(Platform::web, ActionKind::go_back));
  CHECK(back.state.screen() == "ask");
  auto fwd = apply(g, back.state, simple(Platform::web, ActionKind::go_forward));
  CHECK(fwd.state.screen() == "question_view");

  GroundedAction go{Platform::web, ActionKind::goto_url, {}, {}, {}, "http://forum.local/f/cooking"};
  auto jumped = apply(g, s, go);
  CHECK(jumped.state.screen() == "forum_cooking");
  go.url = "http://elsewhere/";
  CHECK(apply(g, s, go).report.outcome == "miss");
}

TEST_CASE("tabs") {
  auto pack = load_pack(testsupport::pack_dir("mini-forum"));
  const auto& g = *pack.graph;
  SimState s = initial_state(g);
  auto r = apply(g, s, simple(Platform::web, ActionKind::new_tab));
  CHECK(r.state.tabs.size() == 2);
  CHECK(r.state.active == 1);
  GroundedAction focus{Platform::web, ActionKind::page_focus, {}, {}, 0u, {}};
  r = apply(g, r.state, focus);
  CHECK(r.state.active == 0);
  focus.tab_index = 5;
  CHECK_FALSE(apply(g, r.state, focus).report.state_changed);
  r = apply(g, r.state, simple(Platform::web, ActionKind::close_tab));
  CHECK(r.state.tabs.size() == 1);
  CHECK_FALSE(apply(g, r.state, simple(Platform::web, ActionKind::close_tab)).report.state_changed);
}

TEST_CASE("android scroll visibility, toggles, apps and keys") {
  auto pack = load_pack(testsupport::pack_dir("mini-android"));
  const auto& g = *pack.graph;
  SimState s = initial_state(g);
  auto r = apply(g, s, simple(Platform::mobile, ActionKind::open_app, "settings"));
  CHECK(r.state.screen() == "settings");
  CHECK(apply(g, s, simple(Platform::mobile, ActionKind::open_app, "Nope")).report.outcome == "miss");

  auto about = click_el(g, "settings", "settings_about");
  CHECK(apply(g, r.state, about).report.outcome == "miss");  // hidden until scrolled
  auto scrolled = apply(g, r.state, simple(Platform::mobile, ActionKind::scroll, "down"));
  CHECK(scrolled.state.tab().scroll == 1);
  auto again = apply(g, scrolled.state, simple(Platform::mobile, ActionKind::scroll, "down"));
  CHECK(again.state.tab().scroll == 1);  // clamped
  CHECK(apply(g, scrolled.state, about).state.screen() == "about");
  CHECK(apply(g, scrolled.state, click_el(g, "settings", "settings_network")).report.outcome == "miss");

  auto net = apply(g, r.state, click_el(g, "settings", "settings_network")).state;
  auto toggle = click_el(g, "network", "wifi_toggle_on");
  auto on = apply(g, net, toggle);
  CHECK(std::get<bool>(on.state.vars.at("wifi_on")));
  CHECK(on.report.element == "wifi_toggle_on");
  auto off = apply(g, on.state, toggle);
  CHECK(off.report.element == "wifi_toggle_off");
  CHECK_FALSE(std::get<bool>(off.state.vars.at("wifi_on")));
  CHECK(render_digest(g, on.state) != render_digest(g, off.state));

  auto home = apply(g, net, simple(Platform::mobile, ActionKind::go_home));
  CHECK(home.state.screen() == "home");

  auto clock = apply(g, s, simple(Platform::mobile, ActionKind::open_app, "Clock")).state;
  auto form = apply(g, clock, click_el(g, "clock", "clock_add_alarm")).state;
  GroundedAction t{Platform::mobile, ActionKind::type, g.at("alarm_new").elements[0].bbox.center(), "07:30", {}, {}};
  form = apply(g, form, t).state;
  auto done = apply(g, form, simple(Platform::mobile, ActionKind::enter));
  CHECK(done.state.screen() == "clock");
  CHECK(std::get<std::string>(done.state.vars.at("alarm_time")) == "07:30");

  CHECK_THROWS_AS(apply(g, s, simple(Platform::mobile, ActionKind::new_tab)), Error);
}

TEST_CASE("state keys, digests and json") {
  auto pack = load_pack(testsupport::pack_dir("mini-forum"));
  const auto& g = *pack.graph;
  SimState a = initial_state(g);
  SimState b = initial_state(g);
  CHECK(state_key(a) == state_key(b));
  CHECK(state_digest(a) == state_digest(b));
  auto moved = apply(g, a, click_el(g, "home", "nav_forums")).state;
  CHECK(state_digest(moved) != state_digest(a));
  CHECK(state_from_json(state_to_json(moved)) == moved);
  CHECK(screenshot_ref(g, a).rfind("assets/", 0) == 0);
  // history does not change what is drawn
  auto round = apply(g, moved, click_el(g, "forums", "nav_home")).state;
  CHECK(render_digest(g, round) == render_digest(g, a));
  CHECK(state_digest(round) != state_digest(a));
}

TEST_CASE("predicates") {
  auto pack = load_pack(testsupport::pack_dir("mini-forum"));
  SimState s = initial_state(*pack.graph);
  std::optional<std::string> ans = "The answer is 3";
  Predicate scr{Predicate::Op::screen, "home", {}, {}};
  Predicate contains{Predicate::Op::answer_contains, "", std::string("3"), {}};
  Predicate eq{Predicate::Op::answer_eq, "", std::string("3"), {}};
  Predicate nope{Predicate::Op::not_, "", {}, {scr}};
  Predicate any{Predicate::Op::any, "", {}, {nope, contains}};
  Predicate all{Predicate::Op::all, "", {}, {scr, eq}};
  EvalContext ctx{s, ans};
  CHECK(evaluate(scr, ctx));
  CHECK(evaluate(contains, ctx));
  CHECK_FALSE(evaluate(eq, ctx));
  CHECK_FALSE(evaluate(nope, ctx));
  CHECK(evaluate(any, ctx));
  CHECK_FALSE(evaluate(all, ctx));
  CHECK(subgoal_fraction({true, false, true}) == doctest::Approx(2.0 / 3));
}

TEST_CASE("task parameters are deterministic per seed") {
  auto g = load_env(testsupport::pack_dir("mini-forum") / "env.json");
  auto a = load_tasks(testsupport::pack_dir("mini-forum") / "tasks.json", g, 1);
  auto b = load_tasks(testsupport::pack_dir("mini-forum") / "tasks.json", g, 1);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].goal == b[i].goal);
    CHECK(a[i].params == b[i].params);
    CHECK(a[i].goal.find('{') == std::string::npos);
  }
}

TEST_CASE("environment adapter") {
  auto pack = load_pack(testsupport::pack_dir("mini-forum"));
  SimEnvironment env(pack.graph, *pack.find_task("forum-upvote-top"));
  auto o0 = env.observe();
  CHECK(o0.step_index == 0);
  CHECK(o0.url == "http://forum.local/");
  CHECK(env.subgoals(std::nullopt) == std::vector<bool>{false, false});
  auto d0 = env.state_digest();
  auto rep = env.apply(click_el(*pack.graph, "home", "nav_forums"));
  CHECK(rep.state_changed);
  CHECK(env.observe().step_index == 1);
  CHECK(env.label_at(pack.graph->at("forums").elements[2].bbox.center()) == "cooking forum");
  CHECK_FALSE(env.label_at({0.99, 0.99}).has_value());
  env.reset();
  CHECK(env.state_digest() == d0);
  CHECK(env.observe().step_index == 0);
}

TEST_CASE("oracle on bundled packs") {
  for (const char* name : {"mini-gitlab", "mini-forum", "mini-android"}) {
    auto pack = load_pack(testsupport::pack_dir(name));
    for (const auto& t : pack.tasks) {
      auto r = oracle_solve(*pack.graph, t, 10);
      // replay the plan and check it reaches what the oracle claims
      SimState s = initial_state(*pack.graph, t.start_screen);
      std::optional<std::string> answer;
      double best = subgoal_fraction(evaluate_subgoals(s, answer, t));
      for (const auto& a : r.plan) {
        if (a.kind == ActionKind::stop) {
          if (stop_status(*a.value) == StopStatus::answer) answer = a.value;
        } else {
          s = apply(*pack.graph, s, a).state;
        }
        best = std::max(best, subgoal_fraction(evaluate_subgoals(s, answer, t)));
      }
      CHECK_MESSAGE(best == doctest::Approx(r.best_progress), t.id);
      if (r.solvable) CHECK(r.best_progress == 1.0);
    }
  }
  auto forum = load_pack(testsupport::pack_dir("mini-forum"));
  auto r = oracle_solve(*forum.graph, *forum.find_task("forum-post-question"), 10);
  CHECK(r.solvable);
  CHECK(r.plan.size() == 4);
  auto del = oracle_solve(*forum.graph, *forum.find_task("forum-delete-cooking"), 10);
  CHECK_FALSE(del.solvable);
  CHECK(del.best_progress == 0.5);
}

TEST_CASE("oracle plans are shortest on generated tasks") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    auto gt = testsupport::random_task(seed);
    auto r = oracle_solve(*gt.graph, gt.task, 6);
    if (gt.planted_unreachable) CHECK_FALSE(r.solvable);
    if (!r.solvable) continue;
    // no shorter prefix of the plan already satisfies every subgoal
    SimState s = initial_state(*gt.graph);
    std::size_t non_stop = 0;
    for (const auto& a : r.plan) {
      if (a.kind == ActionKind::stop) continue;
      auto v = evaluate_subgoals(s, std::nullopt, gt.task);
      bool needs_answer = false;
      for (const auto& sg : gt.task.subgoals)
        if (sg.predicate.op == Predicate::Op::answer_eq) needs_answer = true;
      if (!needs_answer) CHECK_MESSAGE(subgoal_fraction(v) < 1.0, "seed " << seed << " step " << non_stop);
      s = apply(*gt.graph, s, a).state;
      ++non_stop;
    }
  }
}

TEST_CASE("search budget") {
  auto pack = load_pack(testsupport::pack_dir("mini-gitlab"));
  CHECK_THROWS_AS(oracle_solve(*pack.graph, pack.tasks.front(), 10, 3), Error);
}

}

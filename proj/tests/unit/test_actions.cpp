#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "guiharness/actions.hpp"
#include "support.hpp"

using namespace guiharness;

namespace {

bool same_up_to_rounding(const GroundedAction& a, const GroundedAction& b) {
  if (a.platform != b.platform || a.kind != b.kind || a.value != b.value || a.tab_index != b.tab_index ||
      a.url != b.url || a.coord.has_value() != b.coord.has_value())
    return false;
  if (!a.coord) return true;
  return std::abs(a.coord->x - b.coord->x) < 5e-4 && std::abs(a.coord->y - b.coord->y) < 5e-4;
}

GroundedAction click(double x, double y) {
  GroundedAction a;
  a.kind = ActionKind::click;
  a.coord = Coordinate{x, y};
  return a;
}

}  // namespace

TEST_SUITE("actions") {

TEST_CASE("legal kind tables") {
  auto mob = legal_kinds(Platform::mobile);
  auto web = legal_kinds(Platform::web);
  CHECK(mob.size() == 10);
  CHECK(web.size() == 13);
  std::set<ActionKind> m(mob.begin(), mob.end()), w(web.begin(), web.end());
  std::set<ActionKind> both;
  std::set_intersection(m.begin(), m.end(), w.begin(), w.end(), std::inserter(both, both.end()));
  CHECK(both == std::set<ActionKind>{ActionKind::click, ActionKind::type, ActionKind::scroll, ActionKind::go_back,
                                     ActionKind::stop});
  // every kind is legal somewhere
  CHECK(all_action_kinds().size() == kActionKindCount);
  for (ActionKind k : all_action_kinds()) CHECK((is_legal(k, Platform::mobile) || is_legal(k, Platform::web)));
  for (ActionKind k : {ActionKind::clear, ActionKind::hover, ActionKind::press, ActionKind::new_tab,
                       ActionKind::page_focus, ActionKind::close_tab, ActionKind::goto_url, ActionKind::go_forward})
    CHECK(w.count(k) == 1);
}

TEST_CASE("verbs and aliases") {
  for (ActionKind k : all_action_kinds()) CHECK(kind_from_verb(verb(k)) == k);
  CHECK(verb(ActionKind::goto_url) == "goto");
  CHECK(kind_from_verb("tab_focus") == ActionKind::page_focus);
  CHECK(kind_from_verb("CLICK") == ActionKind::click);
  CHECK_FALSE(kind_from_verb("select").has_value());
}

TEST_CASE("canonical serialization") {
  CHECK(serialize_grounded(click(0.12, 0.07)) == "click [[0.12] [0.07]]");
  GroundedAction stop{Platform::web, ActionKind::stop, {}, "completed", {}, {}};
  CHECK(serialize_grounded(stop) == "stop [completed]");
  GroundedAction type{Platform::web, ActionKind::type, Coordinate{0.5, 0.33}, "hello", {}, {}};
  CHECK(serialize_grounded(type) == "type [[0.5] [0.33]] [hello]");
  GroundedAction ws{Platform::web, ActionKind::scroll, {}, "down", {}, {}};
  CHECK(serialize_grounded(ws) == "scroll [down]");
  GroundedAction ms{Platform::mobile, ActionKind::scroll, Coordinate{0.5, 0.5}, "up", {}, {}};
  CHECK(serialize_grounded(ms) == "scroll [[0.5] [0.5]] [up]");
  GroundedAction app{Platform::mobile, ActionKind::open_app, {}, "Chrome", {}, {}};
  CHECK(serialize_grounded(app) == "open_app [Chrome]");
  GroundedAction wait{Platform::mobile, ActionKind::wait, {}, "5", {}, {}};
  CHECK(serialize_grounded(wait) == "wait [seconds=\"5s\"]");
  GroundedAction pf{Platform::web, ActionKind::page_focus, {}, {}, 2u, {}};
  CHECK(serialize_grounded(pf) == "page_focus [2]");
  GroundedAction go{Platform::web, ActionKind::goto_url, {}, {}, {}, "http://host/"};
  CHECK(serialize_grounded(go) == "goto [http://host/]");
  CHECK(serialize_grounded(click(0, 1)) == "click [[0.0] [1.0]]");
  CHECK(serialize_grounded(click(0.12345, 0.9999)) == "click [[0.123] [1.0]]");
}

TEST_CASE("serialization rejects invalid actions") {
  GroundedAction a;
  a.kind = ActionKind::click;
  CHECK_THROWS_AS(serialize_grounded(a), Error);
  GroundedAction t{Platform::web, ActionKind::type, Coordinate{0.1, 0.1}, {}, {}, {}};
  CHECK_THROWS_AS(serialize_grounded(t), Error);
  GroundedAction ws{Platform::web, ActionKind::scroll, {}, "left", {}, {}};
  CHECK_THROWS_AS(serialize_grounded(ws), Error);
  GroundedAction mh{Platform::mobile, ActionKind::hover, Coordinate{0.1, 0.1}, {}, {}, {}};
  try {
    validate(mh);
    FAIL("hover accepted on mobile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IllegalKindForPlatform);
  }
}

TEST_CASE("display variant and aliases parse") {
  auto a = parse_grounded("Click [coordinate_x 0.12]  [coordinate_y 0.07]", Platform::web);
  CHECK(a.kind == ActionKind::click);
  REQUIRE(a.coord);
  CHECK(a.coord->x == doctest::Approx(0.12));
  CHECK(a.coord->y == doctest::Approx(0.07));
  CHECK(a == click(0.12, 0.07));

  auto tf = parse_grounded("tab_focus [2]", Platform::web);
  CHECK(tf.kind == ActionKind::page_focus);
  CHECK(tf.tab_index == 2u);
  CHECK(serialize_grounded(tf) == "page_focus [2]");

  auto w = parse_grounded("wait [seconds=\"5s\"]", Platform::mobile);
  CHECK(w.value == "5");
  CHECK(parse_grounded("go_back", Platform::mobile).kind == ActionKind::go_back);
}

TEST_CASE("parse errors carry offsets") {
  try {
    parse_grounded("click [[1.2] [0.5]]", Platform::web);
    FAIL("out of range coordinate accepted");
  } catch (const ParseError& e) {
    CHECK(e.offset() > 0);
    CHECK_FALSE(e.expected().empty());
  }
  try {
    parse_grounded("jump [[0.1] [0.1]]", Platform::web);
    FAIL("unknown verb accepted");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
  CHECK_THROWS_AS(parse_grounded("", Platform::web), ParseError);
  CHECK_THROWS_AS(parse_grounded("click [[0.1] [0.1]] extra", Platform::web), ParseError);
  CHECK_THROWS_AS(parse_grounded("scroll [left]", Platform::web), ParseError);
  try {
    parse_grounded("open_app [Chrome]", Platform::web);
    FAIL("mobile-only kind accepted on web");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IllegalKindForPlatform);
  }
}

TEST_CASE("random round trip") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    Platform p = i % 2 ? Platform::web : Platform::mobile;
    GroundedAction a = testsupport::random_action(rng, p);
    std::string s = serialize_grounded(a);
    CHECK(s.find('\n') == std::string::npos);
    GroundedAction b = parse_grounded(s, p);
    CHECK_MESSAGE(same_up_to_rounding(a, b), s);
    CHECK(serialize_grounded(b) == s);
    CHECK(grounded_from_json(to_json(a)) == a);
  }
}

TEST_CASE("ground") {
  HighLevelAction issues{"Issues tab", ActionKind::click, {}};
  CHECK(ground(issues, Coordinate{0.12, 0.07}, Platform::web) == click(0.12, 0.07));
  try {
    ground(issues, std::nullopt, Platform::web);
    FAIL("missing coordinate accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingCoordinate);
  }
  HighLevelAction wait{"", ActionKind::wait, "seconds=\"5s\""};
  auto w = ground(wait, std::nullopt, Platform::mobile);
  CHECK(w.kind == ActionKind::wait);
  CHECK(parse_wait_seconds(*w.value) == 5.0);
  HighLevelAction bad_wait{"", ActionKind::wait, "soon"};
  try {
    ground(bad_wait, std::nullopt, Platform::mobile);
    FAIL("bad wait accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedValue);
  }
  HighLevelAction pf{"", ActionKind::page_focus, "3"};
  CHECK(ground(pf, std::nullopt, Platform::web).tab_index == 3u);
  HighLevelAction pf_bad{"", ActionKind::page_focus, "third"};
  CHECK_THROWS_AS(ground(pf_bad, std::nullopt, Platform::web), Error);
  HighLevelAction back{"", ActionKind::go_back, {}};
  CHECK_THROWS_AS(ground(back, Coordinate{0.5, 0.5}, Platform::web), Error);
  CHECK(ground_lenient(back, Coordinate{0.5, 0.5}, Platform::web).coord == std::nullopt);
}

TEST_CASE("lift inverts ground") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    Platform p = i % 2 ? Platform::web : Platform::mobile;
    GroundedAction g = testsupport::random_action(rng, p);
    auto h = lift(g, "some element");
    CHECK(ground(h, g.coord, p) == g);
  }
}

TEST_CASE("high level validation") {
  CHECK_NOTHROW(validate(HighLevelAction{"", ActionKind::go_back, {}}, Platform::web));
  CHECK_THROWS_AS(validate(HighLevelAction{"  ", ActionKind::click, {}}, Platform::web), Error);
  CHECK_THROWS_AS(validate(HighLevelAction{"box", ActionKind::type, {}}, Platform::web), Error);
  CHECK_THROWS_AS(validate(HighLevelAction{"x", ActionKind::go_back, "now"}, Platform::web), Error);
  CHECK_THROWS_AS(validate(HighLevelAction{std::string(201, 'a'), ActionKind::click, {}}, Platform::web), Error);
  CHECK_NOTHROW(validate(HighLevelAction{std::string(200, 'a'), ActionKind::click, {}}, Platform::web));
  CHECK_NOTHROW(validate(HighLevelAction{"", ActionKind::scroll, "down"}, Platform::mobile));
}

TEST_CASE("stop status folding") {
  CHECK(stop_status("completed") == StopStatus::completed);
  CHECK(stop_status("success") == StopStatus::completed);
  CHECK(stop_status("successful") == StopStatus::completed);
  CHECK(stop_status("infeasible") == StopStatus::infeasible);
  CHECK(stop_status("3") == StopStatus::answer);
}

TEST_CASE("serialization is deterministic") {
  std::mt19937_64 r1(99), r2(99);
  for (int i = 0; i < 200; ++i)
    CHECK(serialize_grounded(testsupport::random_action(r1, Platform::web)) ==
          serialize_grounded(testsupport::random_action(r2, Platform::web)));
}

TEST_CASE("summaries") {
  CHECK(summarize(HighLevelAction{"the search results titled with wikipedia", ActionKind::click, {}}) ==
        "click 'the search results titled with wikipedia'");
  CHECK(summarize(HighLevelAction{"the search bar at the top of the page", ActionKind::type, "GUI Agent"}) ==
        "type 'GUI Agent' into 'the search bar at the top of the page'");
}

}

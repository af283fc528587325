#include "guiharness/sim_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guiharness/digest.hpp"
#include "guiharness/error.hpp"
#include "text_util.hpp"

namespace guiharness::sim {

using nlohmann::json;

std::string to_string(const Value& v) {
  if (auto b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  if (auto i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  return std::get<std::string>(v);
}

namespace {

[[noreturn]] void spec_error(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::SpecError, where + ": " + what);
}

VarType type_of(const Value& v) {
  if (std::holds_alternative<bool>(v)) return VarType::boolean;
  if (std::holds_alternative<std::int64_t>(v)) return VarType::integer;
  return VarType::string;
}

std::string_view type_name(VarType t) {
  switch (t) {
    case VarType::boolean: return "bool";
    case VarType::integer: return "int";
    case VarType::string: return "string";
  }
  return "?";
}

json value_to_json(const Value& v) {
  if (auto b = std::get_if<bool>(&v)) return *b;
  if (auto i = std::get_if<std::int64_t>(&v)) return *i;
  return std::get<std::string>(v);
}

Value value_from_json(const json& j, const std::string& where) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_string()) return j.get<std::string>();
  spec_error(where, "expected bool, integer or string");
}

std::string normalize_url(std::string_view u) {
  std::string s = text::trim(u);
  while (s.size() > 1 && s.back() == '/') s.pop_back();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

const Screen* ScreenGraph::find(const std::string& id) const {
  for (const auto& s : screens)
    if (s.id == id) return &s;
  return nullptr;
}

const Screen& ScreenGraph::at(const std::string& id) const {
  if (const Screen* s = find(id)) return *s;
  throw Error(ErrorCode::EnvironmentFault, "unknown screen '" + id + "'");
}

const Screen* ScreenGraph::find_by_url(const std::string& url) const {
  const std::string want = normalize_url(url);
  for (const auto& s : screens)
    if (!s.url.empty() && normalize_url(s.url) == want) return &s;
  return nullptr;
}

namespace {

void check_var(const ScreenGraph& g, const std::string& name, const std::string& where) {
  if (!g.state_schema.count(name)) spec_error(where, "unknown state variable '" + name + "'");
}

void check_typed(const ScreenGraph& g, const std::string& name, const Value& v, const std::string& where) {
  check_var(g, name, where);
  VarType want = g.state_schema.at(name).type;
  if (type_of(v) != want)
    spec_error(where, fmt::format("variable '{}' is {} but value is {}", name, type_name(want),
                                  type_name(type_of(v))));
}

void check_screen(const ScreenGraph& g, const std::string& id, const std::string& where) {
  if (!g.find(id)) spec_error(where, "unknown screen '" + id + "'");
}

void check_effect(const ScreenGraph& g, const Effect& e, const std::string& where) {
  if (e.navigate) check_screen(g, *e.navigate, where + "/navigate");
  for (const auto& [k, v] : e.set) check_typed(g, k, v, where + "/set/" + k);
  for (const auto& [dst, src] : e.copy) {
    check_var(g, dst, where + "/copy/" + dst);
    check_var(g, src, where + "/copy/" + dst);
    if (g.state_schema.at(dst).type != g.state_schema.at(src).type)
      spec_error(where + "/copy/" + dst, "copy between variables of different types");
  }
}

}  // namespace

void validate(const ScreenGraph& g) {
  if (g.screens.empty()) spec_error("/screens", "no screens");
  for (const auto& [name, decl] : g.state_schema)
    if (type_of(decl.initial) != decl.type) spec_error("/state/" + name, "initial value has the wrong type");
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < g.screens.size(); ++i) {
    const Screen& s = g.screens[i];
    const std::string where = fmt::format("/screens/{}", i);
    if (s.id.empty()) spec_error(where + "/id", "empty screen id");
    if (!ids.insert(s.id).second) spec_error(where + "/id", "duplicate screen id '" + s.id + "'");
  }
  check_screen(g, g.initial_screen, "/initial_screen");
  check_screen(g, g.home_screen, "/home_screen");
  check_screen(g, g.new_tab_screen, "/new_tab_screen");
  for (const auto& [app, target] : g.apps) check_screen(g, target, "/apps/" + app);
  if (g.platform == Platform::web && !g.apps.empty()) spec_error("/apps", "apps are a mobile feature");

  for (std::size_t i = 0; i < g.screens.size(); ++i) {
    const Screen& s = g.screens[i];
    const std::string where = fmt::format("/screens/{}", i);
    if (s.max_scroll < 0) spec_error(where + "/max_scroll", "negative");
    for (const auto& v : s.render_vars) check_var(g, v, where + "/render_vars");
    for (const auto& [key, eff] : s.on_key) check_effect(g, eff, where + "/on_key/" + key);
    std::unordered_set<std::string> eids;
    for (std::size_t k = 0; k < s.elements.size(); ++k) {
      const Element& e = s.elements[k];
      const std::string ew = fmt::format("{}/elements/{}", where, k);
      if (e.id.empty()) spec_error(ew + "/id", "empty element id");
      if (!eids.insert(e.id).second) spec_error(ew + "/id", "duplicate element id '" + e.id + "'");
      const BBox& b = e.bbox;
      if (!(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= 1 && b.y1 <= 1 && b.x0 < b.x1 && b.y0 < b.y1))
        spec_error(ew + "/bbox", "expected 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
      if (e.on_click) check_effect(g, *e.on_click, ew + "/on_click");
      if (e.on_long_press) check_effect(g, *e.on_long_press, ew + "/on_long_press");
      if (e.on_hover) check_effect(g, *e.on_hover, ew + "/on_hover");
      if (e.on_type) check_effect(g, *e.on_type, ew + "/on_type");
      if (e.on_type && !e.text_field) spec_error(ew + "/on_type", "only text fields accept typing");
      if (e.text_field) {
        check_var(g, e.bind, ew + "/bind");
        if (g.state_schema.at(e.bind).type != VarType::string)
          spec_error(ew + "/bind", "text fields must bind a string variable");
      }
      for (const auto& [k2, v] : e.visible_if) check_typed(g, k2, v, ew + "/visible_if/" + k2);
      if (e.min_scroll > e.max_scroll) spec_error(ew + "/min_scroll", "min_scroll exceeds max_scroll");
    }
  }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

SimState initial_state(const ScreenGraph& g, const std::optional<std::string>& start_screen) {
  SimState s;
  for (const auto& [name, decl] : g.state_schema) s.vars[name] = decl.initial;
  s.tabs.push_back(Tab{start_screen.value_or(g.initial_screen), {}, {}, 0});
  s.active = 0;
  return s;
}

std::string state_key(const SimState& s) {
  std::string k;
  for (const auto& [name, v] : s.vars) {
    k += name;
    k += '=';
    k += static_cast<char>('0' + v.index());
    k += to_string(v);
    k += '\x1f';
  }
  for (const auto& t : s.tabs) {
    k += '\x1e';
    k += t.screen;
    k += '@';
    k += std::to_string(t.scroll);
    for (const auto& b : t.back) (k += '<') += b;
    for (const auto& f : t.forward) (k += '>') += f;
  }
  k += '#';
  k += std::to_string(s.active);
  return k;
}

std::string state_digest(const SimState& s) { return fnv1a64_hex(state_key(s)); }

std::string render_digest(const ScreenGraph& g, const SimState& s) {
  const Screen& scr = g.at(s.screen());
  std::string k = scr.id + '@' + std::to_string(s.tab().scroll);
  for (const auto& v : scr.render_vars) {
    k += '\x1f';
    k += v;
    k += '=';
    auto it = s.vars.find(v);
    if (it != s.vars.end()) k += to_string(it->second);
  }
  return fnv1a64_hex(k).substr(0, 8);
}

std::string screenshot_ref(const ScreenGraph& g, const SimState& s) {
  return "assets/" + s.screen() + "@" + render_digest(g, s) + ".png";
}

json state_to_json(const SimState& s) {
  json vars = json::object();
  for (const auto& [k, v] : s.vars) vars[k] = value_to_json(v);
  json tabs = json::array();
  for (const auto& t : s.tabs)
    tabs.push_back({{"screen", t.screen}, {"back", t.back}, {"forward", t.forward}, {"scroll", t.scroll}});
  return {{"vars", std::move(vars)}, {"tabs", std::move(tabs)}, {"active", s.active}};
}

SimState state_from_json(const json& j) {
  SimState s;
  for (const auto& [k, v] : j.at("vars").items()) s.vars[k] = value_from_json(v, "/vars/" + k);
  for (const auto& t : j.at("tabs"))
    s.tabs.push_back(Tab{t.at("screen").get<std::string>(), t.value("back", std::vector<std::string>{}),
                         t.value("forward", std::vector<std::string>{}), t.value("scroll", 0)});
  s.active = j.value("active", std::size_t{0});
  if (s.tabs.empty() || s.active >= s.tabs.size())
    throw Error(ErrorCode::SpecError, "state has no active tab");
  return s;
}

bool is_visible(const Element& e, const SimState& s) {
  const int scroll = s.tab().scroll;
  if (scroll < e.min_scroll || scroll > e.max_scroll) return false;
  for (const auto& [k, v] : e.visible_if) {
    auto it = s.vars.find(k);
    if (it == s.vars.end() || it->second != v) return false;
  }
  return true;
}

const Element* hit_test(const Screen& screen, const SimState& s, const Coordinate& c) {
  for (auto it = screen.elements.rbegin(); it != screen.elements.rend(); ++it)
    if (it->bbox.contains(c) && is_visible(*it, s)) return &*it;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Transition
// ---------------------------------------------------------------------------

namespace {

void navigate(SimState& s, const std::string& target) {
  Tab& t = s.tabs[s.active];
  if (t.screen == target) return;
  t.back.push_back(t.screen);
  t.forward.clear();
  t.screen = target;
  t.scroll = 0;
}

void apply_effect(SimState& s, const Effect& e) {
  for (const auto& [k, v] : e.set) s.vars[k] = v;
  for (const auto& [dst, src] : e.copy) s.vars[dst] = s.vars.at(src);
  if (e.navigate) navigate(s, *e.navigate);
}

}  // namespace

StepResult apply(const ScreenGraph& g, const SimState& s, const GroundedAction& a) {
  if (!is_legal(a.kind, g.platform))
    throw Error(ErrorCode::IllegalKindForPlatform,
                fmt::format("'{}' is not available on {}", verb(a.kind), to_string(g.platform)));
  StepResult r{s, {}};
  SimState& st = r.state;
  ApplyReport& rep = r.report;
  const Screen& scr = g.at(s.screen());
  rep.outcome = "noop";

  auto targeted = [&]() -> const Element* {
    if (!a.coord) throw Error(ErrorCode::MissingCoordinate, "action needs a coordinate");
    const Element* el = hit_test(scr, s, *a.coord);
    if (!el) rep.outcome = "miss";
    else rep.element = el->id;
    return el;
  };
  auto fire = [&](const std::optional<Effect>& eff) {
    if (eff) {
      apply_effect(st, *eff);
      rep.outcome = "hit";
    }
  };

  switch (a.kind) {
    case ActionKind::click:
      if (const Element* el = targeted()) {
        rep.outcome = "hit";
        fire(el->on_click);
      }
      break;
    case ActionKind::long_press:
      if (const Element* el = targeted()) fire(el->on_long_press);
      break;
    case ActionKind::hover:
      if (const Element* el = targeted()) fire(el->on_hover);
      break;
    case ActionKind::type:
      if (const Element* el = targeted()) {
        if (!el->text_field) break;
        st.vars[el->bind] = a.value.value_or("");
        rep.outcome = "typed";
        if (el->on_type) apply_effect(st, *el->on_type);
      }
      break;
    case ActionKind::clear:
      if (const Element* el = targeted()) {
        if (!el->text_field) break;
        st.vars[el->bind] = std::string{};
        rep.outcome = "cleared";
      }
      break;
    case ActionKind::scroll: {
      const std::string dir = text::to_lower(text::trim(a.value.value_or("")));
      Tab& t = st.tabs[st.active];
      if (dir == "down" && t.scroll < scr.max_scroll) ++t.scroll;
      else if (dir == "up" && t.scroll > 0) --t.scroll;
      rep.outcome = "scrolled";
      break;
    }
    case ActionKind::go_back: {
      Tab& t = st.tabs[st.active];
      if (!t.back.empty()) {
        t.forward.push_back(t.screen);
        t.screen = t.back.back();
        t.back.pop_back();
        t.scroll = 0;
        rep.outcome = "navigated";
      }
      break;
    }
    case ActionKind::go_forward: {
      Tab& t = st.tabs[st.active];
      if (!t.forward.empty()) {
        t.back.push_back(t.screen);
        t.screen = t.forward.back();
        t.forward.pop_back();
        t.scroll = 0;
        rep.outcome = "navigated";
      }
      break;
    }
    case ActionKind::go_home:
      navigate(st, g.home_screen);
      rep.outcome = "navigated";
      break;
    case ActionKind::open_app: {
      const std::string name = text::trim(a.value.value_or(""));
      for (const auto& [app, target] : g.apps) {
        if (text::iequals(app, name)) {
          navigate(st, target);
          rep.outcome = "navigated";
          break;
        }
      }
      if (rep.outcome != "navigated") rep.outcome = "miss";
      break;
    }
    case ActionKind::enter:
    case ActionKind::press: {
      const std::string key =
          a.kind == ActionKind::enter ? std::string("enter") : text::to_lower(text::trim(a.value.value_or("")));
      if (auto it = scr.on_key.find(key); it != scr.on_key.end()) {
        apply_effect(st, it->second);
        rep.outcome = "hit";
      }
      break;
    }
    case ActionKind::goto_url:
      if (const Screen* target = g.find_by_url(a.url.value_or(a.value.value_or("")))) {
        navigate(st, target->id);
        rep.outcome = "navigated";
      } else {
        rep.outcome = "miss";
      }
      break;
    case ActionKind::new_tab:
      st.tabs.push_back(Tab{g.new_tab_screen, {}, {}, 0});
      st.active = st.tabs.size() - 1;
      rep.outcome = "navigated";
      break;
    case ActionKind::page_focus:
      if (a.tab_index && *a.tab_index < st.tabs.size()) {
        st.active = *a.tab_index;
        rep.outcome = "navigated";
      }
      break;
    case ActionKind::close_tab:
      if (st.tabs.size() > 1) {
        st.tabs.erase(st.tabs.begin() + static_cast<std::ptrdiff_t>(st.active));
        st.active = std::min(st.active, st.tabs.size() - 1);
        rep.outcome = "navigated";
      }
      break;
    case ActionKind::wait:
    case ActionKind::stop:
      break;
  }
  rep.state_changed = !(st == s);
  return r;
}

// ---------------------------------------------------------------------------
// Predicates and tasks
// ---------------------------------------------------------------------------

bool evaluate(const Predicate& p, const EvalContext& ctx) {
  using Op = Predicate::Op;
  switch (p.op) {
    case Op::screen: return ctx.state.screen() == p.name;
    case Op::var_eq:
    case Op::var_ne: {
      auto it = ctx.state.vars.find(p.name);
      bool eq = it != ctx.state.vars.end() && it->second == p.value;
      return p.op == Op::var_eq ? eq : !eq;
    }
    case Op::var_contains: {
      auto it = ctx.state.vars.find(p.name);
      if (it == ctx.state.vars.end()) return false;
      return text::fold(to_string(it->second)).find(text::fold(to_string(p.value))) != std::string::npos;
    }
    case Op::answer_eq:
      return ctx.answer && text::fold(*ctx.answer) == text::fold(to_string(p.value));
    case Op::answer_contains:
      return ctx.answer && text::fold(*ctx.answer).find(text::fold(to_string(p.value))) != std::string::npos;
    case Op::all:
      return std::all_of(p.children.begin(), p.children.end(), [&](const Predicate& c) { return evaluate(c, ctx); });
    case Op::any:
      return std::any_of(p.children.begin(), p.children.end(), [&](const Predicate& c) { return evaluate(c, ctx); });
    case Op::not_:
      return !p.children.empty() && !evaluate(p.children.front(), ctx);
  }
  return false;
}

std::vector<bool> evaluate_subgoals(const SimState& s, const std::optional<std::string>& answer,
                                    const TaskSpec& task) {
  EvalContext ctx{s, answer};
  std::vector<bool> out;
  out.reserve(task.subgoals.size());
  for (const auto& sg : task.subgoals) out.push_back(evaluate(sg.predicate, ctx));
  return out;
}

double subgoal_fraction(const std::vector<bool>& v) {
  if (v.empty()) return 0.0;
  return static_cast<double>(std::count(v.begin(), v.end(), true)) / static_cast<double>(v.size());
}

namespace {

void validate_predicate(const Predicate& p, const ScreenGraph& g, const std::string& where) {
  using Op = Predicate::Op;
  switch (p.op) {
    case Op::screen: check_screen(g, p.name, where + "/screen"); break;
    case Op::var_eq:
    case Op::var_ne: check_typed(g, p.name, p.value, where + "/var"); break;
    case Op::var_contains: check_var(g, p.name, where + "/var"); break;
    case Op::answer_eq:
    case Op::answer_contains: break;
    case Op::all:
    case Op::any:
      for (std::size_t i = 0; i < p.children.size(); ++i)
        validate_predicate(p.children[i], g, fmt::format("{}/{}/{}", where, p.op == Op::all ? "all" : "any", i));
      break;
    case Op::not_:
      if (p.children.size() != 1) spec_error(where + "/not", "expected one operand");
      validate_predicate(p.children[0], g, where + "/not");
      break;
  }
}

}  // namespace

void validate(const TaskSpec& t, const ScreenGraph& g) {
  const std::string where = "/tasks/" + t.id;
  if (t.subgoals.empty()) spec_error(where + "/subgoals", "a task needs at least one subgoal");
  if (t.start_screen) check_screen(g, *t.start_screen, where + "/start_screen");
  for (std::size_t i = 0; i < t.subgoals.size(); ++i)
    validate_predicate(t.subgoals[i].predicate, g, fmt::format("{}/subgoals/{}/check", where, i));
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace {

const json& req(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) spec_error(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) spec_error(where + "/" + key, "missing");
  return *it;
}

std::string req_str(const json& j, const char* key, const std::string& where) {
  const json& v = req(j, key, where);
  if (!v.is_string()) spec_error(where + "/" + key, "expected a string");
  return v.get<std::string>();
}

std::string opt_str(const json& j, const char* key, const std::string& where, std::string dflt = {}) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_string()) spec_error(where + "/" + key, "expected a string");
  return it->get<std::string>();
}

int opt_int(const json& j, const char* key, const std::string& where, int dflt) {
  auto it = j.find(key);
  if (it == j.end()) return dflt;
  if (!it->is_number_integer()) spec_error(where + "/" + key, "expected an integer");
  return it->get<int>();
}

std::map<std::string, Value> value_map(const json& j, const std::string& where) {
  std::map<std::string, Value> out;
  if (!j.is_object()) spec_error(where, "expected an object");
  for (const auto& [k, v] : j.items()) out[k] = value_from_json(v, where + "/" + k);
  return out;
}

Effect effect_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) spec_error(where, "expected an object");
  Effect e;
  if (j.contains("navigate")) e.navigate = req_str(j, "navigate", where);
  if (j.contains("set")) e.set = value_map(j["set"], where + "/set");
  if (j.contains("copy")) {
    if (!j["copy"].is_object()) spec_error(where + "/copy", "expected an object");
    for (const auto& [k, v] : j["copy"].items()) {
      if (!v.is_string()) spec_error(where + "/copy/" + k, "expected a variable name");
      e.copy[k] = v.get<std::string>();
    }
  }
  for (const auto& [k, v] : j.items())
    if (k != "navigate" && k != "set" && k != "copy") spec_error(where + "/" + k, "unknown effect field");
  return e;
}

json effect_to_json(const Effect& e) {
  json j = json::object();
  if (e.navigate) j["navigate"] = *e.navigate;
  if (!e.set.empty()) {
    json s = json::object();
    for (const auto& [k, v] : e.set) s[k] = value_to_json(v);
    j["set"] = std::move(s);
  }
  if (!e.copy.empty()) j["copy"] = e.copy;
  return j;
}

VarType var_type_from(const std::string& s, const std::string& where) {
  if (s == "bool" || s == "boolean") return VarType::boolean;
  if (s == "int" || s == "integer") return VarType::integer;
  if (s == "string" || s == "str") return VarType::string;
  spec_error(where, "unknown type '" + s + "'");
}

Element element_from_json(const json& j, const std::string& where) {
  Element e;
  e.id = req_str(j, "id", where);
  e.label = opt_str(j, "label", where, e.id);
  const json& b = req(j, "bbox", where);
  if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const json& x) { return x.is_number(); }))
    spec_error(where + "/bbox", "expected [x0, y0, x1, y1]");
  e.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (j.contains("on_click")) e.on_click = effect_from_json(j["on_click"], where + "/on_click");
  if (j.contains("on_long_press")) e.on_long_press = effect_from_json(j["on_long_press"], where + "/on_long_press");
  if (j.contains("on_hover")) e.on_hover = effect_from_json(j["on_hover"], where + "/on_hover");
  if (j.contains("on_type")) e.on_type = effect_from_json(j["on_type"], where + "/on_type");
  if (j.contains("bind")) {
    e.text_field = true;
    e.bind = req_str(j, "bind", where);
  }
  if (j.contains("visible_if")) e.visible_if = value_map(j["visible_if"], where + "/visible_if");
  e.min_scroll = opt_int(j, "min_scroll", where, 0);
  e.max_scroll = opt_int(j, "max_scroll", where, std::numeric_limits<int>::max());
  return e;
}

json element_to_json(const Element& e) {
  json j = {{"id", e.id}, {"label", e.label}, {"bbox", {e.bbox.x0, e.bbox.y0, e.bbox.x1, e.bbox.y1}}};
  if (e.on_click) j["on_click"] = effect_to_json(*e.on_click);
  if (e.on_long_press) j["on_long_press"] = effect_to_json(*e.on_long_press);
  if (e.on_hover) j["on_hover"] = effect_to_json(*e.on_hover);
  if (e.on_type) j["on_type"] = effect_to_json(*e.on_type);
  if (e.text_field) j["bind"] = e.bind;
  if (!e.visible_if.empty()) {
    json v = json::object();
    for (const auto& [k, x] : e.visible_if) v[k] = value_to_json(x);
    j["visible_if"] = std::move(v);
  }
  if (e.min_scroll != 0) j["min_scroll"] = e.min_scroll;
  if (e.max_scroll != std::numeric_limits<int>::max()) j["max_scroll"] = e.max_scroll;
  return j;
}

void check_version(const json& j, const std::string& what) {
  int v = opt_int(j, "version", "", kSpecVersion);
  if (v > kSpecVersion)
    throw Error(ErrorCode::SchemaVersionMismatch,
                fmt::format("{} has version {}; this build reads up to {}", what, v, kSpecVersion));
}

json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + file.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::SpecError, file.string() + ": not valid JSON");
  return j;
}

}  // namespace

ScreenGraph graph_from_json(const json& j) {
  check_version(j, "environment spec");
  ScreenGraph g;
  g.name = opt_str(j, "name", "", "env");
  try {
    g.platform = platform_from_string(req_str(j, "platform", ""));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SpecError) throw;
    spec_error("/platform", "expected \"web\" or \"mobile\"");
  }
  if (j.contains("state")) {
    const json& st = j["state"];
    if (!st.is_object()) spec_error("/state", "expected an object");
    for (const auto& [name, decl] : st.items()) {
      const std::string where = "/state/" + name;
      VarDecl d;
      d.type = var_type_from(req_str(decl, "type", where), where + "/type");
      if (decl.contains("initial")) {
        d.initial = value_from_json(decl["initial"], where + "/initial");
      } else {
        switch (d.type) {
          case VarType::boolean: d.initial = false; break;
          case VarType::integer: d.initial = std::int64_t{0}; break;
          case VarType::string: d.initial = std::string{}; break;
        }
      }
      g.state_schema[name] = d;
    }
  }
  if (j.contains("apps")) {
    if (!j["apps"].is_object()) spec_error("/apps", "expected an object");
    for (const auto& [name, target] : j["apps"].items()) {
      if (!target.is_string()) spec_error("/apps/" + name, "expected a screen id");
      g.apps[name] = target.get<std::string>();
    }
  }
  const json& screens = req(j, "screens", "");
  if (!screens.is_array()) spec_error("/screens", "expected an array");
  for (std::size_t i = 0; i < screens.size(); ++i) {
    const json& sj = screens[i];
    const std::string where = fmt::format("/screens/{}", i);
    Screen s;
    s.id = req_str(sj, "id", where);
    s.url = opt_str(sj, "url", where);
    s.max_scroll = opt_int(sj, "max_scroll", where, 0);
    if (sj.contains("render_vars")) {
      if (!sj["render_vars"].is_array()) spec_error(where + "/render_vars", "expected an array");
      for (const auto& v : sj["render_vars"]) s.render_vars.push_back(v.get<std::string>());
    }
    if (sj.contains("elements")) {
      const json& els = sj["elements"];
      if (!els.is_array()) spec_error(where + "/elements", "expected an array");
      for (std::size_t k = 0; k < els.size(); ++k)
        s.elements.push_back(element_from_json(els[k], fmt::format("{}/elements/{}", where, k)));
    }
    if (sj.contains("on_key")) {
      if (!sj["on_key"].is_object()) spec_error(where + "/on_key", "expected an object");
      for (const auto& [key, eff] : sj["on_key"].items())
        s.on_key[text::to_lower(key)] = effect_from_json(eff, where + "/on_key/" + key);
    }
    g.screens.push_back(std::move(s));
  }
  g.initial_screen = opt_str(j, "initial_screen", "", g.screens.empty() ? "" : g.screens.front().id);
  g.home_screen = opt_str(j, "home_screen", "", g.initial_screen);
  g.new_tab_screen = opt_str(j, "new_tab_screen", "", g.initial_screen);
  validate(g);
  return g;
}

json graph_to_json(const ScreenGraph& g) {
  json state = json::object();
  for (const auto& [name, d] : g.state_schema)
    state[name] = {{"type", type_name(d.type)}, {"initial", value_to_json(d.initial)}};
  json screens = json::array();
  for (const auto& s : g.screens) {
    json sj = {{"id", s.id}};
    if (!s.url.empty()) sj["url"] = s.url;
    if (!s.render_vars.empty()) sj["render_vars"] = s.render_vars;
    if (s.max_scroll) sj["max_scroll"] = s.max_scroll;
    json els = json::array();
    for (const auto& e : s.elements) els.push_back(element_to_json(e));
    sj["elements"] = std::move(els);
    if (!s.on_key.empty()) {
      json keys = json::object();
      for (const auto& [k, e] : s.on_key) keys[k] = effect_to_json(e);
      sj["on_key"] = std::move(keys);
    }
    screens.push_back(std::move(sj));
  }
  json j = {{"version", kSpecVersion},
            {"name", g.name},
            {"platform", to_string(g.platform)},
            {"initial_screen", g.initial_screen},
            {"home_screen", g.home_screen},
            {"new_tab_screen", g.new_tab_screen},
            {"state", std::move(state)},
            {"screens", std::move(screens)}};
  if (!g.apps.empty()) j["apps"] = g.apps;
  return j;
}

ScreenGraph load_env(const std::filesystem::path& file) {
  try {
    return graph_from_json(read_json_file(file));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SpecError) throw;
    throw Error(ErrorCode::SpecError, file.string() + e.what());
  }
}

namespace {

std::string substitute(std::string_view s, const std::map<std::string, std::string>& params) {
  std::string out(s);
  for (const auto& [k, v] : params) text::replace_all(out, "{" + k + "}", v);
  return out;
}

Predicate predicate_from_json(const json& j, const std::map<std::string, std::string>& params,
                              const ScreenGraph& g, const std::string& where) {
  using Op = Predicate::Op;
  if (!j.is_object()) spec_error(where, "expected an object");
  Predicate p;
  auto sub_value = [&](const json& v, const std::string& w) {
    Value val = value_from_json(v, w);
    if (auto s = std::get_if<std::string>(&val)) *s = substitute(*s, params);
    return val;
  };
  if (j.contains("screen")) {
    p.op = Op::screen;
    p.name = req_str(j, "screen", where);
  } else if (j.contains("var")) {
    p.name = req_str(j, "var", where);
    if (j.contains("eq")) {
      p.op = Op::var_eq;
      p.value = sub_value(j["eq"], where + "/eq");
    } else if (j.contains("ne")) {
      p.op = Op::var_ne;
      p.value = sub_value(j["ne"], where + "/ne");
    } else if (j.contains("contains")) {
      p.op = Op::var_contains;
      p.value = sub_value(j["contains"], where + "/contains");
    } else {
      spec_error(where, "var predicate needs eq, ne or contains");
    }
    // Integer variables compared against a parameter arrive as strings.
    if (auto it = g.state_schema.find(p.name); it != g.state_schema.end() && p.op != Op::var_contains) {
      if (auto s = std::get_if<std::string>(&p.value)) {
        if (it->second.type == VarType::integer) {
          try {
            p.value = static_cast<std::int64_t>(std::stoll(*s));
          } catch (...) {
            spec_error(where, "'" + *s + "' is not an integer");
          }
        } else if (it->second.type == VarType::boolean && (*s == "true" || *s == "false")) {
          p.value = *s == "true";
        }
      }
    }
  } else if (j.contains("answer")) {
    p.op = Op::answer_eq;
    p.value = substitute(req_str(j, "answer", where), params);
  } else if (j.contains("answer_contains")) {
    p.op = Op::answer_contains;
    p.value = substitute(req_str(j, "answer_contains", where), params);
  } else if (j.contains("all") || j.contains("any")) {
    const bool all = j.contains("all");
    p.op = all ? Op::all : Op::any;
    const json& arr = j[all ? "all" : "any"];
    if (!arr.is_array()) spec_error(where, "expected an array of predicates");
    for (std::size_t i = 0; i < arr.size(); ++i)
      p.children.push_back(
          predicate_from_json(arr[i], params, g, fmt::format("{}/{}/{}", where, all ? "all" : "any", i)));
  } else if (j.contains("not")) {
    p.op = Op::not_;
    p.children.push_back(predicate_from_json(j["not"], params, g, where + "/not"));
  } else {
    spec_error(where, "unknown predicate");
  }
  return p;
}

std::vector<std::string> string_list(const json& j, const char* key, const std::string& where,
                                     const std::map<std::string, std::string>& params) {
  std::vector<std::string> out;
  auto it = j.find(key);
  if (it == j.end()) return out;
  if (!it->is_array()) spec_error(where + "/" + key, "expected an array of strings");
  for (const auto& v : *it) {
    if (!v.is_string()) spec_error(where + "/" + key, "expected an array of strings");
    out.push_back(substitute(v.get<std::string>(), params));
  }
  return out;
}

}  // namespace

std::vector<TaskSpec> tasks_from_json(const json& j, const ScreenGraph& g, std::uint64_t seed) {
  check_version(j, "task file");
  const json& arr = req(j, "tasks", "");
  if (!arr.is_array()) spec_error("/tasks", "expected an array");
  std::vector<TaskSpec> out;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& tj = arr[i];
    const std::string where = fmt::format("/tasks/{}", i);
    TaskSpec t;
    t.id = req_str(tj, "id", where);
    if (!ids.insert(t.id).second) spec_error(where + "/id", "duplicate task id '" + t.id + "'");
    t.platform = g.platform;
    if (tj.contains("params")) {
      const json& pj = tj["params"];
      if (!pj.is_object()) spec_error(where + "/params", "expected an object");
      std::mt19937_64 rng(seed ^ fnv1a64(t.id));
      for (const auto& [name, choices] : pj.items()) {
        if (!choices.is_array() || choices.empty() ||
            !std::all_of(choices.begin(), choices.end(), [](const json& c) { return c.is_string(); }))
          spec_error(where + "/params/" + name, "expected a non-empty array of strings");
        t.params[name] = choices[rng() % choices.size()].get<std::string>();
      }
    }
    t.goal = substitute(req_str(tj, "goal", where), t.params);
    if (tj.contains("start_screen")) t.start_screen = req_str(tj, "start_screen", where);
    const json& sgs = req(tj, "subgoals", where);
    if (!sgs.is_array()) spec_error(where + "/subgoals", "expected an array");
    for (std::size_t k = 0; k < sgs.size(); ++k) {
      const std::string sw = fmt::format("{}/subgoals/{}", where, k);
      Subgoal sg;
      sg.description = substitute(opt_str(sgs[k], "description", sw), t.params);
      sg.predicate = predicate_from_json(req(sgs[k], "check", sw), t.params, g, sw + "/check");
      t.subgoals.push_back(std::move(sg));
    }
    t.type_candidates = string_list(tj, "type_candidates", where, t.params);
    t.answer_candidates = string_list(tj, "answer_candidates", where, t.params);
    t.goto_candidates = string_list(tj, "goto_candidates", where, t.params);
    if (tj.contains("tabs")) {
      if (!tj["tabs"].is_boolean()) spec_error(where + "/tabs", "expected a boolean");
      t.tabs = tj["tabs"].get<bool>();
    }
    try {
      validate(t, g);
    } catch (const Error& e) {
      // Report the array index rather than the id-based location.
      std::string msg = e.what();
      const std::string prefix = "/tasks/" + t.id;
      if (msg.rfind(prefix, 0) == 0) msg = where + msg.substr(prefix.size());
      throw Error(ErrorCode::SpecError, msg);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TaskSpec> load_tasks(const std::filesystem::path& file, const ScreenGraph& g, std::uint64_t seed) {
  try {
    return tasks_from_json(read_json_file(file), g, seed);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SpecError) throw;
    throw Error(ErrorCode::SpecError, file.string() + e.what());
  }
}

const TaskSpec* TaskPack::find_task(const std::string& id) const {
  for (const auto& t : tasks)
    if (t.id == id) return &t;
  return nullptr;
}

TaskPack load_pack(const std::filesystem::path& dir, std::uint64_t seed) {
  TaskPack p;
  p.root = dir;
  auto g = std::make_shared<ScreenGraph>(load_env(dir / "env.json"));
  p.tasks = load_tasks(dir / "tasks.json", *g, seed);
  p.graph = std::move(g);
  return p;
}

// ---------------------------------------------------------------------------
// SimEnvironment
// ---------------------------------------------------------------------------

SimEnvironment::SimEnvironment(std::shared_ptr<const ScreenGraph> graph, TaskSpec task)
    : graph_(std::move(graph)), task_(std::move(task)) {
  if (!graph_) throw Error(ErrorCode::EnvironmentFault, "no screen graph");
  reset();
}

void SimEnvironment::reset() {
  state_ = initial_state(*graph_, task_.start_screen);
  step_index_ = 0;
}

Observation SimEnvironment::observe() const {
  Observation o;
  o.screenshot = screenshot_ref(*graph_, state_);
  if (graph_->platform == Platform::web) o.url = graph_->at(state_.screen()).url;
  o.step_index = step_index_;
  return o;
}

ApplyReport SimEnvironment::apply(const GroundedAction& a) {
  StepResult r = sim::apply(*graph_, state_, a);
  state_ = std::move(r.state);
  ++step_index_;
  return r.report;
}

std::vector<bool> SimEnvironment::subgoals(const std::optional<std::string>& answer) const {
  return evaluate_subgoals(state_, answer, task_);
}

std::string SimEnvironment::state_digest() const { return sim::state_digest(state_); }

void SimEnvironment::restore(SimState s, int step_index) {
  state_ = std::move(s);
  step_index_ = step_index;
}

std::optional<std::string> SimEnvironment::label_at(const Coordinate& c) const {
  if (const Element* el = hit_test(graph_->at(state_.screen()), state_, c)) return el->label;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

namespace {

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

/// A point (on the 0.001 grid used by the text format) where `el` is the topmost hit.
std::optional<Coordinate> click_point(const Screen& scr, const SimState& s, const Element& el) {
  static constexpr double kFractions[] = {0.5, 0.25, 0.75, 0.1, 0.9};
  for (double fy : kFractions) {
    for (double fx : kFractions) {
      Coordinate c{round3(el.bbox.x0 + fx * (el.bbox.x1 - el.bbox.x0)),
                   round3(el.bbox.y0 + fy * (el.bbox.y1 - el.bbox.y0))};
      if (hit_test(scr, s, c) == &el) return c;
    }
  }
  return std::nullopt;
}

std::vector<std::string> unique_strings(std::vector<std::string> v) {
  std::vector<std::string> out;
  for (auto& s : v)
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  return out;
}

std::vector<std::string> type_candidates(const TaskSpec& t) {
  std::vector<std::string> v = t.type_candidates;
  for (const auto& [k, p] : t.params) v.push_back(p);
  return unique_strings(std::move(v));
}

std::vector<std::string> answer_candidates(const TaskSpec& t) {
  std::vector<std::string> v = t.answer_candidates;
  for (const auto& [k, p] : t.params) v.push_back(p);
  v.push_back("completed");
  v.push_back("infeasible");
  return unique_strings(std::move(v));
}

}  // namespace

std::vector<GroundedAction> enumerate_actions(const ScreenGraph& g, const SimState& s, const TaskSpec& task) {
  const Platform p = g.platform;
  const Screen& scr = g.at(s.screen());
  std::vector<GroundedAction> out;
  auto add = [&](ActionKind k) -> GroundedAction& {
    out.push_back(GroundedAction{p, k, std::nullopt, std::nullopt, std::nullopt, std::nullopt});
    return out.back();
  };
  const auto typed = type_candidates(task);
  for (const Element& el : scr.elements) {
    if (!is_visible(el, s)) continue;
    auto c = click_point(scr, s, el);
    if (!c) continue;
    if (el.on_click) add(ActionKind::click).coord = c;
    if (el.on_long_press && p == Platform::mobile) add(ActionKind::long_press).coord = c;
    if (el.on_hover && p == Platform::web) add(ActionKind::hover).coord = c;
    if (el.text_field) {
      const auto& cur = s.vars.at(el.bind);
      for (const auto& v : typed) {
        if (cur == Value{v}) continue;
        auto& a = add(ActionKind::type);
        a.coord = c;
        a.value = v;
      }
      if (p == Platform::web && cur != Value{std::string{}}) add(ActionKind::clear).coord = c;
    }
  }
  if (s.tab().scroll < scr.max_scroll) add(ActionKind::scroll).value = "down";
  if (s.tab().scroll > 0) add(ActionKind::scroll).value = "up";
  if (!s.tab().back.empty()) add(ActionKind::go_back);
  if (p == Platform::web) {
    if (!s.tab().forward.empty()) add(ActionKind::go_forward);
    for (const auto& [key, eff] : scr.on_key) add(ActionKind::press).value = key == "enter" ? "Enter" : key;
    for (const auto& u : task.goto_candidates) {
      auto& a = add(ActionKind::goto_url);
      a.url = u;
    }
    if (task.tabs) {
      if (s.tabs.size() < 2) add(ActionKind::new_tab);
      for (std::size_t i = 0; i < s.tabs.size(); ++i)
        if (i != s.active) add(ActionKind::page_focus).tab_index = static_cast<std::uint32_t>(i);
      if (s.tabs.size() > 1) add(ActionKind::close_tab);
    }
  } else {
    if (s.screen() != g.home_screen) add(ActionKind::go_home);
    if (scr.on_key.count("enter")) add(ActionKind::enter);
    for (const auto& [app, target] : g.apps) add(ActionKind::open_app).value = app;
  }
  return out;
}

OracleResult oracle_solve(const ScreenGraph& g, const TaskSpec& task, int max_steps, std::size_t node_cap) {
  struct Node {
    SimState state;
    std::int64_t parent;
    GroundedAction action;
    int depth;
  };
  std::vector<Node> nodes;
  std::unordered_set<std::string> seen;
  const auto answers = answer_candidates(task);

  nodes.push_back(Node{initial_state(g, task.start_screen), -1, {}, 0});
  seen.insert(state_key(nodes.front().state));

  OracleResult res;
  double best = -1.0;
  std::int64_t best_node = 0;
  std::optional<std::string> best_answer;

  auto path_to = [&](std::int64_t idx) {
    std::vector<GroundedAction> plan;
    for (; nodes[static_cast<std::size_t>(idx)].parent >= 0; idx = nodes[static_cast<std::size_t>(idx)].parent)
      plan.push_back(nodes[static_cast<std::size_t>(idx)].action);
    std::reverse(plan.begin(), plan.end());
    return plan;
  };
  auto stop_action = [&](const std::string& answer) {
    return GroundedAction{g.platform, ActionKind::stop, std::nullopt, answer, std::nullopt, std::nullopt};
  };

  for (std::size_t head = 0; head < nodes.size(); ++head) {
    const std::int64_t idx = static_cast<std::int64_t>(head);
    // Copy: nodes may reallocate while expanding.
    const SimState state = nodes[head].state;
    const int depth = nodes[head].depth;

    const double frac = subgoal_fraction(evaluate_subgoals(state, std::nullopt, task));
    if (frac >= 1.0) {
      res.solvable = true;
      res.plan = path_to(idx);
      res.best_progress = 1.0;
      res.nodes = nodes.size();
      return res;
    }
    if (frac > best) {
      best = frac;
      best_node = idx;
      best_answer.reset();
    }
    for (const auto& ans : answers) {
      const double f = subgoal_fraction(evaluate_subgoals(state, ans, task));
      if (f >= 1.0) {
        res.solvable = true;
        res.plan = path_to(idx);
        res.plan.push_back(stop_action(ans));
        res.best_progress = 1.0;
        res.nodes = nodes.size();
        return res;
      }
      if (f > best) {
        best = f;
        best_node = idx;
        best_answer = ans;
      }
    }

    if (depth >= max_steps) continue;
    for (auto& a : enumerate_actions(g, state, task)) {
      StepResult r = apply(g, state, a);
      if (!r.report.state_changed) continue;
      if (!seen.insert(state_key(r.state)).second) continue;
      if (seen.size() > node_cap)
        throw Error(ErrorCode::SearchBudgetExceeded,
                    fmt::format("task '{}': more than {} states within {} steps", task.id, node_cap, max_steps));
      nodes.push_back(Node{std::move(r.state), idx, std::move(a), depth + 1});
    }
  }
  res.solvable = false;
  res.plan = path_to(best_node);
  if (best_answer) res.plan.push_back(stop_action(*best_answer));
  res.best_progress = std::max(0.0, best);
  res.nodes = nodes.size();
  return res;
}

}  // namespace guiharness::sim

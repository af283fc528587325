#include "guiharness/actions.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "text_util.hpp"

namespace guiharness {

namespace {

constexpr std::array<ActionKind, kActionKindCount> kAllKinds = {
    ActionKind::click,    ActionKind::type,       ActionKind::scroll,    ActionKind::go_back,
    ActionKind::go_home,  ActionKind::long_press, ActionKind::enter,     ActionKind::open_app,
    ActionKind::wait,     ActionKind::stop,       ActionKind::clear,     ActionKind::hover,
    ActionKind::press,    ActionKind::new_tab,    ActionKind::page_focus, ActionKind::close_tab,
    ActionKind::goto_url, ActionKind::go_forward,
};

// Order follows the action-space tables.
constexpr std::array<ActionKind, 10> kMobileKinds = {
    ActionKind::click,      ActionKind::type,  ActionKind::scroll,   ActionKind::go_back,
    ActionKind::go_home,    ActionKind::long_press, ActionKind::enter, ActionKind::open_app,
    ActionKind::wait,       ActionKind::stop,
};

constexpr std::array<ActionKind, 13> kWebKinds = {
    ActionKind::click,   ActionKind::type,       ActionKind::clear,     ActionKind::hover,
    ActionKind::press,   ActionKind::scroll,     ActionKind::new_tab,   ActionKind::page_focus,
    ActionKind::close_tab, ActionKind::goto_url, ActionKind::go_back,   ActionKind::go_forward,
    ActionKind::stop,
};

bool valid_direction(std::string_view dir, Platform p) {
  if (dir == "up" || dir == "down") return true;
  return p == Platform::mobile && (dir == "left" || dir == "right");
}

bool takes_optional_coordinate(ActionKind k, Platform p) {
  return k == ActionKind::scroll && p == Platform::mobile;
}

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidAction, msg); }

std::string escape_value(std::string_view v) {
  std::string out;
  out.reserve(v.size());
  for (char c : v) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_value(std::string_view v) {
  std::string out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '\\' && i + 1 < v.size()) {
      char n = v[i + 1];
      if (n == '\\') { out.push_back('\\'); ++i; continue; }
      if (n == 'n') { out.push_back('\n'); ++i; continue; }
      if (n == 'r') { out.push_back('\r'); ++i; continue; }
    }
    out.push_back(v[i]);
  }
  return out;
}

bool is_number_token(std::string_view s) {
  if (s.empty()) return false;
  double d = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
  return ec == std::errc{} && p == s.data() + s.size() && d >= 0 && std::isfinite(d);
}

// Cursor over the action text; all offsets are byte positions into `src`.
class ActionScanner {
 public:
  explicit ActionScanner(std::string_view src) : src_(src) {}

  std::size_t pos() const { return pos_; }
  bool at_end() {
    skip_ws();
    return pos_ >= end_;
  }

  void skip_ws() {
    while (pos_ < end_ && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  void trim_end() {
    while (end_ > pos_ && std::isspace(static_cast<unsigned char>(src_[end_ - 1]))) --end_;
  }

  bool peek(std::string_view lit) {
    skip_ws();
    return src_.substr(pos_, lit.size()) == lit;
  }

  bool peek_ci(std::string_view lit) {
    skip_ws();
    if (pos_ + lit.size() > end_) return false;
    return text::iequals(src_.substr(pos_, lit.size()), lit);
  }

  void expect(char c, const char* what) {
    skip_ws();
    if (pos_ >= end_ || src_[pos_] != c) throw ParseError(pos_, what);
    ++pos_;
  }

  std::string_view identifier() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < end_ && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    if (pos_ == start) throw ParseError(start, "action verb");
    return src_.substr(start, pos_ - start);
  }

  double number(bool unit_range) {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < end_ && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.' ||
                           src_[pos_] == '-' || src_[pos_] == '+' || src_[pos_] == 'e' ||
                           src_[pos_] == 'E'))
      ++pos_;
    double v = 0;
    auto [p, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (start == pos_ || ec != std::errc{} || p != src_.data() + pos_)
      throw ParseError(start, "number");
    if (unit_range && !(v >= 0.0 && v <= 1.0)) throw ParseError(start, "coordinate in [0,1]");
    return v;
  }

  // `[[x] [y]]`
  Coordinate bracket_coordinate() {
    expect('[', "'[' opening coordinate");
    expect('[', "'[' opening x");
    Coordinate c;
    c.x = number(true);
    expect(']', "']' closing x");
    expect('[', "'[' opening y");
    c.y = number(true);
    expect(']', "']' closing y");
    expect(']', "']' closing coordinate");
    return c;
  }

  // `[coordinate_x 0.12] [coordinate_y 0.07]`
  Coordinate display_coordinate() {
    Coordinate c;
    expect('[', "'['");
    skip_ws();
    if (!peek_ci("coordinate_x")) throw ParseError(pos_, "coordinate_x");
    pos_ += 12;
    c.x = number(true);
    expect(']', "']' after coordinate_x");
    expect('[', "'[' before coordinate_y");
    skip_ws();
    if (!peek_ci("coordinate_y")) throw ParseError(pos_, "coordinate_y");
    pos_ += 12;
    c.y = number(true);
    expect(']', "']' after coordinate_y");
    return c;
  }

  bool at_coordinate() { return peek("[[") || peek_bracketed_display(); }

  bool peek_bracketed_display() {
    skip_ws();
    if (pos_ >= end_ || src_[pos_] != '[') return false;
    std::size_t save = pos_;
    ++pos_;
    bool yes = peek_ci("coordinate_x");
    pos_ = save;
    return yes;
  }

  Coordinate coordinate() {
    if (peek("[[")) return bracket_coordinate();
    return display_coordinate();
  }

  // Final `[value]` group; runs to the last ']' so the payload may contain brackets.
  std::string_view trailing_value(const char* what) {
    skip_ws();
    trim_end();
    if (pos_ >= end_ || src_[pos_] != '[') throw ParseError(pos_, std::string("'[' opening ") + what);
    if (src_[end_ - 1] != ']' || end_ - 1 == pos_) throw ParseError(end_, std::string("']' closing ") + what);
    std::string_view inner = src_.substr(pos_ + 1, end_ - pos_ - 2);
    value_offset_ = pos_ + 1;
    pos_ = end_;
    return inner;
  }

  std::size_t value_offset() const { return value_offset_; }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t end_ = src_.size();
  std::size_t value_offset_ = 0;
};

}  // namespace

std::string_view to_string(Platform p) { return p == Platform::mobile ? "mobile" : "web"; }

Platform platform_from_string(std::string_view s) {
  if (text::iequals(s, "mobile")) return Platform::mobile;
  if (text::iequals(s, "web")) return Platform::web;
  throw Error(ErrorCode::InvalidAction, "unknown platform '" + std::string(s) + "'");
}

std::span<const ActionKind> all_action_kinds() { return kAllKinds; }

std::string_view verb(ActionKind k) {
  switch (k) {
    case ActionKind::click: return "click";
    case ActionKind::type: return "type";
    case ActionKind::scroll: return "scroll";
    case ActionKind::go_back: return "go_back";
    case ActionKind::go_home: return "go_home";
    case ActionKind::long_press: return "long_press";
    case ActionKind::enter: return "enter";
    case ActionKind::open_app: return "open_app";
    case ActionKind::wait: return "wait";
    case ActionKind::stop: return "stop";
    case ActionKind::clear: return "clear";
    case ActionKind::hover: return "hover";
    case ActionKind::press: return "press";
    case ActionKind::new_tab: return "new_tab";
    case ActionKind::page_focus: return "page_focus";
    case ActionKind::close_tab: return "close_tab";
    case ActionKind::goto_url: return "goto";
    case ActionKind::go_forward: return "go_forward";
  }
  return "?";
}

std::optional<ActionKind> kind_from_verb(std::string_view s) {
  std::string v = text::to_lower(text::trim(s));
  std::replace(v.begin(), v.end(), ' ', '_');
  std::replace(v.begin(), v.end(), '-', '_');
  if (v == "tab_focus") return ActionKind::page_focus;
  for (ActionKind k : kAllKinds)
    if (verb(k) == v) return k;
  return std::nullopt;
}

std::vector<ActionKind> legal_kinds(Platform p) {
  if (p == Platform::mobile) return {kMobileKinds.begin(), kMobileKinds.end()};
  return {kWebKinds.begin(), kWebKinds.end()};
}

bool is_legal(ActionKind k, Platform p) {
  if (p == Platform::mobile) return std::find(kMobileKinds.begin(), kMobileKinds.end(), k) != kMobileKinds.end();
  return std::find(kWebKinds.begin(), kWebKinds.end(), k) != kWebKinds.end();
}

bool requires_coordinate(ActionKind k) {
  switch (k) {
    case ActionKind::click:
    case ActionKind::long_press:
    case ActionKind::hover:
    case ActionKind::clear:
    case ActionKind::type:
      return true;
    default:
      return false;
  }
}

bool requires_value(ActionKind k) {
  switch (k) {
    case ActionKind::type:
    case ActionKind::scroll:
    case ActionKind::open_app:
    case ActionKind::wait:
    case ActionKind::stop:
    case ActionKind::goto_url:
    case ActionKind::press:
    case ActionKind::page_focus:
      return true;
    default:
      return false;
  }
}

bool is_targetless(ActionKind k) { return !requires_coordinate(k); }

bool in_unit_square(const Coordinate& c) {
  return c.x >= 0.0 && c.x <= 1.0 && c.y >= 0.0 && c.y <= 1.0;
}

double distance(const Coordinate& a, const Coordinate& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void validate(const HighLevelAction& a, Platform p) {
  if (!is_legal(a.kind, p))
    throw Error(ErrorCode::IllegalKindForPlatform,
                fmt::format("'{}' is not a {} action", verb(a.kind), to_string(p)));
  std::string desc = text::trim(a.element_description);
  if (desc.size() > kMaxElementDescription)
    invalid(fmt::format("element description longer than {} chars", kMaxElementDescription));
  if (desc.empty() && !is_targetless(a.kind))
    invalid(fmt::format("'{}' needs an element description", verb(a.kind)));
  bool has_value = a.value.has_value() && !text::trim(*a.value).empty();
  if (requires_value(a.kind) && !has_value)
    invalid(fmt::format("'{}' needs a value", verb(a.kind)));
  if (!requires_value(a.kind) && a.value.has_value())
    invalid(fmt::format("'{}' takes no value", verb(a.kind)));
}

void validate(const GroundedAction& a) {
  if (!is_legal(a.kind, a.platform))
    throw Error(ErrorCode::IllegalKindForPlatform,
                fmt::format("'{}' is not a {} action", verb(a.kind), to_string(a.platform)));
  const std::string_view name = verb(a.kind);
  if (a.coord && !in_unit_square(*a.coord)) invalid("coordinate outside [0,1]");

  bool wants_coord = requires_coordinate(a.kind);
  bool optional_coord = takes_optional_coordinate(a.kind, a.platform);
  if (wants_coord && !a.coord) invalid(fmt::format("'{}' requires a coordinate", name));
  if (!wants_coord && !optional_coord && a.coord) invalid(fmt::format("'{}' takes no coordinate", name));

  bool wants_tab = a.kind == ActionKind::page_focus;
  if (wants_tab != a.tab_index.has_value())
    invalid(wants_tab ? "page_focus requires tab_index" : fmt::format("'{}' takes no tab_index", name));
  bool wants_url = a.kind == ActionKind::goto_url;
  if (wants_url != a.url.has_value())
    invalid(wants_url ? "goto requires url" : fmt::format("'{}' takes no url", name));
  if (wants_url && text::trim(*a.url).empty()) invalid("goto url is empty");

  bool wants_value = requires_value(a.kind) && !wants_tab && !wants_url;
  if (wants_value != a.value.has_value())
    invalid(wants_value ? fmt::format("'{}' requires a value", name)
                        : fmt::format("'{}' takes no value", name));
  if (!wants_value) return;

  const std::string& v = *a.value;
  switch (a.kind) {
    case ActionKind::scroll:
      if (!valid_direction(v, a.platform)) invalid("bad scroll direction '" + v + "'");
      break;
    case ActionKind::wait:
      if (!is_number_token(v)) invalid("wait value must be a number of seconds");
      break;
    case ActionKind::type:
      if (v.empty()) invalid("type needs text");
      break;
    default:
      if (text::trim(v).empty()) invalid(fmt::format("'{}' value is empty", name));
  }
}

std::string format_coordinate_axis(double v) {
  std::string s = fmt::format("{:.3f}", v);
  if (s == "-0.000") s = "0.000";
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s;
}

std::string serialize_grounded(const GroundedAction& a) {
  validate(a);
  std::string out(verb(a.kind));
  if (a.coord)
    out += fmt::format(" [[{}] [{}]]", format_coordinate_axis(a.coord->x),
                       format_coordinate_axis(a.coord->y));
  switch (a.kind) {
    case ActionKind::wait:
      out += fmt::format(" [seconds=\"{}s\"]", *a.value);
      break;
    case ActionKind::page_focus:
      out += fmt::format(" [{}]", *a.tab_index);
      break;
    case ActionKind::goto_url:
      out += " [" + escape_value(*a.url) + "]";
      break;
    default:
      if (a.value) out += " [" + escape_value(*a.value) + "]";
  }
  return out;
}

GroundedAction parse_grounded(std::string_view s, Platform platform) {
  if (text::trim(s).empty()) throw ParseError(0, "non-empty action text");
  ActionScanner sc(s);
  std::size_t verb_at = (sc.skip_ws(), sc.pos());
  std::string_view word = sc.identifier();
  auto kind = kind_from_verb(word);
  if (!kind) throw ParseError(verb_at, "known action verb, got '" + std::string(word) + "'");
  if (!is_legal(*kind, platform))
    throw Error(ErrorCode::IllegalKindForPlatform,
                fmt::format("'{}' is not a {} action", verb(*kind), to_string(platform)));

  GroundedAction a;
  a.platform = platform;
  a.kind = *kind;

  if (requires_coordinate(a.kind)) {
    if (!sc.at_coordinate()) throw ParseError(sc.pos(), "coordinate '[[x] [y]]'");
    a.coord = sc.coordinate();
  } else if (takes_optional_coordinate(a.kind, platform) && sc.at_coordinate()) {
    a.coord = sc.coordinate();
  }

  switch (a.kind) {
    case ActionKind::type:
    case ActionKind::open_app:
    case ActionKind::stop:
    case ActionKind::press: {
      std::string v = unescape_value(sc.trailing_value("value"));
      if (v.empty() || (a.kind != ActionKind::type && text::trim(v).empty()))
        throw ParseError(sc.value_offset(), "non-empty value");
      a.value = std::move(v);
      break;
    }
    case ActionKind::scroll: {
      std::string v = text::to_lower(text::trim(sc.trailing_value("direction")));
      if (!valid_direction(v, platform))
        throw ParseError(sc.value_offset(), platform == Platform::mobile
                                                ? "direction up|down|left|right"
                                                : "direction up|down");
      a.value = std::move(v);
      break;
    }
    case ActionKind::wait: {
      std::string_view raw = sc.trailing_value("wait value");
      auto secs = parse_wait_seconds(raw);
      if (!secs) throw ParseError(sc.value_offset(), "seconds=\"Ns\"");
      a.value = fmt::format("{}", *secs);
      break;
    }
    case ActionKind::page_focus: {
      std::string v = text::trim(sc.trailing_value("tab index"));
      std::uint32_t idx = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), idx);
      if (v.empty() || ec != std::errc{} || p != v.data() + v.size())
        throw ParseError(sc.value_offset(), "non-negative tab index");
      a.tab_index = idx;
      break;
    }
    case ActionKind::goto_url: {
      std::string v = unescape_value(sc.trailing_value("url"));
      if (text::trim(v).empty()) throw ParseError(sc.value_offset(), "url");
      a.url = std::move(v);
      break;
    }
    default:
      break;
  }
  if (!sc.at_end()) throw ParseError(sc.pos(), "end of action");
  validate(a);
  return a;
}

std::optional<double> parse_wait_seconds(std::string_view value) {
  std::string v = text::trim(value);
  if (text::istarts_with(v, "seconds")) {
    std::string rest = text::trim(std::string_view(v).substr(7));
    if (rest.empty() || rest.front() != '=') return std::nullopt;
    v = text::trim(std::string_view(rest).substr(1));
    // Quotes are mandatory in the keyword form.
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') return std::nullopt;
    v = v.substr(1, v.size() - 2);
  }
  if (!v.empty() && (v.back() == 's' || v.back() == 'S')) v.pop_back();
  if (!is_number_token(v)) return std::nullopt;
  double d = 0;
  std::from_chars(v.data(), v.data() + v.size(), d);
  return d;
}

StopStatus stop_status(std::string_view value) {
  std::string v = text::to_lower(text::trim(value));
  if (v == "completed" || v == "success" || v == "successful") return StopStatus::completed;
  if (v == "infeasible") return StopStatus::infeasible;
  return StopStatus::answer;
}

namespace {

GroundedAction ground_impl(const HighLevelAction& hla, std::optional<Coordinate> coord,
                           Platform platform, bool lenient) {
  validate(hla, platform);
  GroundedAction a;
  a.platform = platform;
  a.kind = hla.kind;

  if (requires_coordinate(hla.kind)) {
    if (!coord)
      throw Error(ErrorCode::MissingCoordinate,
                  fmt::format("'{}' on '{}' needs a coordinate", verb(hla.kind), hla.element_description));
    a.coord = coord;
  } else if (takes_optional_coordinate(hla.kind, platform)) {
    a.coord = coord;
  } else if (coord && !lenient) {
    invalid(fmt::format("'{}' takes no coordinate", verb(hla.kind)));
  }
  if (a.coord && !in_unit_square(*a.coord)) invalid("coordinate outside [0,1]");

  auto malformed = [&](const std::string& what) {
    throw Error(ErrorCode::MalformedValue,
                fmt::format("{} value '{}': {}", verb(hla.kind), hla.value.value_or(""), what));
  };

  switch (hla.kind) {
    case ActionKind::wait: {
      auto secs = parse_wait_seconds(*hla.value);
      if (!secs) malformed("expected seconds=\"Ns\"");
      a.value = fmt::format("{}", *secs);
      break;
    }
    case ActionKind::open_app: {
      std::string v = text::trim(*hla.value);
      if (text::istarts_with(v, "app_name")) {
        std::string rest = text::trim(std::string_view(v).substr(8));
        if (rest.empty() || rest.front() != '=') malformed("expected app_name=\"...\"");
        v = text::strip_quotes(text::trim(std::string_view(rest).substr(1)));
      }
      if (v.empty()) malformed("empty app name");
      a.value = v;
      break;
    }
    case ActionKind::page_focus: {
      std::string v = text::trim(*hla.value);
      std::uint32_t idx = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), idx);
      if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) malformed("expected a tab index");
      a.tab_index = idx;
      break;
    }
    case ActionKind::goto_url:
      a.url = text::trim(*hla.value);
      break;
    case ActionKind::scroll: {
      std::string dir = text::to_lower(text::strip_quotes(text::trim(*hla.value)));
      if (!valid_direction(dir, platform)) malformed("bad direction");
      a.value = dir;
      break;
    }
    case ActionKind::stop:
    case ActionKind::press:
      a.value = text::trim(*hla.value);
      break;
    case ActionKind::type:
      a.value = *hla.value;
      break;
    default:
      break;
  }
  validate(a);
  return a;
}

}  // namespace

GroundedAction ground(const HighLevelAction& hla, std::optional<Coordinate> coord, Platform platform) {
  return ground_impl(hla, coord, platform, false);
}

GroundedAction ground_lenient(const HighLevelAction& hla, std::optional<Coordinate> coord,
                              Platform platform) {
  return ground_impl(hla, coord, platform, true);
}

HighLevelAction lift(const GroundedAction& g, std::string element_description) {
  HighLevelAction a;
  a.kind = g.kind;
  a.element_description = std::move(element_description);
  if (g.kind == ActionKind::goto_url) a.value = g.url;
  else if (g.kind == ActionKind::page_focus && g.tab_index) a.value = std::to_string(*g.tab_index);
  else a.value = g.value;
  return a;
}

nlohmann::json to_json(const Coordinate& c) { return {{"x", c.x}, {"y", c.y}}; }

Coordinate coordinate_from_json(const nlohmann::json& j) {
  if (j.is_array() && j.size() == 2) return {j[0].get<double>(), j[1].get<double>()};
  return {j.at("x").get<double>(), j.at("y").get<double>()};
}

nlohmann::json to_json(const GroundedAction& a) {
  nlohmann::json j{{"platform", to_string(a.platform)}, {"kind", verb(a.kind)}};
  if (a.coord) j["coord"] = to_json(*a.coord);
  if (a.value) j["value"] = *a.value;
  if (a.tab_index) j["tab_index"] = *a.tab_index;
  if (a.url) j["url"] = *a.url;
  return j;
}

GroundedAction grounded_from_json(const nlohmann::json& j) {
  GroundedAction a;
  try {
    a.platform = platform_from_string(j.at("platform").get<std::string>());
    auto kind = kind_from_verb(j.at("kind").get<std::string>());
    if (!kind) invalid("unknown action kind " + j.at("kind").dump());
    a.kind = *kind;
    if (j.contains("coord") && !j["coord"].is_null()) a.coord = coordinate_from_json(j["coord"]);
    if (j.contains("value") && !j["value"].is_null()) a.value = j["value"].get<std::string>();
    if (j.contains("tab_index") && !j["tab_index"].is_null()) a.tab_index = j["tab_index"].get<std::uint32_t>();
    if (j.contains("url") && !j["url"].is_null()) a.url = j["url"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("bad action object: ") + e.what());
  }
  validate(a);
  return a;
}

nlohmann::json to_json(const HighLevelAction& a) {
  nlohmann::json j{{"element_description", a.element_description}, {"kind", verb(a.kind)}};
  if (a.value) j["value"] = *a.value;
  return j;
}

HighLevelAction high_level_from_json(const nlohmann::json& j) {
  HighLevelAction a;
  try {
    a.element_description = j.value("element_description", "");
    auto kind = kind_from_verb(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::BadActionKind, j.at("kind").dump());
    a.kind = *kind;
    if (j.contains("value") && !j["value"].is_null()) a.value = j["value"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("bad high-level action object: ") + e.what());
  }
  return a;
}

std::string summarize(const HighLevelAction& a) {
  std::string desc = text::trim(a.element_description);
  const std::string_view name = verb(a.kind);
  if (a.kind == ActionKind::type && a.value) {
    if (desc.empty()) return fmt::format("type '{}'", *a.value);
    return fmt::format("type '{}' into '{}'", *a.value, desc);
  }
  std::string out(name);
  if (!desc.empty()) out += fmt::format(" '{}'", desc);
  if (a.value) out += fmt::format(" [{}]", *a.value);
  return out;
}

}  // namespace guiharness

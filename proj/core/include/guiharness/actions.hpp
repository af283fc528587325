#pragma once

// Unified mobile/web action space and its canonical single-line text form.
//
// Canonical grammar (see docs/action-grammar.md):
//   click [[0.12] [0.07]]        type [[0.5] [0.33]] [hello]
//   scroll [down]                scroll [[0.5] [0.5]] [up]      (mobile only)
//   open_app [Chrome]            wait [seconds="5s"]            stop [completed]
//   page_focus [2]               goto [http://host/]            go_back

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/error.hpp"

namespace guiharness {

enum class Platform { mobile, web };

std::string_view to_string(Platform p);
Platform platform_from_string(std::string_view s);

enum class ActionKind {
  click,
  type,
  scroll,
  go_back,
  go_home,
  long_press,
  enter,
  open_app,
  wait,
  stop,
  clear,
  hover,
  press,
  new_tab,
  page_focus,
  close_tab,
  goto_url,
  go_forward,
};

inline constexpr std::size_t kActionKindCount = 18;

std::span<const ActionKind> all_action_kinds();

/// Canonical verb, e.g. "goto" for ActionKind::goto_url.
std::string_view verb(ActionKind k);

/// Case-insensitive verb lookup. Accepts the alias "tab_focus" for page_focus.
std::optional<ActionKind> kind_from_verb(std::string_view s);

std::vector<ActionKind> legal_kinds(Platform p);
bool is_legal(ActionKind k, Platform p);

/// Kinds whose grounded form carries a screen coordinate.
bool requires_coordinate(ActionKind k);
/// Kinds whose high-level form carries a mandatory "Value".
bool requires_value(ActionKind k);
/// Kinds that may carry an empty element description.
bool is_targetless(ActionKind k);

/// Normalized screen position; both axes in [0, 1].
struct Coordinate {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

bool in_unit_square(const Coordinate& c);
double distance(const Coordinate& a, const Coordinate& b);

/// Planner-side action: what to do and which element, before grounding.
struct HighLevelAction {
  std::string element_description;
  ActionKind kind = ActionKind::click;
  std::optional<std::string> value;

  friend bool operator==(const HighLevelAction&, const HighLevelAction&) = default;
};

inline constexpr std::size_t kMaxElementDescription = 200;

/// Throws Error(InvalidAction | IllegalKindForPlatform).
void validate(const HighLevelAction& a, Platform p);

/// Coordinate-level executable action.
struct GroundedAction {
  Platform platform = Platform::web;
  ActionKind kind = ActionKind::click;
  std::optional<Coordinate> coord;
  std::optional<std::string> value;
  std::optional<std::uint32_t> tab_index;
  std::optional<std::string> url;

  friend bool operator==(const GroundedAction&, const GroundedAction&) = default;
};

/// Throws Error(InvalidAction | IllegalKindForPlatform).
void validate(const GroundedAction& a);

std::string serialize_grounded(const GroundedAction& a);

/// Parses the canonical form and the display variant
/// `Click [coordinate_x 0.12] [coordinate_y 0.07]`. Throws ParseError or
/// Error(IllegalKindForPlatform | InvalidAction).
GroundedAction parse_grounded(std::string_view s, Platform platform);

/// Combines a planner action with a grounder coordinate. Throws
/// Error(MissingCoordinate | MalformedValue | InvalidAction | IllegalKindForPlatform).
GroundedAction ground(const HighLevelAction& hla, std::optional<Coordinate> coord,
                      Platform platform);

/// Same as `ground` but tolerant of a stray coordinate on a targetless action.
GroundedAction ground_lenient(const HighLevelAction& hla, std::optional<Coordinate> coord,
                              Platform platform);

/// Planner-side view of an executed action; ground(lift(g, d), g.coord, g.platform) == g.
HighLevelAction lift(const GroundedAction& g, std::string element_description);

enum class StopStatus { completed, infeasible, answer };

/// `success`, `successful` and `completed` all fold to completed.
StopStatus stop_status(std::string_view value);

/// Seconds payload of a wait value: `seconds="5s"`, `5s` or `5`.
std::optional<double> parse_wait_seconds(std::string_view value);

/// Coordinate text: up to 3 decimals, trailing zeros trimmed (keeps one).
std::string format_coordinate_axis(double v);

// JSON object form used in dataset records:
//   {platform, kind, coord:{x,y}?, value?, tab_index?, url?}
nlohmann::json to_json(const GroundedAction& a);
GroundedAction grounded_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HighLevelAction& a);
HighLevelAction high_level_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Coordinate& c);
Coordinate coordinate_from_json(const nlohmann::json& j);

/// Short human-readable summary used for the action-history memory.
std::string summarize(const HighLevelAction& a);

}  // namespace guiharness

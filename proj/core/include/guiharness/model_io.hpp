#pragma once

// Planner prompt construction, planner-output parsing and action-history memory.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/actions.hpp"
#include "guiharness/observation.hpp"

namespace guiharness {

enum class TemplateId {
  mobile_eval,
  web_eval,
  osgenesis_mobile_cot,
  osgenesis_web_cot,
  vwa_cot,
  mind2web_cot,
};

std::string_view to_string(TemplateId id);
/// Throws Error(UnknownTemplate).
TemplateId template_from_string(std::string_view s);

/// Verbatim template text with `{placeholder}` sites.
std::string_view template_body(TemplateId id);

/// Placeholder names (with braces) that occur in the template, in order of first use.
std::vector<std::string> template_placeholders(TemplateId id);

/// Planner template for a platform's evaluation loop.
TemplateId eval_template(Platform p);

struct PromptFields {
  std::string intent;
  std::string previous_actions;
  std::optional<std::string> url;
  /// Filled into the correct-action hint slot of the CoT templates.
  std::optional<std::string> hint;
};

/// Throws Error(MissingUrl | MissingHint).
std::string render_template(TemplateId id, const PromptFields& fields);

struct ContentPart {
  enum class Type { text, image } type = Type::text;
  std::string text;       // text parts
  std::string image_ref;  // image parts: relative path or URL of the screenshot

  friend bool operator==(const ContentPart&, const ContentPart&) = default;
};

struct Message {
  std::string role;  // "system" | "user" | "assistant"
  std::vector<ContentPart> parts;

  friend bool operator==(const Message&, const Message&) = default;
};

nlohmann::json to_json(const Message& m);
Message message_from_json(const nlohmann::json& j);

/// Summaries of earlier high-level actions, oldest first.
using MemoryView = std::vector<std::string>;

/// `step 1: ...; step 2: ...`, or "None" when empty.
std::string format_memory(const MemoryView& history);

/// One user message: the screenshot, then the rendered template text.
std::vector<Message> build_planner_prompt(std::string_view goal, const MemoryView& memory,
                                          const Observation& obs, TemplateId id,
                                          std::optional<std::string> hint = std::nullopt);

struct DecodingParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int max_context = 8192;

  friend bool operator==(const DecodingParams&, const DecodingParams&) = default;
};

struct PlannerOutput {
  std::string thought;
  HighLevelAction action;
  std::string raw;
};

struct PlannerParseOptions {
  /// When set, the action is validated against this platform's action space.
  std::optional<Platform> platform;
  /// Disable JSON repair (trailing commas, single quotes, typographic quotes).
  bool strict = false;
};

/// Extracts the last JSON action block; the text before it becomes the thought.
/// Throws Error(NoActionBlock | BadActionKind | InvalidAction | IllegalKindForPlatform).
PlannerOutput parse_planner_output(std::string_view text, const PlannerParseOptions& opts = {});

/// Canonical assistant reply: thought, the summary line, then a fenced action block.
std::string format_planner_reply(std::string_view thought, const HighLevelAction& action);

/// Compact one-line action block, used as the hint text for CoT generation.
std::string format_action_block(const HighLevelAction& action);

/// Best-effort JSON repair used by the lenient parser. Exposed for tests.
std::string repair_json(std::string_view text);

}  // namespace guiharness

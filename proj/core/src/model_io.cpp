#include "guiharness/model_io.hpp"

#include <array>
#include <utility>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "text_util.hpp"

namespace guiharness {

namespace {

#include "prompt_templates.inc"

enum class Slot { intent, previous, url, hint };

struct PlaceholderSite {
  std::string_view token;
  Slot slot;
};

constexpr std::array<PlaceholderSite, 8> kPlaceholders = {{
    {"{previous_actions}", Slot::previous},
    {"{previous actions}", Slot::previous},
    {"{intent}", Slot::intent},
    {"{task}", Slot::intent},
    {"{url}", Slot::url},
    {"{correct_answer}", Slot::hint},
    {"{hint_action}", Slot::hint},
    {"{hint_answer}", Slot::hint},
}};

const PlaceholderSite* placeholder_at(std::string_view body, std::size_t pos) {
  if (body[pos] != '{') return nullptr;
  for (const auto& site : kPlaceholders)
    if (body.substr(pos, site.token.size()) == site.token) return &site;
  return nullptr;
}

constexpr std::array<TemplateId, 6> kTemplates = {
    TemplateId::mobile_eval, TemplateId::web_eval,  TemplateId::osgenesis_mobile_cot,
    TemplateId::osgenesis_web_cot, TemplateId::vwa_cot, TemplateId::mind2web_cot,
};

}  // namespace

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::mobile_eval: return "mobile_eval";
    case TemplateId::web_eval: return "web_eval";
    case TemplateId::osgenesis_mobile_cot: return "osgenesis_mobile_cot";
    case TemplateId::osgenesis_web_cot: return "osgenesis_web_cot";
    case TemplateId::vwa_cot: return "vwa_cot";
    case TemplateId::mind2web_cot: return "mind2web_cot";
  }
  return "?";
}

TemplateId template_from_string(std::string_view s) {
  for (TemplateId id : kTemplates)
    if (to_string(id) == s) return id;
  throw Error(ErrorCode::UnknownTemplate, std::string(s));
}

std::string_view template_body(TemplateId id) {
  switch (id) {
    case TemplateId::mobile_eval: return k_mobile_eval;
    case TemplateId::web_eval: return k_web_eval;
    case TemplateId::osgenesis_mobile_cot: return k_osgenesis_mobile_cot;
    case TemplateId::osgenesis_web_cot: return k_osgenesis_web_cot;
    case TemplateId::vwa_cot: return k_vwa_cot;
    case TemplateId::mind2web_cot: return k_mind2web_cot;
  }
  throw Error(ErrorCode::UnknownTemplate, "unknown template id");
}

std::vector<std::string> template_placeholders(TemplateId id) {
  std::string_view body = template_body(id);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (const auto* site = placeholder_at(body, i)) {
      std::string tok(site->token);
      if (std::find(out.begin(), out.end(), tok) == out.end()) out.push_back(tok);
      i += site->token.size() - 1;
    }
  }
  return out;
}

TemplateId eval_template(Platform p) {
  return p == Platform::mobile ? TemplateId::mobile_eval : TemplateId::web_eval;
}

std::string render_template(TemplateId id, const PromptFields& fields) {
  std::string_view body = template_body(id);
  std::string out;
  out.reserve(body.size() + fields.intent.size() + fields.previous_actions.size() + 64);
  // Single pass so substituted text is never re-scanned for placeholders.
  for (std::size_t i = 0; i < body.size(); ++i) {
    const auto* site = placeholder_at(body, i);
    if (!site) {
      out.push_back(body[i]);
      continue;
    }
    switch (site->slot) {
      case Slot::intent: out += fields.intent; break;
      case Slot::previous: out += fields.previous_actions; break;
      case Slot::url:
        if (!fields.url)
          throw Error(ErrorCode::MissingUrl, fmt::format("template {} needs a URL", to_string(id)));
        out += *fields.url;
        break;
      case Slot::hint:
        if (!fields.hint)
          throw Error(ErrorCode::MissingHint, fmt::format("template {} needs a hint", to_string(id)));
        out += *fields.hint;
        break;
    }
    i += site->token.size() - 1;
  }
  return out;
}

nlohmann::json to_json(const Message& m) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : m.parts) {
    if (p.type == ContentPart::Type::text)
      parts.push_back({{"type", "text"}, {"text", p.text}});
    else
      parts.push_back({{"type", "image"}, {"image", p.image_ref}});
  }
  return {{"role", m.role}, {"content", std::move(parts)}};
}

Message message_from_json(const nlohmann::json& j) {
  Message m;
  m.role = j.at("role").get<std::string>();
  const auto& content = j.at("content");
  if (content.is_string()) {
    m.parts.push_back({ContentPart::Type::text, content.get<std::string>(), {}});
    return m;
  }
  for (const auto& p : content) {
    ContentPart part;
    if (p.at("type").get<std::string>() == "image") {
      part.type = ContentPart::Type::image;
      part.image_ref = p.at("image").get<std::string>();
    } else {
      part.text = p.at("text").get<std::string>();
    }
    m.parts.push_back(std::move(part));
  }
  return m;
}

std::string format_memory(const MemoryView& history) {
  if (history.empty()) return "None";
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out += "; ";
    out += fmt::format("step {}: {}", i + 1, history[i]);
  }
  return out;
}

std::vector<Message> build_planner_prompt(std::string_view goal, const MemoryView& memory,
                                          const Observation& obs, TemplateId id,
                                          std::optional<std::string> hint) {
  PromptFields fields{std::string(goal), format_memory(memory), obs.url, std::move(hint)};
  Message user{"user", {}};
  user.parts.push_back({ContentPart::Type::image, {}, obs.screenshot});
  user.parts.push_back({ContentPart::Type::text, render_template(id, fields), {}});
  return {std::move(user)};
}

// ---------------------------------------------------------------------------
// Planner output parsing
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kOpenCurly = "\xE2\x80\x9C";
constexpr std::string_view kCloseCurly = "\xE2\x80\x9D";

bool starts_at(std::string_view s, std::size_t i, std::string_view lit) {
  return s.substr(i, lit.size()) == lit;
}

// Returns one past the '}' matching the '{' at `open`, or npos.
std::size_t match_brace(std::string_view s, std::size_t open, bool lenient) {
  int depth = 0;
  enum class Q { none, dq, sq, curly } q = Q::none;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    switch (q) {
      case Q::dq:
        if (c == '\\') ++i;
        else if (c == '"') q = Q::none;
        continue;
      case Q::sq:
        if (c == '\\') ++i;
        else if (c == '\'') q = Q::none;
        continue;
      case Q::curly:
        if (starts_at(s, i, kCloseCurly)) { q = Q::none; i += kCloseCurly.size() - 1; }
        continue;
      case Q::none:
        break;
    }
    if (c == '"') q = Q::dq;
    else if (lenient && c == '\'') q = Q::sq;
    else if (lenient && starts_at(s, i, kOpenCurly)) { q = Q::curly; i += kOpenCurly.size() - 1; }
    else if (c == '{') ++depth;
    else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

std::string normalize_key(std::string_view k) {
  std::string out;
  for (char c : k)
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

struct ActionBlock {
  std::optional<std::string> element;
  std::string action;
  std::optional<std::string> value;
};

std::optional<ActionBlock> as_action_block(const nlohmann::json& j) {
  if (!j.is_object()) return std::nullopt;
  ActionBlock b;
  bool has_action = false;
  for (const auto& [key, val] : j.items()) {
    std::string k = normalize_key(key);
    auto scalar = [&]() -> std::optional<std::string> {
      if (val.is_string()) return val.get<std::string>();
      if (val.is_number_integer()) return std::to_string(val.get<long long>());
      if (val.is_number()) return fmt::format("{}", val.get<double>());
      if (val.is_boolean()) return val.get<bool>() ? "true" : "false";
      return std::nullopt;
    };
    if (k == "action") {
      auto v = scalar();
      if (!v) return std::nullopt;
      b.action = *v;
      has_action = true;
    } else if (k == "elementdescription" || k == "element") {
      b.element = scalar();
    } else if (k == "value") {
      b.value = scalar();
    }
  }
  if (!has_action) return std::nullopt;
  return b;
}

std::string strip_suffix_ci(std::string s, std::string_view suffix) {
  std::string t = text::trim(s);
  if (t.size() >= suffix.size() && text::iequals(std::string_view(t).substr(t.size() - suffix.size()), suffix))
    return text::trim(std::string_view(t).substr(0, t.size() - suffix.size()));
  return t;
}

std::string extract_thought(std::string_view before) {
  std::string t = text::trim(before);
  // Peel trailing decorations in any order until stable.
  for (bool changed = true; changed;) {
    std::string prev = t;
    for (std::string_view suffix : {"```json", "```JSON", "```", "~~~json", "~~~", "<high-level action>:",
                                    "<high-level action>", "In summary, the next action is:"}) {
      t = strip_suffix_ci(t, suffix);
    }
    changed = t != prev;
  }
  for (std::string_view prefix : {"<thought>:", "<thought>", "Thought:"}) {
    if (text::istarts_with(t, prefix)) {
      t = text::trim(std::string_view(t).substr(prefix.size()));
      break;
    }
  }
  return t;
}

}  // namespace

std::string repair_json(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 16);
  enum class Q { none, dq, sq, curly } q = Q::none;
  auto emit_ctrl = [&](char c) {
    if (c == '\n') out += "\\n";
    else if (c == '\r') out += "\\r";
    else if (c == '\t') out += "\\t";
    else out.push_back(c);
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    switch (q) {
      case Q::dq:
        if (c == '\\' && i + 1 < s.size()) {
          out.push_back(c);
          out.push_back(s[++i]);
        } else if (c == '"') {
          out.push_back('"');
          q = Q::none;
        } else {
          emit_ctrl(c);
        }
        continue;
      case Q::sq:
        if (c == '\\' && i + 1 < s.size()) {
          char n = s[++i];
          if (n == '\'') out.push_back('\'');
          else { out.push_back('\\'); out.push_back(n); }
        } else if (c == '\'') {
          out.push_back('"');
          q = Q::none;
        } else if (c == '"') {
          out += "\\\"";
        } else {
          emit_ctrl(c);
        }
        continue;
      case Q::curly:
        if (starts_at(s, i, kCloseCurly)) {
          out.push_back('"');
          i += kCloseCurly.size() - 1;
          q = Q::none;
        } else if (c == '"') {
          out += "\\\"";
        } else if (c == '\\' && i + 1 < s.size()) {
          out.push_back(c);
          out.push_back(s[++i]);
        } else {
          emit_ctrl(c);
        }
        continue;
      case Q::none:
        break;
    }
    if (c == '"') {
      q = Q::dq;
      out.push_back('"');
    } else if (c == '\'') {
      q = Q::sq;
      out.push_back('"');
    } else if (starts_at(s, i, kOpenCurly)) {
      q = Q::curly;
      out.push_back('"');
      i += kOpenCurly.size() - 1;
    } else if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && text::is_space(s[j])) ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
      out.push_back(c);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

PlannerOutput parse_planner_output(std::string_view text, const PlannerParseOptions& opts) {
  if (text::trim(text).empty()) throw Error(ErrorCode::NoActionBlock, "empty planner output");
  const bool lenient = !opts.strict;

  std::size_t best_start = std::string_view::npos, best_end = 0;
  ActionBlock best;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') continue;
    std::size_t end = match_brace(text, i, lenient);
    if (end == std::string_view::npos) continue;
    // Only a block ending later than the current best can win the last-block rule.
    if (best_start != std::string_view::npos && end <= best_end) continue;
    std::string_view cand = text.substr(i, end - i);
    nlohmann::json j = nlohmann::json::parse(lenient ? repair_json(cand) : std::string(cand), nullptr, false);
    if (j.is_discarded()) continue;
    auto block = as_action_block(j);
    if (!block) continue;
    best_start = i;
    best_end = end;
    best = std::move(*block);
  }
  if (best_start == std::string_view::npos)
    throw Error(ErrorCode::NoActionBlock, "no JSON block with an \"Action\" key");

  auto kind = kind_from_verb(best.action);
  if (!kind) {
    std::string first = text::trim(best.action);
    first = first.substr(0, first.find_first_of(" [("));
    kind = kind_from_verb(first);
  }
  if (!kind) throw Error(ErrorCode::BadActionKind, "unknown action '" + best.action + "'");

  PlannerOutput out;
  out.raw = std::string(text);
  out.thought = extract_thought(text.substr(0, best_start));
  out.action.kind = *kind;
  out.action.element_description = text::trim(best.element.value_or(""));
  if (best.value && !text::trim(*best.value).empty() && requires_value(*kind)) {
    // Typed text is kept verbatim; everything else is trimmed.
    out.action.value = *kind == ActionKind::type ? *best.value : text::trim(*best.value);
  }

  if (opts.platform) {
    validate(out.action, *opts.platform);
  } else {
    validate(out.action, is_legal(*kind, Platform::web) ? Platform::web : Platform::mobile);
  }
  return out;
}

namespace {

nlohmann::ordered_json block_json(const HighLevelAction& a) {
  nlohmann::ordered_json j;
  j["Element Description"] = a.element_description;
  j["Action"] = std::string(verb(a.kind));
  j["Value"] = a.value.value_or("");
  return j;
}

}  // namespace

std::string format_planner_reply(std::string_view thought, const HighLevelAction& action) {
  std::string out;
  std::string t = text::trim(thought);
  if (!t.empty()) out += t + "\n\n";
  out += "In summary, the next action is:\n```\n";
  out += block_json(action).dump(4);
  out += "\n```";
  return out;
}

std::string format_action_block(const HighLevelAction& action) { return block_json(action).dump(); }

}  // namespace guiharness

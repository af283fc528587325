#include "guiharness/datapipe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guiharness/error.hpp"
#include "text_util.hpp"

namespace guiharness {

using nlohmann::json;

std::string_view to_string(Modality m) { return m == Modality::language ? "language" : "vision-language"; }

Modality modality_from_string(std::string_view s) {
  if (s == "language") return Modality::language;
  if (s == "vision-language") return Modality::vision_language;
  throw Error(ErrorCode::AdapterSchemaError, fmt::format("unknown modality '{}'", s));
}

namespace {

const std::set<std::string> kTypeTags = {"Instruction", "Thought", "Answer", "Action"};

[[noreturn]] void schema_error(const std::string& what) { throw Error(ErrorCode::AdapterSchemaError, what); }

}  // namespace

void validate(const StandardSample& s, const std::optional<std::filesystem::path>& image_root) {
  if (s.id.empty()) schema_error("sample has no id");
  if (s.domain.empty()) schema_error(s.id + ": sample has no domain");
  if (s.type_tags.empty()) schema_error(s.id + ": type_tags is empty");
  for (const auto& t : s.type_tags)
    if (!kTypeTags.count(t)) schema_error(fmt::format("{}: unknown type tag '{}'", s.id, t));
  if (s.messages.empty()) schema_error(s.id + ": no messages");
  std::size_t i = 0;
  if (s.messages.front().role == "system") i = 1;
  if (i >= s.messages.size()) schema_error(s.id + ": only a system message");
  for (std::size_t k = i; k < s.messages.size(); ++k) {
    const char* want = (k - i) % 2 == 0 ? "user" : "assistant";
    if (s.messages[k].role != want)
      schema_error(fmt::format("{}: message {} has role '{}', expected '{}'", s.id, k, s.messages[k].role, want));
  }
  if (s.messages.back().role != "assistant") schema_error(s.id + ": last message is not from the assistant");
  for (const auto& m : s.messages) {
    for (const auto& p : m.parts) {
      if (p.type != ContentPart::Type::image) continue;
      if (p.image_ref.empty()) schema_error(s.id + ": empty image reference");
      if (image_root && !std::filesystem::exists(*image_root / p.image_ref))
        schema_error(fmt::format("{}: image '{}' not found", s.id, p.image_ref));
    }
  }
}

json to_json(const StandardSample& s) {
  json msgs = json::array();
  for (const auto& m : s.messages) msgs.push_back(to_json(m));
  return {{"schema_version", kSampleSchemaVersion},
          {"id", s.id},
          {"domain", s.domain},
          {"source", s.source},
          {"modality", to_string(s.modality)},
          {"messages", std::move(msgs)},
          {"type_tags", s.type_tags},
          {"thought_optional", s.thought_optional}};
}

StandardSample sample_from_json(const json& j) {
  if (!j.is_object()) schema_error("sample is not an object");
  const int v = j.value("schema_version", 0);
  if (v > kSampleSchemaVersion)
    throw Error(ErrorCode::SchemaVersionMismatch,
                fmt::format("sample schema_version {} is newer than {}", v, kSampleSchemaVersion));
  StandardSample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.domain = j.at("domain").get<std::string>();
    s.source = j.value("source", "");
    s.modality = modality_from_string(j.value("modality", "language"));
    for (const auto& m : j.at("messages")) s.messages.push_back(message_from_json(m));
    s.type_tags = j.at("type_tags").get<std::vector<std::string>>();
    s.thought_optional = j.value("thought_optional", false);
  } catch (const json::exception& e) {
    schema_error(std::string("bad sample: ") + e.what());
  }
  return s;
}

void write_samples(std::ostream& out, const std::vector<StandardSample>& samples) {
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

std::vector<StandardSample> read_samples(std::istream& in) {
  std::vector<StandardSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) schema_error(fmt::format("line {}: not JSON", out.size() + 1));
    out.push_back(sample_from_json(j));
  }
  return out;
}

StandardSample gui_sample(const CotJob& job, std::string_view thought, const HighLevelAction& action) {
  StandardSample s;
  s.id = job.id;
  s.domain = job.domain;
  s.source = job.source;
  s.modality = Modality::vision_language;
  s.messages = build_planner_prompt(job.goal, job.previous_actions, job.observation, eval_template(job.platform));
  s.messages.push_back(Message{"assistant", {{ContentPart::Type::text, format_planner_reply(thought, action), {}}}});
  const bool has_thought = !text::trim(thought).empty();
  s.type_tags = has_thought ? std::vector<std::string>{"Instruction", "Thought", "Action"}
                            : std::vector<std::string>{"Instruction", "Action"};
  s.thought_optional = !has_thought;
  return s;
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

namespace {

std::string str_field(const json& r, std::initializer_list<const char*> keys, bool required = true) {
  for (const char* k : keys) {
    auto it = r.find(k);
    if (it == r.end() || it->is_null()) continue;
    if (!it->is_string()) schema_error(fmt::format("field '{}' must be a string", k));
    return it->get<std::string>();
  }
  if (required) schema_error(fmt::format("missing field '{}'", *keys.begin()));
  return {};
}

std::vector<std::string> str_list(const json& r, const char* key) {
  std::vector<std::string> out;
  auto it = r.find(key);
  if (it == r.end() || it->is_null()) return out;
  if (!it->is_array()) schema_error(fmt::format("field '{}' must be an array of strings", key));
  for (const auto& v : *it) {
    if (!v.is_string()) schema_error(fmt::format("field '{}' must be an array of strings", key));
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::optional<Coordinate> coord_field(const json& r, const char* key) {
  auto it = r.find(key);
  if (it == r.end() || it->is_null()) return std::nullopt;
  Coordinate c;
  try {
    c = coordinate_from_json(*it);
  } catch (const std::exception& e) {
    schema_error(fmt::format("field '{}': {}", key, e.what()));
  }
  if (!in_unit_square(c)) schema_error(fmt::format("field '{}' outside [0,1]", key));
  return c;
}

HighLevelAction make_action(const std::string& kind_text, std::string element, std::optional<std::string> value,
                            Platform platform) {
  auto kind = kind_from_verb(kind_text);
  if (!kind) schema_error(fmt::format("unknown action type '{}'", kind_text));
  HighLevelAction a;
  a.kind = *kind;
  a.element_description = text::trim(element);
  if (requires_value(a.kind)) {
    a.value = value;
  } else {
    a.value.reset();
  }
  validate(a, platform);
  return a;
}

struct Converted {
  StandardSample sample;
  std::optional<CotJob> job;
};

Converted finish_gui(CotJob job, const std::string& thought) {
  Converted c;
  c.sample = gui_sample(job, thought, job.hint.action);
  c.job = std::move(job);
  return c;
}

Converted os_genesis(const json& r, std::size_t index, Platform platform) {
  CotJob job;
  job.platform = platform;
  job.domain = platform == Platform::web ? "Web" : "Mobile";
  job.source = platform == Platform::web ? "OS-Genesis (Web)" : "OS-Genesis (Mobile)";
  job.cot_template = platform == Platform::web ? TemplateId::osgenesis_web_cot : TemplateId::osgenesis_mobile_cot;
  job.id = str_field(r, {"id"}, false);
  if (job.id.empty()) job.id = fmt::format("os-genesis-{}-{}", to_string(platform), index);
  job.goal = str_field(r, {"instruction", "task"});
  job.previous_actions = str_list(r, "previous_actions");
  job.observation.screenshot = str_field(r, {"screenshot", "image"});
  job.observation.step_index = static_cast<int>(job.previous_actions.size());
  if (platform == Platform::web) job.observation.url = str_field(r, {"url"});
  std::optional<std::string> value;
  if (auto v = str_field(r, {"value"}, false); !v.empty()) value = v;
  job.hint.action = make_action(str_field(r, {"action_type"}), str_field(r, {"element"}, false), value, platform);
  job.hint.coord = coord_field(r, "coordinate");
  return finish_gui(std::move(job), str_field(r, {"thought"}, false));
}

Converted mm_mind2web(const json& r, std::size_t index) {
  CotJob job;
  job.platform = Platform::web;
  job.domain = "Web";
  job.source = "MM-Mind2Web";
  job.cot_template = TemplateId::mind2web_cot;
  const std::string ann = str_field(r, {"annotation_id"}, false);
  const std::string uid = str_field(r, {"action_uid"}, false);
  job.id = ann.empty() ? fmt::format("mind2web-{}", index) : (uid.empty() ? ann : ann + ":" + uid);
  job.goal = str_field(r, {"confirmed_task"});
  job.previous_actions = str_list(r, "previous_actions");
  job.observation.screenshot = str_field(r, {"screenshot"});
  job.observation.step_index = static_cast<int>(job.previous_actions.size());
  job.observation.url = str_field(r, {"url", "website"});
  if (!r.contains("operation") || !r["operation"].is_object()) schema_error("missing field 'operation'");
  const json& op = r["operation"];
  const std::string opname = text::to_lower(str_field(op, {"op"}));
  std::string opvalue = str_field(op, {"value"}, false);
  if (!r.contains("target") || !r["target"].is_object()) schema_error("missing field 'target'");
  const json& target = r["target"];
  const std::string desc = str_field(target, {"description"});
  std::string kind;
  std::optional<std::string> value;
  if (opname == "click") {
    kind = "click";
  } else if (opname == "type" || opname == "select") {
    // Choosing an option is modelled as typing it into the control.
    kind = "type";
    value = opvalue;
  } else if (opname == "hover") {
    kind = "hover";
  } else if (opname == "enter") {
    kind = "press";
    value = "Enter";
  } else {
    schema_error(fmt::format("unknown operation '{}'", opname));
  }
  job.hint.action = make_action(kind, desc, value, Platform::web);
  if (target.contains("bbox") && !target["bbox"].is_null()) {
    const json& b = target["bbox"];
    if (!b.is_array() || b.size() != 4) schema_error("target.bbox must be [x0, y0, x1, y1]");
    Coordinate c{(b[0].get<double>() + b[2].get<double>()) / 2, (b[1].get<double>() + b[3].get<double>()) / 2};
    if (!in_unit_square(c)) schema_error("target.bbox outside [0,1]");
    job.hint.coord = c;
  }
  return finish_gui(std::move(job), str_field(r, {"thought"}, false));
}

Converted aguvis(const json& r, std::size_t index) {
  CotJob job;
  job.platform = platform_from_string(r.value("platform", "mobile"));
  job.domain = job.platform == Platform::web ? "Web" : "Mobile";
  job.source = "Aguvis";
  job.cot_template =
      job.platform == Platform::web ? TemplateId::osgenesis_web_cot : TemplateId::osgenesis_mobile_cot;
  job.id = str_field(r, {"id"}, false);
  if (job.id.empty()) job.id = fmt::format("aguvis-{}", index);
  job.goal = str_field(r, {"instruction"});
  job.previous_actions = str_list(r, "previous_actions");
  job.observation.screenshot = str_field(r, {"image"});
  job.observation.step_index = static_cast<int>(job.previous_actions.size());
  if (job.platform == Platform::web) job.observation.url = str_field(r, {"url"});
  job.hint = parse_aguvis_call(str_field(r, {"action"}), job.platform, str_field(r, {"element"}, false));
  return finish_gui(std::move(job), str_field(r, {"thought"}, false));
}

std::string strip_image_tokens(std::string s) {
  text::replace_all(s, "<image>\n", "");
  text::replace_all(s, "<image>", "");
  return text::trim(s);
}

Converted instruction(const json& r, std::size_t index, const IngestOptions& opts) {
  if (opts.domain.empty() || opts.source.empty())
    schema_error("the instruction adapter needs --domain and --source");
  StandardSample s;
  s.domain = opts.domain;
  s.source = opts.source;
  s.id = str_field(r, {"id"}, false);
  if (s.id.empty()) s.id = fmt::format("{}-{}", opts.source, index);

  std::vector<std::string> images = str_list(r, "images");
  if (auto one = str_field(r, {"image"}, false); !one.empty()) images.insert(images.begin(), one);

  bool has_thought = false;
  if (r.contains("conversations")) {
    const json& conv = r["conversations"];
    if (!conv.is_array() || conv.empty()) schema_error("'conversations' must be a non-empty array");
    for (const auto& turn : conv) {
      std::string from = text::to_lower(str_field(turn, {"from", "role"}));
      std::string role;
      if (from == "human" || from == "user") role = "user";
      else if (from == "gpt" || from == "assistant") role = "assistant";
      else if (from == "system") role = "system";
      else schema_error(fmt::format("unknown speaker '{}'", from));
      s.messages.push_back(Message{role, {{ContentPart::Type::text, strip_image_tokens(str_field(turn, {"value", "content"})), {}}}});
    }
  } else {
    std::string prompt = str_field(r, {"instruction", "question", "query"});
    if (auto input = str_field(r, {"input"}, false); !text::trim(input).empty()) prompt += "\n\n" + input;
    std::string answer = str_field(r, {"output", "answer", "response"});
    std::string thought = str_field(r, {"thought", "rationale"}, false);
    if (auto sys = str_field(r, {"system"}, false); !sys.empty())
      s.messages.push_back(Message{"system", {{ContentPart::Type::text, sys, {}}}});
    s.messages.push_back(Message{"user", {{ContentPart::Type::text, strip_image_tokens(prompt), {}}}});
    has_thought = !text::trim(thought).empty();
    std::string reply = has_thought ? text::trim(thought) + "\n\n" + text::trim(answer) : text::trim(answer);
    s.messages.push_back(Message{"assistant", {{ContentPart::Type::text, reply, {}}}});
  }
  if (!images.empty()) {
    auto first_user = std::find_if(s.messages.begin(), s.messages.end(), [](const Message& m) { return m.role == "user"; });
    if (first_user == s.messages.end()) schema_error("no user turn to attach images to");
    std::vector<ContentPart> parts;
    for (const auto& img : images) parts.push_back({ContentPart::Type::image, {}, img});
    first_user->parts.insert(first_user->parts.begin(), parts.begin(), parts.end());
  }
  s.modality = opts.modality.value_or(images.empty() ? Modality::language : Modality::vision_language);
  if (r.contains("conversations")) {
    has_thought = r.value("has_thought", true);
  }
  s.type_tags = has_thought ? std::vector<std::string>{"Instruction", "Thought", "Answer"}
                            : std::vector<std::string>{"Instruction", "Answer"};
  s.thought_optional = !has_thought;
  return Converted{std::move(s), std::nullopt};
}

/// Trajectory JSONL written by the annotator: every executed step becomes a sample.
void vwa_annotations(const std::vector<json>& records, IngestResult& out, const IngestOptions& opts) {
  std::size_t header_index = 0;
  std::optional<Trajectory> cur;
  std::vector<std::size_t> step_lines;
  auto flush = [&] {
    if (!cur) return;
    MemoryView memory;
    for (std::size_t k = 0; k < cur->steps.size(); ++k) {
      const Step& st = cur->steps[k];
      if (!st.ok() || !st.high_level) continue;
      CotJob job;
      job.id = fmt::format("{}:{}", cur->task_id, st.index);
      job.domain = cur->platform == Platform::web ? "Web" : "Mobile";
      job.source = "VisualWebArena";
      job.platform = cur->platform;
      job.goal = cur->goal;
      job.previous_actions = memory;
      job.observation = st.observation;
      job.hint.action = *st.high_level;
      if (st.grounded) job.hint.coord = st.grounded->coord;
      job.cot_template = TemplateId::vwa_cot;
      try {
        Converted c = finish_gui(std::move(job), st.thought);
        out.samples.push_back(std::move(c.sample));
        out.cot_jobs.push_back(std::move(*c.job));
      } catch (const Error& e) {
        const std::size_t idx = k < step_lines.size() ? step_lines[k] : header_index;
        if (opts.strict) schema_error(fmt::format("record {}: {}", idx, e.what()));
        out.rejects.push_back({idx, e.what()});
      }
      memory.push_back(summarize(*st.high_level));
    }
    cur.reset();
    step_lines.clear();
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      std::istringstream line(records[i].dump());
      const std::string record = records[i].value("record", "");
      if (record == "trajectory") {
        flush();
        auto ts = read_trajectories(line);
        cur = std::move(ts.front());
        header_index = i;
      } else if (record == "step") {
        if (!cur) schema_error("step record before any trajectory header");
        cur->steps.push_back(step_from_json(records[i]));
        step_lines.push_back(i);
      } else {
        schema_error("expected a trajectory or step record");
      }
    } catch (const std::exception& e) {
      if (opts.strict) schema_error(fmt::format("record {}: {}", i, e.what()));
      out.rejects.push_back({i, e.what()});
    }
  }
  flush();
}

}  // namespace

std::vector<std::string> adapter_ids() {
  return {"os_genesis_web", "os_genesis_mobile", "mm_mind2web", "vwa_annotations", "aguvis", "instruction",
          "standard"};
}

IngestResult ingest_records(const std::vector<json>& records, const std::string& adapter_id,
                            const IngestOptions& opts) {
  const auto ids = adapter_ids();
  if (std::find(ids.begin(), ids.end(), adapter_id) == ids.end())
    throw Error(ErrorCode::UnknownAdapter, "unknown adapter '" + adapter_id + "'");
  IngestResult out;
  if (adapter_id == "vwa_annotations") {
    vwa_annotations(records, out, opts);
    return out;
  }
  if (adapter_id == "instruction" && (opts.domain.empty() || opts.source.empty()))
    schema_error("the instruction adapter needs a domain and a source label");
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      const json& r = records[i];
      if (!r.is_object()) schema_error("record is not an object");
      Converted c;
      if (adapter_id == "os_genesis_web") c = os_genesis(r, i, Platform::web);
      else if (adapter_id == "os_genesis_mobile") c = os_genesis(r, i, Platform::mobile);
      else if (adapter_id == "mm_mind2web") c = mm_mind2web(r, i);
      else if (adapter_id == "aguvis") c = aguvis(r, i);
      else if (adapter_id == "instruction") c = instruction(r, i, opts);
      else c.sample = sample_from_json(r);
      validate(c.sample);
      out.samples.push_back(std::move(c.sample));
      if (c.job) out.cot_jobs.push_back(std::move(*c.job));
    } catch (const std::exception& e) {
      if (opts.strict) schema_error(fmt::format("record {}: {}", i, e.what()));
      out.rejects.push_back({i, e.what()});
    }
  }
  return out;
}

IngestResult ingest(const std::filesystem::path& source_file, const std::string& adapter_id,
                    const IngestOptions& opts) {
  std::ifstream in(source_file);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + source_file.string());
  std::vector<json> records;
  std::string first;
  // A JSON array file or JSON lines.
  char c = 0;
  while (in.get(c) && text::is_space(c)) {
  }
  if (!in) return ingest_records(records, adapter_id, opts);
  in.unget();
  if (c == '[') {
    json arr = json::parse(in, nullptr, false);
    if (arr.is_discarded() || !arr.is_array())
      throw Error(ErrorCode::AdapterSchemaError, source_file.string() + ": not a JSON array");
    for (auto& r : arr) records.push_back(std::move(r));
  } else {
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      json r = json::parse(line, nullptr, false);
      // Unparseable lines still occupy a record index so rejects line up.
      records.push_back(r.is_discarded() ? json(line) : std::move(r));
    }
  }
  return ingest_records(records, adapter_id, opts);
}

// ---------------------------------------------------------------------------
// Aguvis call strings
// ---------------------------------------------------------------------------

namespace {

struct Call {
  std::string name;
  std::vector<std::string> positional;
  std::map<std::string, std::string> kwargs;
};

Call parse_call(std::string_view s) {
  Call c;
  std::string t = text::trim(s);
  auto open = t.find('(');
  if (open == std::string::npos || t.back() != ')') schema_error("expected name(args): " + t);
  c.name = text::to_lower(text::trim(std::string_view(t).substr(0, open)));
  std::string_view args = std::string_view(t).substr(open + 1, t.size() - open - 2);
  // Split on top-level commas, honoring quotes and brackets.
  std::vector<std::string> parts;
  std::string cur;
  int depth = 0;
  char quote = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    char ch = args[i];
    if (quote) {
      if (ch == '\\' && i + 1 < args.size()) {
        cur += ch;
        cur += args[++i];
        continue;
      }
      if (ch == quote) quote = 0;
      cur += ch;
      continue;
    }
    if (ch == '\'' || ch == '"') quote = ch;
    else if (ch == '[' || ch == '(') ++depth;
    else if (ch == ']' || ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      parts.push_back(text::trim(cur));
      cur.clear();
      continue;
    }
    cur += ch;
  }
  if (!text::trim(cur).empty()) parts.push_back(text::trim(cur));
  for (auto& p : parts) {
    auto eq = p.find('=');
    bool is_kw = eq != std::string::npos && p.find_first_of("'\"[") > eq;
    if (is_kw) c.kwargs[text::trim(std::string_view(p).substr(0, eq))] = text::trim(std::string_view(p).substr(eq + 1));
    else c.positional.push_back(p);
  }
  return c;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && (v.front() == '\'' || v.front() == '"') && v.back() == v.front()) {
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        char n = v[++i];
        out += n == 'n' ? '\n' : n;
      } else {
        out += v[i];
      }
    }
    return out;
  }
  return v;
}

double number(const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    schema_error("expected a number, got '" + v + "'");
  }
}

const std::string* arg(const Call& c, const char* key, std::size_t pos) {
  if (auto it = c.kwargs.find(key); it != c.kwargs.end()) return &it->second;
  if (pos < c.positional.size()) return &c.positional[pos];
  return nullptr;
}

Coordinate pair(const std::string& v) {
  std::string t = text::trim(v);
  if (t.size() < 2 || !((t.front() == '[' && t.back() == ']') || (t.front() == '(' && t.back() == ')')))
    schema_error("expected [x, y], got '" + v + "'");
  auto comma = t.find(',');
  if (comma == std::string::npos) schema_error("expected [x, y], got '" + v + "'");
  return {number(text::trim(t.substr(1, comma - 1))), number(text::trim(t.substr(comma + 1, t.size() - comma - 2)))};
}

}  // namespace

HintAction parse_aguvis_call(std::string_view call, Platform platform, const std::string& element) {
  Call c = parse_call(call);
  std::string name = c.name;
  if (auto dot = name.rfind('.'); dot != std::string::npos) name = name.substr(dot + 1);

  HintAction h;
  auto xy = [&]() -> Coordinate {
    const std::string* x = arg(c, "x", 0);
    const std::string* y = arg(c, "y", 1);
    if (!x || !y) schema_error(c.name + " needs x and y");
    Coordinate p{number(*x), number(*y)};
    if (!in_unit_square(p)) schema_error(fmt::format("{}: coordinate ({}, {}) outside [0,1]", c.name, p.x, p.y));
    return p;
  };
  auto describe = [&](const Coordinate& p) {
    return element.empty() ? fmt::format("element at ({}, {})", format_coordinate_axis(p.x), format_coordinate_axis(p.y))
                           : element;
  };
  std::string kind;
  std::optional<std::string> value;
  std::string desc = element;

  if (name == "click" || name == "doubleclick" || name == "rightclick" || name == "tap") {
    kind = "click";
    h.coord = xy();
    desc = describe(*h.coord);
  } else if (name == "long_press") {
    kind = "long_press";
    h.coord = xy();
    desc = describe(*h.coord);
  } else if (name == "moveto" && platform == Platform::web) {
    kind = "hover";
    h.coord = xy();
    desc = describe(*h.coord);
  } else if (name == "write" || name == "typewrite" || name == "type") {
    kind = "type";
    const std::string* m = arg(c, "message", 0);
    if (!m) m = arg(c, "text", 0);
    if (!m) schema_error(c.name + " needs message");
    value = unquote(*m);
    if (desc.empty()) desc = "the focused input field";
  } else if (name == "scroll") {
    kind = "scroll";
    const std::string* amt = arg(c, "page", 0);
    if (!amt) amt = arg(c, "clicks", 0);
    if (!amt) schema_error("scroll needs an amount");
    value = number(*amt) < 0 ? "down" : "up";
  } else if (name == "swipe") {
    kind = "scroll";
    const std::string* from = arg(c, "from_coord", 0);
    const std::string* to = arg(c, "to_coord", 1);
    if (!from || !to) schema_error("swipe needs from_coord and to_coord");
    Coordinate a = pair(*from), b = pair(*to);
    double dx = b.x - a.x, dy = b.y - a.y;
    // The finger moves opposite to the content.
    if (std::abs(dy) >= std::abs(dx)) value = dy < 0 ? "down" : "up";
    else value = dx < 0 ? "right" : "left";
  } else if (name == "press" || name == "hotkey" || name == "key") {
    const std::string* k = arg(c, "keys", 0);
    if (!k) k = arg(c, "key", 0);
    if (!k) schema_error(c.name + " needs a key");
    std::string key = unquote(*k);
    if (platform == Platform::mobile) {
      if (!text::iequals(key, "enter")) schema_error("mobile supports only the enter key, got '" + key + "'");
      kind = "enter";
    } else {
      kind = "press";
      value = text::iequals(key, "enter") ? "Enter" : key;
    }
  } else if (name == "home") {
    kind = "go_home";
  } else if (name == "back") {
    kind = "go_back";
  } else if (name == "open_app") {
    kind = "open_app";
    const std::string* a = arg(c, "app_name", 0);
    if (!a) schema_error("open_app needs app_name");
    value = unquote(*a);
  } else if (name == "wait") {
    kind = "wait";
    const std::string* s = arg(c, "seconds", 0);
    value = s ? fmt::format("{}", number(unquote(*s))) : std::string("5");
  } else if (name == "terminate") {
    kind = "stop";
    const std::string* s = arg(c, "status", 0);
    std::string st = s ? text::to_lower(unquote(*s)) : "success";
    value = st == "success" ? "completed" : "infeasible";
  } else if (name == "answer") {
    kind = "stop";
    const std::string* s = arg(c, "text", 0);
    if (!s) schema_error("answer needs text");
    value = unquote(*s);
  } else {
    schema_error("unknown call '" + c.name + "'");
  }
  h.action = make_action(kind, desc, value, platform);
  return h;
}

// ---------------------------------------------------------------------------
// Equivalence
// ---------------------------------------------------------------------------

namespace {

bool values_equivalent(ActionKind k, const std::optional<std::string>& a, const std::optional<std::string>& b) {
  if (!requires_value(k)) return true;
  const std::string va = a.value_or(""), vb = b.value_or("");
  switch (k) {
    case ActionKind::type: return text::trim(va) == text::trim(vb);
    case ActionKind::scroll: return text::to_lower(text::trim(va)) == text::to_lower(text::trim(vb));
    case ActionKind::stop: {
      StopStatus sa = stop_status(va), sb = stop_status(vb);
      if (sa != sb) return false;
      return sa != StopStatus::answer || text::fold(va) == text::fold(vb);
    }
    case ActionKind::wait: {
      auto x = parse_wait_seconds(va), y = parse_wait_seconds(vb);
      return x && y ? *x == *y : text::fold(va) == text::fold(vb);
    }
    default: return text::fold(va) == text::fold(vb);
  }
}

}  // namespace

bool actions_equivalent(const HintAction& a, const HintAction& b, double tol) {
  const ActionKind k = a.action.kind;
  if (k != b.action.kind) return false;
  bool target_ok;
  if (is_targetless(k)) {
    target_ok = true;
  } else if (a.coord && b.coord) {
    target_ok = distance(*a.coord, *b.coord) <= tol;
  } else {
    const std::string da = text::fold(a.action.element_description);
    target_ok = !da.empty() && da == text::fold(b.action.element_description);
  }
  return target_ok && values_equivalent(k, a.action.value, b.action.value);
}

// ---------------------------------------------------------------------------
// CoT augmentation
// ---------------------------------------------------------------------------

const std::vector<std::string>& hint_leak_phrases() {
  static const std::vector<std::string> phrases = {"Correct Action Hint", "hint answer"};
  return phrases;
}

CotOutcome augment_cot(const CotJob& job, PlannerClient& generator, GrounderClient* grounder,
                       const CotAugmentConfig& cfg) {
  if (cfg.attempts < 1) throw Error(ErrorCode::InvalidSpec, "attempts must be at least 1");
  CotOutcome out;
  Discarded d;
  d.id = job.id;
  const auto messages = build_planner_prompt(job.goal, job.previous_actions, job.observation, job.cot_template,
                                             format_action_block(job.hint.action));
  for (int attempt = 1; attempt <= cfg.attempts; ++attempt) {
    std::string raw = generator.complete(messages, cfg.decoding);
    ++out.calls;
    d.attempts.push_back(raw);
    PlannerOutput parsed;
    try {
      parsed = parse_planner_output(raw, {job.platform, false});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EndpointUnavailable) throw;
      d.reasons.push_back(fmt::format("{}: {}", to_string(e.code()), e.what()));
      continue;
    }
    bool leaked = false;
    for (const auto& phrase : hint_leak_phrases()) leaked = leaked || text::contains_ci(parsed.thought, phrase);
    if (leaked) {
      d.reasons.push_back("thought mentions the hint");
      continue;
    }
    HintAction cand{parsed.action, std::nullopt};
    if (job.hint.coord && grounder && requires_coordinate(parsed.action.kind)) {
      try {
        cand.coord = call_grounder(*grounder, {parsed.action.element_description, job.observation.screenshot,
                                               job.platform})
                         .coord;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::EndpointUnavailable) throw;
        d.reasons.push_back(fmt::format("grounding failed: {}", e.what()));
        continue;
      }
    }
    HintAction hint = job.hint;
    if (!cand.coord) hint.coord.reset();
    if (!actions_equivalent(cand, hint, cfg.tolerance)) {
      d.reasons.push_back(fmt::format("action '{}' does not match the hint", summarize(parsed.action)));
      continue;
    }
    out.sample = gui_sample(job, parsed.thought, parsed.action);
    return out;
  }
  out.discarded = std::move(d);
  return out;
}

std::vector<CotOutcome> augment_batch(const std::vector<CotJob>& jobs, PlannerClient& generator,
                                      GrounderClient* grounder, const CotAugmentConfig& cfg, int threads) {
  std::vector<CotOutcome> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        out[i] = augment_cot(jobs[i], generator, grounder, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

json to_json(const Discarded& d) { return {{"id", d.id}, {"attempts", d.attempts}, {"reasons", d.reasons}}; }

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

ReplayResult replay_verify(const Trajectory& t, Environment& env) {
  ReplayResult r;
  env.reset();
  std::optional<std::string> answer;
  bool stopped = false;
  for (const auto& st : t.steps) {
    if (!st.ok() || !st.grounded) continue;
    if (st.grounded->kind == ActionKind::stop) {
      answer = st.grounded->value;
      stopped = true;
    } else {
      try {
        env.apply(*st.grounded);
      } catch (const Error&) {
        if (!r.diverged_at) r.diverged_at = st.index;
        break;
      }
    }
    if (!r.diverged_at && !st.post_state_digest.empty() && st.post_state_digest != env.state_digest())
      r.diverged_at = st.index;
    if (stopped) break;
  }
  r.final_subgoals = env.subgoals(answer);
  r.pass = !r.diverged_at && !r.final_subgoals.empty() &&
           std::all_of(r.final_subgoals.begin(), r.final_subgoals.end(), [](bool b) { return b; });
  return r;
}

}  // namespace guiharness

#include "guiharness/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guiharness/error.hpp"
#include "text_util.hpp"

namespace guiharness {

using nlohmann::json;

double task_progress(const std::vector<std::vector<bool>>& history) {
  if (history.empty() || history.front().empty())
    throw Error(ErrorCode::EmptyHistory, "subgoal history is empty");
  const std::size_t k = history.front().size();
  std::size_t best = 0;
  for (const auto& v : history) {
    if (v.size() != k) throw Error(ErrorCode::InvalidSpec, "subgoal vectors differ in length");
    best = std::max<std::size_t>(best, static_cast<std::size_t>(std::count(v.begin(), v.end(), true)));
  }
  return static_cast<double>(best) / static_cast<double>(k);
}

TaskResult score(const Trajectory& t) {
  TaskResult r;
  r.task_id = t.task_id;
  r.success = t.success();
  r.progress = task_progress(t.subgoal_history());
  r.steps_used = static_cast<int>(t.steps.size());
  r.terminal_status = t.status;
  return r;
}

BenchmarkReport aggregate(const std::string& benchmark, Platform platform, std::vector<TaskResult> results,
                          std::string config_digest) {
  BenchmarkReport rep;
  rep.benchmark = benchmark;
  rep.platform = platform;
  rep.config_digest = std::move(config_digest);
  if (!results.empty()) {
    double successes = 0, progress = 0;
    for (const auto& r : results) {
      successes += r.success ? 1 : 0;
      progress += r.progress;
    }
    const double n = static_cast<double>(results.size());
    rep.sr = 100.0 * successes / n;
    rep.pr = 100.0 * progress / n;
  }
  rep.results = std::move(results);
  return rep;
}

std::string format_percent(double v) { return fmt::format("{:.1f}", v); }

std::vector<BaselineRow> baselines_from_json(const json& j) {
  std::vector<BaselineRow> rows;
  auto cell = [](const json& r, const char* key) -> std::optional<double> {
    if (r.contains(key) && r[key].is_number()) return r[key].get<double>();
    return std::nullopt;
  };
  for (const auto& r : j.at("rows")) {
    BaselineRow b;
    b.domain = r.at("domain").get<std::string>();
    b.observation = r.value("observation", "");
    b.group = r.value("group", "");
    b.webarena_pr = cell(r, "webarena_pr");
    b.webarena_sr = cell(r, "webarena_sr");
    b.androidworld_sr = cell(r, "androidworld_sr");
    rows.push_back(std::move(b));
  }
  return rows;
}

std::vector<BaselineRow> load_baselines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + file.string());
  return baselines_from_json(json::parse(in));
}

BaselineRow summary_row(const std::string& domain, const std::vector<BenchmarkReport>& reports,
                        const std::string& observation) {
  BaselineRow row;
  row.domain = domain;
  row.observation = observation;
  for (const auto& r : reports) {
    if (r.platform == Platform::web) {
      row.webarena_pr = r.pr;
      row.webarena_sr = r.sr;
    } else {
      row.androidworld_sr = r.sr;
    }
  }
  return row;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_percent(*v) : "-"; }

std::string escape_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out;
}

std::vector<std::string> split_row(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  std::string_view body = line;
  while (!body.empty() && text::is_space(body.front())) body.remove_prefix(1);
  if (!body.empty() && body.front() == '|') body.remove_prefix(1);
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] == '\\' && i + 1 < body.size() && body[i + 1] == '|') {
      cur += '|';
      ++i;
    } else if (body[i] == '|') {
      cells.push_back(text::trim(cur));
      cur.clear();
    } else {
      cur += body[i];
    }
  }
  if (!text::trim(cur).empty()) cells.push_back(text::trim(cur));
  return cells;
}

std::optional<double> parse_cell(const std::string& s) {
  if (s.empty() || s == "-" || s == "--") return std::nullopt;
  try {
    return std::stod(s);
  } catch (...) {
    throw Error(ErrorCode::MalformedValue, "bad table cell '" + s + "'");
  }
}

constexpr std::string_view kComparisonHeader = "| Domain | Observation | WebArena PR | WebArena SR | AndroidWorld SR |";

}  // namespace

std::string render_report(const std::string& run_label, const std::vector<BenchmarkReport>& reports,
                          const std::vector<BaselineRow>& baselines) {
  std::ostringstream out;
  out << "## Results\n\n" << kComparisonHeader << "\n|---|---|---|---|---|\n";
  auto emit = [&](const BaselineRow& r) {
    out << "| " << escape_cell(r.domain) << " | " << escape_cell(r.observation) << " | " << cell(r.webarena_pr)
        << " | " << cell(r.webarena_sr) << " | " << cell(r.androidworld_sr) << " |\n";
  };
  emit(summary_row(run_label, reports));
  for (const auto& b : baselines) emit(b);
  if (!baselines.empty()) out << "\nRows after the first are reference numbers for comparison only.\n";

  for (const auto& r : reports) {
    out << "\n### " << escape_cell(r.benchmark) << " (" << to_string(r.platform) << ")\n\n";
    out << "Tasks: " << r.results.size() << ", SR " << format_percent(r.sr) << ", PR " << format_percent(r.pr);
    if (!r.config_digest.empty()) out << ", config " << r.config_digest;
    out << "\n\n| Task | Success | Progress | Steps | Status |\n|---|---|---|---|---|\n";
    for (const auto& t : r.results)
      out << "| " << escape_cell(t.task_id) << " | " << (t.success ? "yes" : "no") << " | "
          << format_percent(100.0 * t.progress) << " | " << t.steps_used << " | " << to_string(t.terminal_status)
          << " |\n";
  }
  return out.str();
}

std::vector<BaselineRow> parse_comparison_table(std::string_view markdown) {
  std::vector<BaselineRow> rows;
  std::istringstream in{std::string(markdown)};
  std::string line;
  bool in_table = false;
  while (std::getline(in, line)) {
    const std::string t = text::trim(line);
    if (!in_table) {
      if (t == kComparisonHeader) {
        in_table = true;
        std::getline(in, line);  // separator
      }
      continue;
    }
    if (t.empty() || t.front() != '|') break;
    auto cells = split_row(t);
    if (cells.size() != 5) throw Error(ErrorCode::MalformedValue, "comparison row needs 5 cells: " + t);
    BaselineRow r;
    r.domain = cells[0];
    r.observation = cells[1];
    r.webarena_pr = parse_cell(cells[2]);
    r.webarena_sr = parse_cell(cells[3]);
    r.androidworld_sr = parse_cell(cells[4]);
    rows.push_back(std::move(r));
  }
  if (!in_table) throw Error(ErrorCode::MalformedValue, "no comparison table found");
  return rows;
}

json to_json(const BenchmarkReport& r) {
  json tasks = json::array();
  for (const auto& t : r.results)
    tasks.push_back({{"task_id", t.task_id},
                     {"success", t.success},
                     {"progress", t.progress},
                     {"steps_used", t.steps_used},
                     {"terminal_status", to_string(t.terminal_status)}});
  return {{"benchmark", r.benchmark},
          {"platform", to_string(r.platform)},
          {"tasks", r.results.size()},
          {"sr", r.sr},
          {"pr", r.pr},
          {"config_digest", r.config_digest},
          {"results", std::move(tasks)}};
}

BenchmarkReport benchmark_report_from_json(const json& j) {
  BenchmarkReport r;
  r.benchmark = j.at("benchmark").get<std::string>();
  r.platform = platform_from_string(j.value("platform", "web"));
  r.sr = j.value("sr", 0.0);
  r.pr = j.value("pr", 0.0);
  r.config_digest = j.value("config_digest", "");
  for (const auto& t : j.value("results", json::array())) {
    TaskResult tr;
    tr.task_id = t.at("task_id").get<std::string>();
    tr.success = t.value("success", false);
    tr.progress = t.value("progress", 0.0);
    tr.steps_used = t.value("steps_used", 0);
    tr.terminal_status = terminal_status_from_string(t.value("terminal_status", "completed"));
    r.results.push_back(std::move(tr));
  }
  return r;
}

}  // namespace guiharness

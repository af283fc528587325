#pragma once

// Subgoal progress, Success Rate / Progress Rate aggregation and report tables.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/actions.hpp"
#include "guiharness/episode.hpp"

namespace guiharness {

/// Running maximum of count(true)/k over the history. Throws Error(EmptyHistory)
/// for an empty history or zero-length vectors, Error(InvalidSpec) for ragged ones.
double task_progress(const std::vector<std::vector<bool>>& history);

struct TaskResult {
  std::string task_id;
  bool success = false;
  double progress = 0.0;
  int steps_used = 0;
  TerminalStatus terminal_status = TerminalStatus::completed;
};

TaskResult score(const Trajectory& t);

struct BenchmarkReport {
  std::string benchmark;
  Platform platform = Platform::web;
  std::vector<TaskResult> results;
  double sr = 0.0;  // percent, unrounded
  double pr = 0.0;  // percent, unrounded
  std::string config_digest;
};

/// SR = 100 * successes / n, PR = 100 * mean(progress).
BenchmarkReport aggregate(const std::string& benchmark, Platform platform, std::vector<TaskResult> results,
                          std::string config_digest = {});

/// One decimal, the way tables display percentages.
std::string format_percent(double v);

/// A row of the comparison table. Missing cells are printed as "-".
struct BaselineRow {
  std::string domain;
  std::string observation;
  std::optional<double> webarena_pr;
  std::optional<double> webarena_sr;
  std::optional<double> androidworld_sr;
  std::string group;  // section the row belongs to, e.g. "Public Baselines"

  friend bool operator==(const BaselineRow&, const BaselineRow&) = default;
};

std::vector<BaselineRow> baselines_from_json(const nlohmann::json& j);
std::vector<BaselineRow> load_baselines(const std::filesystem::path& file);

/// The comparison row for a run: web reports fill the WebArena cells, mobile
/// reports the AndroidWorld cell.
BaselineRow summary_row(const std::string& domain, const std::vector<BenchmarkReport>& reports,
                        const std::string& observation = "Image");

/// Markdown with a comparison table (Domain | Observation | WebArena PR |
/// WebArena SR | AndroidWorld SR), then one per-task table per benchmark.
std::string render_report(const std::string& run_label, const std::vector<BenchmarkReport>& reports,
                          const std::vector<BaselineRow>& baselines = {});

/// Reads the comparison table back out of render_report's output.
std::vector<BaselineRow> parse_comparison_table(std::string_view markdown);

nlohmann::json to_json(const BenchmarkReport& r);
BenchmarkReport benchmark_report_from_json(const nlohmann::json& j);

}  // namespace guiharness

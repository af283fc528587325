#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "guiharness/metrics.hpp"
#include "support.hpp"

using namespace guiharness;

namespace {

Trajectory with_history(std::vector<std::vector<bool>> h) {
  Trajectory t;
  t.initial_subgoals = h.front();
  for (std::size_t i = 1; i < h.size(); ++i) {
    Step s;
    s.index = static_cast<int>(i - 1);
    s.subgoals = h[i];
    t.steps.push_back(s);
  }
  t.status = TerminalStatus::completed;
  return t;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("progress equals the brute force prefix maximum") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    std::size_t k = 1 + rng() % 6, len = 1 + rng() % 12;
    std::vector<std::vector<bool>> h(len, std::vector<bool>(k));
    for (auto& v : h)
      for (std::size_t j = 0; j < k; ++j) v[j] = rng() % 3 == 0;
    CHECK(task_progress(h) == testsupport::brute_progress(h));
  }
}

TEST_CASE("progress is a running maximum, not the final value") {
  CHECK(task_progress({{false, false, false}, {true, true, false}, {true, false, false}}) == doctest::Approx(2.0 / 3));
  CHECK(task_progress({{true}}) == 1.0);
}

TEST_CASE("progress errors") {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code([] { task_progress({}); }) == ErrorCode::EmptyHistory);
  CHECK(code([] { task_progress({{}}); }) == ErrorCode::EmptyHistory);
  CHECK(code([] { task_progress({{true}, {true, false}}); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("score and aggregate") {
  auto ok = score(with_history({{false, false, false}, {true, true, true}}));
  CHECK(ok.success);
  CHECK(ok.progress == 1.0);
  CHECK(ok.steps_used == 1);
  auto partial = score(with_history({{false, false, false}, {true, true, false}, {true, false, false}}));
  CHECK_FALSE(partial.success);
  CHECK(partial.progress == doctest::Approx(2.0 / 3));
  auto rep = aggregate("bench", Platform::web, {ok, partial});
  CHECK(format_percent(rep.sr) == "50.0");
  CHECK(format_percent(rep.pr) == "83.3");
  CHECK(rep.sr <= rep.pr);
  CHECK(aggregate("empty", Platform::web, {}).results.empty());
}

TEST_CASE("success rate never exceeds progress rate") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TaskResult> rs;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 20); ++i) {
      std::size_t k = 1 + rng() % 4;
      std::vector<std::vector<bool>> h(1 + rng() % 5, std::vector<bool>(k));
      for (auto& v : h)
        for (std::size_t j = 0; j < k; ++j) v[j] = rng() % 2;
      rs.push_back(score(with_history(h)));
    }
    auto rep = aggregate("b", Platform::mobile, rs);
    CHECK(rep.sr <= rep.pr + 1e-9);
  }
}

TEST_CASE("report rendering round trips the comparison table") {
  auto baselines = load_baselines(testsupport::data_dir() / "reference_baselines.json");
  REQUIRE_FALSE(baselines.empty());
  BenchmarkReport web = aggregate("web-sim", Platform::web,
                                  {{"a", true, 1.0, 3, TerminalStatus::completed},
                                   {"b", false, 0.5, 9, TerminalStatus::step_limit}});
  BenchmarkReport mob = aggregate("android-sim", Platform::mobile, {{"c", true, 1.0, 2, TerminalStatus::completed}});
  std::string md = render_report("my run", {web, mob}, baselines);
  auto rows = parse_comparison_table(md);
  REQUIRE(rows.size() == baselines.size() + 1);
  CHECK(rows[0].domain == "my run");
  CHECK(rows[0].webarena_sr == doctest::Approx(50.0));
  CHECK(rows[0].webarena_pr == doctest::Approx(75.0));
  CHECK(rows[0].androidworld_sr == doctest::Approx(100.0));
  for (std::size_t i = 0; i < baselines.size(); ++i) {
    CHECK(rows[i + 1].domain == baselines[i].domain);
    CHECK(rows[i + 1].webarena_pr == baselines[i].webarena_pr);
    CHECK(rows[i + 1].androidworld_sr == baselines[i].androidworld_sr);
  }
  CHECK(md.find("| a |") != std::string::npos);
  auto row = summary_row("x", {mob});
  CHECK_FALSE(row.webarena_pr.has_value());
}

TEST_CASE("report json round trip") {
  BenchmarkReport r = aggregate("b", Platform::web, {{"a", true, 1.0, 3, TerminalStatus::completed}}, "abc");
  auto back = benchmark_report_from_json(to_json(r));
  CHECK(back.benchmark == "b");
  CHECK(back.sr == r.sr);
  CHECK(back.config_digest == "abc");
  REQUIRE(back.results.size() == 1);
  CHECK(back.results[0].terminal_status == TerminalStatus::completed);
}

}

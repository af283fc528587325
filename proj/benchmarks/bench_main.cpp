#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "guiharness/actions.hpp"
#include "guiharness/metrics.hpp"
#include "guiharness/mixture.hpp"
#include "guiharness/model_io.hpp"
#include "guiharness/sim_env.hpp"

using namespace guiharness;

namespace {

const std::vector<std::string> kActions = {
    "click [[0.12] [0.07]]",
    "type [[0.4] [0.1]] [wireless mouse]",
    "scroll [down]",
    "goto [http://forum.local/f/cooking]",
    "page_focus [2]",
    "stop [completed]",
};

const std::string kReply =
    "The issues tab sits in the top navigation.\n"
    "In summary, the next action is:\n"
    "```\n{\n    \"Element Description\": \"Issues tab\",\n    \"Action\": \"click\",\n    \"Value\": \"\"\n}\n```\n";

void BM_ParseGrounded(benchmark::State& st) {
  std::size_t i = 0;
  for (auto _ : st) benchmark::DoNotOptimize(parse_grounded(kActions[i++ % kActions.size()], Platform::web));
}
BENCHMARK(BM_ParseGrounded);

void BM_SerializeGrounded(benchmark::State& st) {
  std::vector<GroundedAction> as;
  for (const auto& s : kActions) as.push_back(parse_grounded(s, Platform::web));
  std::size_t i = 0;
  for (auto _ : st) benchmark::DoNotOptimize(serialize_grounded(as[i++ % as.size()]));
}
BENCHMARK(BM_SerializeGrounded);

void BM_ParsePlannerOutput(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(parse_planner_output(kReply));
}
BENCHMARK(BM_ParsePlannerOutput);

void BM_Interleave(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0));
  std::vector<std::uint32_t> mid(m), gui(m * 56'062 / 150'000);
  for (auto _ : st) benchmark::DoNotOptimize(mix::interleave(mid, gui, 42));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(mid.size() + gui.size()));
}
BENCHMARK(BM_Interleave)->Arg(10'000)->Arg(300'000);

void BM_TaskProgress(benchmark::State& st) {
  std::vector<std::vector<bool>> h(30, std::vector<bool>(5));
  for (std::size_t t = 0; t < h.size(); ++t) h[t][t % 5] = true;
  for (auto _ : st) benchmark::DoNotOptimize(task_progress(h));
}
BENCHMARK(BM_TaskProgress);

void BM_OracleSolve(benchmark::State& st) {
  auto pack = sim::load_pack(std::string(GUIHARNESS_BENCH_DATA_DIR) + "/packs/mini-gitlab");
  const auto& task = pack.tasks.front();
  for (auto _ : st) benchmark::DoNotOptimize(sim::oracle_solve(*pack.graph, task, 10));
}
BENCHMARK(BM_OracleSolve);

}  // namespace

BENCHMARK_MAIN();

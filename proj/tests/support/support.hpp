#pragma once

// Shared test helpers: fixture locations, random generators and reference
// implementations that the library results are checked against.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "guiharness/actions.hpp"
#include "guiharness/sim_env.hpp"

namespace testsupport {

std::filesystem::path data_dir();
std::filesystem::path fixture_dir();
std::filesystem::path pack_dir(const std::string& name);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& tag);

// ---------------------------------------------------------------------------
// Random generators
// ---------------------------------------------------------------------------

/// A valid grounded action for `p` with every optional field exercised.
guiharness::GroundedAction random_action(std::mt19937_64& rng, guiharness::Platform p);

struct GeneratedTask {
  std::shared_ptr<const guiharness::sim::ScreenGraph> graph;
  guiharness::sim::TaskSpec task;
  bool planted_unreachable = false;  // a subgoal no effect can satisfy
};

/// Random screen graph (3-6 screens, grid-laid elements, flags and a text
/// field) with a task over it. Goes through the JSON loaders.
GeneratedTask random_task(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reference computations
// ---------------------------------------------------------------------------

/// max over t of (true count of s_t) / K, recomputed prefix by prefix.
double brute_progress(const std::vector<std::vector<bool>>& history);

/// Checks floor(k*g/n) <= gui-in-prefix-k <= ceil(k*g/n) for every k.
bool prefix_balanced(const std::vector<bool>& is_gui);

/// Warmup-then-cosine in long double, written out from the definition.
long double reference_lr(std::uint64_t step, std::uint64_t total, long double base, long double warmup_ratio);

}  // namespace testsupport

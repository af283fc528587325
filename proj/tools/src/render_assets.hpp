#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace guiharness::tools {

struct RenderSummary {
  std::size_t states = 0;        // distinct simulator states visited
  std::size_t keys = 0;          // distinct (screen, render state) assets
  std::size_t written = 0;
  std::vector<std::string> missing;  // only filled in check mode
};

/// Explores every task of the pack from its start state and writes one PNG
/// per reachable render key plus a per-screen fallback image. In check mode
/// nothing is written and absent files are listed instead. `max_states`
/// bounds the exploration of each task.
RenderSummary render_pack_assets(const std::filesystem::path& pack_dir, bool check, std::size_t max_states);

}  // namespace guiharness::tools

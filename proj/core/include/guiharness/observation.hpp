#pragma once

#include <optional>
#include <string>

namespace guiharness {

/// What the agent sees at one step: a screenshot plus minimal metadata.
struct Observation {
  std::string screenshot;          // image reference (relative path)
  std::optional<std::string> url;  // web only
  int step_index = 0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

}  // namespace guiharness

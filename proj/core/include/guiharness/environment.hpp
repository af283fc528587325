#pragma once

#include <optional>
#include <string>
#include <vector>

#include "guiharness/actions.hpp"
#include "guiharness/observation.hpp"

namespace guiharness {

/// Outcome of executing one grounded action.
struct ApplyReport {
  std::string outcome;                 // "hit", "miss", "navigated", "typed", "noop", ...
  std::optional<std::string> element;  // id of the element that was hit, if any
  bool state_changed = false;
  double transition_prob = 1.0;
};

/// The POMDP side of an episode. Implementations own all mutable state.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual Platform platform() const = 0;
  /// Restores the task's initial state.
  virtual void reset() = 0;
  virtual Observation observe() const = 0;
  /// Throws Error(EnvironmentFault) only for infrastructure failures; an action
  /// that does nothing on screen is a reported no-op.
  virtual ApplyReport apply(const GroundedAction& a) = 0;
  virtual std::vector<bool> subgoals(const std::optional<std::string>& answer) const = 0;
  /// Digest of the full underlying state, for replay divergence checks.
  virtual std::string state_digest() const = 0;
};

}  // namespace guiharness

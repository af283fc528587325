#pragma once

// Source-dataset adapters into one sample schema, chain-of-thought
// augmentation with a consistency filter, and trajectory replay checks.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "guiharness/actions.hpp"
#include "guiharness/endpoints.hpp"
#include "guiharness/environment.hpp"
#include "guiharness/episode.hpp"
#include "guiharness/model_io.hpp"

namespace guiharness {

enum class Modality { vision_language, language };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

inline constexpr int kSampleSchemaVersion = 1;

struct StandardSample {
  std::string id;
  std::string domain;  // e.g. "Multi-modal Math", "Web", "Mobile"
  std::string source;  // dataset name
  Modality modality = Modality::language;
  std::vector<Message> messages;
  std::vector<std::string> type_tags;  // subset of Instruction, Thought, Answer, Action
  bool thought_optional = false;

  friend bool operator==(const StandardSample&, const StandardSample&) = default;
};

/// Throws Error(AdapterSchemaError) when roles do not alternate, tags are
/// empty or unknown, or (with `image_root`) an image reference does not exist.
void validate(const StandardSample& s, const std::optional<std::filesystem::path>& image_root = std::nullopt);

nlohmann::json to_json(const StandardSample& s);
StandardSample sample_from_json(const nlohmann::json& j);
void write_samples(std::ostream& out, const std::vector<StandardSample>& samples);
std::vector<StandardSample> read_samples(std::istream& in);

/// Ground-truth action for one trajectory step.
struct HintAction {
  HighLevelAction action;
  std::optional<Coordinate> coord;

  friend bool operator==(const HintAction&, const HintAction&) = default;
};

/// Everything needed to ask a generator for a thought about one GUI step.
struct CotJob {
  std::string id;
  std::string domain;
  std::string source;
  Platform platform = Platform::web;
  std::string goal;
  MemoryView previous_actions;
  Observation observation;
  HintAction hint;
  TemplateId cot_template = TemplateId::osgenesis_web_cot;
};

/// The training sample for a GUI step: the evaluation prompt as the user turn
/// and the canonical planner reply as the assistant turn.
StandardSample gui_sample(const CotJob& job, std::string_view thought, const HighLevelAction& action);

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct IngestOptions {
  /// Generic instruction-tuning adapter: required domain and source labels.
  std::string domain;
  std::string source;
  std::optional<Modality> modality;
  /// Throw on the first bad record instead of collecting rejects.
  bool strict = false;
};

struct Reject {
  std::size_t index = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<StandardSample> samples;
  std::vector<Reject> rejects;
  /// For GUI adapters: one job per sample (same order and id) for CoT augmentation.
  std::vector<CotJob> cot_jobs;
};

/// Known adapter ids, in documentation order.
std::vector<std::string> adapter_ids();

/// Converts already-parsed records. Throws Error(UnknownAdapter), and
/// Error(AdapterSchemaError) naming the record index in strict mode.
IngestResult ingest_records(const std::vector<nlohmann::json>& records, const std::string& adapter_id,
                            const IngestOptions& opts = {});

/// Reads a JSON-lines file (or a JSON array file) and ingests it.
IngestResult ingest(const std::filesystem::path& source_file, const std::string& adapter_id,
                    const IngestOptions& opts = {});

/// Parses an Aguvis-style call such as `pyautogui.click(x=0.12, y=0.07)`.
HintAction parse_aguvis_call(std::string_view call, Platform platform, const std::string& element = {});

// ---------------------------------------------------------------------------
// Equivalence and CoT augmentation
// ---------------------------------------------------------------------------

inline constexpr double kDefaultEquivalenceRadius = 0.05;

/// Symmetric: kinds match, targets agree (both targetless, coordinates within
/// `tol`, or folded descriptions equal when a coordinate is missing), and
/// values agree after per-kind normalization.
bool actions_equivalent(const HintAction& a, const HintAction& b, double tol = kDefaultEquivalenceRadius);

struct CotAugmentConfig {
  int attempts = 5;
  double tolerance = kDefaultEquivalenceRadius;
  DecodingParams decoding{0.7, 0.95, 8192};
};

struct Discarded {
  std::string id;
  std::vector<std::string> attempts;  // raw generator outputs
  std::vector<std::string> reasons;   // why each attempt was rejected
};

struct CotOutcome {
  std::optional<StandardSample> sample;
  std::optional<Discarded> discarded;
  int calls = 0;
};

/// Phrases whose presence in a thought means the hint leaked into it.
const std::vector<std::string>& hint_leak_phrases();

/// Up to cfg.attempts generator calls; the first output equivalent to the hint
/// (and free of hint phrases) is kept. `grounder` resolves coordinates for
/// comparison when the hint has one; without it descriptions are compared.
/// Throws Error(EndpointUnavailable).
CotOutcome augment_cot(const CotJob& job, PlannerClient& generator, GrounderClient* grounder,
                       const CotAugmentConfig& cfg = {});

/// Runs jobs on `threads` workers; outcomes keep job order.
std::vector<CotOutcome> augment_batch(const std::vector<CotJob>& jobs, PlannerClient& generator,
                                      GrounderClient* grounder, const CotAugmentConfig& cfg, int threads);

nlohmann::json to_json(const Discarded& d);

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayResult {
  bool pass = false;
  std::optional<int> diverged_at;  // index of the first step whose post-state differs
  std::vector<bool> final_subgoals;
};

/// Re-executes the grounded actions from the environment's initial state.
ReplayResult replay_verify(const Trajectory& t, Environment& env);

}  // namespace guiharness

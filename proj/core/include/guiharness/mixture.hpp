#pragma once

// Mid-training mixtures: quota sampling, proportional interleaving of GUI
// trajectories, duplication-based scaling, learning-rate schedules and the
// per-sample training manifest.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace guiharness::mix {

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

/// splitmix64-seeded xoshiro256**; identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t s_[4];
};

/// Independent stream for a named purpose under one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// `quota` ids drawn uniformly without replacement. Throws Error(InsufficientData).
std::vector<std::string> sample_domain(const std::vector<std::string>& dataset, std::size_t quota,
                                       std::uint64_t seed);

enum class InterleaveMode { proportional, global_shuffle };

/// Which positions of a merged stream of n = m + g items hold GUI samples in
/// proportional mode: position k (1-based) is GUI iff floor(k*g/n) > floor((k-1)*g/n).
bool proportional_slot_is_gui(std::size_t k, std::size_t m, std::size_t g);

/// Shuffles both streams independently, then merges them.
template <class T>
std::vector<T> interleave(std::vector<T> mid, std::vector<T> gui, std::uint64_t seed,
                          InterleaveMode mode = InterleaveMode::proportional) {
  Rng rm(derive_seed(seed, "interleave/mid")), rg(derive_seed(seed, "interleave/gui"));
  shuffle(mid, rm);
  shuffle(gui, rg);
  const std::size_t m = mid.size(), g = gui.size();
  std::vector<T> out;
  out.reserve(m + g);
  if (mode == InterleaveMode::global_shuffle) {
    for (auto& x : mid) out.push_back(std::move(x));
    for (auto& x : gui) out.push_back(std::move(x));
    Rng r(derive_seed(seed, "interleave/global"));
    shuffle(out, r);
    return out;
  }
  std::size_t im = 0, ig = 0;
  for (std::size_t k = 1; k <= m + g; ++k) {
    if (proportional_slot_is_gui(k, m, g)) out.push_back(std::move(gui[ig++]));
    else out.push_back(std::move(mid[im++]));
  }
  return out;
}

struct Ratio {
  std::uint64_t mid = 150'000;
  std::uint64_t gui = 56'062;
};

struct ScalePlan {
  std::uint64_t required = 0;     // GUI samples in segment A
  std::uint64_t pool = 0;
  std::uint64_t full_passes = 0;  // whole shuffled passes over the pool
  std::uint64_t remainder = 0;    // drawn from one more shuffle
  double factor = 0.0;            // required / pool
};

/// required = round(target_mid * ratio.gui / ratio.mid).
ScalePlan scale_with_duplication(std::uint64_t target_mid, std::uint64_t gui_pool_size, const Ratio& ratio = {});

/// Expands a plan over concrete ids: full shuffled passes, then a partial one.
std::vector<std::string> materialize(const ScalePlan& plan, const std::vector<std::string>& pool,
                                     std::uint64_t seed);

/// round(total * proportion).
std::uint64_t effective_volume(std::uint64_t total, double proportion);

enum class ScheduleKind { cosine, linear, constant };

std::string_view to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(std::string_view s);

using LrFn = std::function<double(std::uint64_t step)>;

/// Linear warmup from 0 to base_lr over ceil(warmup_ratio * total) steps, then
/// decay to 0 at `total_steps` (cosine or linear), or flat for constant.
LrFn lr_schedule(std::uint64_t total_steps, double base_lr, double warmup_ratio,
                 ScheduleKind kind = ScheduleKind::cosine);
std::uint64_t warmup_steps(std::uint64_t total_steps, double warmup_ratio);

/// Cosine from `from_lr` to 0 over `remaining_steps`, no warmup.
LrFn resume_cosine(double from_lr, std::uint64_t remaining_steps);

// ---------------------------------------------------------------------------
// Catalog and specs
// ---------------------------------------------------------------------------

struct DatasetInfo {
  std::string name;
  std::string domain;
  std::string modality;  // "vision-language" | "language"
  std::string stage;     // "mid" | "gui"
  std::uint64_t samples = 0;
  std::optional<std::string> difficulty;  // easy | middle | hard
  std::optional<std::filesystem::path> path;  // id list or sample JSONL; synthetic ids otherwise
};

struct Catalog {
  std::vector<DatasetInfo> datasets;
  std::filesystem::path base_dir;

  const DatasetInfo* find(const std::string& name) const;
  const DatasetInfo& at(const std::string& name) const;
};

Catalog catalog_from_json(const nlohmann::json& j, std::filesystem::path base_dir = {});
Catalog load_catalog(const std::filesystem::path& file);

/// Sample ids of a dataset: read from its file, or `<name>#<index>` when synthetic.
std::vector<std::string> dataset_ids(const Catalog& c, const DatasetInfo& d);

struct DomainQuota {
  std::string domain;
  std::uint64_t count = 0;
  std::vector<std::string> sources;
  std::optional<std::string> difficulty;
};

struct ScheduleSpec {
  double base_lr = 2e-5;
  double warmup_ratio = 0.05;
  ScheduleKind kind = ScheduleKind::cosine;
};

struct MixtureSpec {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<DomainQuota> quotas;
  std::vector<std::string> gui_pool;
  Ratio ratio;
  bool mixing = true;
  bool duplicate_gui = true;
  InterleaveMode interleave = InterleaveMode::proportional;
  ScheduleSpec schedule;
  /// Trainer metadata (batch size, accumulation, ...) as serialized JSON; recorded, not interpreted.
  std::string training = "{}";
};

/// Throws Error(InvalidSpec).
void validate(const MixtureSpec& s, const Catalog& c);
MixtureSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MixtureSpec& s);
MixtureSpec load_spec(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  char segment = 'A';
  bool gui = false;
  std::string domain;
  std::string id;
};

struct TrainingManifest {
  std::vector<ManifestEntry> entries;  // segment A then segment B; index = optimizer step
  std::size_t segment_a = 0;
  std::size_t segment_b = 0;
  std::uint64_t mid_count = 0;
  std::uint64_t gui_in_a = 0;
  ScalePlan scale;
  std::vector<double> schedule;  // lr at each step
  std::string spec_digest;
  std::string datasets_digest;
  std::string digest;  // SHA-256 over the sample lines
  std::uint64_t seed = 0;
  std::uint64_t effective_mid_volume = 0;
};

TrainingManifest build_manifest(const MixtureSpec& spec, const Catalog& catalog);

/// Writes manifest.jsonl (header + one line per sample) and schedule.json.
void write_manifest(const TrainingManifest& m, const MixtureSpec& spec, const std::filesystem::path& out_dir);

std::string manifest_line(std::size_t step, const ManifestEntry& e);

}  // namespace guiharness::mix

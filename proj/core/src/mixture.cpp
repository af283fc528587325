#include "guiharness/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guiharness/digest.hpp"
#include "guiharness/error.hpp"
#include "text_util.hpp"

namespace guiharness::mix {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : s_) s = splitmix64(seed);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Reject the top partial block so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t x = seed ^ fnv1a64(label);
  return splitmix64(x);
}

std::vector<std::string> sample_domain(const std::vector<std::string>& dataset, std::size_t quota,
                                       std::uint64_t seed) {
  if (quota > dataset.size())
    throw Error(ErrorCode::InsufficientData,
                fmt::format("quota {} exceeds the {} available samples", quota, dataset.size()));
  // Partial Fisher-Yates over indices: the first `quota` slots are a uniform sample.
  std::vector<std::uint32_t> idx(dataset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(i);
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(quota);
  for (std::size_t i = 0; i < quota; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
    out.push_back(dataset[idx[i]]);
  }
  return out;
}

bool proportional_slot_is_gui(std::size_t k, std::size_t m, std::size_t g) {
  const std::uint64_t n = m + g;
  if (g == 0) return false;
  return (static_cast<std::uint64_t>(k) * g) / n > (static_cast<std::uint64_t>(k - 1) * g) / n;
}

ScalePlan scale_with_duplication(std::uint64_t target_mid, std::uint64_t gui_pool_size, const Ratio& ratio) {
  if (ratio.mid == 0 || ratio.gui == 0) invalid("ratio components must be positive");
  ScalePlan p;
  p.pool = gui_pool_size;
  // Exact integer rounding of target * gui / mid (half away from zero).
  const unsigned __int128 num = static_cast<unsigned __int128>(target_mid) * ratio.gui;
  p.required = static_cast<std::uint64_t>((num * 2 + ratio.mid) / (2 * static_cast<unsigned __int128>(ratio.mid)));
  if (gui_pool_size > 0) {
    p.full_passes = p.required / gui_pool_size;
    p.remainder = p.required % gui_pool_size;
    p.factor = static_cast<double>(p.required) / static_cast<double>(gui_pool_size);
  } else if (p.required > 0) {
    throw Error(ErrorCode::InsufficientData, "GUI pool is empty");
  }
  return p;
}

std::vector<std::string> materialize(const ScalePlan& plan, const std::vector<std::string>& pool,
                                     std::uint64_t seed) {
  if (plan.pool != pool.size()) invalid("scale plan was made for a different pool size");
  std::vector<std::string> out;
  out.reserve(plan.required);
  for (std::uint64_t pass = 0; pass <= plan.full_passes; ++pass) {
    const std::uint64_t take = pass < plan.full_passes ? pool.size() : plan.remainder;
    if (take == 0) continue;
    std::vector<std::string> v = pool;
    Rng rng(derive_seed(seed, fmt::format("duplicate/pass{}", pass)));
    shuffle(v, rng);
    out.insert(out.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

std::uint64_t effective_volume(std::uint64_t total, double proportion) {
  if (proportion < 0.0 || proportion > 1.0) invalid("proportion must lie in [0, 1]");
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(total) * proportion));
}

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::constant: return "constant";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(std::string_view s) {
  for (auto k : {ScheduleKind::cosine, ScheduleKind::linear, ScheduleKind::constant})
    if (to_string(k) == s) return k;
  invalid(fmt::format("unknown schedule kind '{}'", s));
}

std::uint64_t warmup_steps(std::uint64_t total_steps, double warmup_ratio) {
  // The epsilon keeps 0.05 * 1000 from becoming 51 through representation error.
  return static_cast<std::uint64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

LrFn lr_schedule(std::uint64_t total_steps, double base_lr, double warmup_ratio, ScheduleKind kind) {
  if (total_steps < 1) invalid("total_steps must be at least 1");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) invalid("warmup_ratio must lie in [0, 1)");
  const std::uint64_t w = warmup_steps(total_steps, warmup_ratio);
  return [=](std::uint64_t step) {
    if (step < w) return base_lr * static_cast<double>(step) / static_cast<double>(w);
    if (kind == ScheduleKind::constant) return base_lr;
    const double span = static_cast<double>(total_steps - w);
    const double p = span > 0 ? std::min(1.0, static_cast<double>(step - w) / span) : 1.0;
    if (kind == ScheduleKind::linear) return base_lr * (1.0 - p);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
  };
}

LrFn resume_cosine(double from_lr, std::uint64_t remaining_steps) {
  return [=](std::uint64_t step) {
    if (remaining_steps == 0) return 0.0;
    const double p = std::min(1.0, static_cast<double>(step) / static_cast<double>(remaining_steps));
    return from_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
  };
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

const DatasetInfo* Catalog::find(const std::string& name) const {
  for (const auto& d : datasets)
    if (d.name == name) return &d;
  return nullptr;
}

const DatasetInfo& Catalog::at(const std::string& name) const {
  if (const auto* d = find(name)) return *d;
  invalid("unknown dataset '" + name + "'");
}

namespace {

const std::set<std::string> kDifficulties = {"easy", "middle", "hard"};

}  // namespace

Catalog catalog_from_json(const json& j, std::filesystem::path base_dir) {
  Catalog c;
  c.base_dir = std::move(base_dir);
  std::set<std::string> names;
  for (const auto& d : j.at("datasets")) {
    DatasetInfo info;
    info.name = d.at("name").get<std::string>();
    info.domain = d.at("domain").get<std::string>();
    info.modality = d.value("modality", "language");
    info.stage = d.value("stage", "mid");
    info.samples = d.at("samples").get<std::uint64_t>();
    if (d.contains("difficulty") && !d["difficulty"].is_null()) {
      info.difficulty = d["difficulty"].get<std::string>();
      if (!kDifficulties.count(*info.difficulty))
        invalid(fmt::format("dataset '{}': unknown difficulty '{}'", info.name, *info.difficulty));
    }
    if (d.contains("path") && !d["path"].is_null()) info.path = d["path"].get<std::string>();
    if (info.stage != "mid" && info.stage != "gui")
      invalid(fmt::format("dataset '{}': stage must be mid or gui", info.name));
    if (!names.insert(info.name).second) invalid("duplicate dataset '" + info.name + "'");
    c.datasets.push_back(std::move(info));
  }
  return c;
}

Catalog load_catalog(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + file.string());
  return catalog_from_json(json::parse(in), file.parent_path());
}

std::vector<std::string> dataset_ids(const Catalog& c, const DatasetInfo& d) {
  std::vector<std::string> ids;
  if (!d.path) {
    ids.reserve(d.samples);
    for (std::uint64_t i = 0; i < d.samples; ++i) ids.push_back(fmt::format("{}#{}", d.name, i));
    return ids;
  }
  const auto path = d.path->is_absolute() ? *d.path : c.base_dir / *d.path;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    std::string t = text::trim(line);
    if (t.empty()) continue;
    // Sample JSONL carries an "id" field; plain files list one id per line.
    if (t.front() == '{') {
      json j = json::parse(t, nullptr, false);
      if (j.is_discarded() || !j.contains("id")) invalid(fmt::format("{}: record without id", path.string()));
      t = j["id"].get<std::string>();
    }
    ids.push_back(d.name + ":" + t);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

void validate(const MixtureSpec& s, const Catalog& c) {
  if (s.ratio.mid == 0 || s.ratio.gui == 0) invalid("mid_to_gui_ratio components must be positive");
  if (s.schedule.warmup_ratio < 0 || s.schedule.warmup_ratio >= 1) invalid("warmup_ratio must lie in [0, 1)");
  if (!(s.schedule.base_lr > 0)) invalid("base_lr must be positive");
  std::set<std::string> domains;
  for (const auto& q : s.quotas) {
    if (!domains.insert(q.domain).second) invalid("duplicate quota domain '" + q.domain + "'");
    if (q.sources.empty()) invalid("quota '" + q.domain + "' lists no source datasets");
    if (q.difficulty && !kDifficulties.count(*q.difficulty))
      invalid(fmt::format("quota '{}': unknown difficulty '{}'", q.domain, *q.difficulty));
    for (const auto& src : q.sources) {
      const DatasetInfo& d = c.at(src);
      if (d.stage != "mid") invalid(fmt::format("quota '{}': '{}' is not a mid-training dataset", q.domain, src));
      if (q.difficulty && d.difficulty != q.difficulty)
        invalid(fmt::format("quota '{}': dataset '{}' carries no '{}' difficulty tag", q.domain, src,
                            *q.difficulty));
    }
  }
  std::set<std::string> pool;
  for (const auto& g : s.gui_pool) {
    if (!pool.insert(g).second) invalid("duplicate GUI dataset '" + g + "'");
    if (c.at(g).stage != "gui") invalid(fmt::format("'{}' is not a GUI trajectory dataset", g));
  }
  if (s.gui_pool.empty()) invalid("gui_pool is empty");
}

MixtureSpec spec_from_json(const json& j) {
  MixtureSpec s;
  try {
    s.name = j.value("name", "mixture");
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& q : j.at("quotas")) {
      DomainQuota d;
      d.domain = q.at("domain").get<std::string>();
      const auto& cnt = q.at("count");
      if (!cnt.is_number_unsigned() && !(cnt.is_number_integer() && cnt.get<std::int64_t>() >= 0))
        invalid(fmt::format("quota '{}': count must be a non-negative integer", d.domain));
      d.count = cnt.get<std::uint64_t>();
      d.sources = q.value("sources", std::vector<std::string>{d.domain});
      if (q.contains("difficulty") && !q["difficulty"].is_null()) d.difficulty = q["difficulty"].get<std::string>();
      s.quotas.push_back(std::move(d));
    }
    s.gui_pool = j.at("gui_pool").get<std::vector<std::string>>();
    if (j.contains("mid_to_gui_ratio")) {
      const auto& r = j["mid_to_gui_ratio"];
      if (r.is_array() && r.size() == 2) {
        s.ratio = {r[0].get<std::uint64_t>(), r[1].get<std::uint64_t>()};
      } else {
        s.ratio = {r.at("mid").get<std::uint64_t>(), r.at("gui").get<std::uint64_t>()};
      }
    }
    s.mixing = j.value("mixing", true);
    if (j.contains("scaling")) s.duplicate_gui = j["scaling"].value("duplicate_gui", true);
    const std::string mode = j.value("interleave", "proportional");
    if (mode == "proportional") s.interleave = InterleaveMode::proportional;
    else if (mode == "global_shuffle") s.interleave = InterleaveMode::global_shuffle;
    else invalid("interleave must be proportional or global_shuffle");
    if (j.contains("schedule")) {
      const auto& sc = j["schedule"];
      s.schedule.base_lr = sc.value("base_lr", s.schedule.base_lr);
      s.schedule.warmup_ratio = sc.value("warmup_ratio", s.schedule.warmup_ratio);
      s.schedule.kind = schedule_kind_from_string(sc.value("kind", "cosine"));
    }
    if (j.contains("training")) s.training = j["training"].dump();
  } catch (const json::exception& e) {
    invalid(std::string("mixture spec: ") + e.what());
  }
  return s;
}

json to_json(const MixtureSpec& s) {
  json quotas = json::array();
  for (const auto& q : s.quotas) {
    json jq = {{"domain", q.domain}, {"count", q.count}, {"sources", q.sources}};
    if (q.difficulty) jq["difficulty"] = *q.difficulty;
    quotas.push_back(std::move(jq));
  }
  return {{"name", s.name},
          {"seed", s.seed},
          {"quotas", std::move(quotas)},
          {"gui_pool", s.gui_pool},
          {"mid_to_gui_ratio", {s.ratio.mid, s.ratio.gui}},
          {"mixing", s.mixing},
          {"scaling", {{"duplicate_gui", s.duplicate_gui}}},
          {"interleave", s.interleave == InterleaveMode::proportional ? "proportional" : "global_shuffle"},
          {"schedule",
           {{"base_lr", s.schedule.base_lr}, {"warmup_ratio", s.schedule.warmup_ratio},
            {"kind", to_string(s.schedule.kind)}}},
          {"training", json::parse(s.training)}};
}

MixtureSpec load_spec(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + file.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) invalid(file.string() + ": not valid JSON");
  return spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string manifest_line(std::size_t step, const ManifestEntry& e) {
  return fmt::format(R"({{"step":{},"segment":"{}","gui":{},"domain":{},"id":{}}})", step, e.segment,
                     e.gui ? "true" : "false", json(e.domain).dump(), json(e.id).dump());
}

TrainingManifest build_manifest(const MixtureSpec& spec, const Catalog& catalog) {
  validate(spec, catalog);
  TrainingManifest m;
  m.seed = spec.seed;
  m.spec_digest = sha256_hex(to_json(spec).dump());
  {
    std::string d;
    for (const auto& ds : catalog.datasets)
      d += fmt::format("{}|{}|{}|{}|{}\n", ds.name, ds.stage, ds.samples, ds.difficulty.value_or(""),
                       ds.path ? ds.path->string() : "");
    m.datasets_digest = sha256_hex(d);
  }

  std::vector<ManifestEntry> mid;
  for (const auto& q : spec.quotas) {
    std::vector<std::string> pool;
    for (const auto& src : q.sources) {
      auto ids = dataset_ids(catalog, catalog.at(src));
      pool.insert(pool.end(), std::make_move_iterator(ids.begin()), std::make_move_iterator(ids.end()));
    }
    for (auto& id : sample_domain(pool, q.count, derive_seed(spec.seed, "quota/" + q.domain)))
      mid.push_back(ManifestEntry{'A', false, q.domain, std::move(id)});
  }
  m.mid_count = mid.size();

  std::vector<std::string> gui_ids;
  std::vector<std::string> gui_domain_of;  // parallel to gui_ids
  for (const auto& name : spec.gui_pool) {
    const DatasetInfo& d = catalog.at(name);
    auto ids = dataset_ids(catalog, d);
    for (auto& id : ids) {
      gui_ids.push_back(std::move(id));
      gui_domain_of.push_back(d.domain);
    }
  }
  std::map<std::string, std::string> domain_by_id;
  for (std::size_t i = 0; i < gui_ids.size(); ++i) domain_by_id.emplace(gui_ids[i], gui_domain_of[i]);

  std::vector<ManifestEntry> gui_a;
  if (spec.mixing) {
    m.scale = spec.duplicate_gui ? scale_with_duplication(m.mid_count, gui_ids.size(), spec.ratio)
                                 : ScalePlan{gui_ids.size(), gui_ids.size(), 1, 0, 1.0};
    for (auto& id : materialize(m.scale, gui_ids, derive_seed(spec.seed, "segment-a/gui"))) {
      const std::string& dom = domain_by_id.at(id);
      gui_a.push_back(ManifestEntry{'A', true, dom, std::move(id)});
    }
  }
  m.gui_in_a = gui_a.size();
  m.entries = interleave(std::move(mid), std::move(gui_a), derive_seed(spec.seed, "segment-a"), spec.interleave);
  m.segment_a = m.entries.size();

  std::vector<std::string> b = gui_ids;
  Rng rb(derive_seed(spec.seed, "segment-b"));
  shuffle(b, rb);
  for (auto& id : b) {
    const std::string& dom = domain_by_id.at(id);
    m.entries.push_back(ManifestEntry{'B', true, dom, std::move(id)});
  }
  m.segment_b = b.size();

  const std::uint64_t total = m.entries.size();
  m.effective_mid_volume =
      total ? effective_volume(total, static_cast<double>(m.mid_count) / static_cast<double>(total)) : 0;
  if (total > 0) {
    auto lr = lr_schedule(total, spec.schedule.base_lr, spec.schedule.warmup_ratio, spec.schedule.kind);
    m.schedule.resize(total);
    for (std::uint64_t i = 0; i < total; ++i) m.schedule[i] = lr(i);
  }

  Sha256 h;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    h.update(manifest_line(i, m.entries[i]));
    h.update("\n");
  }
  m.digest = h.hex_digest();
  return m;
}

void write_manifest(const TrainingManifest& m, const MixtureSpec& spec, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto manifest_path = out_dir / "manifest.jsonl";
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + manifest_path.string());
  json header = {{"record", "header"},
                 {"schema", "guiharness.manifest"},
                 {"version", 1},
                 {"name", spec.name},
                 {"seed", m.seed},
                 {"spec_digest", m.spec_digest},
                 {"datasets_digest", m.datasets_digest},
                 {"manifest_digest", m.digest},
                 {"segment_a", m.segment_a},
                 {"segment_b", m.segment_b},
                 {"total_steps", m.entries.size()},
                 {"mid_count", m.mid_count},
                 {"gui_in_segment_a", m.gui_in_a},
                 {"duplication",
                  {{"required", m.scale.required},
                   {"pool", m.scale.pool},
                   {"full_passes", m.scale.full_passes},
                   {"remainder", m.scale.remainder},
                   {"factor", m.scale.factor}}},
                 {"effective_mid_volume", m.effective_mid_volume},
                 {"schedule",
                  {{"base_lr", spec.schedule.base_lr},
                   {"warmup_ratio", spec.schedule.warmup_ratio},
                   {"warmup_steps", warmup_steps(m.entries.size(), spec.schedule.warmup_ratio)},
                   {"kind", to_string(spec.schedule.kind)},
                   {"file", "schedule.json"}}},
                 {"training", json::parse(spec.training)}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < m.entries.size(); ++i) out << manifest_line(i, m.entries[i]) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + manifest_path.string());

  const auto sched_path = out_dir / "schedule.json";
  std::ofstream s(sched_path, std::ios::binary);
  if (!s) throw Error(ErrorCode::Io, "cannot write " + sched_path.string());
  s << "{\"total_steps\":" << m.schedule.size() << ",\"lr\":[";
  for (std::size_t i = 0; i < m.schedule.size(); ++i) {
    if (i) s << ',';
    s << fmt::format("{:.17g}", m.schedule[i]);
  }
  s << "]}\n";
}

}  // namespace guiharness::mix

// guiharness command-line front end.

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guiharness/annotator.hpp"
#include "guiharness/datapipe.hpp"
#include "guiharness/digest.hpp"
#include "guiharness/episode.hpp"
#include "guiharness/error.hpp"
#include "guiharness/metrics.hpp"
#include "guiharness/mixture.hpp"
#include "guiharness/scripted_policy.hpp"
#include "guiharness/sim_env.hpp"
#include "render_assets.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace guiharness;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

// ---------------------------------------------------------------------------

struct MixArgs {
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string catalog;
};

int cmd_mix(const MixArgs& a) {
  const fs::path spec_path = a.spec;
  json sj = read_json(spec_path);
  mix::MixtureSpec spec = mix::spec_from_json(sj);
  if (a.seed) spec.seed = *a.seed;
  fs::path catalog_path = a.catalog;
  if (catalog_path.empty()) {
    if (!sj.contains("catalog")) throw Error(ErrorCode::InvalidSpec, "no catalog given (spec field or --catalog)");
    catalog_path = spec_path.parent_path() / sj["catalog"].get<std::string>();
  }
  const auto t0 = std::chrono::steady_clock::now();
  mix::Catalog catalog = mix::load_catalog(catalog_path);
  mix::TrainingManifest m = mix::build_manifest(spec, catalog);
  mix::write_manifest(m, spec, a.out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fmt::print("mixture {} (seed {})\n", spec.name, spec.seed);
  fmt::print("  mid samples        {}\n", m.mid_count);
  fmt::print("  GUI in segment A   {} (duplication x{:.4f})\n", m.gui_in_a, m.scale.factor);
  fmt::print("  segment A / B      {} / {}\n", m.segment_a, m.segment_b);
  fmt::print("  schedule points    {}\n", m.schedule.size());
  fmt::print("  manifest digest    {}\n", m.digest);
  fmt::print("  wrote {} in {:.2f}s\n", (fs::path(a.out) / "manifest.jsonl").string(), secs);
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string config;
  std::vector<std::string> packs;
  std::string export_dir;
  std::string session_dir;
  std::string bind;
  int port = 0;
  long ttl = 0;
};

annot::HttpServer* g_server = nullptr;

int cmd_serve(const ServeArgs& a) {
  annot::ServiceConfig cfg =
      a.config.empty() ? annot::ServiceConfig::from_env() : annot::ServiceConfig::from_json(read_json(a.config));
  for (const auto& p : a.packs) cfg.packs.emplace_back(p);
  if (!a.export_dir.empty()) cfg.export_dir = a.export_dir;
  if (!a.session_dir.empty()) cfg.session_dir = fs::path(a.session_dir);
  if (!a.bind.empty()) cfg.bind = a.bind;
  if (a.port > 0) cfg.port = a.port;
  if (a.ttl > 0) cfg.ttl = std::chrono::seconds(a.ttl);
  if (cfg.packs.empty()) throw Error(ErrorCode::InvalidSpec, "no task packs configured (--pack)");

  std::unique_ptr<PlannerClient> planner;
  std::unique_ptr<GrounderClient> grounder;
  if (auto pc = EndpointConfig::from_env("GUIHARNESS_PLANNER")) planner = std::make_unique<HttpPlanner>(*pc);
  if (auto gc = EndpointConfig::from_env("GUIHARNESS_GROUNDER")) grounder = std::make_unique<HttpGrounder>(*gc);

  annot::AnnotatorService service(cfg, planner.get(), grounder.get());
  annot::HttpServer server(service);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  fmt::print("annotator listening on http://{}:{} ({} pack(s), exports -> {})\n", cfg.bind, cfg.port,
             cfg.packs.size(), cfg.export_dir.string());
  std::fflush(stdout);
  server.run(cfg.bind, cfg.port);
  g_server = nullptr;
  return 0;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string pack;
  std::string policy = "oracle";
  std::vector<std::string> tasks;
  int max_steps = 30;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
  std::string baselines;
  std::string label = "run";
  std::string benchmark;
  int oracle_depth = 10;
};

int cmd_run(const RunArgs& a) {
  sim::TaskPack pack = sim::load_pack(a.pack, a.seed);
  std::vector<const sim::TaskSpec*> tasks;
  for (const auto& t : pack.tasks)
    if (a.tasks.empty() || std::find(a.tasks.begin(), a.tasks.end(), t.id) != a.tasks.end()) tasks.push_back(&t);
  if (tasks.empty()) throw Error(ErrorCode::UnknownTask, "no matching tasks in " + a.pack);

  EpisodeConfig cfg;
  cfg.max_steps = a.max_steps;
  std::vector<Trajectory> trajs;
  if (a.policy == "oracle") {
    // One scripted policy per task: the oracle plan followed by stop.
    const int depth = std::min(a.max_steps, a.oracle_depth);
    cfg.max_steps = depth + 1;
    for (const auto* t : tasks) {
      auto r = sim::oracle_solve(*pack.graph, *t, depth);
      auto policy = sim::scripted_policy(*pack.graph, *t, r.plan);
      sim::SimEnvironment env(pack.graph, *t);
      trajs.push_back(run_episode(t->id, t->goal, env, *policy.planner, *policy.grounder, cfg));
    }
  } else if (a.policy == "http") {
    auto pc = EndpointConfig::from_env("GUIHARNESS_PLANNER");
    auto gc = EndpointConfig::from_env("GUIHARNESS_GROUNDER");
    if (!pc || !gc) throw Error(ErrorCode::EndpointUnavailable, "set GUIHARNESS_PLANNER_URL and GUIHARNESS_GROUNDER_URL");
    HttpPlanner planner(*pc);
    HttpGrounder grounder(*gc);
    std::vector<EpisodeJob> jobs;
    for (const auto* t : tasks)
      jobs.push_back({t->id, t->goal, [&pack, t] { return std::make_unique<sim::SimEnvironment>(pack.graph, *t); }});
    trajs = run_batch(jobs, planner, grounder, cfg, a.threads);
  } else {
    throw Error(ErrorCode::InvalidSpec, "policy must be oracle or http");
  }

  std::vector<TaskResult> results;
  for (const auto& t : trajs) results.push_back(score(t));
  const std::string config_digest =
      fnv1a64_hex(fmt::format("{}|{}|{}|{}", pack.graph->name, a.policy, a.max_steps, a.seed));
  BenchmarkReport rep = aggregate(a.benchmark.empty() ? pack.graph->name : a.benchmark, pack.graph->platform,
                                  results, config_digest);
  std::vector<BaselineRow> baselines;
  if (!a.baselines.empty()) baselines = load_baselines(a.baselines);
  const std::string md = render_report(a.label, {rep}, baselines);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    save_trajectories((fs::path(a.out) / "trajectories.jsonl").string(), trajs);
    write_text(fs::path(a.out) / "report.json", to_json(rep).dump(2) + "\n");
    write_text(fs::path(a.out) / "report.md", md);
  }
  std::cout << md;
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_oracle(const std::string& pack_dir, int max_steps, std::uint64_t seed, bool as_json) {
  sim::TaskPack pack = sim::load_pack(pack_dir, seed);
  json all = json::array();
  for (const auto& t : pack.tasks) {
    auto r = sim::oracle_solve(*pack.graph, t, max_steps);
    json plan = json::array();
    for (const auto& a : r.plan) plan.push_back(serialize_grounded(a));
    all.push_back({{"task", t.id},
                   {"goal", t.goal},
                   {"solvable", r.solvable},
                   {"best_progress", r.best_progress},
                   {"plan", plan},
                   {"nodes", r.nodes}});
    if (!as_json) {
      fmt::print("{}  solvable={}  best={:.2f}  steps={}  nodes={}\n  goal: {}\n", t.id, r.solvable,
                 r.best_progress, r.plan.size(), r.nodes, t.goal);
      for (const auto& a : r.plan) fmt::print("    {}\n", serialize_grounded(a));
    }
  }
  if (as_json) std::cout << all.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_render(const std::string& pack_dir, bool check, std::size_t max_states) {
  auto sum = tools::render_pack_assets(pack_dir, check, max_states);
  fmt::print("{}: {} states, {} render keys", pack_dir, sum.states, sum.keys);
  if (check) {
    fmt::print(", {} missing\n", sum.missing.size());
    for (const auto& m : sum.missing) fmt::print("  missing {}\n", m);
    return sum.missing.empty() ? 0 : 1;
  }
  fmt::print(", {} files written\n", sum.written);
  return 0;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string adapter;
  std::string input;
  std::string out;
  std::string domain;
  std::string source;
  bool strict = false;
};

IngestOptions ingest_options(const IngestArgs& a) {
  IngestOptions o;
  o.domain = a.domain;
  o.source = a.source;
  o.strict = a.strict;
  return o;
}

int cmd_ingest(const IngestArgs& a) {
  IngestResult r = ingest(a.input, a.adapter, ingest_options(a));
  std::ostringstream out;
  write_samples(out, r.samples);
  write_text(a.out, out.str());
  fmt::print("{}: {} samples, {} rejected\n", a.input, r.samples.size(), r.rejects.size());
  for (const auto& rej : r.rejects) fmt::print(stderr, "  record {}: {}\n", rej.index, rej.reason);
  return 0;
}

int cmd_augment(const IngestArgs& a, int attempts, int threads) {
  auto gc = EndpointConfig::from_env("GUIHARNESS_GENERATOR");
  if (!gc) throw Error(ErrorCode::EndpointUnavailable, "set GUIHARNESS_GENERATOR_URL");
  HttpPlanner generator(*gc);
  std::unique_ptr<HttpGrounder> grounder;
  if (auto g = EndpointConfig::from_env("GUIHARNESS_GROUNDER")) grounder = std::make_unique<HttpGrounder>(*g);

  IngestResult r = ingest(a.input, a.adapter, ingest_options(a));
  if (r.cot_jobs.empty()) throw Error(ErrorCode::InvalidSpec, "adapter " + a.adapter + " yields no GUI steps");
  CotAugmentConfig cfg;
  cfg.attempts = attempts;
  auto outcomes = augment_batch(r.cot_jobs, generator, grounder.get(), cfg, threads);
  std::vector<StandardSample> kept;
  std::ostringstream discarded;
  for (const auto& o : outcomes) {
    if (o.sample) kept.push_back(*o.sample);
    if (o.discarded) discarded << to_json(*o.discarded).dump() << '\n';
  }
  std::ostringstream out;
  write_samples(out, kept);
  write_text(fs::path(a.out) / "samples.jsonl", out.str());
  write_text(fs::path(a.out) / "discarded.jsonl", discarded.str());
  fmt::print("{} steps: {} kept, {} discarded\n", outcomes.size(), kept.size(), outcomes.size() - kept.size());
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& files, const std::string& benchmark, const std::string& label,
               const std::string& baselines, const std::string& out) {
  std::map<Platform, std::vector<TaskResult>> by_platform;
  for (const auto& f : files)
    for (const auto& t : load_trajectories(f)) by_platform[t.platform].push_back(score(t));
  std::vector<BenchmarkReport> reports;
  for (auto& [p, results] : by_platform)
    reports.push_back(aggregate(benchmark.empty() ? std::string(to_string(p)) : benchmark, p, std::move(results)));
  std::vector<BaselineRow> rows;
  if (!baselines.empty()) rows = load_baselines(baselines);
  const std::string md = render_report(label, reports, rows);
  if (!out.empty()) write_text(out, md);
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GUI agent harness and training-data engine"};
  app.require_subcommand(1);

  MixArgs mix_args;
  auto* mix = app.add_subcommand("mix", "build a training manifest from a mixture spec");
  mix->add_option("--spec", mix_args.spec, "mixture spec JSON")->required()->check(CLI::ExistingFile);
  mix->add_option("--seed", mix_args.seed, "override the spec seed");
  mix->add_option("--out", mix_args.out, "output directory")->required();
  mix->add_option("--catalog", mix_args.catalog, "dataset catalog (default: the spec's catalog field)");

  auto* annotate = app.add_subcommand("annotate", "annotation service");
  annotate->require_subcommand(1);
  ServeArgs serve_args;
  auto* serve = annotate->add_subcommand("serve", "run the HTTP annotation/steering API");
  serve->add_option("--config", serve_args.config, "service config JSON (else GUIHARNESS_ANNOTATE_* env)");
  serve->add_option("--pack", serve_args.packs, "task pack directory (repeatable)");
  serve->add_option("--export-dir", serve_args.export_dir);
  serve->add_option("--session-dir", serve_args.session_dir, "persist sessions here");
  serve->add_option("--bind", serve_args.bind);
  serve->add_option("--port", serve_args.port);
  serve->add_option("--ttl", serve_args.ttl, "session lifetime in seconds");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "run episodes on a task pack and report SR/PR");
  run->add_option("--pack", run_args.pack)->required()->check(CLI::ExistingDirectory);
  run->add_option("--policy", run_args.policy, "oracle | http")->check(CLI::IsMember({"oracle", "http"}));
  run->add_option("--task", run_args.tasks, "restrict to these task ids");
  run->add_option("--max-steps", run_args.max_steps);
  run->add_option("--seed", run_args.seed, "task parameter seed");
  run->add_option("--threads", run_args.threads);
  run->add_option("--out", run_args.out, "directory for trajectories and reports");
  run->add_option("--baselines", run_args.baselines, "reference rows to show beside the result");
  run->add_option("--label", run_args.label, "row label for this run");
  run->add_option("--benchmark", run_args.benchmark, "benchmark name (default: pack name)");
  run->add_option("--oracle-depth", run_args.oracle_depth, "search depth for the oracle policy");

  std::string oracle_pack;
  int oracle_steps = 12;
  std::uint64_t oracle_seed = 0;
  bool oracle_json = false;
  auto* oracle = app.add_subcommand("oracle", "breadth-first solve every task of a pack");
  oracle->add_option("--pack", oracle_pack)->required()->check(CLI::ExistingDirectory);
  oracle->add_option("--max-steps", oracle_steps);
  oracle->add_option("--seed", oracle_seed);
  oracle->add_flag("--json", oracle_json);

  std::string render_pack;
  bool render_check = false;
  std::size_t render_max = 50000;
  auto* render = app.add_subcommand("render-assets", "pre-render screenshot PNGs for a pack");
  render->add_option("--pack", render_pack)->required()->check(CLI::ExistingDirectory);
  render->add_flag("--check", render_check, "only verify that every asset exists");
  render->add_option("--max-states", render_max);

  IngestArgs ingest_args;
  auto add_ingest_opts = [&](CLI::App* c) {
    c->add_option("--adapter", ingest_args.adapter)->required()->check(CLI::IsMember(adapter_ids()));
    c->add_option("--input", ingest_args.input)->required()->check(CLI::ExistingFile);
    c->add_option("--out", ingest_args.out)->required();
    c->add_option("--domain", ingest_args.domain, "domain label (instruction adapter)");
    c->add_option("--source", ingest_args.source, "source label (instruction adapter)");
    c->add_flag("--strict", ingest_args.strict, "fail on the first bad record");
  };
  auto* ing = app.add_subcommand("ingest", "convert a source dataset into standard samples");
  add_ingest_opts(ing);

  int aug_attempts = 5, aug_threads = 4;
  auto* aug = app.add_subcommand("augment", "add generated reasoning to GUI steps (consistency-filtered)");
  add_ingest_opts(aug);
  aug->add_option("--attempts", aug_attempts);
  aug->add_option("--threads", aug_threads);

  std::vector<std::string> report_files;
  std::string report_bench, report_label = "run", report_baselines, report_out;
  auto* report = app.add_subcommand("report", "SR/PR report from saved trajectories");
  report->add_option("--trajectories", report_files)->required()->check(CLI::ExistingFile);
  report->add_option("--benchmark", report_bench);
  report->add_option("--label", report_label);
  report->add_option("--baselines", report_baselines);
  report->add_option("--out", report_out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*mix) return cmd_mix(mix_args);
    if (*serve) return cmd_serve(serve_args);
    if (*run) return cmd_run(run_args);
    if (*oracle) return cmd_oracle(oracle_pack, oracle_steps, oracle_seed, oracle_json);
    if (*render) return cmd_render(render_pack, render_check, render_max);
    if (*ing) return cmd_ingest(ingest_args);
    if (*aug) return cmd_augment(ingest_args, aug_attempts, aug_threads);
    if (*report) return cmd_report(report_files, report_bench, report_label, report_baselines, report_out);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

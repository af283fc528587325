#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <unistd.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace testsupport {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace guiharness;

fs::path data_dir() { return GUIHARNESS_TEST_DATA_DIR; }
fs::path fixture_dir() { return GUIHARNESS_TEST_FIXTURE_DIR; }
fs::path pack_dir(const std::string& name) { return data_dir() / "packs" / name; }

fs::path scratch_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  fs::path p = fs::temp_directory_path() /
               fmt::format("guiharness-test-{}-{}-{}", tag, static_cast<long>(::getpid()), counter++);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

namespace {

std::string random_text(std::mt19937_64& rng, bool allow_edges) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 []\\\n\"'.,:/-_?!";
  std::uniform_int_distribution<int> len(1, 24);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  int n = len(rng);
  for (int i = 0; i < n; ++i) s.push_back(alphabet[pick(rng)]);
  if (!allow_edges) {
    // keep a word character at both ends so trimming has nothing to do
    s.front() = 'a' + static_cast<char>(rng() % 26);
    s.back() = 'A' + static_cast<char>(rng() % 26);
  }
  return s;
}

Coordinate random_coord(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng)};
}

}  // namespace

GroundedAction random_action(std::mt19937_64& rng, Platform p) {
  auto kinds = legal_kinds(p);
  GroundedAction a;
  a.platform = p;
  a.kind = kinds[rng() % kinds.size()];
  if (requires_coordinate(a.kind)) a.coord = random_coord(rng);
  switch (a.kind) {
    case ActionKind::type: a.value = random_text(rng, false); break;
    case ActionKind::scroll: {
      static const char* dirs[] = {"up", "down", "left", "right"};
      a.value = dirs[rng() % (p == Platform::mobile ? 4 : 2)];
      if (p == Platform::mobile && rng() % 2) a.coord = random_coord(rng);
      break;
    }
    case ActionKind::open_app: a.value = random_text(rng, false); break;
    case ActionKind::wait: {
      static const char* secs[] = {"1", "2.5", "5", "10", "0.25"};
      a.value = secs[rng() % 5];
      break;
    }
    case ActionKind::stop: {
      static const char* st[] = {"completed", "infeasible", "3", "The answer is 42"};
      a.value = st[rng() % 4];
      break;
    }
    case ActionKind::press: {
      static const char* keys[] = {"Enter", "ctrl+a", "Tab", "PageDown"};
      a.value = keys[rng() % 4];
      break;
    }
    case ActionKind::page_focus: a.tab_index = static_cast<std::uint32_t>(rng() % 8); break;
    case ActionKind::goto_url: a.url = fmt::format("http://host{}.local/path?q={}", rng() % 100, rng() % 1000); break;
    default: break;
  }
  return a;
}

GeneratedTask random_task(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto coin = [&](double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; };
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  const bool mobile = coin(0.4);
  const int n_screens = 3 + static_cast<int>(pick(4));
  const int n_flags = 2 + static_cast<int>(pick(3));
  const std::vector<std::string> words = {"alpha", "bravo", "charlie", "delta", "echo"};

  std::vector<std::string> screen_ids;
  for (int i = 0; i < n_screens; ++i) screen_ids.push_back(fmt::format("s{}", i));

  json state = json::object();
  for (int f = 0; f < n_flags; ++f) state[fmt::format("f{}", f)] = {{"type", "bool"}, {"initial", false}};
  state["text"] = {{"type", "string"}, {"initial", ""}};
  state["ghost"] = {{"type", "bool"}, {"initial", false}};

  // one text field lives on a random screen
  const int text_screen = static_cast<int>(pick(n_screens));
  json screens = json::array();
  for (int i = 0; i < n_screens; ++i) {
    json els = json::array();
    int n_el = 2 + static_cast<int>(pick(4));
    if (i == text_screen) ++n_el;
    for (int k = 0; k < n_el; ++k) {
      // 2 columns, rows of height 0.1 with gaps: bboxes never overlap
      double x0 = 0.05 + 0.45 * (k % 2), y0 = 0.1 + 0.12 * (k / 2);
      json e = {{"id", fmt::format("s{}_e{}", i, k)},
                {"label", fmt::format("{} {} control on s{}", words[pick(words.size())], k, i)},
                {"bbox", {x0, y0, x0 + 0.4, y0 + 0.1}}};
      if (i == text_screen && k == n_el - 1) {
        e["bind"] = "text";
        e["label"] = fmt::format("text input on s{}", i);
      } else if (coin(0.55)) {
        e["on_click"] = {{"navigate", screen_ids[pick(n_screens)]}};
      } else if (coin(0.7)) {
        e["on_click"] = {{"set", {{fmt::format("f{}", pick(n_flags)), true}}}};
        if (coin(0.3)) e["on_click"]["navigate"] = screen_ids[pick(n_screens)];
      }
      els.push_back(std::move(e));
    }
    json s = {{"id", screen_ids[i]}, {"elements", std::move(els)}};
    if (!mobile) s["url"] = fmt::format("http://gen.local/{}", screen_ids[i]);
    screens.push_back(std::move(s));
  }
  json env = {{"version", 1},
              {"name", fmt::format("gen-{}", seed)},
              {"platform", mobile ? "mobile" : "web"},
              {"initial_screen", "s0"},
              {"state", state},
              {"screens", screens}};

  const std::string typed = words[pick(words.size())] + " note";
  json subgoals = json::array();
  int n_sub = 1 + static_cast<int>(pick(3));
  bool wants_answer = false;
  for (int k = 0; k < n_sub; ++k) {
    switch (pick(4)) {
      case 0:
        subgoals.push_back({{"description", "reach a screen"}, {"check", {{"screen", screen_ids[pick(n_screens)]}}}});
        break;
      case 1: {
        std::string f = fmt::format("f{}", pick(n_flags));
        subgoals.push_back({{"description", "set " + f}, {"check", {{"var", f}, {"eq", true}}}});
        break;
      }
      case 2:
        subgoals.push_back({{"description", "type the note"}, {"check", {{"var", "text"}, {"eq", typed}}}});
        break;
      default:
        wants_answer = true;
        subgoals.push_back({{"description", "answer"}, {"check", {{"answer", "42"}}}});
    }
  }
  GeneratedTask out;
  if (coin(0.25)) {
    out.planted_unreachable = true;
    subgoals.push_back({{"description", "never reachable"}, {"check", {{"var", "ghost"}, {"eq", true}}}});
  }
  json task = {{"id", fmt::format("gen-{}", seed)},
               {"goal", fmt::format("Generated goal {}", seed)},
               {"subgoals", subgoals},
               {"type_candidates", {typed}}};
  if (wants_answer) task["answer_candidates"] = {"42", "7"};
  json tasks = {{"version", 1}, {"tasks", {task}}};

  auto g = std::make_shared<sim::ScreenGraph>(sim::graph_from_json(env));
  out.task = sim::tasks_from_json(tasks, *g, seed).at(0);
  out.graph = std::move(g);
  return out;
}

double brute_progress(const std::vector<std::vector<bool>>& history) {
  long double best = 0;
  for (std::size_t t = 0; t < history.size(); ++t) {
    // recompute every prefix from scratch
    long double prefix_best = 0;
    for (std::size_t u = 0; u <= t; ++u) {
      std::size_t c = 0;
      for (bool b : history[u]) c += b ? 1 : 0;
      prefix_best = std::max(prefix_best, static_cast<long double>(c) / history[u].size());
    }
    best = prefix_best;
  }
  return static_cast<double>(best);
}

bool prefix_balanced(const std::vector<bool>& is_gui) {
  const std::uint64_t n = is_gui.size();
  std::uint64_t g = 0;
  for (bool b : is_gui) g += b ? 1 : 0;
  std::uint64_t seen = 0;
  for (std::uint64_t k = 1; k <= n; ++k) {
    seen += is_gui[k - 1] ? 1 : 0;
    // floor and ceil of k*g/n without floating point
    unsigned __int128 prod = static_cast<unsigned __int128>(k) * g;
    std::uint64_t lo = static_cast<std::uint64_t>(prod / n);
    std::uint64_t hi = lo + (prod % n ? 1 : 0);
    if (seen < lo || seen > hi) return false;
  }
  return true;
}

long double reference_lr(std::uint64_t step, std::uint64_t total, long double base, long double warmup_ratio) {
  // smallest integer w with w >= warmup_ratio * total
  std::uint64_t w = 0;
  while (static_cast<long double>(w) < warmup_ratio * total - 1e-9L) ++w;
  if (step >= total) return 0;
  if (step <= w && w > 0) return base * step / w;
  long double pi = std::acos(-1.0L);
  long double progress = static_cast<long double>(step - w) / (total - w);
  return base * 0.5L * (1 + std::cos(pi * progress));
}

}  // namespace testsupport

#include "render_assets.hpp"

#include <deque>
#include <map>
#include <unordered_set>

#include <fmt/format.h>
#include <png.h>

#include "guiharness/digest.hpp"
#include "guiharness/error.hpp"
#include "guiharness/sim_env.hpp"

namespace guiharness::tools {

namespace fs = std::filesystem;
using namespace guiharness::sim;

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb color_of(std::string_view key, int lo) {
  const std::uint64_t h = fnv1a64(key);
  auto ch = [&](int shift) { return static_cast<std::uint8_t>(lo + static_cast<int>((h >> shift) & 0xFF) % (256 - lo)); };
  return {ch(0), ch(8), ch(16)};
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void fill(double x0, double y0, double x1, double y1, Rgb c) {
    const int a = clamp_x(x0), b = clamp_y(y0), e = clamp_x(x1), f = clamp_y(y1);
    for (int y = b; y < f; ++y)
      for (int x = a; x < e; ++x) put(x, y, c);
  }

  void outline(double x0, double y0, double x1, double y1, Rgb c) {
    const int a = clamp_x(x0), b = clamp_y(y0), e = std::max(a, clamp_x(x1) - 1), f = std::max(b, clamp_y(y1) - 1);
    for (int x = a; x <= e; ++x) {
      put(x, b, c);
      put(x, f, c);
    }
    for (int y = b; y <= f; ++y) {
      put(a, y, c);
      put(e, y, c);
    }
  }

  void save(const fs::path& file) const {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w_);
    img.height = static_cast<png_uint_32>(h_);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, file.c_str(), 0, px_.data(), 0, nullptr))
      throw Error(ErrorCode::Io, fmt::format("cannot write {}: {}", file.string(), img.message));
  }

 private:
  int clamp_x(double v) const { return std::clamp(static_cast<int>(v * w_ + 0.5), 0, w_); }
  int clamp_y(double v) const { return std::clamp(static_cast<int>(v * h_ + 0.5), 0, h_); }
  void put(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  int w_, h_;
  std::vector<std::uint8_t> px_;
};

// Boxes only, no text: the images exist so observation plumbing carries real
// PNG bytes, and differ whenever the render key differs.
void draw(const ScreenGraph& g, const SimState* s, const Screen& scr, const std::string& stamp, const fs::path& out) {
  const bool web = g.platform == Platform::web;
  Canvas c(web ? 960 : 540, web ? 600 : 960);
  const Rgb bg = color_of(scr.id, 225);
  c.fill(0, 0, 1, 1, bg);
  if (web) c.fill(0, 0, 1, 0.08, Rgb{60, 64, 72});
  for (const auto& e : scr.elements) {
    if (s && !is_visible(e, *s)) continue;
    c.fill(e.bbox.x0, e.bbox.y0, e.bbox.x1, e.bbox.y1, color_of(e.id, 120));
    c.outline(e.bbox.x0, e.bbox.y0, e.bbox.x1, e.bbox.y1, Rgb{30, 30, 30});
    if (e.text_field) c.fill(e.bbox.x0 + 0.01, e.bbox.y0 + 0.01, e.bbox.x1 - 0.01, e.bbox.y1 - 0.01, Rgb{250, 250, 250});
  }
  // A strip of eight cells coloured from the render digest.
  for (std::size_t i = 0; i < stamp.size() && i < 8; ++i)
    c.fill(0.02 + 0.03 * static_cast<double>(i), 0.965, 0.045 + 0.03 * static_cast<double>(i), 0.99,
           color_of(stamp.substr(i), 0));
  c.save(out);
}

}  // namespace

RenderSummary render_pack_assets(const fs::path& pack_dir, bool check, std::size_t max_states) {
  TaskPack pack = load_pack(pack_dir);
  const ScreenGraph& g = *pack.graph;
  RenderSummary sum;
  std::map<std::string, SimState> keys;
  std::unordered_set<std::string> seen;
  for (const auto& task : pack.tasks) {
    std::deque<SimState> q{initial_state(g, task.start_screen)};
    std::size_t visited = 0;
    while (!q.empty() && visited < max_states) {
      SimState s = std::move(q.front());
      q.pop_front();
      if (!seen.insert(state_key(s)).second) continue;
      ++sum.states;
      ++visited;
      keys.emplace(screenshot_ref(g, s), s);
      for (const auto& a : enumerate_actions(g, s, task)) {
        if (a.kind == ActionKind::stop) continue;
        q.push_back(apply(g, s, a).state);
      }
    }
  }
  sum.keys = keys.size();
  const fs::path assets = pack.root / "assets";
  if (!check) fs::create_directories(assets);
  for (const auto& [ref, s] : keys) {
    const fs::path file = pack.root / ref;
    if (check) {
      if (!fs::exists(file)) sum.missing.push_back(ref);
      continue;
    }
    draw(g, &s, g.at(s.screen()), render_digest(g, s), file);
    ++sum.written;
  }
  for (const auto& scr : g.screens) {
    const fs::path file = assets / (scr.id + ".png");
    if (check) {
      if (!fs::exists(file)) sum.missing.push_back("assets/" + scr.id + ".png");
      continue;
    }
    draw(g, nullptr, scr, "", file);
    ++sum.written;
  }
  return sum;
}

}  // namespace guiharness::tools

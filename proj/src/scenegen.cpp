#include "rulelab/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>

#include "rulelab/error.hpp"
#include "rulelab/parallel.hpp"
#include "rulelab/rng.hpp"

namespace rulelab {

namespace {

enum StreamTag : std::uint64_t { kGeometryStream = 0x5ce0e, kNoiseStream = 0x7015e };

struct Pixel {
  int row, col;
  double x() const { return col + 0.5; }
  double y() const { return row + 0.5; }
};

using Mask = std::vector<std::uint8_t>;

std::vector<Pixel> pixels_of(const Mask& mask, int size) {
  std::vector<Pixel> out;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j)
      if (mask[static_cast<std::size_t>(i) * size + j]) out.push_back({i, j});
  return out;
}

Mask disk_mask(int size, double cx, double cy, double r) {
  Mask m(static_cast<std::size_t>(size) * size, 0);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double dx = j + 0.5 - cx, dy = i + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) m[static_cast<std::size_t>(i) * size + j] = 1;
    }
  return m;
}

// Half-open box [x0, x1) x [y0, y1) in continuous coordinates.
Mask rect_mask(int size, double x0, double y0, double x1, double y1) {
  Mask m(static_cast<std::size_t>(size) * size, 0);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double x = j + 0.5, y = i + 0.5;
      if (x >= x0 && x < x1 && y >= y0 && y < y1) m[static_cast<std::size_t>(i) * size + j] = 1;
    }
  return m;
}

struct PixelStats {
  int count = 0;
  double cx = 0, cy = 0;
  int row_min = std::numeric_limits<int>::max(), row_max = -1;
  int col_min = std::numeric_limits<int>::max(), col_max = -1;
};

PixelStats stats_of(const std::vector<Pixel>& px) {
  PixelStats s;
  for (const auto& p : px) {
    ++s.count;
    s.cx += p.x();
    s.cy += p.y();
    s.row_min = std::min(s.row_min, p.row);
    s.row_max = std::max(s.row_max, p.row);
    s.col_min = std::min(s.col_min, p.col);
    s.col_max = std::max(s.col_max, p.col);
  }
  if (s.count > 0) {
    s.cx /= s.count;
    s.cy /= s.count;
  }
  return s;
}

double safe_ratio(double num, double den) {
  return den > 0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

// ---- geometry samplers -----------------------------------------------------

std::optional<SceneA> sample_a(Rng& rng, int size, double ratio, double ratio_cap) {
  const double S = size, k = S / 32.0;
  SceneA a;
  a.pole_width = 2 * k;
  a.pole_x = S / 2;
  a.ground_y = std::round(0.875 * S);
  a.pole_height = rng.uniform(0.2 * S, 0.4 * S);
  a.sun_height = sun_height_for(a.pole_height, size);
  a.sun_radius = 2 * k;
  static constexpr double kIntervals[4][2] = {
      {0.0, 0.1875}, {0.8125, 1.0}, {0.3125, 0.5}, {0.5, 0.6875}};
  const auto& iv = kIntervals[rng.uniform_int(0, 3)];
  a.sun_x = rng.uniform(iv[0] * S, iv[1] * S);
  a.sun_distance = a.sun_x - a.pole_x;
  a.sun_y = a.ground_y - a.sun_height;
  a.shadow_thickness = k;
  if (std::fabs(a.sun_distance) < k) return std::nullopt;
  if (a.sun_x - a.sun_radius < 0 || a.sun_x + a.sun_radius > S) return std::nullopt;
  if (a.sun_y - a.sun_radius < 0) return std::nullopt;
  const double base = shadow_length(a.pole_height, a.sun_distance, a.sun_height);
  a.shadow_length = ratio * base;
  // Fit is checked at the largest ratio of the set so accepted geometry does
  // not depend on this sample's own ratio.
  if (ratio_cap * base > S / 2) return std::nullopt;
  if (a.ground_y + a.shadow_thickness > S) return std::nullopt;
  return a;
}

std::optional<SceneB> sample_b(Rng& rng, int size, double ratio, double /*ratio_cap*/) {
  const double S = size;
  SceneB b;
  b.width = 0.125 * S;
  b.ground_y = std::round(0.8 * S);
  b.l1 = rng.uniform(0.0, 0.3 * S);
  b.h1 = rng.uniform(0.2 * S, 0.6 * S);
  b.l2 = rng.uniform(b.l1 + 0.2 * S, 0.8 * S);
  b.h2 = ratio * b.l1 * b.h1 / b.l2;
  if (b.h2 >= b.h1 || b.h2 > b.ground_y) return std::nullopt;
  return b;
}

std::optional<SceneC> sample_c(Rng& rng, int size, double ratio, double ratio_cap) {
  const double S = size;
  SceneC c;
  c.r1 = rng.uniform(0.05 * S, 0.15 * S);
  c.r2 = ratio * c.r1;
  c.side = static_cast<Side>(rng.uniform_int(0, 3));
  if (2 * c.r1 + 2 * ratio_cap * c.r1 > S) return std::nullopt;
  // Large-circle center drawn from the exact region where both circles fit.
  const double reach = 2 * c.r1 + c.r2;
  double x_lo = c.r2, x_hi = S - c.r2, y_lo = c.r2, y_hi = S - c.r2;
  switch (c.side) {
    case Side::Left: x_lo = reach; break;
    case Side::Right: x_hi = S - reach; break;
    case Side::Top: y_lo = reach; break;
    case Side::Bottom: y_hi = S - reach; break;
  }
  c.large_cx = rng.uniform(x_lo, x_hi);
  c.large_cy = rng.uniform(y_lo, y_hi);
  const double dist = c.r1 + c.r2;
  double dx = 0, dy = 0;
  switch (c.side) {
    case Side::Left: dx = -dist; break;
    case Side::Right: dx = dist; break;
    case Side::Top: dy = -dist; break;
    case Side::Bottom: dy = dist; break;
  }
  c.small_cx = c.large_cx + dx;
  c.small_cy = c.large_cy + dy;
  return c;
}

std::optional<SceneD> sample_d(Rng& rng, int size, double ratio, double ratio_cap) {
  const double S = size, half = S / 2;
  SceneD d;
  d.l1 = rng.uniform(0.3 * half, 0.7 * half);
  d.l2 = ratio * d.l1;
  if (ratio_cap * d.l1 > half || d.l2 <= d.l1) return std::nullopt;
  d.small_x = rng.uniform(0.0, S - d.l1);
  d.small_y = rng.uniform(0.0, half - d.l1);
  d.large_x = rng.uniform(0.0, S - d.l2);
  d.large_y = rng.uniform(half, S - d.l2);
  return d;
}

// Rendered-pixel sanity: every element present, no pixel owned twice, and the
// task's coarse rule visible on the lattice.
bool structurally_ok(TaskId task, int size, const std::vector<Mask>& masks,
                     const RenderedFeatures& f) {
  for (const auto& m : masks)
    if (std::find(m.begin(), m.end(), 1) == m.end()) return false;
  for (std::size_t p = 0; p < masks[0].size(); ++p) {
    int owners = 0;
    for (const auto& m : masks) owners += m[p];
    if (owners > 1) return false;
  }
  const double k = size / 32.0;
  switch (task) {
    case TaskId::A:
      return f.l1 >= k && f.l2 >= 1 && f.h1 > 0 && f.h2 >= 1;
    case TaskId::B:
      return f.l1 >= 1 && f.h2 >= 1 && f.h1 > f.h2 && f.l2 > f.l1;
    case TaskId::C:
      return f.r2 - f.r1 > 0.5;
    case TaskId::D: {
      if (f.l2 <= f.l1) return false;
      const int half = size / 2;
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          const std::size_t p = static_cast<std::size_t>(i) * size + j;
          if (masks[0][p] && i >= half) return false;
          if (masks[1][p] && i < half) return false;
        }
      return true;
    }
  }
  return false;
}

std::vector<ElementColor> sample_colors(Rng& rng, TaskId task, const RangeTable& table,
                                        int budget, int index) {
  const auto& ranges = table.of(task);
  std::vector<ElementColor> out;
  for (std::size_t e = 0; e < ranges.size(); ++e) {
    const auto& r = ranges[e].range;
    bool done = false;
    for (int attempt = 0; attempt < budget && !done; ++attempt) {
      Hsv8 hsv{static_cast<int>(rng.uniform_int(r.hue_lo, r.hue_hi)),
               static_cast<int>(rng.uniform_int(r.sat_lo, r.sat_hi)),
               static_cast<int>(rng.uniform_int(r.val_lo, r.val_hi))};
      const Rgb8 rgb = hsv_to_rgb(hsv);
      const Hsv8 seen = rgb_to_hsv(rgb);
      if (rgb == kWhite || !r.contains(seen)) continue;
      bool clash = false;
      for (std::size_t o = 0; o < ranges.size(); ++o)
        if (o != e && ranges[o].range.contains(seen)) clash = true;
      if (clash) continue;
      out.push_back({ranges[e].element, seen, rgb});
      done = true;
    }
    if (!done)
      throw GenerationError(index, budget,
                            "sample " + std::to_string(index) + ": no representable color for " +
                                ranges[e].element + " after " + std::to_string(budget) +
                                " attempts");
  }
  return out;
}

struct SampleRequest {
  int index = 0;
  double factor = 1;
  double factor_cap = 1;  // largest factor in the set
  std::uint64_t class_stream = 0;
};

SampleRecord generate_one(TaskId task, const SampleRequest& req, const GenerateOptions& opt) {
  Rng rng(opt.seed, {kGeometryStream, static_cast<std::uint64_t>(task), req.class_stream,
                     static_cast<std::uint64_t>(req.index)});
  const double target = target_ratio(task) * req.factor;
  const double cap = target_ratio(task) * std::max(req.factor, req.factor_cap);
  const bool on_rule = req.factor == 1.0;
  const int tier_len = std::max(1, opt.retry_budget / 5);
  for (int attempt = 1; attempt <= opt.retry_budget; ++attempt) {
    const double tol = on_rule ? opt.raster_tolerance
                               : std::ldexp(opt.offrule_tolerance, std::min(4, (attempt - 1) / tier_len));
    SceneParams p;
    p.task = task;
    p.image_size = opt.image_size;
    p.rng_seed = opt.seed;
    p.index = static_cast<std::uint64_t>(req.index);
    bool ok = false;
    switch (task) {
      case TaskId::A:
        if (auto g = sample_a(rng, opt.image_size, target, cap)) p.geometry = *g, ok = true;
        break;
      case TaskId::B:
        if (auto g = sample_b(rng, opt.image_size, target, cap)) p.geometry = *g, ok = true;
        break;
      case TaskId::C:
        if (auto g = sample_c(rng, opt.image_size, target, cap)) p.geometry = *g, ok = true;
        break;
      case TaskId::D:
        if (auto g = sample_d(rng, opt.image_size, target, cap)) p.geometry = *g, ok = true;
        break;
    }
    if (!ok) continue;
    const auto masks = render_masks(p);
    const RenderedFeatures f = measure_rendered(p, masks);
    if (!structurally_ok(task, opt.image_size, masks, f)) continue;
    if (!(std::fabs(f.ratio / target - 1.0) <= tol)) continue;
    p.colors = sample_colors(rng, task, opt.ranges, opt.retry_budget, req.index);
    SampleRecord rec;
    rec.index = req.index;
    rec.file = image_filename(task, req.index);
    rec.params = std::move(p);
    rec.target_ratio = target;
    rec.exact_ratio = exact_ratio(rec.params);
    rec.rendered = f;
    rec.attempts = attempt;
    rec.accepted_tolerance = tol;
    return rec;
  }
  throw GenerationError(req.index, opt.retry_budget,
                        "task " + task_name(task) + " sample " + std::to_string(req.index) +
                            ": geometry rejected " + std::to_string(opt.retry_budget) +
                            " times (retry budget exhausted)");
}

void validate_options(int n, const GenerateOptions& opt) {
  if (n < 1) throw ConfigError("sample count must be >= 1, got " + std::to_string(n));
  if (opt.image_size != 32 && opt.image_size != 64)
    throw ConfigError("image size must be 32 or 64, got " + std::to_string(opt.image_size));
  if (opt.retry_budget < 1) throw ConfigError("retry budget must be >= 1");
  if (!(opt.raster_tolerance > 0) || !(opt.offrule_tolerance > 0))
    throw ConfigError("raster tolerances must be > 0");
  if (opt.threads < 1) throw ConfigError("threads must be >= 1");
}

Dataset run_requests(TaskId task, const std::vector<SampleRequest>& reqs,
                     const GenerateOptions& opt, DatasetManifest manifest) {
  std::vector<SampleRecord> records(reqs.size());
  std::vector<RasterImage> images(reqs.size());
  parallel_for(static_cast<int>(reqs.size()), opt.threads, [&](int i) {
    records[i] = generate_one(task, reqs[i], opt);
    images[i] = render_image(records[i].params);
  });
  manifest.task = task;
  manifest.n_samples = static_cast<int>(reqs.size());
  manifest.image_size = opt.image_size;
  manifest.seed = opt.seed;
  manifest.raster_tolerance = opt.raster_tolerance;
  manifest.offrule_tolerance = opt.offrule_tolerance;
  manifest.samples = std::move(records);
  return {std::move(manifest), std::move(images)};
}

}  // namespace

std::string side_name(Side side) {
  switch (side) {
    case Side::Left: return "left";
    case Side::Right: return "right";
    case Side::Top: return "top";
    case Side::Bottom: return "bottom";
  }
  return "left";
}

Side parse_side(const std::string& name) {
  if (name == "left") return Side::Left;
  if (name == "right") return Side::Right;
  if (name == "top") return Side::Top;
  if (name == "bottom") return Side::Bottom;
  throw ConfigError("unknown tangency side '" + name + "'");
}

double shadow_length(double pole_height, double sun_distance, double sun_height) {
  if (!(sun_height > pole_height))
    throw ConfigError("sun height must exceed pole height for a finite shadow");
  return pole_height * std::fabs(sun_distance) / (sun_height - pole_height);
}

double sun_height_for(double pole_height, int image_size) {
  return std::clamp(2.0 * pole_height, 0.3 * image_size, 0.8 * image_size);
}

double exact_ratio(const SceneParams& p) {
  return std::visit(
      [](const auto& g) -> double {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, SceneA>) {
          const double l1 = std::fabs(g.sun_distance), h1 = g.sun_height - g.pole_height;
          return g.shadow_length * h1 / (l1 * g.pole_height);
        } else if constexpr (std::is_same_v<G, SceneB>) {
          return g.l2 * g.h2 / (g.l1 * g.h1);
        } else if constexpr (std::is_same_v<G, SceneC>) {
          return g.r2 / g.r1;
        } else {
          return g.l2 / g.l1;
        }
      },
      p.geometry);
}

std::vector<Mask> render_masks(const SceneParams& p) {
  const int S = p.image_size;
  return std::visit(
      [S](const auto& g) -> std::vector<Mask> {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, SceneA>) {
          Mask sun = disk_mask(S, g.sun_x, g.sun_y, g.sun_radius);
          Mask pole = rect_mask(S, g.pole_x - g.pole_width / 2, g.ground_y - g.pole_height,
                                g.pole_x + g.pole_width / 2, g.ground_y);
          const bool right = g.sun_distance < 0;
          const double x0 = right ? g.pole_x : g.pole_x - g.shadow_length;
          const double x1 = right ? g.pole_x + g.shadow_length : g.pole_x;
          Mask shadow = rect_mask(S, x0, g.ground_y, x1, g.ground_y + g.shadow_thickness);
          return {sun, pole, shadow};
        } else if constexpr (std::is_same_v<G, SceneB>) {
          return {rect_mask(S, g.l1, g.ground_y - g.h1, g.l1 + g.width, g.ground_y),
                  rect_mask(S, g.l2, g.ground_y - g.h2, g.l2 + g.width, g.ground_y)};
        } else if constexpr (std::is_same_v<G, SceneC>) {
          return {disk_mask(S, g.small_cx, g.small_cy, g.r1),
                  disk_mask(S, g.large_cx, g.large_cy, g.r2)};
        } else {
          return {rect_mask(S, g.small_x, g.small_y, g.small_x + g.l1, g.small_y + g.l1),
                  rect_mask(S, g.large_x, g.large_y, g.large_x + g.l2, g.large_y + g.l2)};
        }
      },
      p.geometry);
}

RasterImage render_image(const SceneParams& p) {
  const auto masks = render_masks(p);
  if (p.colors.size() != masks.size())
    throw Error("scene has " + std::to_string(p.colors.size()) + " colors for " +
                std::to_string(masks.size()) + " elements");
  RasterImage img(p.image_size, p.image_size);
  for (std::size_t e = 0; e < masks.size(); ++e)
    for (int i = 0; i < p.image_size; ++i)
      for (int j = 0; j < p.image_size; ++j)
        if (masks[e][static_cast<std::size_t>(i) * p.image_size + j]) img.set(i, j, p.colors[e].rgb);
  return img;
}

RenderedFeatures measure_rendered(const SceneParams& p, const std::vector<Mask>& masks) {
  const int S = p.image_size;
  RenderedFeatures f;
  std::vector<std::vector<Pixel>> px;
  for (const auto& m : masks) px.push_back(pixels_of(m, S));
  switch (p.task) {
    case TaskId::A: {
      const PixelStats sun = stats_of(px[0]), pole = stats_of(px[1]);
      if (sun.count == 0 || pole.count == 0 || px[2].empty()) break;
      double reach = 0;
      for (const auto& q : px[2]) reach = std::max(reach, std::fabs(q.x() - pole.cx));
      f.l1 = std::fabs(sun.cx - pole.cx);
      f.h1 = pole.row_min - sun.cy;
      f.h2 = pole.row_max + 1 - pole.row_min;
      f.l2 = reach + 0.5;
      f.ratio = safe_ratio(f.l2 * f.h1, f.l1 * f.h2);
      break;
    }
    case TaskId::B: {
      const PixelStats r1 = stats_of(px[0]), r2 = stats_of(px[1]);
      if (r1.count == 0 || r2.count == 0) break;
      f.l1 = r1.col_min;
      f.h1 = r1.row_max + 1 - r1.row_min;
      f.l2 = r2.col_min;
      f.h2 = r2.row_max + 1 - r2.row_min;
      f.ratio = safe_ratio(f.l2 * f.h2, f.l1 * f.h1);
      break;
    }
    case TaskId::C: {
      const PixelStats c1 = stats_of(px[0]), c2 = stats_of(px[1]);
      if (c1.count == 0 || c2.count == 0) break;
      f.r1 = std::sqrt(c1.count / M_PI);
      f.r2 = std::sqrt(c2.count / M_PI);
      f.gap = std::hypot(c1.cx - c2.cx, c1.cy - c2.cy) - f.r1 - f.r2;
      f.ratio = f.r2 / f.r1;
      break;
    }
    case TaskId::D: {
      if (px[0].empty() || px[1].empty()) break;
      f.l1 = std::sqrt(static_cast<double>(px[0].size()));
      f.l2 = std::sqrt(static_cast<double>(px[1].size()));
      f.ratio = f.l2 / f.l1;
      break;
    }
  }
  return f;
}

SceneParams rescale_scene(const SceneParams& p, int image_size) {
  SceneParams out = p;
  out.image_size = image_size;
  const double s = static_cast<double>(image_size) / p.image_size;
  std::visit(
      [s](auto& g) {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, SceneA>) {
          for (double* v : {&g.pole_height, &g.pole_x, &g.pole_width, &g.ground_y,
                            &g.sun_distance, &g.sun_height, &g.sun_x, &g.sun_y, &g.sun_radius,
                            &g.shadow_length, &g.shadow_thickness})
            *v *= s;
        } else if constexpr (std::is_same_v<G, SceneB>) {
          for (double* v : {&g.l1, &g.h1, &g.l2, &g.h2, &g.width, &g.ground_y}) *v *= s;
        } else if constexpr (std::is_same_v<G, SceneC>) {
          for (double* v : {&g.r1, &g.r2, &g.small_cx, &g.small_cy, &g.large_cx, &g.large_cy})
            *v *= s;
        } else {
          for (double* v : {&g.l1, &g.l2, &g.small_x, &g.small_y, &g.large_x, &g.large_y}) *v *= s;
        }
      },
      out.geometry);
  return out;
}

std::pair<double, double> ratio_factor_bounds(TaskId task) {
  switch (task) {
    // Shadow must stay on the ground and inside the frame.
    case TaskId::A: return {0.05, 3.0};
    // l2/l1 >= 1 + 0.2/0.3, so h2 < h1 holds for any factor below 1.6.
    case TaskId::B: return {0.05, 1.6};
    // Keep r2 visibly larger than r1.
    case TaskId::C: return {0.75, 2.0};
    case TaskId::D: return {0.75, 2.0};
  }
  return {0.05, 3.0};
}

std::string image_filename(TaskId task, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06d.png", task_name(task).c_str(), index);
  return buf;
}

Dataset generate_dataset(TaskId task, int n, const GenerateOptions& options) {
  validate_options(n, options);
  std::vector<SampleRequest> reqs(n);
  for (int i = 0; i < n; ++i) reqs[i] = {i, 1.0, 1.0, 0};
  DatasetManifest m;
  m.kind = "train";
  return run_requests(task, reqs, options, m);
}

Dataset generate_perturbed(TaskId task, int n, double bias, double noise_sd,
                           const GenerateOptions& options) {
  validate_options(n, options);
  if (!(noise_sd >= 0)) throw ConfigError("noise_sd must be >= 0");
  if (!std::isfinite(bias)) throw ConfigError("bias must be finite");
  const auto [lo, hi] = ratio_factor_bounds(task);
  std::vector<SampleRequest> reqs(n);
  std::vector<char> clamped(n, 0);
  int n_clamped = 0;
  for (int i = 0; i < n; ++i) {
    Rng noise(options.seed,
              {kNoiseStream, static_cast<std::uint64_t>(task), static_cast<std::uint64_t>(i)});
    const double raw = 1.0 + bias + (noise_sd > 0 ? noise_sd * noise.normal() : 0.0);
    const double f = std::clamp(raw, lo, hi);
    clamped[i] = f != raw;
    n_clamped += clamped[i];
    reqs[i] = {i, f, f, 0};
  }
  double cap = 1.0;
  for (const auto& r : reqs) cap = std::max(cap, r.factor);
  for (auto& r : reqs) r.factor_cap = cap;
  DatasetManifest m;
  m.kind = "perturbed";
  m.bias = bias;
  m.noise_sd = noise_sd;
  m.clamp_rate = static_cast<double>(n_clamped) / n;
  if (m.clamp_rate > 0.2)
    m.warnings.push_back("clamp rate " + format_double(m.clamp_rate) +
                         " exceeds 0.2; realized ratios are not the requested distribution");
  Dataset ds = run_requests(task, reqs, options, m);
  for (int i = 0; i < n; ++i) ds.manifest.samples[i].clamped = clamped[i];
  return ds;
}

std::array<Dataset, 3> generate_contrastive(TaskId task, int n_per_class, double low,
                                            double high, const GenerateOptions& options) {
  validate_options(n_per_class, options);
  if (!(low < 1.0 && 1.0 < high))
    throw ConfigError("contrastive offsets must satisfy low < 1 < high");
  const auto [lo, hi] = ratio_factor_bounds(task);
  if (low < lo || high > hi)
    throw ConfigError("contrastive offsets (" + format_double(low) + ", " + format_double(high) +
                      ") break the coarse rule for task " + task_name(task) +
                      "; allowed factor range [" + format_double(lo) + ", " + format_double(hi) +
                      "]");
  const double factors[3] = {low, 1.0, high};
  std::array<Dataset, 3> out;
  for (int c = 0; c < 3; ++c) {
    std::vector<SampleRequest> reqs(n_per_class);
    for (int i = 0; i < n_per_class; ++i)
      reqs[i] = {i, factors[c], high, static_cast<std::uint64_t>(c + 1)};
    DatasetManifest m;
    m.kind = "contrastive";
    m.label = c;
    m.ratio_factor = factors[c];
    out[c] = run_requests(task, reqs, options, m);
    for (auto& s : out[c].manifest.samples) s.label = c;
  }
  return out;
}

// ---- manifest serialization ------------------------------------------------

namespace {

json geometry_json(const SceneParams& p) {
  return std::visit(
      [](const auto& g) -> json {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, SceneA>) {
          return {{"pole_height", g.pole_height}, {"pole_x", g.pole_x},
                  {"pole_width", g.pole_width},   {"ground_y", g.ground_y},
                  {"sun_distance", g.sun_distance}, {"sun_height", g.sun_height},
                  {"sun_x", g.sun_x},             {"sun_y", g.sun_y},
                  {"sun_radius", g.sun_radius},   {"shadow_length", g.shadow_length},
                  {"shadow_thickness", g.shadow_thickness}};
        } else if constexpr (std::is_same_v<G, SceneB>) {
          return {{"l1", g.l1}, {"h1", g.h1}, {"l2", g.l2},
                  {"h2", g.h2}, {"width", g.width}, {"ground_y", g.ground_y}};
        } else if constexpr (std::is_same_v<G, SceneC>) {
          return {{"r1", g.r1},
                  {"r2", g.r2},
                  {"side", side_name(g.side)},
                  {"small_center", {g.small_cx, g.small_cy}},
                  {"large_center", {g.large_cx, g.large_cy}}};
        } else {
          return {{"l1", g.l1},
                  {"l2", g.l2},
                  {"small_corner", {g.small_x, g.small_y}},
                  {"large_corner", {g.large_x, g.large_y}}};
        }
      },
      p.geometry);
}

void geometry_from_json(SceneParams& p, const json& j) {
  switch (p.task) {
    case TaskId::A: {
      SceneA a;
      a.pole_height = j.at("pole_height");
      a.pole_x = j.at("pole_x");
      a.pole_width = j.at("pole_width");
      a.ground_y = j.at("ground_y");
      a.sun_distance = j.at("sun_distance");
      a.sun_height = j.at("sun_height");
      a.sun_x = j.at("sun_x");
      a.sun_y = j.at("sun_y");
      a.sun_radius = j.at("sun_radius");
      a.shadow_length = j.at("shadow_length");
      a.shadow_thickness = j.at("shadow_thickness");
      p.geometry = a;
      break;
    }
    case TaskId::B: {
      SceneB b;
      b.l1 = j.at("l1");
      b.h1 = j.at("h1");
      b.l2 = j.at("l2");
      b.h2 = j.at("h2");
      b.width = j.at("width");
      b.ground_y = j.at("ground_y");
      p.geometry = b;
      break;
    }
    case TaskId::C: {
      SceneC c;
      c.r1 = j.at("r1");
      c.r2 = j.at("r2");
      c.side = parse_side(j.at("side").get<std::string>());
      c.small_cx = j.at("small_center").at(0);
      c.small_cy = j.at("small_center").at(1);
      c.large_cx = j.at("large_center").at(0);
      c.large_cy = j.at("large_center").at(1);
      p.geometry = c;
      break;
    }
    case TaskId::D: {
      SceneD d;
      d.l1 = j.at("l1");
      d.l2 = j.at("l2");
      d.small_x = j.at("small_corner").at(0);
      d.small_y = j.at("small_corner").at(1);
      d.large_x = j.at("large_corner").at(0);
      d.large_y = j.at("large_corner").at(1);
      p.geometry = d;
      break;
    }
  }
}

json rendered_json(TaskId task, const RenderedFeatures& f) {
  switch (task) {
    case TaskId::A:
    case TaskId::B:
      return {{"l1", f.l1}, {"l2", f.l2}, {"h1", f.h1}, {"h2", f.h2}, {"ratio", f.ratio}};
    case TaskId::C:
      return {{"r1", f.r1}, {"r2", f.r2}, {"gap", f.gap}, {"ratio", f.ratio}};
    case TaskId::D:
      return {{"l1", f.l1}, {"l2", f.l2}, {"ratio", f.ratio}};
  }
  return {};
}

}  // namespace

json manifest_header_json(const DatasetManifest& m) {
  json h = {{"record", "header"},
            {"schema", "rulelab-manifest"},
            {"version", m.version},
            {"task", task_name(m.task)},
            {"kind", m.kind},
            {"n_samples", m.n_samples},
            {"image_size", m.image_size},
            {"seed", m.seed},
            {"raster_tolerance", m.raster_tolerance},
            {"offrule_tolerance", m.offrule_tolerance},
            {"target_ratio", target_ratio(m.task)},
            {"warnings", m.warnings}};
  if (m.kind == "perturbed") {
    h["bias"] = m.bias;
    h["noise_sd"] = m.noise_sd;
    h["clamp_rate"] = m.clamp_rate;
  }
  if (m.kind == "contrastive") {
    h["label"] = m.label;
    h["ratio_factor"] = m.ratio_factor;
  }
  if (m.task == TaskId::A) h["sun_radius_px"] = 2.0 * m.image_size / 32.0;
  return h;
}

json sample_record_json(const SampleRecord& r) {
  json colors = json::array();
  for (const auto& c : r.params.colors)
    colors.push_back({{"element", c.element},
                      {"hsv", {c.hsv.h, c.hsv.s, c.hsv.v}},
                      {"rgb", {c.rgb.r, c.rgb.g, c.rgb.b}}});
  json j = {{"record", "sample"},
            {"index", r.index},
            {"file", r.file},
            {"task", task_name(r.params.task)},
            {"image_size", r.params.image_size},
            {"rng_seed", r.params.rng_seed},
            {"geometry", geometry_json(r.params)},
            {"colors", colors},
            {"target_ratio", r.target_ratio},
            {"exact_ratio", r.exact_ratio},
            {"rendered", rendered_json(r.params.task, r.rendered)},
            {"attempts", r.attempts},
            {"accepted_tolerance", r.accepted_tolerance},
            {"clamped", r.clamped}};
  if (r.label >= 0) j["label"] = r.label;
  return j;
}

SampleRecord sample_record_from_json(const json& j) {
  SampleRecord r;
  r.index = j.at("index");
  r.file = j.at("file");
  r.params.task = parse_task(j.at("task").get<std::string>());
  r.params.image_size = j.at("image_size");
  r.params.rng_seed = j.at("rng_seed");
  r.params.index = static_cast<std::uint64_t>(r.index);
  geometry_from_json(r.params, j.at("geometry"));
  for (const auto& c : j.at("colors")) {
    ElementColor ec;
    ec.element = c.at("element");
    ec.hsv = {c.at("hsv").at(0), c.at("hsv").at(1), c.at("hsv").at(2)};
    ec.rgb = {c.at("rgb").at(0).get<std::uint8_t>(), c.at("rgb").at(1).get<std::uint8_t>(),
              c.at("rgb").at(2).get<std::uint8_t>()};
    r.params.colors.push_back(ec);
  }
  r.target_ratio = j.at("target_ratio");
  r.exact_ratio = j.at("exact_ratio");
  const auto& f = j.at("rendered");
  r.rendered.l1 = f.value("l1", 0.0);
  r.rendered.l2 = f.value("l2", 0.0);
  r.rendered.h1 = f.value("h1", 0.0);
  r.rendered.h2 = f.value("h2", 0.0);
  r.rendered.r1 = f.value("r1", 0.0);
  r.rendered.r2 = f.value("r2", 0.0);
  r.rendered.gap = f.value("gap", 0.0);
  r.rendered.ratio = f.at("ratio");
  r.attempts = j.at("attempts");
  r.accepted_tolerance = j.at("accepted_tolerance");
  r.clamped = j.at("clamped");
  r.label = j.value("label", -1);
  return r;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string text = manifest_header_json(ds.manifest).dump() + "\n";
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    write_png(dir / ds.manifest.samples[i].file, ds.images[i]);
    text += sample_record_json(ds.manifest.samples[i]).dump() + "\n";
  }
  write_text_file(dir / "manifest.jsonl", text);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  DatasetManifest m;
  bool have_header = false;
  std::size_t pos = 0;
  try {
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      const std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (j.at("record") == "header") {
        m.version = j.at("version");
        m.task = parse_task(j.at("task").get<std::string>());
        m.kind = j.at("kind");
        m.n_samples = j.at("n_samples");
        m.image_size = j.at("image_size");
        m.seed = j.at("seed");
        m.raster_tolerance = j.at("raster_tolerance");
        m.offrule_tolerance = j.at("offrule_tolerance");
        m.bias = j.value("bias", 0.0);
        m.noise_sd = j.value("noise_sd", 0.0);
        m.clamp_rate = j.value("clamp_rate", 0.0);
        m.label = j.value("label", -1);
        m.ratio_factor = j.value("ratio_factor", 1.0);
        m.warnings = j.at("warnings").get<std::vector<std::string>>();
        have_header = true;
      } else {
        m.samples.push_back(sample_record_from_json(j));
      }
    }
  } catch (const json::exception& e) {
    throw Error("malformed manifest " + path.string() + ": " + e.what());
  }
  if (!have_header) throw Error("manifest " + path.string() + " has no header record");
  if (static_cast<int>(m.samples.size()) != m.n_samples)
    throw Error("manifest " + path.string() + " lists " + std::to_string(m.samples.size()) +
                " samples but declares " + std::to_string(m.n_samples));
  return m;
}

}  // namespace rulelab

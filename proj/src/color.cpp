#include "rulelab/color.hpp"

#include <algorithm>
#include <cmath>

#include "rulelab/error.hpp"

namespace rulelab {

Rgb8 hsv_to_rgb(Hsv8 hsv) {
  const double hue = 2.0 * hsv.h;
  const double s = hsv.s / 255.0;
  const double v = hsv.v / 255.0;
  const double c = v * s;
  const double hp = std::fmod(hue, 360.0) / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(std::floor(hp))) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  auto to8 = [m](double ch) {
    return static_cast<std::uint8_t>(std::clamp(std::round((ch + m) * 255.0), 0.0, 255.0));
  };
  return {to8(r), to8(g), to8(b)};
}

namespace {

constexpr int kHsvShift = 12;

int cv_round(double x) { return static_cast<int>(std::nearbyint(x)); }

struct DivTables {
  int sdiv[256];
  int hdiv[256];
  DivTables() {
    sdiv[0] = hdiv[0] = 0;
    for (int i = 1; i < 256; ++i) {
      sdiv[i] = cv_round((255 << kHsvShift) / (1.0 * i));
      hdiv[i] = cv_round((180 << kHsvShift) / (6.0 * i));
    }
  }
};

const DivTables& tables() {
  static const DivTables t;
  return t;
}

}  // namespace

// Integer fixed-point path of OpenCV's RGB2HSV_b.
Hsv8 rgb_to_hsv(Rgb8 rgb) {
  const int r = rgb.r, g = rgb.g, b = rgb.b;
  const int v = std::max({r, g, b});
  const int vmin = std::min({r, g, b});
  const int diff = v - vmin;
  const int vr = v == r ? -1 : 0;
  const int vg = v == g ? -1 : 0;
  const auto& t = tables();
  const int s = (diff * t.sdiv[v] + (1 << (kHsvShift - 1))) >> kHsvShift;
  int h = (vr & (g - b)) + (~vr & ((vg & (b - r + 2 * diff)) + ((~vg) & (r - g + 4 * diff))));
  h = (h * t.hdiv[diff] + (1 << (kHsvShift - 1))) >> kHsvShift;
  h += h < 0 ? 180 : 0;
  return {std::clamp(h, 0, 255), s, v};
}

void HsvRange::validate() const {
  auto check = [](int lo, int hi, int max, const char* name) {
    if (lo < 0 || hi > max || lo > hi)
      throw ConfigError(std::string("invalid HSV range on ") + name + ": [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  };
  check(hue_lo, hue_hi, 180, "hue");
  check(sat_lo, sat_hi, 255, "saturation");
  check(val_lo, val_hi, 255, "value");
}

RangeTable default_ranges() {
  RangeTable t;
  t.of(TaskId::A) = {{"sun", kYellowRange}, {"pole", kBlueGreenRange}, {"shadow", kShadowRange}};
  for (TaskId task : {TaskId::B, TaskId::C, TaskId::D}) {
    const auto& names = element_names(task);
    t.of(task) = {{names[0], kYellowRange}, {names[1], kBlueGreenRange}};
  }
  return t;
}

json ranges_to_json(const RangeTable& table) {
  json tasks = json::object();
  for (TaskId task : kAllTasks) {
    json arr = json::array();
    for (const auto& er : table.of(task)) {
      const auto& r = er.range;
      arr.push_back({{"element", er.element},
                     {"hue", {r.hue_lo, r.hue_hi}},
                     {"sat", {r.sat_lo, r.sat_hi}},
                     {"val", {r.val_lo, r.val_hi}}});
    }
    tasks[task_name(task)] = arr;
  }
  return {{"schema", "rulelab-hsv-ranges"}, {"version", 1}, {"tasks", tasks}};
}

RangeTable ranges_from_json(const json& j) {
  try {
    if (j.value("schema", "") != "rulelab-hsv-ranges")
      throw ConfigError("HSV range table: schema must be 'rulelab-hsv-ranges'");
    if (j.value("version", 0) != 1) throw ConfigError("HSV range table: unsupported version");
    RangeTable t = default_ranges();
    for (const auto& [name, arr] : j.at("tasks").items()) {
      TaskId task = parse_task(name);
      const auto& names = element_names(task);
      if (arr.size() != names.size())
        throw ConfigError("HSV range table: task " + name + " needs " +
                          std::to_string(names.size()) + " elements");
      std::vector<ElementRange> ranges;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        ElementRange er;
        er.element = e.at("element").get<std::string>();
        if (er.element != names[i])
          throw ConfigError("HSV range table: expected element '" + names[i] + "', got '" +
                            er.element + "'");
        er.range = {e.at("hue").at(0).get<int>(), e.at("hue").at(1).get<int>(),
                    e.at("sat").at(0).get<int>(), e.at("sat").at(1).get<int>(),
                    e.at("val").at(0).get<int>(), e.at("val").at(1).get<int>()};
        er.range.validate();
        ranges.push_back(er);
      }
      if (!ranges_disjoint(ranges))
        throw ConfigError("HSV range table: ranges for task " + name + " overlap");
      t.of(task) = std::move(ranges);
    }
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("HSV range table: ") + e.what());
  }
}

bool ranges_disjoint(const std::vector<ElementRange>& ranges) {
  auto apart = [](int alo, int ahi, int blo, int bhi) { return ahi < blo || bhi < alo; };
  for (std::size_t i = 0; i < ranges.size(); ++i)
    for (std::size_t k = i + 1; k < ranges.size(); ++k) {
      const auto& a = ranges[i].range;
      const auto& b = ranges[k].range;
      if (!(apart(a.hue_lo, a.hue_hi, b.hue_lo, b.hue_hi) ||
            apart(a.sat_lo, a.sat_hi, b.sat_lo, b.sat_hi) ||
            apart(a.val_lo, a.val_hi, b.val_lo, b.val_hi)))
        return false;
    }
  return true;
}

}  // namespace rulelab

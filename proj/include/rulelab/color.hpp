#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rulelab/io.hpp"
#include "rulelab/task.hpp"

namespace rulelab {

struct Rgb8 {
  std::uint8_t r = 255, g = 255, b = 255;
  bool operator==(const Rgb8&) const = default;
};

// OpenCV 8-bit convention: h in [0, 180), s and v in [0, 255].
struct Hsv8 {
  int h = 0, s = 0, v = 0;
  bool operator==(const Hsv8&) const = default;
};

inline constexpr Rgb8 kWhite{255, 255, 255};

// HSV -> RGB: hue in degrees is 2*h, chroma C = V*S, standard six-sector
// formula, each channel rounded half away from zero to 8 bits.
Rgb8 hsv_to_rgb(Hsv8 hsv);
// RGB -> HSV exactly as cv::cvtColor(COLOR_RGB2HSV) on 8-bit input:
// v = max, s = round(255*(max-min)/max), h = round(hue_degrees/2) mod 180.
Hsv8 rgb_to_hsv(Rgb8 rgb);

struct HsvRange {
  int hue_lo = 0, hue_hi = 180;
  int sat_lo = 0, sat_hi = 255;
  int val_lo = 0, val_hi = 255;

  bool contains(Hsv8 c) const {
    return c.h >= hue_lo && c.h <= hue_hi && c.s >= sat_lo && c.s <= sat_hi &&
           c.v >= val_lo && c.v <= val_hi;
  }
  void validate() const;  // throws ConfigError
  bool operator==(const HsvRange&) const = default;
};

inline constexpr HsvRange kYellowRange{0, 30, 100, 255, 200, 255};
inline constexpr HsvRange kBlueGreenRange{90, 150, 100, 255, 100, 255};
inline constexpr HsvRange kShadowRange{0, 180, 0, 50, 50, 150};

struct ElementRange {
  std::string element;
  HsvRange range;
};

// Per-task element ranges, in element_names() order.
struct RangeTable {
  std::vector<ElementRange> tasks[4];

  const std::vector<ElementRange>& of(TaskId task) const {
    return tasks[static_cast<int>(task)];
  }
  std::vector<ElementRange>& of(TaskId task) { return tasks[static_cast<int>(task)]; }
};

RangeTable default_ranges();
json ranges_to_json(const RangeTable& table);
RangeTable ranges_from_json(const json& j);  // throws ConfigError
// True when no 8-bit RGB color maps into two of the given ranges.
bool ranges_disjoint(const std::vector<ElementRange>& ranges);

}  // namespace rulelab

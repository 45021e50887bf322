#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rulelab/color.hpp"
#include "rulelab/image.hpp"
#include "rulelab/io.hpp"
#include "rulelab/task.hpp"

namespace rulelab {

struct Component {
  int area = 0;
  double cx = 0, cy = 0;  // mean pixel-center coordinates
  int row_min = 0, row_max = 0, col_min = 0, col_max = 0;
  std::vector<int> pixels;  // row * width + col
};

struct ElementMask {
  std::string element;
  int width = 0, height = 0;
  std::vector<std::uint8_t> mask;
  std::vector<Component> components;

  int popcount() const;
};

// Each pixel goes to the first element whose range contains its HSV value;
// components use 8-connectivity.
std::vector<ElementMask> segment(const RasterImage& image, const std::vector<ElementRange>& ranges);

struct CountResult {
  bool valid = false;
  std::string reason;  // "<element>: <n> components" for the first failing element
};

CountResult count_elements(const std::vector<ElementMask>& masks);

// Features are divided by the (upscaled) image side, so they live in [0, 1].
struct FeatureRecord {
  std::string source;
  TaskId task = TaskId::A;
  int image_size = 0;  // side of the input image before upscaling
  bool valid = false;
  std::string reason;

  double l1 = 0, l2 = 0, h1 = 0, h2 = 0;  // A, B, D (l1/l2 only)
  double r1 = 0, r2 = 0, gap = 0;         // C
  double anchor_x = 0, anchor_y = 0;      // C, D: centroid of the small element
  int sun_side = 0, shadow_side = 0;      // A: sign relative to the pole centerline
  bool zero_shadow = false;               // A: shadow does not leave the pole column
  bool small_top = false, large_bottom = false;  // D half-plane flags
  std::vector<std::array<double, 3>> mean_rgb;   // per element, channels / 255
  double ratio = 0;
};

// Regression axes: A (l1*h2, l2*h1), B (l1*h1, l2*h2), C (r1, r2), D (l1, l2).
std::array<double, 2> regression_xy(const FeatureRecord& record);

FeatureRecord features_from_masks(const std::vector<ElementMask>& masks, const RasterImage& image,
                                  TaskId task, int original_size);
FeatureRecord extract_features(const RasterImage& image, TaskId task, int upscale_factor = 1,
                               const RangeTable& ranges = default_ranges());

struct RuleVerdict {
  bool coarse_ok = false;
  double fine_ratio = 0;
  bool fine_ok = false;
  bool flagged = false;  // coarse test undefined (A: zero-length shadow)
};

inline constexpr double kDefaultEpsilon = 0.01;

RuleVerdict verdict(const FeatureRecord& record, TaskId task, double eps = kDefaultEpsilon);
bool fine_ok(double ratio, TaskId task, double eps);

struct EvalConfig {
  RangeTable ranges = default_ranges();
  int upscale_factor = 1;
  double eps = kDefaultEpsilon;
  int expected_size = 0;  // 0 accepts square 32 or 64
  int threads = 1;
};

struct DirectoryReport {
  TaskId task = TaskId::A;
  std::vector<FeatureRecord> records;  // sorted by filename
  std::vector<std::optional<RuleVerdict>> verdicts;
  int n_files = 0;
  int n_invalid = 0;  // includes file errors
  int n_file_errors = 0;
  int coarse_violations = 0;
  int fine_conforming = 0;
  int flagged = 0;
  std::vector<std::string> warnings;
};

FeatureRecord evaluate_file(const std::filesystem::path& file, TaskId task,
                            const EvalConfig& config);
// Evaluates every *.png in dir in filename order. Rows are streamed to csv as
// each file finishes when csv is given.
DirectoryReport evaluate_directory(const std::filesystem::path& dir, TaskId task,
                                   const EvalConfig& config, std::ostream* csv = nullptr);

std::string records_csv_header(TaskId task);
std::string record_csv_row(const FeatureRecord& record, const std::optional<RuleVerdict>& v);
void write_records_csv(const std::filesystem::path& path, const std::vector<FeatureRecord>& records,
                       double eps = kDefaultEpsilon);
std::vector<FeatureRecord> read_records_csv(const std::filesystem::path& path);
json directory_summary_json(const DirectoryReport& report, const EvalConfig& config);

}  // namespace rulelab

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rulelab/color.hpp"
#include "rulelab/image.hpp"
#include "rulelab/io.hpp"
#include "rulelab/task.hpp"

namespace rulelab {

inline constexpr const char* kGeneratorVersion = "rulelab-scenegen/1";

// Coordinates are continuous pixel units: x grows right, y grows down, and
// pixel (row i, col j) covers [j, j+1) x [i, i+1). A shape owns a pixel when
// the pixel center lies inside it.

// Pole centered at pole_x standing on ground_y; sun disk above-left or
// above-right; shadow a horizontal strip on the ground starting at the pole
// center and pointing away from the sun.
struct SceneA {
  double pole_height = 0, pole_x = 0, pole_width = 0, ground_y = 0;
  double sun_distance = 0;  // signed: sun_x - pole_x
  double sun_height = 0;    // sun center height above ground
  double sun_x = 0, sun_y = 0, sun_radius = 0;
  double shadow_length = 0, shadow_thickness = 0;
};

// Two rectangles standing on ground_y; l is the distance of a rectangle's left
// edge from the left border and h its height.
struct SceneB {
  double l1 = 0, h1 = 0, l2 = 0, h2 = 0, width = 0, ground_y = 0;
};

enum class Side { Left, Right, Top, Bottom };
std::string side_name(Side side);
Side parse_side(const std::string& name);

// Small circle (r1) tangent to the large one (r2); side says where the small
// circle sits relative to the large one.
struct SceneC {
  double r1 = 0, r2 = 0;
  Side side = Side::Left;
  double small_cx = 0, small_cy = 0, large_cx = 0, large_cy = 0;
};

// Axis-aligned squares given by top-left corners.
struct SceneD {
  double l1 = 0, l2 = 0;
  double small_x = 0, small_y = 0, large_x = 0, large_y = 0;
};

struct ElementColor {
  std::string element;
  Hsv8 hsv;
  Rgb8 rgb;
};

struct SceneParams {
  TaskId task = TaskId::A;
  int image_size = 32;
  std::uint64_t rng_seed = 0;
  std::uint64_t index = 0;
  std::variant<SceneA, SceneB, SceneC, SceneD> geometry;
  std::vector<ElementColor> colors;  // element_names(task) order
};

// Features measured on the rendered pixel sets, in pixels. Unused fields are 0.
struct RenderedFeatures {
  double l1 = 0, l2 = 0, h1 = 0, h2 = 0;
  double r1 = 0, r2 = 0, gap = 0;
  double ratio = 0;
};

// Task A construction formulas.
double shadow_length(double pole_height, double sun_distance, double sun_height);
double sun_height_for(double pole_height, int image_size);

// Fine ratio computed from the continuous parameters (before rasterization).
double exact_ratio(const SceneParams& params);

// One mask per element (element_names order), each width*height bytes of 0/1.
std::vector<std::vector<std::uint8_t>> render_masks(const SceneParams& params);
RasterImage render_image(const SceneParams& params);
RenderedFeatures measure_rendered(const SceneParams& params,
                                  const std::vector<std::vector<std::uint8_t>>& masks);
// Same scene with every length scaled to a new image size.
SceneParams rescale_scene(const SceneParams& params, int image_size);

struct SampleRecord {
  int index = 0;
  std::string file;
  SceneParams params;
  double target_ratio = 0;
  double exact_ratio = 0;
  RenderedFeatures rendered;
  int attempts = 0;
  double accepted_tolerance = 0;
  bool clamped = false;
  int label = -1;
};

struct DatasetManifest {
  TaskId task = TaskId::A;
  std::string kind = "train";  // train | perturbed | contrastive
  int n_samples = 0;
  int image_size = 32;
  std::uint64_t seed = 0;
  std::string version = kGeneratorVersion;
  double raster_tolerance = 0;
  double offrule_tolerance = 0;
  double bias = 0, noise_sd = 0;
  int label = -1;
  double ratio_factor = 1;
  double clamp_rate = 0;
  std::vector<std::string> warnings;
  std::vector<SampleRecord> samples;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<RasterImage> images;
};

struct GenerateOptions {
  int image_size = 32;
  std::uint64_t seed = 0;
  // Accept a geometry only if the rendered ratio is within this relative
  // distance of the target ratio. Off-rule targets (perturbed and contrastive
  // factors other than 1) start at offrule_tolerance and double it after
  // every fifth of the retry budget: next to simple fractions the lattice of
  // achievable ratios has gaps wider than 0.2%.
  double raster_tolerance = 0.002;
  double offrule_tolerance = 0.002;
  int retry_budget = 1000;
  int threads = 1;
  RangeTable ranges = default_ranges();
};

Dataset generate_dataset(TaskId task, int n, const GenerateOptions& options);
// Ratio factor per sample is 1 + bias + eta, eta ~ N(0, noise_sd^2), clamped
// into ratio_factor_bounds(task) so the coarse rule survives.
Dataset generate_perturbed(TaskId task, int n, double bias, double noise_sd,
                           const GenerateOptions& options);
// Classes 0, 1, 2 at factors low, 1, high.
std::array<Dataset, 3> generate_contrastive(TaskId task, int n_per_class, double low,
                                            double high, const GenerateOptions& options);

std::pair<double, double> ratio_factor_bounds(TaskId task);
std::string image_filename(TaskId task, int index);

json manifest_header_json(const DatasetManifest& manifest);
json sample_record_json(const SampleRecord& record);
SampleRecord sample_record_from_json(const json& j);

// Writes {task}_{index:06}.png files and manifest.jsonl into dir.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

}  // namespace rulelab

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "rulelab/color.hpp"
#include "rulelab/error.hpp"
#include "rulelab/image.hpp"
#include "rulelab/io.hpp"
#include "rulelab/parallel.hpp"
#include "rulelab/rng.hpp"
#include "rulelab/task.hpp"
#include "support.hpp"

using namespace rulelab;

TEST(Rng, SameSeedAndStreamReproduce) {
  Rng a(42, {1, 2}), b(42, {1, 2});
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsDiffer) {
  Rng a(42, {1, 2}), b(42, {1, 3}), c(43, {1, 2});
  EXPECT_NE(a.next_u64(), b.next_u64());
  Rng a2(42, {1, 2});
  EXPECT_NE(a2.next_u64(), c.next_u64());
}

TEST(Rng, UniformAndIntRanges) {
  Rng r(7);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.uniform_int(-2, 3);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 3);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_LT(std::fabs(mean), 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, M_PI}) {
    const std::string s = format_double(v);
    EXPECT_EQ(std::stod(s), v) << s;
  }
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(Io, CsvEscapeAndSplit) {
  const std::string field = "a,\"b\"";
  const std::string line = "x," + csv_escape(field) + ",z";
  const auto parts = split_csv_line(line);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[1], field);
  EXPECT_EQ(csv_escape("plain"), "plain");
}

TEST(Io, JsonFileRoundTrip) {
  testutil::TempDir dir("json");
  json j = {{"b", 1}, {"a", {1.5, 2.5}}};
  write_json_file(dir / "x.json", j);
  EXPECT_EQ(read_json_file(dir / "x.json"), j);
  EXPECT_THROW(read_json_file(dir / "missing.json"), Error);
}

// Expected values come from cv2.cvtColor(..., COLOR_RGB2HSV) on 8-bit input.
TEST(Color, RgbToHsvMatchesOpenCv) {
  const int table[][2][3] = {
      {{168, 229, 184}, {68, 68, 229}},  {{171, 238, 171}, {60, 72, 238}},
      {{20, 206, 245}, {95, 234, 245}},  {{153, 204, 5}, {38, 249, 204}},
      {{37, 53, 213}, {117, 211, 213}},  {{206, 192, 173}, {17, 41, 206}},
      {{6, 120, 63}, {75, 242, 120}},    {{96, 236, 131}, {68, 151, 236}},
      {{118, 4, 87}, {158, 246, 118}},   {{161, 124, 71}, {18, 143, 161}},
      {{42, 73, 237}, {115, 210, 237}},  {{16, 194, 250}, {97, 239, 250}},
      {{10, 103, 206}, {106, 243, 206}}, {{13, 143, 2}, {58, 251, 143}},
      {{38, 71, 133}, {110, 182, 133}},  {{118, 36, 98}, {157, 177, 118}},
      {{196, 35, 57}, {176, 209, 196}},  {{146, 50, 179}, {142, 184, 179}},
      {{145, 104, 206}, {132, 126, 206}}, {{53, 141, 33}, {54, 195, 141}},
      {{181, 39, 151}, {156, 200, 181}}, {{11, 180, 138}, {83, 239, 180}},
      {{66, 0, 165}, {132, 255, 165}},   {{98, 123, 12}, {37, 230, 123}},
      {{144, 184, 24}, {38, 222, 184}},  {{38, 129, 1}, {51, 253, 129}},
      {{202, 255, 85}, {39, 170, 255}},  {{54, 228, 48}, {59, 201, 228}},
      {{127, 169, 1}, {37, 253, 169}},   {{167, 109, 247}, {133, 142, 247}},
      {{16, 192, 78}, {71, 234, 192}},   {{220, 8, 60}, {173, 246, 220}},
      {{189, 181, 64}, {28, 169, 189}},  {{72, 8, 185}, {131, 244, 185}},
      {{88, 111, 191}, {113, 138, 191}}, {{138, 99, 67}, {14, 131, 138}},
      {{48, 68, 100}, {108, 133, 100}},  {{249, 67, 40}, {4, 214, 249}},
      {{127, 45, 33}, {4, 189, 127}},    {{51, 206, 229}, {94, 198, 229}},
      {{255, 0, 0}, {0, 255, 255}},      {{255, 255, 0}, {30, 255, 255}},
      {{0, 0, 255}, {120, 255, 255}},    {{128, 128, 128}, {0, 0, 128}},
      {{255, 255, 255}, {0, 0, 255}},    {{0, 0, 0}, {0, 0, 0}},
      {{1, 2, 3}, {105, 170, 3}}};
  for (const auto& row : table) {
    const Rgb8 rgb{static_cast<std::uint8_t>(row[0][0]), static_cast<std::uint8_t>(row[0][1]),
                   static_cast<std::uint8_t>(row[0][2])};
    const Hsv8 hsv = rgb_to_hsv(rgb);
    EXPECT_EQ(hsv, (Hsv8{row[1][0], row[1][1], row[1][2]}))
        << int(rgb.r) << "," << int(rgb.g) << "," << int(rgb.b) << " -> " << hsv.h << "," << hsv.s << ","
        << hsv.v;
  }
}

TEST(Color, HsvToRgbPrimaries) {
  EXPECT_EQ(hsv_to_rgb({0, 255, 255}), (Rgb8{255, 0, 0}));
  EXPECT_EQ(hsv_to_rgb({30, 255, 255}), (Rgb8{255, 255, 0}));
  EXPECT_EQ(hsv_to_rgb({60, 255, 255}), (Rgb8{0, 255, 0}));
  EXPECT_EQ(hsv_to_rgb({120, 255, 255}), (Rgb8{0, 0, 255}));
  EXPECT_EQ(hsv_to_rgb({0, 0, 128}), (Rgb8{128, 128, 128}));
}

TEST(Color, DefaultRangesDisjointAndExcludeWhite) {
  const RangeTable table = default_ranges();
  for (TaskId t : kAllTasks) {
    EXPECT_TRUE(ranges_disjoint(table.of(t))) << task_name(t);
    for (const auto& er : table.of(t)) EXPECT_FALSE(er.range.contains(rgb_to_hsv(kWhite)));
  }
}

TEST(Color, RangeJsonRoundTripAndValidation) {
  const RangeTable table = default_ranges();
  const RangeTable back = ranges_from_json(ranges_to_json(table));
  for (TaskId t : kAllTasks) {
    ASSERT_EQ(back.of(t).size(), table.of(t).size());
    for (std::size_t i = 0; i < table.of(t).size(); ++i) EXPECT_EQ(back.of(t)[i].range, table.of(t)[i].range);
  }
  EXPECT_THROW((HsvRange{40, 30, 0, 255, 0, 255}.validate()), ConfigError);
  EXPECT_THROW((HsvRange{0, 200, 0, 255, 0, 255}.validate()), ConfigError);
}

TEST(Image, PngRoundTrip) {
  testutil::TempDir dir("png");
  RasterImage img(32, 32);
  img.set(3, 5, {10, 20, 30});
  img.set(31, 0, {255, 0, 0});
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
  write_text_file(dir / "bad.png", "not a png");
  EXPECT_THROW(read_png(dir / "bad.png"), Error);
}

TEST(Image, UpscaleNearest) {
  RasterImage img(2, 2);
  img.set(0, 1, {1, 2, 3});
  const RasterImage up = upscale_nearest(img, 4);
  ASSERT_EQ(up.width, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_EQ(up.at(i, j), img.at(i / 4, j / 4));
}

TEST(Task, NamesTargetsCounts) {
  EXPECT_EQ(parse_task("C"), TaskId::C);
  EXPECT_EQ(parse_task("d"), TaskId::D);
  EXPECT_THROW(parse_task("E"), ConfigError);
  EXPECT_DOUBLE_EQ(target_ratio(TaskId::C), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(target_ratio(TaskId::D), 1.5);
  EXPECT_EQ(default_sample_count(TaskId::A), 4000);
  EXPECT_EQ(default_sample_count(TaskId::B), 2000);
  EXPECT_EQ(element_names(TaskId::A).size(), 3u);
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
  std::vector<double> a(1000), b(1000);
  parallel_for(1000, 1, [&](int i) { a[i] = std::sin(i); });
  parallel_for(1000, 4, [&](int i) { b[i] = std::sin(i); });
  EXPECT_EQ(a, b);
  EXPECT_THROW(parallel_for(10, 3, [](int i) {
                 if (i == 7) throw Error("boom");
               }),
               Error);
}

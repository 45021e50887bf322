#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rulelab/error.hpp"
#include "rulelab/scenegen.hpp"
#include "support.hpp"

using namespace rulelab;

namespace {

GenerateOptions opts(std::uint64_t seed, int size = 32, int threads = 1) {
  GenerateOptions o;
  o.seed = seed;
  o.image_size = size;
  o.threads = threads;
  return o;
}

}  // namespace

TEST(Scenegen, ShadowLengthFormula) {
  EXPECT_DOUBLE_EQ(shadow_length(10, 5, 20), 5.0);
  EXPECT_DOUBLE_EQ(shadow_length(10, -5, 20), 5.0);
  EXPECT_THROW(shadow_length(10, 5, 10), ConfigError);
  EXPECT_DOUBLE_EQ(sun_height_for(10, 32), 20.0);
  EXPECT_DOUBLE_EQ(sun_height_for(3, 32), 0.3 * 32);
  EXPECT_DOUBLE_EQ(sun_height_for(15, 32), 0.8 * 32);
}

TEST(Scenegen, TaskCRadiusFourForcesLargeRadius) {
  Dataset ds = generate_dataset(TaskId::C, 200, opts(3));
  for (const auto& s : ds.manifest.samples) {
    const auto& c = std::get<SceneC>(s.params.geometry);
    EXPECT_NEAR(c.r2, std::sqrt(2.0) * c.r1, 1e-12);
  }
  SceneParams p;
  p.task = TaskId::C;
  p.geometry = SceneC{4.0, std::sqrt(2.0) * 4.0};
  EXPECT_NEAR(std::get<SceneC>(p.geometry).r2, 5.65685424949238, 1e-12);
  EXPECT_NEAR(exact_ratio(p), std::sqrt(2.0), 1e-15);
}

TEST(Scenegen, RuleClosureAndCoarseInvariants) {
  for (TaskId t : kAllTasks) {
    Dataset ds = generate_dataset(t, 150, opts(5));
    ASSERT_EQ(ds.images.size(), 150u);
    ASSERT_EQ(ds.manifest.n_samples, 150);
    const double S = 32;
    for (const auto& s : ds.manifest.samples) {
      EXPECT_NEAR(s.exact_ratio, target_ratio(t), 1e-12) << task_name(t) << " " << s.index;
      EXPECT_LE(std::fabs(s.rendered.ratio / target_ratio(t) - 1), 0.002 + 1e-12);
      if (t == TaskId::A) {
        const auto& a = std::get<SceneA>(s.params.geometry);
        EXPECT_DOUBLE_EQ(a.sun_height, sun_height_for(a.pole_height, 32));
        EXPECT_NEAR(a.shadow_length, shadow_length(a.pole_height, a.sun_distance, a.sun_height), 1e-12);
        EXPECT_NE(a.sun_distance, 0.0);
        EXPECT_GE(a.sun_x - a.sun_radius, 0);
        EXPECT_LE(a.sun_x + a.sun_radius, S);
        EXPECT_LE(a.shadow_length, S / 2);
      } else if (t == TaskId::B) {
        const auto& b = std::get<SceneB>(s.params.geometry);
        EXPECT_GT(b.h1, b.h2);
        EXPECT_GT(b.l2, b.l1);
        EXPECT_NEAR(b.l1 * b.h1, b.l2 * b.h2, 1e-9);
        EXPECT_LE(b.l2 + b.width, S);
      } else if (t == TaskId::C) {
        const auto& c = std::get<SceneC>(s.params.geometry);
        EXPECT_NEAR(std::hypot(c.small_cx - c.large_cx, c.small_cy - c.large_cy), c.r1 + c.r2, 1e-9);
        for (auto [cx, cy, r] : {std::tuple{c.small_cx, c.small_cy, c.r1}, std::tuple{c.large_cx, c.large_cy, c.r2}}) {
          EXPECT_GE(cx - r, -1e-9);
          EXPECT_LE(cx + r, S + 1e-9);
          EXPECT_GE(cy - r, -1e-9);
          EXPECT_LE(cy + r, S + 1e-9);
        }
      } else {
        const auto& d = std::get<SceneD>(s.params.geometry);
        EXPECT_NEAR(d.l2, 1.5 * d.l1, 1e-12);
        EXPECT_LE(d.small_y + d.l1, S / 2);
        EXPECT_GE(d.large_y, S / 2);
        EXPECT_LE(d.large_y + d.l2, S);
        EXPECT_LE(d.small_x + d.l1, S);
        EXPECT_LE(d.large_x + d.l2, S);
      }
    }
  }
}

TEST(Scenegen, PixelsAreWhiteOrElementColorsAndMasksDisjoint) {
  for (TaskId t : kAllTasks) {
    Dataset ds = generate_dataset(t, 40, opts(9));
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      const auto& rec = ds.manifest.samples[i];
      std::set<std::tuple<int, int, int>> allowed = {{255, 255, 255}};
      for (const auto& c : rec.params.colors) {
        allowed.insert({c.rgb.r, c.rgb.g, c.rgb.b});
        EXPECT_EQ(rgb_to_hsv(c.rgb), c.hsv);
      }
      const auto& img = ds.images[i];
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
          const Rgb8 p = img.at(r, c);
          EXPECT_TRUE(allowed.count({p.r, p.g, p.b}));
        }
      const auto masks = render_masks(rec.params);
      for (std::size_t k = 0; k < masks[0].size(); ++k) {
        int owners = 0;
        for (const auto& m : masks) owners += m[k];
        EXPECT_LE(owners, 1) << task_name(t) << " sample " << i;
      }
    }
  }
}

TEST(Scenegen, ColorsInsideTheirBands) {
  const RangeTable table = default_ranges();
  for (TaskId t : kAllTasks) {
    Dataset ds = generate_dataset(t, 60, opts(21));
    for (const auto& s : ds.manifest.samples)
      for (std::size_t e = 0; e < s.params.colors.size(); ++e) {
        EXPECT_TRUE(table.of(t)[e].range.contains(s.params.colors[e].hsv));
        for (std::size_t o = 0; o < table.of(t).size(); ++o)
          if (o != e) {
            EXPECT_FALSE(table.of(t)[o].range.contains(s.params.colors[e].hsv));
          }
      }
  }
}

TEST(Scenegen, DeterministicAcrossRunsAndThreads) {
  for (TaskId t : kAllTasks) {
    Dataset a = generate_dataset(t, 60, opts(7));
    Dataset b = generate_dataset(t, 60, opts(7));
    Dataset c = generate_dataset(t, 60, opts(7, 32, 3));
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.images, c.images);
    for (int i = 0; i < 60; ++i) {
      EXPECT_EQ(sample_record_json(a.manifest.samples[i]), sample_record_json(b.manifest.samples[i]));
      EXPECT_EQ(sample_record_json(a.manifest.samples[i]), sample_record_json(c.manifest.samples[i]));
    }
    Dataset other = generate_dataset(t, 60, opts(8));
    EXPECT_NE(a.images, other.images);
  }
}

TEST(Scenegen, WrittenTreesAreByteIdentical) {
  testutil::TempDir dir("gen");
  Dataset a = generate_dataset(TaskId::B, 30, opts(4));
  write_dataset(a, dir / "one");
  write_dataset(generate_dataset(TaskId::B, 30, opts(4)), dir / "two");
  for (const auto& e : std::filesystem::directory_iterator(dir / "one")) {
    const auto twin = dir / "two" / e.path().filename();
    ASSERT_TRUE(std::filesystem::exists(twin));
    EXPECT_EQ(read_text_file(e.path()), read_text_file(twin)) << e.path().filename();
  }
}

TEST(Scenegen, ManifestRoundTrip) {
  testutil::TempDir dir("manifest");
  Dataset ds = generate_perturbed(TaskId::A, 25, 0.05, 0.02, opts(12));
  write_dataset(ds, dir.path());
  int pngs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 25);
  const DatasetManifest m = read_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(m.task, TaskId::A);
  EXPECT_EQ(m.kind, "perturbed");
  EXPECT_EQ(m.n_samples, 25);
  EXPECT_EQ(m.seed, 12u);
  EXPECT_EQ(m.version, kGeneratorVersion);
  EXPECT_DOUBLE_EQ(m.bias, 0.05);
  ASSERT_EQ(m.samples.size(), 25u);
  for (int i = 0; i < 25; ++i) {
    EXPECT_EQ(m.samples[i].file, "A_" + std::string(6 - std::to_string(i).size(), '0') + std::to_string(i) + ".png");
    EXPECT_EQ(sample_record_json(m.samples[i]), sample_record_json(ds.manifest.samples[i]));
    EXPECT_DOUBLE_EQ(exact_ratio(m.samples[i].params), ds.manifest.samples[i].exact_ratio);
  }
}

TEST(Scenegen, PerturbedWithoutNoiseIsExact) {
  Dataset d = generate_perturbed(TaskId::D, 80, 0.1, 0.0, opts(2));
  for (const auto& s : d.manifest.samples) EXPECT_NEAR(s.exact_ratio, 1.65, 1e-12);
  EXPECT_EQ(d.manifest.clamp_rate, 0.0);
  for (TaskId t : kAllTasks) {
    Dataset z = generate_perturbed(t, 40, 0.0, 0.0, opts(2));
    for (const auto& s : z.manifest.samples) EXPECT_NEAR(s.exact_ratio, target_ratio(t), 1e-12);
  }
}

TEST(Scenegen, PerturbedFactorsFollowRequestedLaw) {
  Dataset d = generate_perturbed(TaskId::C, 400, 0.05, 0.02, opts(6));
  double s = 0, s2 = 0;
  for (const auto& r : d.manifest.samples) {
    const double f = r.exact_ratio / target_ratio(TaskId::C);
    s += f;
    s2 += f * f;
  }
  const double mean = s / 400, sd = std::sqrt(s2 / 400 - mean * mean);
  EXPECT_NEAR(mean, 1.05, 4 * 0.02 / std::sqrt(400.0));
  EXPECT_NEAR(sd, 0.02, 0.004);
}

TEST(Scenegen, HeavyClampingWarns) {
  Dataset d = generate_perturbed(TaskId::C, 30, 2.0, 0.0, opts(1));
  EXPECT_EQ(d.manifest.clamp_rate, 1.0);
  EXPECT_FALSE(d.manifest.warnings.empty());
  for (const auto& s : d.manifest.samples) EXPECT_TRUE(s.clamped);
}

TEST(Scenegen, ContrastiveClasses) {
  auto sets = generate_contrastive(TaskId::A, 30, 0.8, 1.25, opts(3));
  const double factors[3] = {0.8, 1.0, 1.25};
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(sets[c].manifest.label, c);
    EXPECT_EQ(sets[c].manifest.kind, "contrastive");
    for (const auto& s : sets[c].manifest.samples) {
      EXPECT_EQ(s.label, c);
      EXPECT_NEAR(s.exact_ratio, factors[c], 1e-12);
    }
  }
  EXPECT_THROW(generate_contrastive(TaskId::A, 10, 1.1, 1.25, opts(3)), ConfigError);
  EXPECT_THROW(generate_contrastive(TaskId::C, 10, 0.5, 1.25, opts(3)), ConfigError);
}

TEST(Scenegen, ConfigErrors) {
  EXPECT_THROW(generate_dataset(TaskId::A, 0, opts(1)), ConfigError);
  EXPECT_THROW(generate_dataset(TaskId::A, 5, opts(1, 48)), ConfigError);
  GenerateOptions o = opts(1);
  o.retry_budget = 0;
  EXPECT_THROW(generate_dataset(TaskId::A, 5, o), ConfigError);
  EXPECT_THROW(generate_perturbed(TaskId::A, 5, 0.0, -1.0, opts(1)), ConfigError);
}

TEST(Scenegen, RetryBudgetExhaustionNamesSample) {
  GenerateOptions o = opts(1);
  o.retry_budget = 1;
  o.raster_tolerance = 1e-9;
  try {
    generate_dataset(TaskId::A, 5, o);
    FAIL() << "expected GenerationError";
  } catch (const GenerationError& e) {
    EXPECT_EQ(e.attempts(), 1);
    EXPECT_NE(std::string(e.what()).find("retry budget"), std::string::npos);
  }
}

TEST(Scenegen, SixtyFourPixelScenesScaleLinearly) {
  Dataset ds = generate_dataset(TaskId::D, 40, opts(8, 64));
  for (const auto& s : ds.manifest.samples) {
    const auto& d = std::get<SceneD>(s.params.geometry);
    EXPECT_GE(d.l1, 0.3 * 32 - 1e-12);
    EXPECT_LE(d.l1, 0.7 * 32 + 1e-12);
  }
}

TEST(Scenegen, RescaledSceneKeepsNormalizedFeatures) {
  Dataset ds = generate_dataset(TaskId::C, 40, opts(10));
  for (const auto& s : ds.manifest.samples) {
    const SceneParams big = rescale_scene(s.params, 64);
    EXPECT_NEAR(exact_ratio(big), exact_ratio(s.params), 1e-12);
    const RenderedFeatures f32 = measure_rendered(s.params, render_masks(s.params));
    const RenderedFeatures f64 = measure_rendered(big, render_masks(big));
    EXPECT_NEAR(f32.r1 / 32, f64.r1 / 64, 1.0 / 32);
    EXPECT_NEAR(f32.r2 / 32, f64.r2 / 64, 1.0 / 32);
  }
}

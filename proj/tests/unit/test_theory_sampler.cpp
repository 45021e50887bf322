#include <gtest/gtest.h>

#include <cmath>

#include "rulelab/error.hpp"
#include "rulelab/rng.hpp"
#include "rulelab/theory/sampler.hpp"

using namespace rulelab;
using namespace rulelab::theory;

namespace {

NetworkBankModel small_bank(const MultiPatchDistribution& dist, int anchors) {
  std::vector<double> times;
  for (int k = 0; k < anchors; ++k) times.push_back(0.01 + 0.99 * k / (anchors - 1));
  TrainConfig c;
  c.m = 1;
  c.mode = LossMode::Expected;
  c.epochs = 20000;
  c.grad_tol = 1e-8;
  return train_score_bank(dist, times, c);
}

}  // namespace

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.t_min = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.guidance_last_steps = -2;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(SamplerConfig{}.to_json()["steps"], 100);
}

TEST(Sampler, TrueScoreSamplesObeyTheRule) {
  const auto dist = MultiPatchDistribution::standard(10);
  const TrueScoreModel model(dist, ZetaQuadrature::from_law(dist.zeta));
  SamplerConfig c;
  c.n = 100;
  c.seed = 4;
  const SamplerResult r = ancestral_sample(model, dist, c);
  EXPECT_LT(r.mean_gap, 0.05);
  EXPECT_LE(r.q05_gap, r.median_gap);
  EXPECT_LE(r.median_gap, r.q95_gap);
  const json j = sampler_result_json(r, c);
  EXPECT_NEAR(j["mean_gap"].get<double>(), r.mean_gap, 1e-15);
}

TEST(Sampler, RunsAreBitIdentical) {
  const auto dist = MultiPatchDistribution::standard(6);
  const TrueScoreModel model(dist, ZetaQuadrature::from_law(dist.zeta));
  SamplerConfig c;
  c.n = 20;
  c.seed = 9;
  EXPECT_EQ(ancestral_sample(model, dist, c).samples, ancestral_sample(model, dist, c).samples);
  c.lambda = 0.5;
  c.guidance_last_steps = 10;
  EXPECT_EQ(ancestral_sample(model, dist, c).samples, ancestral_sample(model, dist, c).samples);
}

TEST(Sampler, GuidanceReducesTheGapOfALearnedScore) {
  const auto dist = MultiPatchDistribution::standard(20);
  const NetworkBankModel bank = small_bank(dist, 34);
  SamplerConfig c;
  c.n = 100;
  c.seed = 1;
  const double unguided = ancestral_sample(bank, dist, c).mean_gap;
  c.lambda = 1;
  const double guided = ancestral_sample(bank, dist, c).mean_gap;
  EXPECT_LT(guided, 0.8 * unguided);
}

TEST(Sampler, ExplosionRaisesDivergence) {
  const auto dist = MultiPatchDistribution::standard(6);
  const TrueScoreModel model(dist, ZetaQuadrature::from_law(dist.zeta));
  SamplerConfig c;
  c.n = 3;
  c.explode_norm = 1e-3;
  EXPECT_THROW(ancestral_sample(model, dist, c), DivergenceError);
}

TEST(NetworkBank, NearestTimeLookup) {
  std::vector<ScoreNetwork> nets;
  for (int k = 0; k < 3; ++k) nets.push_back(ScoreNetwork::gaussian(Activation::Linear, 1, 4, 2, 0.5, k));
  const NetworkBankModel bank({0.1, 0.5, 0.9}, nets);
  EXPECT_EQ(bank.nearest(0.0).W[0], nets[0].W[0]);
  EXPECT_EQ(bank.nearest(0.29).W[0], nets[0].W[0]);
  EXPECT_EQ(bank.nearest(0.31).W[0], nets[1].W[0]);
  EXPECT_EQ(bank.nearest(0.75).W[0], nets[2].W[0]);
  EXPECT_EQ(bank.nearest(2.0).W[0], nets[2].W[0]);
  EXPECT_THROW(NetworkBankModel({0.1}, {}), ConfigError);
}

TEST(ScoreModels, JacobianTransposeMatchesFiniteDifferences) {
  const auto dist = MultiPatchDistribution::standard(4);
  const TrueScoreModel truth(dist, ZetaQuadrature::from_law(dist.zeta));
  const NetworkBankModel bank({0.3}, {ScoreNetwork::gaussian(Activation::Cubic, 2, 4, 2, 0.6, 3)});
  Rng rng(6);
  for (const ScoreModel* model : {static_cast<const ScoreModel*>(&truth), static_cast<const ScoreModel*>(&bank)}) {
    const auto s = NoiseSchedulePoint::vp(0.3);
    Eigen::VectorXd x(8), g(8);
    for (int k = 0; k < 8; ++k) x(k) = 0.4 * rng.normal(), g(k) = rng.normal();
    const Eigen::VectorXd jt = model->score_jacobian_t(x, s, g);
    for (int k = 0; k < 8; ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += 1e-6;
      xm(k) -= 1e-6;
      const double fd = g.dot(model->score(xp, s) - model->score(xm, s)) / 2e-6;
      EXPECT_NEAR(jt(k), fd, 1e-5 * std::max(1.0, std::fabs(fd)));
    }
  }
}

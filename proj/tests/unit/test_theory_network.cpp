#include <gtest/gtest.h>

#include <cmath>

#include "rulelab/error.hpp"
#include "rulelab/rng.hpp"
#include "rulelab/theory/linear.hpp"
#include "rulelab/theory/network.hpp"
#include "rulelab/theory/training.hpp"

using namespace rulelab;
using namespace rulelab::theory;

namespace {

double max_rel_err(const std::vector<Eigen::MatrixXd>& a, const std::vector<Eigen::MatrixXd>& b) {
  double num = 0, den = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    num = std::max(num, (a[p] - b[p]).cwiseAbs().maxCoeff());
    den = std::max(den, b[p].cwiseAbs().maxCoeff());
  }
  return num / den;
}

std::vector<Eigen::MatrixXd> fd_grad(ScoreNetwork net, const TrainingBatch& batch, const NoiseSchedulePoint& s) {
  std::vector<Eigen::MatrixXd> g;
  const double h = 1e-5;
  for (int p = 0; p < net.P; ++p) {
    g.push_back(Eigen::MatrixXd::Zero(net.m, net.d));
    for (int r = 0; r < net.m; ++r)
      for (int c = 0; c < net.d; ++c) {
        const double w = net.W[p](r, c);
        net.W[p](r, c) = w + h;
        const double lp = dsm_loss_and_grad(net, batch, s).loss;
        net.W[p](r, c) = w - h;
        const double lm = dsm_loss_and_grad(net, batch, s).loss;
        net.W[p](r, c) = w;
        g[p](r, c) = (lp - lm) / (2 * h);
      }
  }
  return g;
}

}  // namespace

TEST(Activation, NamesAndDerivatives) {
  for (Activation a : kAllActivations) EXPECT_EQ(parse_activation(activation_name(a)), a);
  EXPECT_THROW(parse_activation("tanh"), ConfigError);
  EXPECT_EQ(activate(Activation::ReLU, -1.0), 0.0);
  EXPECT_EQ(activate_prime(Activation::ReLU, 0.0), 0.0);
  EXPECT_EQ(activate(Activation::Cubic, 2.0), 8.0);
  EXPECT_EQ(activate_prime(Activation::Quadratic, 3.0), 6.0);
  for (Activation a : kAllActivations)
    for (double z : {-1.3, 0.4, 2.2}) {
      const double fd = (activate(a, z + 1e-6) - activate(a, z - 1e-6)) / 2e-6;
      EXPECT_NEAR(activate_prime(a, z), fd, 1e-6 * std::max(1.0, std::fabs(fd)));
    }
}

TEST(Network, ZeroWeightsGiveResidualOnly) {
  const auto s = NoiseSchedulePoint::vp(0.3);
  const ScoreNetwork net = ScoreNetwork::zeros(Activation::Cubic, 3, 4, 2);
  Rng rng(1);
  Eigen::VectorXd x(8);
  for (int k = 0; k < 8; ++k) x(k) = rng.normal();
  EXPECT_TRUE(network_forward(net, x, s).isApprox(-x / s.beta2()));
  const auto dist = MultiPatchDistribution::standard(4);
  EXPECT_EQ(psi(net, x, dist), 0.0);
}

TEST(Network, SingleLinearNeuronOnU) {
  const auto s = NoiseSchedulePoint::vp(0.5);
  const auto dist = MultiPatchDistribution::standard(5);
  ScoreNetwork net = ScoreNetwork::zeros(Activation::Linear, 1, 5, 2);
  net.W[0].row(0) = dist.u.transpose();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(10);
  x.head(5) = dist.u;
  const Eigen::VectorXd out = network_forward(net, x, s);
  EXPECT_LT((out.head(5) - (-dist.u / s.beta2() + dist.u)).norm(), 1e-14);
}

// Reference evaluation written term by term with plain loops.
TEST(Network, MatchesExplicitExpansion) {
  Rng rng(2);
  for (Activation a : kAllActivations)
    for (int trial = 0; trial < 5; ++trial) {
      const auto s = NoiseSchedulePoint::vp(0.2 + 0.6 * rng.uniform());
      const ScoreNetwork net = ScoreNetwork::gaussian(a, 2, 3, 2, 0.7, 10 + trial);
      Eigen::VectorXd x(6);
      for (int k = 0; k < 6; ++k) x(k) = rng.normal();
      const Eigen::VectorXd out = network_forward(net, x, s);
      for (int p = 0; p < 2; ++p)
        for (int c = 0; c < 3; ++c) {
          double v = -x(3 * p + c) / (s.beta * s.beta);
          for (int r = 0; r < 2; ++r) {
            double dot = 0;
            for (int k = 0; k < 3; ++k) dot += net.W[p](r, k) * x(3 * p + k);
            double act = dot;
            if (a == Activation::ReLU) act = dot > 0 ? dot : 0;
            if (a == Activation::Quadratic) act = dot * dot;
            if (a == Activation::Cubic) act = dot * dot * dot;
            v += act * net.W[p](r, c);
          }
          EXPECT_NEAR(out(3 * p + c), v, 1e-12 * std::max(1.0, std::fabs(v)));
        }
    }
}

TEST(Network, JacobianTransposeMatchesFiniteDifferences) {
  Rng rng(3);
  for (Activation a : kAllActivations) {
    const auto s = NoiseSchedulePoint::vp(0.4);
    const ScoreNetwork net = ScoreNetwork::gaussian(a, 2, 3, 2, 0.8, 4);
    Eigen::VectorXd x(6), g(6);
    for (int k = 0; k < 6; ++k) x(k) = rng.normal(), g(k) = rng.normal();
    const Eigen::VectorXd jt = network_jacobian_t(net, x, s, g);
    for (int k = 0; k < 6; ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += 1e-6;
      xm(k) -= 1e-6;
      const double fd = g.dot(network_forward(net, xp, s) - network_forward(net, xm, s)) / 2e-6;
      EXPECT_NEAR(jt(k), fd, 1e-6 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(Network, PsiOfAlignedLinearNeurons) {
  const auto dist = MultiPatchDistribution::standard(6);
  const auto s = NoiseSchedulePoint::vp(0.6);
  ScoreNetwork net = ScoreNetwork::zeros(Activation::Linear, 1, 6, 2);
  const double a = 1.3, b = 0.7, zeta = 0.35;
  net.W[0].row(0) = a * dist.u.transpose();
  net.W[1].row(0) = b * dist.v.transpose();
  Eigen::VectorXd x(12);
  x << s.alpha * zeta * dist.u, s.alpha * (1 - zeta) * dist.v;
  EXPECT_NEAR(psi(net, x, dist), s.alpha * (zeta * a * a + (1 - zeta) * b * b), 1e-14);
}

TEST(Network, JsonRoundTrip) {
  const ScoreNetwork net = ScoreNetwork::gaussian(Activation::Quadratic, 3, 4, 3, 0.5, 9);
  const ScoreNetwork back = ScoreNetwork::from_json(net.to_json());
  EXPECT_EQ(back.activation, net.activation);
  ASSERT_EQ(back.W.size(), 3u);
  for (int p = 0; p < 3; ++p) EXPECT_EQ(back.W[p], net.W[p]);
  json bad = net.to_json();
  bad["weights"][0].erase(0);
  EXPECT_THROW(ScoreNetwork::from_json(bad), ConfigError);
}

TEST(Dsm, ZeroWeightsSingleSample) {
  const auto dist = MultiPatchDistribution::standard(4);
  const auto s = NoiseSchedulePoint::vp(0.3);
  const TrainingBatch batch = TrainingBatch::make(dist, s, 1, 1, 5);
  const ScoreNetwork net = ScoreNetwork::zeros(Activation::ReLU, 2, 4, 2);
  const Eigen::VectorXd x0 = batch.x0.row(0).transpose(), eps = batch.eps.row(0).transpose();
  const Eigen::VectorXd xt = s.alpha * x0 + s.beta * eps;
  EXPECT_NEAR(dsm_loss_and_grad(net, batch, s).loss, (xt / s.beta2() + eps).squaredNorm(), 1e-10);
  EXPECT_TRUE(batch.noised(0, 1, 0, 8).row(0).transpose().isApprox(xt));
}

TEST(Dsm, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (Activation a : kAllActivations)
    for (int trial = 0; trial < 5; ++trial) {
      const auto dist = MultiPatchDistribution::standard(5);
      const auto s = NoiseSchedulePoint::vp(0.2 + 0.6 * rng.uniform());
      const TrainingBatch batch = TrainingBatch::make(dist, s, 4, 3, 100 + trial);
      const ScoreNetwork net = ScoreNetwork::gaussian(a, 2, 5, 2, 0.5, 200 + trial);
      const LossGrad lg = dsm_loss_and_grad(net, batch, s);
      EXPECT_LT(max_rel_err(lg.grad, fd_grad(net, batch, s)), 1e-4) << activation_name(a);
    }
}

TEST(Dsm, ThreadedReductionIsBitIdentical) {
  const auto dist = MultiPatchDistribution::standard(8);
  const auto s = NoiseSchedulePoint::vp(0.4);
  const TrainingBatch batch = TrainingBatch::make(dist, s, 200, 50, 7);
  const ScoreNetwork net = ScoreNetwork::gaussian(Activation::ReLU, 3, 8, 2, 0.4, 8);
  const LossGrad a = dsm_loss_and_grad(net, batch, s, 1), b = dsm_loss_and_grad(net, batch, s, 3);
  EXPECT_EQ(a.loss, b.loss);
  for (int p = 0; p < 2; ++p) EXPECT_EQ(a.grad[p], b.grad[p]);
}

TEST(Dsm, LinearMomentsReproduceSampledLoss) {
  const auto dist = MultiPatchDistribution::standard(6, 3);
  const auto s = NoiseSchedulePoint::vp(0.5);
  const TrainingBatch batch = TrainingBatch::make(dist, s, 30, 20, 9);
  const ScoreNetwork net = ScoreNetwork::gaussian(Activation::Linear, 2, 6, 3, 0.5, 10);
  const LossGrad direct = dsm_loss_and_grad(net, batch, s);
  const LossGrad mom = linear_moment_loss_and_grad(net, batch_moments(batch, 3, 6), s);
  EXPECT_NEAR(mom.loss, direct.loss, 1e-9 * direct.loss);
  EXPECT_LT(max_rel_err(mom.grad, direct.grad), 1e-8);
}

TEST(Dsm, ExpectedLossMatchesDenseMomentsAndClosedForm) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto dist = MultiPatchDistribution::standard(7, 3);
    const auto s = NoiseSchedulePoint::vp(0.2 + 0.2 * trial);
    const ScoreNetwork net = ScoreNetwork::gaussian(Activation::Linear, 2, 7, 3, 0.6, 20 + trial);
    const LossGrad dense = linear_moment_loss_and_grad(net, population_moments(dist, s), s);
    const LossGrad fast = expected_linear_loss_and_grad(net, dist, s);
    EXPECT_NEAR(fast.loss, dense.loss, 1e-10 * std::fabs(dense.loss));
    EXPECT_LT(max_rel_err(fast.grad, dense.grad), 1e-10);
  }
  // Single linear neuron: per-patch closed forms.
  const auto dist = MultiPatchDistribution::standard(9);
  for (double t : {0.2, 0.4, 0.6, 0.8}) {
    const auto s = NoiseSchedulePoint::vp(t);
    const ScoreNetwork net = ScoreNetwork::gaussian(Activation::Linear, 1, 9, 2, 0.8, 30);
    const LossGrad lg = expected_linear_loss_and_grad(net, dist, s);
    const double m1 = dist.zeta.second_moment(), m2 = 1 - 2 * dist.zeta.mean() + m1;
    const Eigen::VectorXd w1 = net.W[0].row(0).transpose(), w2 = net.W[1].row(0).transpose();
    const Eigen::VectorXd g1 = linear_patch_gradient(w1, dist.u, m1, s.alpha, s.beta);
    const Eigen::VectorXd g2 = linear_patch_gradient(w2, dist.v, m2, s.alpha, s.beta);
    EXPECT_LT((lg.grad[0].row(0).transpose() - g1).norm(), 1e-8 * g1.norm());
    EXPECT_LT((lg.grad[1].row(0).transpose() - g2).norm(), 1e-8 * g2.norm());
    const double closed = linear_patch_loss(w1, dist.u, m1, s.alpha, s.beta, 9) +
                          linear_patch_loss(w2, dist.v, m2, s.alpha, s.beta, 9);
    EXPECT_NEAR(lg.loss, closed, 1e-9 * std::fabs(closed));
  }
}

TEST(Dsm, SampledGradientConvergesToClosedForm) {
  // The empirical linear gradient approaches the population closed form as
  // the batch grows.
  const auto dist = MultiPatchDistribution::standard(3);
  const auto s = NoiseSchedulePoint::vp(0.4);
  const ScoreNetwork net = ScoreNetwork::gaussian(Activation::Linear, 1, 3, 2, 0.8, 31);
  const Eigen::VectorXd w1 = net.W[0].row(0).transpose();
  const Eigen::VectorXd g1 = linear_patch_gradient(w1, dist.u, dist.zeta.second_moment(), s.alpha, s.beta);
  const TrainingBatch batch = TrainingBatch::make(dist, s, 2000, 100, 32);
  const LossGrad lg = dsm_loss_and_grad(net, batch, s);
  EXPECT_LT((lg.grad[0].row(0).transpose() - g1).norm(), 0.05 * g1.norm());
}

TEST(Train, LossDecreasesAndIsReproducible) {
  const auto dist = MultiPatchDistribution::standard(10);
  for (Activation a : kAllActivations) {
    TrainConfig c;
    c.activation = a;
    c.m = 4;
    c.n = 30;
    c.n_eps = 10;
    c.epochs = 40;
    c.lr = a == Activation::Cubic ? 0.01 : 0.05;
    c.seed = 3;
    const auto s = NoiseSchedulePoint::vp(0.4);
    const TrainResult r = train_gd(dist, s, c);
    ASSERT_EQ(r.loss_history.size(), 41u);
    EXPECT_GT(r.loss_history.front(), r.loss_history.back()) << activation_name(a);
    const TrainResult again = train_gd(dist, s, c);
    EXPECT_EQ(again.loss_history, r.loss_history);
    for (int p = 0; p < 2; ++p) EXPECT_EQ(again.net.W[p], r.net.W[p]);
  }
}

TEST(Train, ConfigErrorsAndDivergence) {
  const auto dist = MultiPatchDistribution::standard(6);
  const auto s = NoiseSchedulePoint::vp(0.2);
  TrainConfig c;
  c.lr = 0;
  EXPECT_THROW(train_gd(dist, s, c), ConfigError);
  c.lr = -1;
  EXPECT_THROW(train_gd(dist, s, c), ConfigError);
  TrainConfig wild;
  wild.activation = Activation::Cubic;
  wild.m = 3;
  wild.n = 20;
  wild.n_eps = 5;
  wild.epochs = 200;
  wild.lr = 5.0;
  try {
    train_gd(dist, s, wild);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, LinearSingleNeuronReachesStationaryPoint) {
  const auto dist = MultiPatchDistribution::standard(20);
  for (double t : {0.2, 0.5, 0.8}) {
    const auto s = NoiseSchedulePoint::vp(t);
    TrainConfig c;
    c.m = 1;
    c.mode = LossMode::Expected;
    c.epochs = 1000000;
    c.grad_tol = 1e-10;
    const TrainResult r = train_gd(dist, s, c);
    EXPECT_LT(r.final_grad_norm, 1e-10);
    const StationaryLinear st = stationary_linear(dist.zeta.mean(), dist.zeta.second_moment(), s.alpha, s.beta);
    const Eigen::VectorXd w1 = r.net.W[0].row(0).transpose(), w2 = r.net.W[1].row(0).transpose();
    EXPECT_NEAR(std::pow(w1.dot(dist.u), 2) / st.patch1.proj(), 1.0, 1e-3);
    EXPECT_NEAR(w1.squaredNorm() / st.patch1.norm(), 1.0, 1e-3);
    EXPECT_NEAR(std::pow(w2.dot(dist.v), 2) / st.patch2.proj(), 1.0, 1e-3);
    EXPECT_NEAR(w2.squaredNorm() / st.patch2.norm(), 1.0, 1e-3);
  }
}

TEST(Train, SampledLinearStationaryWithinSamplingError) {
  const auto dist = MultiPatchDistribution::standard(5);
  const auto s = NoiseSchedulePoint::vp(0.4);
  TrainConfig c;
  c.m = 1;
  c.n = 2000;
  c.n_eps = 50;
  c.epochs = 3000;
  const TrainResult r = train_gd(dist, s, c);
  const StationaryLinear st = stationary_linear(dist.zeta.mean(), dist.zeta.second_moment(), s.alpha, s.beta);
  const Eigen::VectorXd w1 = r.net.W[0].row(0).transpose();
  EXPECT_NEAR(std::pow(w1.dot(dist.u), 2) / st.patch1.proj(), 1.0, 0.05);
}

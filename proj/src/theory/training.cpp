#include "rulelab/theory/training.hpp"

#include <cmath>
#include <sstream>

#include "rulelab/error.hpp"
#include "rulelab/parallel.hpp"
#include "rulelab/rng.hpp"

namespace rulelab::theory {

namespace {

constexpr int kBlockRows = 4096;

}  // namespace

TrainingBatch TrainingBatch::make(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                                  int n, int n_eps, std::uint64_t seed) {
  if (n < 1 || n_eps < 1) throw ConfigError("batch needs n >= 1 and n_eps >= 1");
  sched.validate();
  TrainingBatch b;
  b.n = n;
  b.n_eps = n_eps;
  b.sched = sched;
  CleanSamples clean = sample_data(dist, n, seed);
  b.x0 = std::move(clean.x0);
  b.zeta = std::move(clean.zeta);
  const int cols = dist.dim();
  b.eps.resize(static_cast<Eigen::Index>(n) * n_eps, cols);
  for (int i = 0; i < n; ++i) {
    Rng rng(seed, {0xe5e, static_cast<std::uint64_t>(i)});
    for (int j = 0; j < n_eps; ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * n_eps + j;
      for (int c = 0; c < cols; ++c) b.eps(row, c) = rng.normal();
    }
  }
  return b;
}

Eigen::MatrixXd TrainingBatch::noised(int begin, int count, int col, int width) const {
  Eigen::MatrixXd x = sched.beta * eps.block(begin, col, count, width);
  for_each_sample(begin, count, [&](int i, int r0, int rows) {
    x.middleRows(r0, rows).rowwise() += sched.alpha * x0.row(i).segment(col, width);
  });
  return x;
}

LossGrad dsm_loss_and_grad(const ScoreNetwork& net, const TrainingBatch& batch,
                           const NoiseSchedulePoint& sched, int threads) {
  const int d = net.d;
  if (batch.x0.cols() != static_cast<Eigen::Index>(net.P) * d)
    throw Error("batch width does not match the network");
  const int N = batch.rows();
  const int blocks = (N + kBlockRows - 1) / kBlockRows;
  const double b = sched.beta2();
  // With C = -X/b - E the residual is R = C + Z W. Since E = (X - alpha X0)/beta,
  // C W^T = -kappa A + (alpha/beta) X0 W^T, which avoids forming R and lets
  // the whole gradient reduce to one large product:
  //   grad = (D.(R W^T) - kappa Z)^T X + (alpha/beta) Zbar^T X0 + (Z^T Z) W
  // where Zbar sums Z over the noise draws of each clean sample.
  const double kappa = 1.0 / b + 1.0 / sched.beta;
  const double ratio = sched.alpha / sched.beta;

  std::vector<Eigen::MatrixXd> p0(net.P), wwt(net.P);
  for (int p = 0; p < net.P; ++p) {
    p0[p] = batch.x0.middleCols(p * d, d) * net.W[p].transpose();
    wwt[p] = net.W[p] * net.W[p].transpose();
  }

  // Per-block partial sums, reduced in block order so the result does not
  // depend on the thread count.
  std::vector<std::vector<Eigen::MatrixXd>> grads(blocks);
  std::vector<std::vector<Eigen::MatrixXd>> zbars(blocks);
  std::vector<double> losses(blocks, 0.0);
  parallel_for(blocks, threads, [&](int k) {
    const int begin = k * kBlockRows;
    const int count = std::min(kBlockRows, N - begin);
    const int first = begin / batch.n_eps;
    const int last = (begin + count - 1) / batch.n_eps;
    grads[k].resize(net.P);
    zbars[k].resize(net.P);
    for (int p = 0; p < net.P; ++p) {
      const Eigen::MatrixXd X = batch.noised(begin, count, p * d, d);
      const Eigen::MatrixXd& W = net.W[p];
      Eigen::MatrixXd A = X * W.transpose();
      Eigen::MatrixXd Z = A.unaryExpr([&](double z) { return activate(net.activation, z); });
      Eigen::MatrixXd CW = -kappa * A;
      Eigen::MatrixXd zbar = Eigen::MatrixXd::Zero(last - first + 1, net.m);
      batch.for_each_sample(begin, count, [&](int i, int r0, int rows) {
        CW.middleRows(r0, rows).rowwise() += ratio * p0[p].row(i);
        zbar.row(i - first) = Z.middleRows(r0, rows).colwise().sum();
      });
      const Eigen::MatrixXd ZtZ = Z.transpose() * Z;
      const double c_sq = (-X / b - batch.eps.block(begin, p * d, count, d)).squaredNorm();
      losses[k] += c_sq + 2 * Z.cwiseProduct(CW).sum() + ZtZ.cwiseProduct(wwt[p]).sum();
      Eigen::MatrixXd back = CW + Z * wwt[p];
      back = A.unaryExpr([&](double z) { return activate_prime(net.activation, z); }).cwiseProduct(back);
      back -= kappa * Z;
      grads[k][p] = back.transpose() * X + ZtZ * W;
      zbars[k][p] = std::move(zbar);
    }
  });

  LossGrad out;
  out.grad.assign(net.P, Eigen::MatrixXd::Zero(net.m, d));
  std::vector<Eigen::MatrixXd> zbar(net.P, Eigen::MatrixXd::Zero(batch.n, net.m));
  for (int k = 0; k < blocks; ++k) {
    out.loss += losses[k];
    const int first = k * kBlockRows / batch.n_eps;
    for (int p = 0; p < net.P; ++p) {
      out.grad[p] += grads[k][p];
      zbar[p].middleRows(first, zbars[k][p].rows()) += zbars[k][p];
    }
  }
  for (int p = 0; p < net.P; ++p)
    out.grad[p] += ratio * zbar[p].transpose() * batch.x0.middleCols(p * d, d);
  if (!std::isfinite(out.loss)) {
    for (int row = 0; row < N; ++row) {
      Eigen::VectorXd x = batch.noised(row, 1, 0, net.P * d).row(0).transpose();
      Eigen::VectorXd r = network_forward(net, x, sched) - batch.eps.row(row).transpose();
      if (!std::isfinite(r.squaredNorm())) {
        std::ostringstream msg;
        msg << "non-finite DSM loss at sample " << row / batch.n_eps << ", noise draw " << row % batch.n_eps;
        throw DivergenceError(msg.str());
      }
    }
    throw DivergenceError("non-finite DSM loss");
  }
  out.loss /= N;
  for (auto& g : out.grad) g *= 2.0 / N;
  return out;
}

std::vector<PatchMoments> batch_moments(const TrainingBatch& batch, int P, int d) {
  const int N = batch.rows();
  std::vector<PatchMoments> mom(P);
  for (int p = 0; p < P; ++p) {
    mom[p].sxx = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd sxe = Eigen::MatrixXd::Zero(d, d);
    for (int begin = 0; begin < N; begin += kBlockRows) {
      const int count = std::min(kBlockRows, N - begin);
      const Eigen::MatrixXd X = batch.noised(begin, count, p * d, d);
      const auto E = batch.eps.block(begin, p * d, count, d);
      mom[p].sxx += X.transpose() * X;
      sxe += X.transpose() * E;
      mom[p].see += E.squaredNorm();
    }
    mom[p].sxx /= N;
    mom[p].sxe = (sxe + sxe.transpose()) / (2.0 * N);
    mom[p].see /= N;
  }
  return mom;
}

std::vector<PatchMoments> population_moments(const MultiPatchDistribution& dist,
                                             const NoiseSchedulePoint& sched) {
  const int d = dist.d;
  const double a2 = sched.alpha * sched.alpha;
  const double e1 = dist.zeta.second_moment();
  const double e2 = 1 - 2 * dist.zeta.mean() + e1;
  std::vector<PatchMoments> mom(dist.P);
  for (int p = 0; p < dist.P; ++p) {
    Eigen::MatrixXd clean;
    if (p == 0)
      clean = e1 * dist.u * dist.u.transpose();
    else if (p == 1)
      clean = e2 * dist.v * dist.v.transpose();
    else
      clean = Eigen::MatrixXd::Identity(d, d);
    mom[p].sxx = a2 * clean + sched.beta2() * Eigen::MatrixXd::Identity(d, d);
    mom[p].sxe = sched.beta * Eigen::MatrixXd::Identity(d, d);
    mom[p].see = d;
  }
  return mom;
}

LossGrad linear_moment_loss_and_grad(const ScoreNetwork& net, const std::vector<PatchMoments>& moments,
                                     const NoiseSchedulePoint& sched) {
  if (net.activation != Activation::Linear) throw Error("moment loss requires linear activation");
  if (static_cast<int>(moments.size()) != net.P) throw Error("moment count does not match patches");
  LossGrad out;
  out.grad.resize(net.P);
  const double b = sched.beta2();
  for (int p = 0; p < net.P; ++p) {
    const PatchMoments& mo = moments[p];
    Eigen::MatrixXd K = net.W[p].transpose() * net.W[p];
    K.diagonal().array() -= 1.0 / b;
    Eigen::MatrixXd SK = mo.sxx * K;
    out.loss += (K * SK).trace() - 2 * (K * mo.sxe).trace() + mo.see;
    Eigen::MatrixXd G = SK + SK.transpose() - 2 * mo.sxe;
    out.grad[p] = 2 * net.W[p] * G;
  }
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite DSM loss");
  return out;
}

LossGrad expected_linear_loss_and_grad(const ScoreNetwork& net, const MultiPatchDistribution& dist,
                                       const NoiseSchedulePoint& sched) {
  if (net.activation != Activation::Linear) throw Error("expected loss requires linear activation");
  if (net.P != dist.P || net.d != dist.d) throw Error("network does not match the distribution");
  const int d = dist.d;
  const double a2 = sched.alpha * sched.alpha;
  const double b = sched.beta2();
  const double beta = sched.beta;
  const double e1 = dist.zeta.second_moment();
  const double e2 = 1 - 2 * dist.zeta.mean() + e1;
  LossGrad out;
  out.grad.resize(net.P);
  for (int p = 0; p < net.P; ++p) {
    // S = c q q^T + s I
    const Eigen::VectorXd* q = p == 0 ? &dist.u : p == 1 ? &dist.v : nullptr;
    const double c = p == 0 ? a2 * e1 : p == 1 ? a2 * e2 : 0.0;
    const double s = p < 2 ? b : a2 + b;
    const Eigen::MatrixXd& W = net.W[p];
    Eigen::MatrixXd WS = s * W;
    if (q) WS += c * (W * *q) * q->transpose();
    const Eigen::MatrixXd G = W * W.transpose();
    const Eigen::MatrixXd H = WS * W.transpose();
    const double trS = c + s * d;
    out.loss += (H.cwiseProduct(G)).sum() - 2 * H.trace() / b + trS / (b * b) - 2 * beta * G.trace() +
                2 * beta * d / b + d;
    out.grad[p] = 2 * (H * W + G * WS - 2 * WS / b) - 4 * beta * W;
  }
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite DSM loss");
  return out;
}

void TrainConfig::validate() const {
  if (m < 1) throw ConfigError("network width m must be positive");
  if (n < 1 || n_eps < 1) throw ConfigError("n and n_eps must be positive");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (mode == LossMode::Expected && activation != Activation::Linear)
    throw ConfigError("the expected loss is available for linear activation only");
  if (!(divergence_threshold > 0)) throw ConfigError("divergence threshold must be positive");
  if (grad_tol < 0) throw ConfigError("gradient tolerance must be nonnegative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

json TrainConfig::to_json() const {
  return {{"activation", activation_name(activation)},
          {"m", m},
          {"sigma0", sigma0},
          {"n", n},
          {"n_eps", n_eps},
          {"epochs", epochs},
          {"lr", lr},
          {"seed", seed},
          {"mode", mode == LossMode::Expected ? "expected" : "sampled"},
          {"linear_via_moments", linear_via_moments},
          {"divergence_threshold", divergence_threshold},
          {"grad_tol", grad_tol}};
}

namespace {

double grad_norm(const std::vector<Eigen::MatrixXd>& g) {
  double s = 0;
  for (const auto& m : g) s += m.squaredNorm();
  return std::sqrt(s);
}

template <class LossFn>
TrainResult descend(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                    const TrainConfig& config, LossFn loss_fn) {
  const double sigma0 = config.sigma0 > 0 ? config.sigma0 : 1.0 / std::sqrt(static_cast<double>(dist.d));
  TrainResult res;
  res.net = ScoreNetwork::gaussian(config.activation, config.m, dist.d, dist.P, sigma0, config.seed);
  res.loss_history.reserve(config.epochs + 1);
  for (int epoch = 0;; ++epoch) {
    LossGrad lg = loss_fn(res.net);
    res.loss_history.push_back(lg.loss);
    res.final_grad_norm = grad_norm(lg.grad);
    if (!(lg.loss <= config.divergence_threshold)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << " (t=" << sched.t << ", lr=" << config.lr
          << ", activation=" << activation_name(config.activation) << "): loss " << lg.loss;
      throw DivergenceError(msg.str());
    }
    if (epoch == config.epochs || (config.grad_tol > 0 && res.final_grad_norm < config.grad_tol)) break;
    for (int p = 0; p < res.net.P; ++p) res.net.W[p] -= config.lr * lg.grad[p];
    res.epochs_run = epoch + 1;
  }
  return res;
}

}  // namespace

TrainResult train_gd_on_batch(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                              const TrainConfig& config, const TrainingBatch& batch) {
  config.validate();
  if (config.activation == Activation::Linear && config.linear_via_moments) {
    const auto mom = batch_moments(batch, dist.P, dist.d);
    return descend(dist, sched, config,
                   [&](const ScoreNetwork& net) { return linear_moment_loss_and_grad(net, mom, sched); });
  }
  return descend(dist, sched, config,
                 [&](const ScoreNetwork& net) { return dsm_loss_and_grad(net, batch, sched, config.threads); });
}

TrainResult train_gd(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                     const TrainConfig& config) {
  config.validate();
  dist.validate();
  sched.validate();
  if (config.mode == LossMode::Expected)
    return descend(dist, sched, config,
                   [&](const ScoreNetwork& net) { return expected_linear_loss_and_grad(net, dist, sched); });
  const TrainingBatch batch = TrainingBatch::make(dist, sched, config.n, config.n_eps, config.seed);
  return train_gd_on_batch(dist, sched, config, batch);
}

}  // namespace rulelab::theory

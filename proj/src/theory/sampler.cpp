#include "rulelab/theory/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rulelab/analysis.hpp"
#include "rulelab/error.hpp"
#include "rulelab/rng.hpp"

namespace rulelab::theory {

Eigen::VectorXd TrueScoreModel::score(const Eigen::VectorXd& x, const NoiseSchedulePoint& s) const {
  return true_score(dist_, quad_, x, s).score;
}

Eigen::VectorXd TrueScoreModel::score_jacobian_t(const Eigen::VectorXd& x, const NoiseSchedulePoint& s,
                                                 const Eigen::VectorXd& g) const {
  // The Jacobian is -I/b + (alpha^2/b^2) Var_pi(zeta) e e^T with e = [u; -v].
  PosteriorScore ps = true_score(dist_, quad_, x, s);
  double var = 0;
  for (size_t k = 0; k < ps.weights.size(); ++k) {
    const double c = quad_.nodes[k] - ps.e_zeta;
    var += ps.weights[k] * c * c;
  }
  const int d = dist_.d;
  const double b = s.beta2();
  const double eg = g.segment(0, d).dot(dist_.u) - g.segment(d, d).dot(dist_.v);
  const double coef = s.alpha * s.alpha / (b * b) * var * eg;
  Eigen::VectorXd out = -g / b;
  out.segment(0, d) += coef * dist_.u;
  out.segment(d, d) -= coef * dist_.v;
  return out;
}

NetworkBankModel::NetworkBankModel(std::vector<double> times, std::vector<ScoreNetwork> nets)
    : times_(std::move(times)), nets_(std::move(nets)) {
  if (times_.empty() || times_.size() != nets_.size()) throw ConfigError("network bank needs one net per time");
}

const ScoreNetwork& NetworkBankModel::nearest(double t) const {
  size_t best = 0;
  for (size_t k = 1; k < times_.size(); ++k)
    if (std::abs(times_[k] - t) < std::abs(times_[best] - t)) best = k;
  return nets_[best];
}

Eigen::VectorXd NetworkBankModel::score(const Eigen::VectorXd& x, const NoiseSchedulePoint& s) const {
  return network_forward(nearest(s.t), x, s);
}

Eigen::VectorXd NetworkBankModel::score_jacobian_t(const Eigen::VectorXd& x, const NoiseSchedulePoint& s,
                                                   const Eigen::VectorXd& g) const {
  return network_jacobian_t(nearest(s.t), x, s, g);
}

NetworkBankModel train_score_bank(const MultiPatchDistribution& dist, const std::vector<double>& times,
                                  const TrainConfig& config, double beta_ref2) {
  std::vector<ScoreNetwork> nets;
  nets.reserve(times.size());
  for (size_t k = 0; k < times.size(); ++k) {
    const NoiseSchedulePoint sched = NoiseSchedulePoint::vp(times[k]);
    TrainConfig c = config;
    c.lr = config.lr * std::min(1.0, sched.beta2() / beta_ref2);
    c.seed = config.seed + k;
    nets.push_back(train_gd(dist, sched, c).net);
  }
  return NetworkBankModel(times, std::move(nets));
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler needs at least one step");
  if (!(t_min > 0 && t_min < t_max)) throw ConfigError("sampler needs 0 < t_min < t_max");
  if (n < 1) throw ConfigError("sampler needs n >= 1");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("guidance weight must be nonnegative");
  if (guidance_last_steps < 0) throw ConfigError("guidance_last_steps must be nonnegative");
  if (!(explode_norm > 0)) throw ConfigError("explode_norm must be positive");
}

json SamplerConfig::to_json() const {
  return {{"steps", steps},       {"t_min", t_min},   {"t_max", t_max},
          {"n", n},               {"lambda", lambda}, {"guidance_last_steps", guidance_last_steps},
          {"seed", seed},         {"explode_norm", explode_norm}};
}

namespace {

double rule_gap(const Eigen::VectorXd& x, int d) {
  return std::abs(x.segment(0, d).norm() + x.segment(d, d).norm() - 1);
}

// Score with the rule penalty folded in: s - lambda * grad_x g(x0_hat(x)).
Eigen::VectorXd guided_score(const ScoreModel& model, const Eigen::VectorXd& x, const NoiseSchedulePoint& s,
                             int d, double lambda) {
  Eigen::VectorXd sc = model.score(x, s);
  if (lambda == 0) return sc;
  const double b = s.beta2();
  const Eigen::VectorXd x0 = (x + b * sc) / s.alpha;
  const double n1 = x0.segment(0, d).norm(), n2 = x0.segment(d, d).norm();
  Eigen::VectorXd g0 = Eigen::VectorXd::Zero(2 * d);
  const double r = 2 * (n1 + n2 - 1);
  if (n1 > 0) g0.segment(0, d) = r * x0.segment(0, d) / n1;
  if (n2 > 0) g0.segment(d, d) = r * x0.segment(d, d) / n2;
  // d x0_hat / dx = (I + b J_s) / alpha
  const Eigen::VectorXd grad = (g0 + b * model.score_jacobian_t(x, s, g0)) / s.alpha;
  return sc - lambda * grad;
}

}  // namespace

SamplerResult ancestral_sample(const ScoreModel& model, const MultiPatchDistribution& dist,
                               const SamplerConfig& config) {
  config.validate();
  const int d = dist.d;
  const int K = config.steps;
  std::vector<NoiseSchedulePoint> grid(K + 1);
  for (int k = 0; k <= K; ++k)
    grid[k] = NoiseSchedulePoint::vp(config.t_max - (config.t_max - config.t_min) * k / K);

  auto lambda_at = [&](int k) {
    if (config.guidance_last_steps == 0 || k >= K + 1 - config.guidance_last_steps) return config.lambda;
    return 0.0;
  };

  SamplerResult res;
  res.samples.resize(config.n, 2 * d);
  res.gaps.resize(config.n);
  for (int i = 0; i < config.n; ++i) {
    Rng rng(config.seed, {0x5a3, static_cast<std::uint64_t>(i)});
    Eigen::VectorXd x(2 * d);
    for (int c = 0; c < 2 * d; ++c) x(c) = rng.normal();
    for (int k = 0; k < K; ++k) {
      const NoiseSchedulePoint& st = grid[k];
      const NoiseSchedulePoint& ss = grid[k + 1];
      const Eigen::VectorXd sc = guided_score(model, x, st, d, lambda_at(k));
      const Eigen::VectorXd x0 = (x + st.beta2() * sc) / st.alpha;
      const double a = st.alpha / ss.alpha;
      const double s2 = 1 - a * a;
      const Eigen::VectorXd mean = (ss.alpha * s2 / st.beta2()) * x0 + (a * ss.beta2() / st.beta2()) * x;
      const double sd = std::sqrt(s2 * ss.beta2() / st.beta2());
      for (int c = 0; c < 2 * d; ++c) x(c) = mean(c) + sd * rng.normal();
      if (!(x.norm() <= config.explode_norm)) {
        std::ostringstream msg;
        msg << "sampler exploded at step " << k << " (t=" << ss.t << ", lambda=" << config.lambda
            << ", sample " << i << ")";
        throw DivergenceError(msg.str());
      }
    }
    const NoiseSchedulePoint& last = grid[K];
    const Eigen::VectorXd sc = guided_score(model, x, last, d, lambda_at(K));
    const Eigen::VectorXd x0 = (x + last.beta2() * sc) / last.alpha;
    res.samples.row(i) = x0.transpose();
    res.gaps[i] = rule_gap(x0, d);
  }
  double total = 0;
  for (double g : res.gaps) total += g;
  res.mean_gap = total / config.n;
  res.median_gap = percentile(res.gaps, 50);
  res.q05_gap = percentile(res.gaps, 5);
  res.q95_gap = percentile(res.gaps, 95);
  return res;
}

json sampler_result_json(const SamplerResult& r, const SamplerConfig& config) {
  return {{"schema", "rulelab-sampler"},
          {"version", 1},
          {"config", config.to_json()},
          {"n", r.gaps.size()},
          {"mean_gap", r.mean_gap},
          {"median_gap", r.median_gap},
          {"q05_gap", r.q05_gap},
          {"q95_gap", r.q95_gap}};
}

}  // namespace rulelab::theory

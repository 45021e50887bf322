#include "rulelab/theory/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rulelab/error.hpp"

namespace rulelab::theory {

NoiseSchedulePoint NoiseSchedulePoint::vp(double t) {
  if (!(t > 0) || !std::isfinite(t)) throw ConfigError("diffusion time must be positive, got " + format_double(t));
  NoiseSchedulePoint s;
  s.t = t;
  s.alpha = std::exp(-t);
  s.beta = std::sqrt(-std::expm1(-2.0 * t));
  return s;
}

void NoiseSchedulePoint::validate() const {
  if (!(alpha > 0 && alpha <= 1) || !(beta > 0 && beta <= 1))
    throw ConfigError("schedule point needs alpha, beta in (0, 1]");
}

ZetaLaw ZetaLaw::uniform(double lo, double hi) {
  ZetaLaw z;
  z.kind = Kind::Uniform;
  z.lo = lo;
  z.hi = hi;
  z.validate();
  return z;
}

ZetaLaw ZetaLaw::point_mass(double value) {
  ZetaLaw z;
  z.kind = Kind::PointMass;
  z.values = {value};
  z.probs = {1.0};
  z.validate();
  return z;
}

ZetaLaw ZetaLaw::discrete(std::vector<double> values, std::vector<double> probs) {
  ZetaLaw z;
  z.kind = Kind::Discrete;
  z.values = std::move(values);
  z.probs = std::move(probs);
  z.validate();
  return z;
}

void ZetaLaw::validate() const {
  if (kind == Kind::Uniform) {
    if (!(lo > 0 && lo < hi && hi <= 1))
      throw ConfigError("uniform zeta law needs 0 < lo < hi <= 1");
    return;
  }
  if (values.empty() || values.size() != probs.size())
    throw ConfigError("zeta law needs matching non-empty values and probs");
  double total = 0;
  for (size_t k = 0; k < values.size(); ++k) {
    if (!(values[k] > 0 && values[k] <= 1)) throw ConfigError("zeta values must lie in (0, 1]");
    if (!(probs[k] >= 0)) throw ConfigError("zeta probabilities must be nonnegative");
    total += probs[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("zeta probabilities must sum to 1");
  if (kind == Kind::PointMass && values.size() != 1) throw ConfigError("point mass needs one value");
}

double ZetaLaw::mean() const {
  if (kind == Kind::Uniform) return 0.5 * (lo + hi);
  double m = 0;
  for (size_t k = 0; k < values.size(); ++k) m += probs[k] * values[k];
  return m;
}

double ZetaLaw::second_moment() const {
  if (kind == Kind::Uniform) return (lo * lo + lo * hi + hi * hi) / 3.0;
  double m = 0;
  for (size_t k = 0; k < values.size(); ++k) m += probs[k] * values[k] * values[k];
  return m;
}

double ZetaLaw::lower() const {
  if (kind == Kind::Uniform) return lo;
  return *std::min_element(values.begin(), values.end());
}

double ZetaLaw::upper() const {
  if (kind == Kind::Uniform) return hi;
  return *std::max_element(values.begin(), values.end());
}

double ZetaLaw::sample(Rng& rng) const {
  if (kind == Kind::Uniform) return rng.uniform(lo, hi);
  if (values.size() == 1) return values[0];
  double u = rng.uniform(), acc = 0;
  for (size_t k = 0; k + 1 < values.size(); ++k) {
    acc += probs[k];
    if (u < acc) return values[k];
  }
  return values.back();
}

json ZetaLaw::to_json() const {
  if (kind == Kind::Uniform) return {{"kind", "uniform"}, {"lo", lo}, {"hi", hi}};
  if (kind == Kind::PointMass) return {{"kind", "point_mass"}, {"value", values[0]}};
  return {{"kind", "discrete"}, {"values", values}, {"probs", probs}};
}

ZetaLaw ZetaLaw::from_json(const json& j) {
  try {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "uniform") return uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
    if (kind == "point_mass") return point_mass(j.at("value").get<double>());
    if (kind == "discrete")
      return discrete(j.at("values").get<std::vector<double>>(), j.at("probs").get<std::vector<double>>());
    throw ConfigError("unknown zeta law '" + kind + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad zeta law: ") + e.what());
  }
}

ZetaQuadrature ZetaQuadrature::from_law(const ZetaLaw& law, int grid) {
  ZetaQuadrature q;
  if (law.kind == ZetaLaw::Kind::Uniform) {
    if (grid < 1) throw ConfigError("quadrature grid must be positive");
    double h = (law.hi - law.lo) / grid;
    for (int k = 0; k < grid; ++k) {
      q.nodes.push_back(law.lo + (k + 0.5) * h);
      q.weights.push_back(1.0 / grid);
    }
  } else {
    q.nodes = law.values;
    q.weights = law.probs;
  }
  return q;
}

MultiPatchDistribution MultiPatchDistribution::standard(int d, int P, ZetaLaw law) {
  MultiPatchDistribution dist;
  dist.P = P;
  dist.d = d;
  if (d < 2) throw ConfigError("patch dimension must be at least 2");
  dist.u = Eigen::VectorXd::Unit(d, 0);
  dist.v = Eigen::VectorXd::Unit(d, 1);
  dist.zeta = std::move(law);
  dist.validate();
  return dist;
}

void MultiPatchDistribution::validate() const {
  if (P < 2) throw ConfigError("need at least two patches");
  if (d < 2) throw ConfigError("patch dimension must be at least 2");
  if (u.size() != d || v.size() != d) throw ConfigError("feature vectors must have dimension d");
  if (std::abs(u.norm() - 1) > 1e-12 || std::abs(v.norm() - 1) > 1e-12)
    throw ConfigError("feature vectors must have unit norm");
  if (std::abs(u.dot(v)) > 1e-12) throw ConfigError("feature vectors must be orthogonal");
  zeta.validate();
}

CleanSamples sample_data(const MultiPatchDistribution& dist, int n, std::uint64_t seed) {
  dist.validate();
  if (n < 1) throw ConfigError("sample count must be positive");
  const int d = dist.d;
  CleanSamples out;
  out.x0 = Eigen::MatrixXd::Zero(n, dist.dim());
  out.zeta.resize(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(seed, {0xc1ea7, static_cast<std::uint64_t>(i)});
    double z = dist.zeta.sample(rng);
    out.zeta(i) = z;
    out.x0.row(i).segment(0, d) = z * dist.u.transpose();
    out.x0.row(i).segment(d, d) = (1.0 - z) * dist.v.transpose();
    for (int j = 2 * d; j < dist.dim(); ++j) out.x0(i, j) = rng.normal();
  }
  return out;
}

namespace {

// Log-weights log w_k - ||x - alpha mu(zeta_k)||^2 / (2 beta^2) where
// mu(zeta) = [zeta u; (1 - zeta) v]. Only the projections of x onto u and v
// depend on k, so the constant part is computed once.
struct LogWeights {
  std::vector<double> logw;
  double max = -std::numeric_limits<double>::infinity();
  double const_part = 0;  // -||x||^2 / (2 beta^2)
};

LogWeights log_weights(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                       const Eigen::VectorXd& x12, const NoiseSchedulePoint& s) {
  const int d = dist.d;
  if (x12.size() != 2 * d) throw Error("true score expects a vector of length 2d");
  const double b = s.beta2();
  const double pu = x12.segment(0, d).dot(dist.u);
  const double pv = x12.segment(d, d).dot(dist.v);
  LogWeights lw;
  lw.const_part = -x12.squaredNorm() / (2 * b);
  lw.logw.resize(quad.nodes.size());
  for (size_t k = 0; k < quad.nodes.size(); ++k) {
    const double z = quad.nodes[k];
    const double a1 = s.alpha * z, a2 = s.alpha * (1 - z);
    // -(||x||^2 - 2 a1 pu - 2 a2 pv + a1^2 + a2^2) / (2b), minus the ||x||^2 part
    double l = quad.weights[k] > 0 ? std::log(quad.weights[k]) : -std::numeric_limits<double>::infinity();
    l += (2 * a1 * pu + 2 * a2 * pv - a1 * a1 - a2 * a2) / (2 * b);
    lw.logw[k] = l;
    lw.max = std::max(lw.max, l);
  }
  if (!std::isfinite(lw.max)) throw Error("posterior weights underflowed");
  return lw;
}

}  // namespace

PosteriorScore true_score(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                          const Eigen::VectorXd& x12, const NoiseSchedulePoint& s) {
  LogWeights lw = log_weights(dist, quad, x12, s);
  PosteriorScore out;
  out.weights.resize(lw.logw.size());
  double total = 0;
  for (size_t k = 0; k < lw.logw.size(); ++k) {
    out.weights[k] = std::exp(lw.logw[k] - lw.max);
    total += out.weights[k];
  }
  if (!(total > 0)) throw Error("posterior weights underflowed");
  for (size_t k = 0; k < out.weights.size(); ++k) {
    out.weights[k] /= total;
    out.e_zeta += out.weights[k] * quad.nodes[k];
    out.e_one_minus_zeta += out.weights[k] * (1 - quad.nodes[k]);
  }
  const int d = dist.d;
  const double b = s.beta2();
  out.score = -x12 / b;
  out.score.segment(0, d) += (s.alpha / b) * out.e_zeta * dist.u;
  out.score.segment(d, d) += (s.alpha / b) * out.e_one_minus_zeta * dist.v;
  return out;
}

double log_density(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                   const Eigen::VectorXd& x12, const NoiseSchedulePoint& s) {
  LogWeights lw = log_weights(dist, quad, x12, s);
  double acc = 0;
  for (double l : lw.logw) acc += std::exp(l - lw.max);
  const double b = s.beta2();
  return lw.max + std::log(acc) + lw.const_part - dist.d * std::log(2 * M_PI * b);
}

Eigen::MatrixXd true_score_jacobian(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                                    const Eigen::VectorXd& x12, const NoiseSchedulePoint& s) {
  // mu(zeta) = [0; v] + zeta [u; -v], so Cov_pi(mu) = Var_pi(zeta) e e^T.
  PosteriorScore ps = true_score(dist, quad, x12, s);
  double var = 0;
  for (size_t k = 0; k < ps.weights.size(); ++k) {
    const double c = quad.nodes[k] - ps.e_zeta;
    var += ps.weights[k] * c * c;
  }
  const int d = dist.d;
  const double b = s.beta2();
  Eigen::VectorXd e(2 * d);
  e << dist.u, -dist.v;
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(2 * d, 2 * d) * (-1.0 / b);
  J += (s.alpha * s.alpha / (b * b)) * var * e * e.transpose();
  return J;
}

}  // namespace rulelab::theory

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/io.hpp"
#include "rulelab/rng.hpp"

namespace rulelab::theory {

// Variance-preserving schedule point; the default is alpha = exp(-t).
struct NoiseSchedulePoint {
  double t = 0, alpha = 1, beta = 0;

  static NoiseSchedulePoint vp(double t);
  double beta2() const { return beta * beta; }
  void validate() const;
};

// Law of the mixing coefficient zeta on [lower, upper].
struct ZetaLaw {
  enum class Kind { Uniform, PointMass, Discrete };
  Kind kind = Kind::Uniform;
  double lo = 0.2, hi = 0.8;  // Uniform
  std::vector<double> values;  // PointMass (one value) or Discrete
  std::vector<double> probs;

  static ZetaLaw uniform(double lo, double hi);
  static ZetaLaw point_mass(double value);
  static ZetaLaw discrete(std::vector<double> values, std::vector<double> probs);

  double mean() const;
  double second_moment() const;
  double variance() const { return second_moment() - mean() * mean(); }
  double lower() const;
  double upper() const;
  double sample(Rng& rng) const;
  void validate() const;  // throws ConfigError
  json to_json() const;
  static ZetaLaw from_json(const json& j);
};

// Quadrature over zeta: nodes with weights summing to 1. Uniform laws use a
// midpoint grid, point-mass and discrete laws their own atoms.
struct ZetaQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;

  static ZetaQuadrature from_law(const ZetaLaw& law, int grid = 201);
};

// x^(1) = zeta u, x^(2) = (1 - zeta) v, patches 3..P standard Gaussian.
// Vectors are laid out patch-major: [x^(1); x^(2); ...], each of length d.
struct MultiPatchDistribution {
  int P = 2;
  int d = 100;
  Eigen::VectorXd u, v;
  ZetaLaw zeta;

  static MultiPatchDistribution standard(int d, int P = 2, ZetaLaw law = ZetaLaw::uniform(0.2, 0.8));
  void validate() const;  // throws ConfigError
  int dim() const { return P * d; }
};

struct CleanSamples {
  Eigen::MatrixXd x0;    // n x (P d)
  Eigen::VectorXd zeta;  // n
};

CleanSamples sample_data(const MultiPatchDistribution& dist, int n, std::uint64_t seed);

// Score of p_t restricted to the first two patches (a 2d vector) together
// with the posterior expectations it is built from.
struct PosteriorScore {
  Eigen::VectorXd score;
  double e_zeta = 0;            // E_pi[zeta]
  double e_one_minus_zeta = 0;  // E_pi[1 - zeta], summed separately
  std::vector<double> weights;  // pi over quadrature nodes
};

PosteriorScore true_score(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                          const Eigen::VectorXd& x12, const NoiseSchedulePoint& sched);
// log p_t of the first two patches under the same quadrature.
double log_density(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                   const Eigen::VectorXd& x12, const NoiseSchedulePoint& sched);
// Jacobian of true_score with respect to x12 (symmetric 2d x 2d).
Eigen::MatrixXd true_score_jacobian(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                                    const Eigen::VectorXd& x12, const NoiseSchedulePoint& sched);

}  // namespace rulelab::theory

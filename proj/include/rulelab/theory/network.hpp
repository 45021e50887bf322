#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/io.hpp"
#include "rulelab/theory/distribution.hpp"

namespace rulelab::theory {

enum class Activation { ReLU, Linear, Quadratic, Cubic };

inline constexpr Activation kAllActivations[] = {Activation::ReLU, Activation::Linear,
                                                 Activation::Quadratic, Activation::Cubic};

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);  // throws ConfigError
double activate(Activation a, double z);
// Derivative; ReLU uses 0 at the kink.
double activate_prime(Activation a, double z);

// s^(p)(x) = -x^(p)/beta^2 + sum_r sigma(<w_r^(p), x^(p)>) w_r^(p), one
// m x d weight matrix per patch (rows are neurons).
struct ScoreNetwork {
  Activation activation = Activation::Linear;
  int m = 1, d = 1, P = 2;
  std::vector<Eigen::MatrixXd> W;

  static ScoreNetwork zeros(Activation a, int m, int d, int P);
  static ScoreNetwork gaussian(Activation a, int m, int d, int P, double sigma0, std::uint64_t seed);
  json to_json() const;
  static ScoreNetwork from_json(const json& j);
};

// Per-patch outputs stacked patch-major.
Eigen::VectorXd network_forward(const ScoreNetwork& net, const Eigen::VectorXd& x,
                                const NoiseSchedulePoint& sched);
// J^T g for the Jacobian J of network_forward (J is block diagonal).
Eigen::VectorXd network_jacobian_t(const ScoreNetwork& net, const Eigen::VectorXd& x,
                                   const NoiseSchedulePoint& sched, const Eigen::VectorXd& g);
// Coefficient of the non-residual output along u (patch 1) plus along v
// (patch 2).
double psi(const ScoreNetwork& net, const Eigen::VectorXd& x, const MultiPatchDistribution& dist);

}  // namespace rulelab::theory

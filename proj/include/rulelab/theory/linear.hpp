#pragma once

#include <array>

#include <Eigen/Dense>

namespace rulelab::theory {

// Stationary points of the single-neuron linear DSM loss for one patch whose
// clean part is c u with E[c^2] = m2. Writing a = alpha^2 m2, b = beta^2,
// N = ||w||^2 and g = <w,u>, the patch loss is
//   L = (a g^2 + b N) N - 2 (a/b) g^2 - 2 (1 + beta) N + const
// and its gradient is
//   [2 a g^2 + 4 b N - 4 (1 + beta)] w + [2 a N g - 4 (a/b) g] u.
// Nonzero stationary points either align with u (g^2 = N) or are orthogonal
// to it (g = 0); the mixed case would need g^2 = 2(beta - 1)/a < 0.
struct StationaryPatch {
  std::array<double, 2> norm_sq{};  // [aligned root, orthogonal root]
  std::array<double, 2> proj_sq{};  // <w,u>^2 for each root
  int selected = 0;                 // root with <w,u>^2 > 0

  double norm() const { return norm_sq[selected]; }
  double proj() const { return proj_sq[selected]; }
};

struct StationaryLinear {
  StationaryPatch patch1;  // uses E[zeta^2]
  StationaryPatch patch2;  // uses E[(1 - zeta)^2]
};

StationaryPatch stationary_patch(double m2, double alpha, double beta);
StationaryLinear stationary_linear(double e_zeta, double e_zeta2, double alpha, double beta);

double linear_patch_loss(const Eigen::VectorXd& w, const Eigen::VectorXd& u, double m2,
                         double alpha, double beta, int d);
Eigen::VectorXd linear_patch_gradient(const Eigen::VectorXd& w, const Eigen::VectorXd& u,
                                      double m2, double alpha, double beta);

// Bias and variance of psi at the stationary point of both patches:
//   C0 = |alpha (E[zeta] g1^2 + E[1 - zeta] g2^2) - alpha / beta^2|
//   C1 = alpha^2 Var(zeta) (g1^2 - g2^2)^2 + beta^2 (N1 g1^2 + N2 g2^2)
struct AnalyticError {
  double c0 = 0, c1 = 0;
};

AnalyticError analytic_error(double e_zeta, double e_zeta2, double var_zeta, double alpha,
                             double beta, const StationaryLinear& stationary);

}  // namespace rulelab::theory

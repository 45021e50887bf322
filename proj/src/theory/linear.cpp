#include "rulelab/theory/linear.hpp"

#include <cmath>

#include "rulelab/error.hpp"

namespace rulelab::theory {

StationaryPatch stationary_patch(double m2, double alpha, double beta) {
  if (!(m2 > 0) || !(alpha > 0) || !(beta > 0)) throw ConfigError("stationary point needs positive moments");
  const double a = alpha * alpha * m2;
  const double b = beta * beta;
  StationaryPatch sp;
  sp.norm_sq[0] = (a / b + 1 + beta) / (a + b);
  sp.proj_sq[0] = sp.norm_sq[0];
  sp.norm_sq[1] = (1 + beta) / b;
  sp.proj_sq[1] = 0;
  sp.selected = 0;
  if (!(sp.proj_sq[0] > 0) || !std::isfinite(sp.proj_sq[0])) throw Error("no positive stationary solution");
  return sp;
}

StationaryLinear stationary_linear(double e_zeta, double e_zeta2, double alpha, double beta) {
  StationaryLinear out;
  out.patch1 = stationary_patch(e_zeta2, alpha, beta);
  out.patch2 = stationary_patch(1 - 2 * e_zeta + e_zeta2, alpha, beta);
  return out;
}

double linear_patch_loss(const Eigen::VectorXd& w, const Eigen::VectorXd& u, double m2, double alpha,
                         double beta, int d) {
  const double a = alpha * alpha * m2;
  const double b = beta * beta;
  const double g = w.dot(u);
  const double N = w.squaredNorm();
  const double tail = 1 + 1 / beta;
  return (a * g * g + b * N) * N - 2 * (a / b) * g * g - 2 * (1 + beta) * N + a / (b * b) + d * tail * tail;
}

Eigen::VectorXd linear_patch_gradient(const Eigen::VectorXd& w, const Eigen::VectorXd& u, double m2,
                                      double alpha, double beta) {
  const double a = alpha * alpha * m2;
  const double b = beta * beta;
  const double g = w.dot(u);
  const double N = w.squaredNorm();
  return (2 * a * g * g + 4 * b * N - 4 * (1 + beta)) * w + (2 * a * N * g - 4 * (a / b) * g) * u;
}

AnalyticError analytic_error(double e_zeta, double e_zeta2, double var_zeta, double alpha, double beta,
                             const StationaryLinear& st) {
  (void)e_zeta2;
  const double b = beta * beta;
  const double g1 = st.patch1.proj(), g2 = st.patch2.proj();  // squared projections
  const double n1 = st.patch1.norm(), n2 = st.patch2.norm();
  AnalyticError out;
  out.c0 = std::abs(alpha * (e_zeta * g1 + (1 - e_zeta) * g2) - alpha / b);
  const double diff = g1 - g2;
  out.c1 = alpha * alpha * var_zeta * diff * diff + b * (n1 * g1 + n2 * g2);
  return out;
}

}  // namespace rulelab::theory

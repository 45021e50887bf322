#include "rulelab/theory/rule_error.hpp"

#include <algorithm>
#include <cmath>

#include "rulelab/error.hpp"
#include "rulelab/parallel.hpp"
#include "rulelab/rng.hpp"

namespace rulelab::theory {

Histogram make_histogram(const std::vector<double>& values, int bins) {
  Histogram h;
  if (values.empty() || bins < 1) return h;
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  h.edges.resize(bins + 1);
  for (int k = 0; k <= bins; ++k) h.edges[k] = lo + (hi - lo) * k / bins;
  h.counts.assign(bins, 0);
  for (double v : values) {
    int k = static_cast<int>((v - lo) / (hi - lo) * bins);
    h.counts[std::clamp(k, 0, bins - 1)]++;
  }
  return h;
}

RuleErrorReport summarize_psi(std::vector<double> psi, const NoiseSchedulePoint& sched, int bins) {
  RuleErrorReport r;
  r.t = sched.t;
  r.target = sched.alpha / sched.beta2();
  r.n = static_cast<int>(psi.size());
  if (r.n < 2) throw Error("rule error needs at least two psi samples");
  const double n = r.n;
  for (double p : psi) {
    if (!std::isfinite(p)) throw DivergenceError("non-finite psi value");
    r.mean += p;
  }
  r.mean /= n;
  double m2 = 0, m4 = 0, e_mean = 0;
  for (double p : psi) {
    const double c = p - r.mean;
    m2 += c * c;
    m4 += c * c * c * c;
    e_mean += (p - r.target) * (p - r.target);
  }
  m2 /= n;
  m4 /= n;
  e_mean /= n;
  double e_var = 0;
  for (double p : psi) {
    const double e = (p - r.target) * (p - r.target) - e_mean;
    e_var += e * e;
  }
  e_var /= (n - 1);
  r.variance = m2;
  r.sd = std::sqrt(m2);
  r.error = e_mean;
  r.bias_sq = (r.mean - r.target) * (r.mean - r.target);
  r.se_error = std::sqrt(e_var / n);
  // Delta method for the squared mean, and the large-sample variance of the
  // sample variance.
  r.se_bias_sq = 2 * std::abs(r.mean - r.target) * r.sd / std::sqrt(n);
  r.se_variance = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
  r.histogram = make_histogram(psi, bins);
  r.samples = std::move(psi);
  return r;
}

namespace {

Eigen::VectorXd draw_xt(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                        std::uint64_t seed, int i) {
  Rng rng(seed, {0x751, static_cast<std::uint64_t>(i)});
  const double z = dist.zeta.sample(rng);
  const int d = dist.d;
  Eigen::VectorXd x(2 * d);
  for (int k = 0; k < 2 * d; ++k) x(k) = sched.beta * rng.normal();
  x.segment(0, d) += sched.alpha * z * dist.u;
  x.segment(d, d) += sched.alpha * (1 - z) * dist.v;
  return x;
}

}  // namespace

RuleErrorReport rule_error(const ScoreNetwork& net, const MultiPatchDistribution& dist,
                           const NoiseSchedulePoint& sched, int n_mc, std::uint64_t seed, int threads) {
  if (n_mc < 1000) throw ConfigError("n_mc must be at least 1000");
  std::vector<double> values(n_mc);
  parallel_for(n_mc, threads, [&](int i) { values[i] = psi(net, draw_xt(dist, sched, seed, i), dist); });
  return summarize_psi(std::move(values), sched);
}

RuleErrorReport rule_error_true_score(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                                      const NoiseSchedulePoint& sched, int n_mc, std::uint64_t seed) {
  if (n_mc < 1000) throw ConfigError("n_mc must be at least 1000");
  std::vector<double> values(n_mc);
  const double scale = sched.alpha / sched.beta2();
  for (int i = 0; i < n_mc; ++i) {
    PosteriorScore ps = true_score(dist, quad, draw_xt(dist, sched, seed, i), sched);
    values[i] = scale * (ps.e_zeta + ps.e_one_minus_zeta);
  }
  return summarize_psi(std::move(values), sched);
}

json rule_error_json(const RuleErrorReport& r) {
  json j = {{"schema", "rulelab-rule-error"},
            {"version", 1},
            {"t", r.t},
            {"target", r.target},
            {"n", r.n},
            {"mean", r.mean},
            {"sd", r.sd},
            {"error", r.error},
            {"bias_sq", r.bias_sq},
            {"variance", r.variance},
            {"se_error", r.se_error},
            {"se_bias_sq", r.se_bias_sq},
            {"se_variance", r.se_variance},
            {"histogram", {{"edges", r.histogram.edges}, {"counts", r.histogram.counts}}}};
  j["c0"] = r.c0 ? json(*r.c0) : json(nullptr);
  j["c1"] = r.c1 ? json(*r.c1) : json(nullptr);
  return j;
}

}  // namespace rulelab::theory

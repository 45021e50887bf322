#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/io.hpp"
#include "rulelab/theory/distribution.hpp"
#include "rulelab/theory/network.hpp"

namespace rulelab::theory {

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<int> counts;
};

Histogram make_histogram(const std::vector<double>& values, int bins);

struct RuleErrorReport {
  double t = 0;
  double target = 0;  // alpha / beta^2
  int n = 0;
  double mean = 0, sd = 0;
  double error = 0;       // mean of (psi - target)^2
  double bias_sq = 0;     // (mean - target)^2
  double variance = 0;    // population variance of psi
  double se_error = 0, se_bias_sq = 0, se_variance = 0;
  std::optional<double> c0, c1;
  Histogram histogram;
  std::vector<double> samples;
};

RuleErrorReport summarize_psi(std::vector<double> psi, const NoiseSchedulePoint& sched, int bins = 50);

// psi over n_mc fresh draws of x_t (first two patches) with per-index streams.
RuleErrorReport rule_error(const ScoreNetwork& net, const MultiPatchDistribution& dist,
                           const NoiseSchedulePoint& sched, int n_mc, std::uint64_t seed,
                           int threads = 1);
// Same statistic for the exact score: psi = (alpha/beta^2)(E_pi[zeta] + E_pi[1 - zeta]).
RuleErrorReport rule_error_true_score(const MultiPatchDistribution& dist, const ZetaQuadrature& quad,
                                      const NoiseSchedulePoint& sched, int n_mc,
                                      std::uint64_t seed);

json rule_error_json(const RuleErrorReport& report);

}  // namespace rulelab::theory

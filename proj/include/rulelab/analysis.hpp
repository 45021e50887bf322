#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/io.hpp"
#include "rulelab/task.hpp"
#include "rulelab/vision.hpp"

namespace rulelab {

struct OlsFit {
  int n = 0;
  double beta1 = 0, beta0 = 0;
  double r2 = 0;
  double ss_res = 0, ss_tot = 0;
  double residual_sd = 0;  // sqrt(SS_res / (n - 2))
  double se_beta1 = 0, se_beta0 = 0;
  double ci_beta1_lo = 0, ci_beta1_hi = 0;  // two-sided 95%, Student t with n - 2 dof
};

// Ordinary least squares with intercept. Throws Error on n < 3 or zero x variance.
OlsFit ols_fit(const std::vector<double>& x, const std::vector<double>& y);

struct TrimBounds {
  double lo = 0, hi = 0;
};

// Percentiles with linear interpolation between order statistics.
double percentile(std::vector<double> values, double pct);
TrimBounds compute_trim_bounds(const std::vector<double>& ratios, double lo_pct = 2.5,
                               double hi_pct = 97.5);
// Indices of values inside [lo, hi], bounds inclusive.
std::vector<std::size_t> apply_trim(const std::vector<double>& ratios, const TrimBounds& bounds);

struct TrimOptions {
  bool enabled = true;
  double lo_pct = 2.5, hi_pct = 97.5;
};

struct RegressionReport {
  TaskId task = TaskId::A;
  int n_records = 0, n_invalid = 0, n_valid = 0, n_trimmed = 0, n_used = 0;
  double beta1_hat = 0, beta0_hat = 0;
  double beta1_true = 0, beta0_true = 0;
  double r2 = 0;
  double bias_error = 0;      // |beta1_hat - beta1| + |beta0_hat|
  double variance_error = 0;  // residual sd, n - 2 denominator
  double error = 0;           // bias_error + variance_error
  double se_beta1 = 0, se_beta0 = 0;
  double ci_beta1_lo = 0, ci_beta1_hi = 0;
  TrimBounds trim;
  bool trimmed = true;
};

RegressionReport fit_rule_regression(const std::vector<FeatureRecord>& records, TaskId task,
                                     const TrimOptions& trim = {});
json regression_report_json(const RegressionReport& report);
// Plot data: x, y, fitted y and whether the row survived trimming.
std::string regression_plot_csv(const std::vector<FeatureRecord>& records,
                                 const RegressionReport& report);

struct ConformanceCounts {
  int n_records = 0;
  int invalid = 0;
  int coarse_violations = 0;
  int fine_conforming = 0;
  int flagged = 0;
};

ConformanceCounts conformance_counts(const std::vector<FeatureRecord>& records, TaskId task,
                                     double eps = kDefaultEpsilon);
json conformance_json(const ConformanceCounts& counts);

struct MemorizationReport {
  int dim = 0;
  std::vector<double> nn_distance;
  std::vector<int> nn_index;  // into the training embedding rows
  std::vector<double> thresholds;
  std::vector<double> rates;
};

// Embedding rows for valid records. dim 4 gives the core geometry
// (A, B: l1, l2, h1, h2; C: r1, r2, small centroid; D: l1, l2, small
// centroid); dim 4 + 3 * elements appends mean RGB per element (13 for A).
Eigen::MatrixXd embed_records(const std::vector<FeatureRecord>& records, int dim);
int colored_embedding_dim(TaskId task);

MemorizationReport memorization(const Eigen::MatrixXd& query, const Eigen::MatrixXd& train,
                                std::vector<double> thresholds);
MemorizationReport memorization(const std::vector<FeatureRecord>& query,
                                const std::vector<FeatureRecord>& train, int dim,
                                std::vector<double> thresholds);
std::vector<double> default_thresholds();
json memorization_json(const MemorizationReport& report);
std::string distance_histogram_csv(const MemorizationReport& report, int bins = 50);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

void validate_moments(const GaussianMoments& m);  // throws Error
GaussianMoments moments_from_samples(const Eigen::MatrixXd& samples);  // rows are draws
double gaussian_fid(const GaussianMoments& p, const GaussianMoments& q);

}  // namespace rulelab

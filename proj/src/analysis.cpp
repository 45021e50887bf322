#include "rulelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "rulelab/error.hpp"

namespace rulelab {

OlsFit ols_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("ols_fit: x and y differ in length");
  const int n = static_cast<int>(x.size());
  if (n < 3) throw Error("fewer than 3 usable records (" + std::to_string(n) + ")");
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0, sx2 = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
    sx2 += x[i] * x[i];
  }
  if (!(sxx > 1e-14 * std::max(1.0, sx2))) throw Error("degenerate design: x has zero variance");
  OlsFit f;
  f.n = n;
  f.beta1 = sxy / sxx;
  f.beta0 = my - f.beta1 * mx;
  for (int i = 0; i < n; ++i) {
    const double r = y[i] - (f.beta0 + f.beta1 * x[i]);
    f.ss_res += r * r;
  }
  f.ss_tot = syy;
  f.r2 = f.ss_tot > 0 ? 1.0 - f.ss_res / f.ss_tot : 1.0;
  f.residual_sd = std::sqrt(f.ss_res / (n - 2));
  f.se_beta1 = f.residual_sd / std::sqrt(sxx);
  f.se_beta0 = f.residual_sd * std::sqrt(1.0 / n + mx * mx / sxx);
  const boost::math::students_t dist(n - 2);
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.ci_beta1_lo = f.beta1 - tq * f.se_beta1;
  f.ci_beta1_hi = f.beta1 + tq * f.se_beta1;
  return f;
}

double percentile(std::vector<double> v, double pct) {
  if (v.empty()) throw Error("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - lo;
  return v[lo] + frac * (v[hi] - v[lo]);
}

TrimBounds compute_trim_bounds(const std::vector<double>& ratios, double lo_pct, double hi_pct) {
  if (!(0 <= lo_pct && lo_pct <= hi_pct && hi_pct <= 100))
    throw ConfigError("trim percentiles must satisfy 0 <= lo <= hi <= 100");
  return {percentile(ratios, lo_pct), percentile(ratios, hi_pct)};
}

std::vector<std::size_t> apply_trim(const std::vector<double>& ratios, const TrimBounds& b) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ratios.size(); ++i)
    if (ratios[i] >= b.lo && ratios[i] <= b.hi) keep.push_back(i);
  return keep;
}

RegressionReport fit_rule_regression(const std::vector<FeatureRecord>& records, TaskId task,
                                     const TrimOptions& trim) {
  RegressionReport rep;
  rep.task = task;
  rep.n_records = static_cast<int>(records.size());
  rep.beta1_true = target_ratio(task);
  rep.beta0_true = 0;
  std::vector<const FeatureRecord*> valid;
  for (const auto& r : records) {
    if (r.task != task) throw Error("fit_rule_regression: record task differs from " + task_name(task));
    if (r.valid) valid.push_back(&r);
  }
  rep.n_valid = static_cast<int>(valid.size());
  rep.n_invalid = rep.n_records - rep.n_valid;
  if (rep.n_valid < 3)
    throw Error("fewer than 3 usable records (" + std::to_string(rep.n_valid) + " valid)");

  std::vector<double> ratios;
  for (const auto* r : valid) ratios.push_back(r->ratio);
  std::vector<std::size_t> keep;
  rep.trimmed = trim.enabled;
  if (trim.enabled) {
    rep.trim = compute_trim_bounds(ratios, trim.lo_pct, trim.hi_pct);
    keep = apply_trim(ratios, rep.trim);
  } else {
    keep.resize(valid.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    rep.trim = {*std::min_element(ratios.begin(), ratios.end()),
                *std::max_element(ratios.begin(), ratios.end())};
  }
  rep.n_trimmed = rep.n_valid - static_cast<int>(keep.size());
  rep.n_used = static_cast<int>(keep.size());

  std::vector<double> x, y;
  for (std::size_t i : keep) {
    const auto xy = regression_xy(*valid[i]);
    x.push_back(xy[0]);
    y.push_back(xy[1]);
  }
  const OlsFit f = ols_fit(x, y);
  rep.beta1_hat = f.beta1;
  rep.beta0_hat = f.beta0;
  rep.r2 = f.r2;
  rep.bias_error = std::fabs(f.beta1 - rep.beta1_true) + std::fabs(f.beta0 - rep.beta0_true);
  rep.variance_error = f.residual_sd;
  rep.error = rep.bias_error + rep.variance_error;
  rep.se_beta1 = f.se_beta1;
  rep.se_beta0 = f.se_beta0;
  rep.ci_beta1_lo = f.ci_beta1_lo;
  rep.ci_beta1_hi = f.ci_beta1_hi;
  return rep;
}

json regression_report_json(const RegressionReport& r) {
  return {{"schema", "rulelab-regression-report"},
          {"version", 1},
          {"task", task_name(r.task)},
          {"n_records", r.n_records},
          {"n_invalid", r.n_invalid},
          {"n_valid", r.n_valid},
          {"n_trimmed", r.n_trimmed},
          {"n_used", r.n_used},
          {"beta1_hat", r.beta1_hat},
          {"beta0_hat", r.beta0_hat},
          {"beta1_true", r.beta1_true},
          {"beta0_true", r.beta0_true},
          {"r2", r.r2},
          {"bias_error", r.bias_error},
          {"variance_error", r.variance_error},
          {"error", r.error},
          {"se_beta1", r.se_beta1},
          {"se_beta0", r.se_beta0},
          {"ci_beta1", {r.ci_beta1_lo, r.ci_beta1_hi}},
          {"trim", {{"enabled", r.trimmed}, {"lo", r.trim.lo}, {"hi", r.trim.hi}}}};
}

std::string regression_plot_csv(const std::vector<FeatureRecord>& records,
                                const RegressionReport& rep) {
  std::ostringstream ss;
  ss << "file,x,y,y_hat,used\n";
  for (const auto& r : records) {
    if (!r.valid) continue;
    const auto xy = regression_xy(r);
    const bool used = r.ratio >= rep.trim.lo && r.ratio <= rep.trim.hi;
    ss << csv_escape(r.source) << ',' << format_double(xy[0]) << ',' << format_double(xy[1]) << ','
       << format_double(rep.beta0_hat + rep.beta1_hat * xy[0]) << ',' << (used ? 1 : 0) << '\n';
  }
  return ss.str();
}

ConformanceCounts conformance_counts(const std::vector<FeatureRecord>& records, TaskId task,
                                     double eps) {
  ConformanceCounts c;
  c.n_records = static_cast<int>(records.size());
  for (const auto& r : records) {
    if (!r.valid) {
      ++c.invalid;
      continue;
    }
    const RuleVerdict v = verdict(r, task, eps);
    c.coarse_violations += !v.coarse_ok;
    c.fine_conforming += v.fine_ok;
    c.flagged += v.flagged;
  }
  return c;
}

json conformance_json(const ConformanceCounts& c) {
  return {{"n_records", c.n_records},
          {"invalid", c.invalid},
          {"coarse_violations", c.coarse_violations},
          {"fine_conforming", c.fine_conforming},
          {"flagged", c.flagged}};
}

int colored_embedding_dim(TaskId task) {
  return 4 + 3 * static_cast<int>(element_names(task).size());
}

Eigen::MatrixXd embed_records(const std::vector<FeatureRecord>& records, int dim) {
  std::vector<const FeatureRecord*> valid;
  for (const auto& r : records)
    if (r.valid) valid.push_back(&r);
  if (valid.empty()) return Eigen::MatrixXd(0, dim);
  const TaskId task = valid.front()->task;
  if (dim != 4 && dim != colored_embedding_dim(task))
    throw Error("dimension mismatch: task " + task_name(task) + " embeds in 4 or " +
                std::to_string(colored_embedding_dim(task)) + " dimensions, not " +
                std::to_string(dim));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(valid.size()), dim);
  for (std::size_t i = 0; i < valid.size(); ++i) {
    const auto& r = *valid[i];
    if (r.task != task) throw Error("embed_records: mixed tasks");
    double core[4] = {0, 0, 0, 0};
    switch (task) {
      case TaskId::A:
      case TaskId::B: core[0] = r.l1, core[1] = r.l2, core[2] = r.h1, core[3] = r.h2; break;
      case TaskId::C: core[0] = r.r1, core[1] = r.r2, core[2] = r.anchor_x, core[3] = r.anchor_y; break;
      case TaskId::D: core[0] = r.l1, core[1] = r.l2, core[2] = r.anchor_x, core[3] = r.anchor_y; break;
    }
    for (int k = 0; k < 4; ++k) out(i, k) = core[k];
    if (dim > 4) {
      if (r.mean_rgb.size() * 3 + 4 != static_cast<std::size_t>(dim))
        throw Error("embed_records: record " + r.source + " lacks per-element colors");
      for (std::size_t e = 0; e < r.mean_rgb.size(); ++e)
        for (int ch = 0; ch < 3; ++ch) out(i, 4 + 3 * e + ch) = r.mean_rgb[e][ch];
    }
  }
  return out;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 40; ++i) t.push_back(0.01 * i);
  return t;
}

MemorizationReport memorization(const Eigen::MatrixXd& query, const Eigen::MatrixXd& train,
                                std::vector<double> thresholds) {
  if (query.rows() == 0 || train.rows() == 0)
    throw Error("memorization needs non-empty query and training sets");
  if (query.cols() != train.cols())
    throw Error("dimension mismatch: query dim " + std::to_string(query.cols()) +
                " vs training dim " + std::to_string(train.cols()));
  std::sort(thresholds.begin(), thresholds.end());
  MemorizationReport rep;
  rep.dim = static_cast<int>(query.cols());
  rep.nn_distance.resize(query.rows());
  rep.nn_index.resize(query.rows());
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    for (Eigen::Index t = 0; t < train.rows(); ++t) {
      const double d2 = (query.row(q) - train.row(t)).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_i = static_cast<int>(t);
      }
    }
    rep.nn_distance[q] = std::sqrt(best);
    rep.nn_index[q] = best_i;
  }
  rep.thresholds = thresholds;
  for (double thr : thresholds) {
    const auto hits = std::count_if(rep.nn_distance.begin(), rep.nn_distance.end(),
                                    [thr](double d) { return d <= thr; });
    rep.rates.push_back(static_cast<double>(hits) / query.rows());
  }
  return rep;
}

MemorizationReport memorization(const std::vector<FeatureRecord>& query,
                                const std::vector<FeatureRecord>& train, int dim,
                                std::vector<double> thresholds) {
  return memorization(embed_records(query, dim), embed_records(train, dim), std::move(thresholds));
}

json memorization_json(const MemorizationReport& r) {
  double mean = 0;
  for (double d : r.nn_distance) mean += d;
  if (!r.nn_distance.empty()) mean /= r.nn_distance.size();
  json curve = json::array();
  for (std::size_t i = 0; i < r.thresholds.size(); ++i)
    curve.push_back({{"threshold", r.thresholds[i]}, {"rate", r.rates[i]}});
  return {{"schema", "rulelab-memorization-report"},
          {"version", 1},
          {"dim", r.dim},
          {"n_query", r.nn_distance.size()},
          {"mean_nn_distance", mean},
          {"nn_distance", r.nn_distance},
          {"nn_index", r.nn_index},
          {"rate_curve", curve}};
}

std::string distance_histogram_csv(const MemorizationReport& r, int bins) {
  std::ostringstream ss;
  ss << "bin_lo,bin_hi,count\n";
  if (r.nn_distance.empty()) return ss.str();
  const double hi = std::max(*std::max_element(r.nn_distance.begin(), r.nn_distance.end()), 1e-12);
  std::vector<int> counts(bins, 0);
  for (double d : r.nn_distance) counts[std::min(bins - 1, static_cast<int>(d / hi * bins))]++;
  for (int b = 0; b < bins; ++b)
    ss << format_double(hi * b / bins) << ',' << format_double(hi * (b + 1) / bins) << ','
       << counts[b] << '\n';
  return ss.str();
}

void validate_moments(const GaussianMoments& m) {
  const auto n = m.mean.size();
  if (m.cov.rows() != n || m.cov.cols() != n) throw Error("Gaussian moments: shape mismatch");
  const double scale = std::max(1.0, m.cov.cwiseAbs().maxCoeff());
  if ((m.cov - m.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw Error("Gaussian moments: covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.cov, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw Error("Gaussian moments: covariance is not positive semidefinite (min eigenvalue " +
                format_double(es.eigenvalues().minCoeff()) + ")");
}

GaussianMoments moments_from_samples(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw Error("moments_from_samples needs at least 2 draws");
  GaussianMoments m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - m.mean.transpose();
  m.cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  m.cov = 0.5 * (m.cov + m.cov.transpose());
  return m;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

// tr((Sp Sq)^{1/2}) equals tr((Sp^{1/2} Sq Sp^{1/2})^{1/2}); the latter is a
// symmetric PSD matrix, so both square roots use the self-adjoint solver.
double gaussian_fid(const GaussianMoments& p, const GaussianMoments& q) {
  validate_moments(p);
  validate_moments(q);
  if (p.mean.size() != q.mean.size()) throw Error("gaussian_fid: dimension mismatch");
  const Eigen::MatrixXd sp = psd_sqrt(p.cov);
  const Eigen::MatrixXd inner = sp * q.cov * sp;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (p.mean - q.mean).squaredNorm() + p.cov.trace() + q.cov.trace() - 2.0 * tr_sqrt;
}

}  // namespace rulelab

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/theory/distribution.hpp"
#include "rulelab/theory/network.hpp"

namespace rulelab::theory {

// Row i * n_eps + j holds the j-th noise draw for clean sample i. Noised
// inputs x_t = alpha x0 + beta eps are formed block by block on demand so
// that only the noise is stored.
struct TrainingBatch {
  int n = 0, n_eps = 0;
  NoiseSchedulePoint sched;
  Eigen::MatrixXd x0;   // n x (P d)
  Eigen::MatrixXd eps;  // (n n_eps) x (P d)
  Eigen::VectorXd zeta;

  static TrainingBatch make(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                            int n, int n_eps, std::uint64_t seed);
  int rows() const { return n * n_eps; }
  // x_t rows [begin, begin + count) restricted to columns [col, col + width).
  Eigen::MatrixXd noised(int begin, int count, int col, int width) const;

  // Calls fn(sample, offset, rows) for each run of rows in [begin, begin +
  // count) that shares a clean sample; offset is relative to begin.
  template <class Fn>
  void for_each_sample(int begin, int count, Fn&& fn) const {
    for (int r = 0; r < count;) {
      const int i = (begin + r) / n_eps;
      const int rows = std::min(count - r, (i + 1) * n_eps - (begin + r));
      fn(i, r, rows);
      r += rows;
    }
  }
};

struct LossGrad {
  double loss = 0;
  std::vector<Eigen::MatrixXd> grad;  // same shapes as ScoreNetwork::W
};

// Empirical DSM loss: average over (i, j) of the sum over patches of
// ||s(x_t) - eps||^2, with its exact gradient.
LossGrad dsm_loss_and_grad(const ScoreNetwork& net, const TrainingBatch& batch,
                           const NoiseSchedulePoint& sched, int threads = 1);

// For linear activation the loss depends on the data only through second
// moments; with K = W^T W - I/beta^2 it is tr(K Sxx K) - 2 tr(K Sxe) + See.
struct PatchMoments {
  Eigen::MatrixXd sxx;  // E[x x^T]
  Eigen::MatrixXd sxe;  // symmetric part of E[x eps^T]
  double see = 0;       // E[||eps||^2]
};

std::vector<PatchMoments> batch_moments(const TrainingBatch& batch, int P, int d);
std::vector<PatchMoments> population_moments(const MultiPatchDistribution& dist,
                                             const NoiseSchedulePoint& sched);
LossGrad linear_moment_loss_and_grad(const ScoreNetwork& net,
                                     const std::vector<PatchMoments>& moments,
                                     const NoiseSchedulePoint& sched);
// The same population loss evaluated in O(m^2 d) per patch, using that the
// population second moment is (rank one) + (multiple of identity).
LossGrad expected_linear_loss_and_grad(const ScoreNetwork& net, const MultiPatchDistribution& dist,
                                       const NoiseSchedulePoint& sched);

enum class LossMode {
  Sampled,   // empirical loss over a fixed training batch
  Expected,  // exact population loss (linear activation only)
};

struct TrainConfig {
  Activation activation = Activation::Linear;
  int m = 20;
  double sigma0 = -1;  // <= 0 means d^{-1/2}
  int n = 1000, n_eps = 1000;
  int epochs = 5000;
  double lr = 0.05;
  std::uint64_t seed = 0;
  LossMode mode = LossMode::Sampled;
  // Linear activation with a sampled batch trains on batch moments, which is
  // algebraically the same loss at a fraction of the cost.
  bool linear_via_moments = true;
  double divergence_threshold = 1e6;
  // Stop early once the gradient norm falls below this (0 disables).
  double grad_tol = 0;
  int threads = 1;

  void validate() const;  // throws ConfigError
  json to_json() const;
};

struct TrainResult {
  ScoreNetwork net;
  std::vector<double> loss_history;  // loss before each update, then the final loss
  int epochs_run = 0;
  double final_grad_norm = 0;
};

TrainResult train_gd(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                     const TrainConfig& config);
// Same as train_gd on a prepared batch (Sampled mode only).
TrainResult train_gd_on_batch(const MultiPatchDistribution& dist, const NoiseSchedulePoint& sched,
                              const TrainConfig& config, const TrainingBatch& batch);

}  // namespace rulelab::theory

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/io.hpp"
#include "rulelab/theory/distribution.hpp"
#include "rulelab/theory/network.hpp"
#include "rulelab/theory/training.hpp"

namespace rulelab::theory {

// Score model on the first two patches (vectors of length 2d).
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual Eigen::VectorXd score(const Eigen::VectorXd& x, const NoiseSchedulePoint& s) const = 0;
  // J^T g where J is the Jacobian of score() in x.
  virtual Eigen::VectorXd score_jacobian_t(const Eigen::VectorXd& x, const NoiseSchedulePoint& s,
                                           const Eigen::VectorXd& g) const = 0;
};

class TrueScoreModel : public ScoreModel {
 public:
  TrueScoreModel(MultiPatchDistribution dist, ZetaQuadrature quad)
      : dist_(std::move(dist)), quad_(std::move(quad)) {}
  Eigen::VectorXd score(const Eigen::VectorXd& x, const NoiseSchedulePoint& s) const override;
  Eigen::VectorXd score_jacobian_t(const Eigen::VectorXd& x, const NoiseSchedulePoint& s,
                                   const Eigen::VectorXd& g) const override;

 private:
  MultiPatchDistribution dist_;
  ZetaQuadrature quad_;
};

// Per-time networks; a query at time t uses the network trained at the
// nearest anchor time.
class NetworkBankModel : public ScoreModel {
 public:
  NetworkBankModel(std::vector<double> times, std::vector<ScoreNetwork> nets);
  Eigen::VectorXd score(const Eigen::VectorXd& x, const NoiseSchedulePoint& s) const override;
  Eigen::VectorXd score_jacobian_t(const Eigen::VectorXd& x, const NoiseSchedulePoint& s,
                                   const Eigen::VectorXd& g) const override;
  const ScoreNetwork& nearest(double t) const;
  const std::vector<double>& times() const { return times_; }
  const std::vector<ScoreNetwork>& nets() const { return nets_; }

 private:
  std::vector<double> times_;
  std::vector<ScoreNetwork> nets_;
};

// Trains one network per anchor time. The learning rate at time t is
// lr * beta_t^2 / beta_ref^2 capped at lr, since loss curvature grows like
// 1/beta_t^2 as t -> 0.
NetworkBankModel train_score_bank(const MultiPatchDistribution& dist, const std::vector<double>& times,
                                  const TrainConfig& config, double beta_ref2 = 0.5);

struct SamplerConfig {
  int steps = 100;
  double t_min = 0.01, t_max = 1.0;
  int n = 2000;
  double lambda = 0;
  // Apply guidance only during the last k steps (0 = every step).
  int guidance_last_steps = 0;
  std::uint64_t seed = 0;
  double explode_norm = 1e3;

  void validate() const;
  json to_json() const;
};

struct SamplerResult {
  Eigen::MatrixXd samples;  // n x 2d, Tweedie estimate at the final grid time
  std::vector<double> gaps;  // | ||x^(1)|| + ||x^(2)|| - 1 |
  double mean_gap = 0, median_gap = 0, q05_gap = 0, q95_gap = 0;
};

// Variance-preserving ancestral sampler on a uniform descending grid from
// t_max to t_min. Each step draws from the Gaussian posterior of x_s given
// x_t with x_0 replaced by its Tweedie estimate; guidance subtracts
// lambda * grad_x g(x0_hat(x)) from the score, g = (||x0^(1)|| + ||x0^(2)|| - 1)^2.
SamplerResult ancestral_sample(const ScoreModel& model, const MultiPatchDistribution& dist,
                               const SamplerConfig& config);

json sampler_result_json(const SamplerResult& result, const SamplerConfig& config);

}  // namespace rulelab::theory

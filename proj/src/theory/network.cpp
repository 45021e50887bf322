#include "rulelab/theory/network.hpp"

#include "rulelab/error.hpp"
#include "rulelab/rng.hpp"

namespace rulelab::theory {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Linear: return "linear";
    case Activation::Quadratic: return "quadratic";
    case Activation::Cubic: return "cubic";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (Activation a : kAllActivations)
    if (activation_name(a) == name) return a;
  throw ConfigError("unknown activation '" + name + "' (expected relu, linear, quadratic or cubic)");
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0 ? z : 0.0;
    case Activation::Linear: return z;
    case Activation::Quadratic: return z * z;
    case Activation::Cubic: return z * z * z;
  }
  return 0;
}

double activate_prime(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0 ? 1.0 : 0.0;
    case Activation::Linear: return 1.0;
    case Activation::Quadratic: return 2 * z;
    case Activation::Cubic: return 3 * z * z;
  }
  return 0;
}

ScoreNetwork ScoreNetwork::zeros(Activation a, int m, int d, int P) {
  if (m < 1 || d < 1 || P < 1) throw ConfigError("network shape must be positive");
  ScoreNetwork net;
  net.activation = a;
  net.m = m;
  net.d = d;
  net.P = P;
  net.W.assign(P, Eigen::MatrixXd::Zero(m, d));
  return net;
}

ScoreNetwork ScoreNetwork::gaussian(Activation a, int m, int d, int P, double sigma0, std::uint64_t seed) {
  ScoreNetwork net = zeros(a, m, d, P);
  for (int p = 0; p < P; ++p) {
    Rng rng(seed, {0x1417, static_cast<std::uint64_t>(p)});
    for (int r = 0; r < m; ++r)
      for (int k = 0; k < d; ++k) net.W[p](r, k) = sigma0 * rng.normal();
  }
  return net;
}

json ScoreNetwork::to_json() const {
  json j = {{"activation", activation_name(activation)}, {"m", m}, {"d", d}, {"P", P}};
  json patches = json::array();
  for (const auto& w : W) {
    json rows = json::array();
    for (int r = 0; r < w.rows(); ++r) {
      std::vector<double> row(w.cols());
      for (int k = 0; k < w.cols(); ++k) row[k] = w(r, k);
      rows.push_back(row);
    }
    patches.push_back(rows);
  }
  j["weights"] = patches;
  return j;
}

ScoreNetwork ScoreNetwork::from_json(const json& j) {
  try {
    ScoreNetwork net = zeros(parse_activation(j.at("activation").get<std::string>()), j.at("m").get<int>(),
                             j.at("d").get<int>(), j.at("P").get<int>());
    const json& patches = j.at("weights");
    if (static_cast<int>(patches.size()) != net.P) throw ConfigError("weight patch count mismatch");
    for (int p = 0; p < net.P; ++p) {
      if (static_cast<int>(patches[p].size()) != net.m) throw ConfigError("weight row count mismatch");
      for (int r = 0; r < net.m; ++r) {
        auto row = patches[p][r].get<std::vector<double>>();
        if (static_cast<int>(row.size()) != net.d) throw ConfigError("weight column count mismatch");
        for (int k = 0; k < net.d; ++k) net.W[p](r, k) = row[k];
      }
    }
    return net;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad network json: ") + e.what());
  }
}

namespace {

int patches_in(const ScoreNetwork& net, const Eigen::VectorXd& x) {
  if (x.size() % net.d != 0 || x.size() / net.d > net.P || x.size() == 0)
    throw Error("input length does not match the network patch layout");
  return static_cast<int>(x.size() / net.d);
}

}  // namespace

Eigen::VectorXd network_forward(const ScoreNetwork& net, const Eigen::VectorXd& x,
                                const NoiseSchedulePoint& sched) {
  const int np = patches_in(net, x);
  Eigen::VectorXd out = -x / sched.beta2();
  for (int p = 0; p < np; ++p) {
    Eigen::VectorXd a = net.W[p] * x.segment(p * net.d, net.d);
    for (int r = 0; r < net.m; ++r) a(r) = activate(net.activation, a(r));
    out.segment(p * net.d, net.d) += net.W[p].transpose() * a;
  }
  return out;
}

Eigen::VectorXd network_jacobian_t(const ScoreNetwork& net, const Eigen::VectorXd& x,
                                   const NoiseSchedulePoint& sched, const Eigen::VectorXd& g) {
  const int np = patches_in(net, x);
  if (g.size() != x.size()) throw Error("cotangent length mismatch");
  Eigen::VectorXd out = -g / sched.beta2();
  for (int p = 0; p < np; ++p) {
    Eigen::VectorXd a = net.W[p] * x.segment(p * net.d, net.d);
    Eigen::VectorXd wg = net.W[p] * g.segment(p * net.d, net.d);
    for (int r = 0; r < net.m; ++r) wg(r) *= activate_prime(net.activation, a(r));
    out.segment(p * net.d, net.d) += net.W[p].transpose() * wg;
  }
  return out;
}

double psi(const ScoreNetwork& net, const Eigen::VectorXd& x, const MultiPatchDistribution& dist) {
  if (net.P < 2 || net.d != dist.d || x.size() < 2 * dist.d) throw Error("psi needs patches 1 and 2");
  double total = 0;
  const Eigen::VectorXd* dirs[2] = {&dist.u, &dist.v};
  for (int p = 0; p < 2; ++p) {
    Eigen::VectorXd a = net.W[p] * x.segment(p * net.d, net.d);
    Eigen::VectorXd proj = net.W[p] * *dirs[p];
    for (int r = 0; r < net.m; ++r) total += activate(net.activation, a(r)) * proj(r);
  }
  return total;
}

}  // namespace rulelab::theory

#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rulelab/analysis.hpp"
#include "rulelab/cli.hpp"
#include "rulelab/error.hpp"
#include "rulelab/mitigation.hpp"
#include "rulelab/scenegen.hpp"
#include "rulelab/theory/linear.hpp"
#include "rulelab/theory/rule_error.hpp"
#include "rulelab/theory/training.hpp"
#include "rulelab/vision.hpp"

namespace py = pybind11;
using namespace rulelab;

namespace {

py::dict record_dict(const FeatureRecord& r) {
  py::dict d;
  d["source"] = r.source;
  d["task"] = task_name(r.task);
  d["valid"] = r.valid;
  d["reason"] = r.reason;
  d["l1"] = r.l1;
  d["l2"] = r.l2;
  d["h1"] = r.h1;
  d["h2"] = r.h2;
  d["r1"] = r.r1;
  d["r2"] = r.r2;
  d["ratio"] = r.ratio;
  return d;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hidden inter-feature rule laboratory";

  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  m.def("target_ratio", [](const std::string& t) { return target_ratio(parse_task(t)); }, py::arg("task"));
  m.def("element_names", [](const std::string& t) { return element_names(parse_task(t)); }, py::arg("task"));

  m.def(
      "generate",
      [](const std::string& task, const std::filesystem::path& out, int n, std::uint64_t seed, int size,
         double bias, double noise_sd) {
        GenerateOptions o;
        o.seed = seed;
        o.image_size = size;
        const TaskId t = parse_task(task);
        const Dataset ds = bias == 0 && noise_sd == 0 ? generate_dataset(t, n, o)
                                                      : generate_perturbed(t, n, bias, noise_sd, o);
        write_dataset(ds, out);
        return to_py(manifest_header_json(ds.manifest));
      },
      py::arg("task"), py::arg("out"), py::arg("n"), py::arg("seed") = 0, py::arg("size") = 32,
      py::arg("bias") = 0.0, py::arg("noise_sd") = 0.0);

  m.def(
      "evaluate",
      [](const std::filesystem::path& dir, const std::string& task, double eps) {
        EvalConfig c;
        c.eps = eps;
        const TaskId t = parse_task(task);
        const DirectoryReport rep = evaluate_directory(dir, t, c);
        py::list records;
        for (const auto& r : rep.records) records.append(record_dict(r));
        py::dict out;
        out["records"] = records;
        out["summary"] = to_py(directory_summary_json(rep, c));
        if (rep.records.size() >= 3) {
          try {
            out["regression"] = to_py(regression_report_json(fit_rule_regression(rep.records, t)));
          } catch (const Error&) {
            out["regression"] = py::none();
          }
        }
        return out;
      },
      py::arg("dir"), py::arg("task"), py::arg("eps") = kDefaultEpsilon);

  m.def(
      "ols",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const OlsFit f = ols_fit(x, y);
        py::dict d;
        d["beta1"] = f.beta1;
        d["beta0"] = f.beta0;
        d["r2"] = f.r2;
        d["residual_sd"] = f.residual_sd;
        d["ci_beta1"] = py::make_tuple(f.ci_beta1_lo, f.ci_beta1_hi);
        return d;
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "gaussian_fid",
      [](const Eigen::VectorXd& mu_p, const Eigen::MatrixXd& cov_p, const Eigen::VectorXd& mu_q,
         const Eigen::MatrixXd& cov_q) { return gaussian_fid({mu_p, cov_p}, {mu_q, cov_q}); },
      py::arg("mu_p"), py::arg("cov_p"), py::arg("mu_q"), py::arg("cov_q"));

  m.def(
      "nearest_neighbors",
      [](const Eigen::MatrixXd& query, const Eigen::MatrixXd& train) {
        const MemorizationReport r = memorization(query, train, default_thresholds());
        return py::make_tuple(r.nn_distance, r.nn_index);
      },
      py::arg("query"), py::arg("train"));

  m.def(
      "nt_xent",
      [](const Eigen::MatrixXd& z, const std::vector<int>& positive, double tau) { return nt_xent(z, positive, tau); },
      py::arg("z"), py::arg("positive"), py::arg("tau") = 0.5);

  m.def(
      "stationary_linear",
      [](double t, double zeta_lo, double zeta_hi) {
        const auto law = theory::ZetaLaw::uniform(zeta_lo, zeta_hi);
        const auto s = theory::NoiseSchedulePoint::vp(t);
        const auto st = theory::stationary_linear(law.mean(), law.second_moment(), s.alpha, s.beta);
        const auto ae = theory::analytic_error(law.mean(), law.second_moment(), law.variance(), s.alpha, s.beta, st);
        py::dict d;
        d["proj_sq"] = py::make_tuple(st.patch1.proj(), st.patch2.proj());
        d["norm_sq"] = py::make_tuple(st.patch1.norm(), st.patch2.norm());
        d["c0"] = ae.c0;
        d["c1"] = ae.c1;
        return d;
      },
      py::arg("t"), py::arg("zeta_lo") = 0.2, py::arg("zeta_hi") = 0.8);

  m.def(
      "train_rule_error",
      [](const std::string& activation, double t, int d, int m_width, int n, int n_eps, int epochs, double lr,
         std::uint64_t seed, int n_mc) {
        using namespace theory;
        const auto dist = MultiPatchDistribution::standard(d);
        const auto s = NoiseSchedulePoint::vp(t);
        TrainConfig c;
        c.activation = parse_activation(activation);
        c.m = m_width;
        c.n = n;
        c.n_eps = n_eps;
        c.epochs = epochs;
        c.lr = lr;
        c.seed = seed;
        const TrainResult r = train_gd(dist, s, c);
        py::dict out;
        out["loss_history"] = r.loss_history;
        out["rule_error"] = to_py(rule_error_json(rule_error(r.net, dist, s, n_mc, seed)));
        return out;
      },
      py::arg("activation"), py::arg("t"), py::arg("d") = 20, py::arg("m") = 4, py::arg("n") = 50,
      py::arg("n_eps") = 10, py::arg("epochs") = 50, py::arg("lr") = 0.05, py::arg("seed") = 0,
      py::arg("n_mc") = 1000);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}

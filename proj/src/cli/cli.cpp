#include "rulelab/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "rulelab/analysis.hpp"
#include "rulelab/error.hpp"
#include "rulelab/io.hpp"
#include "rulelab/mitigation.hpp"
#include "rulelab/scenegen.hpp"
#include "rulelab/theory/distribution.hpp"
#include "rulelab/theory/linear.hpp"
#include "rulelab/theory/rule_error.hpp"
#include "rulelab/theory/sampler.hpp"
#include "rulelab/theory/training.hpp"
#include "rulelab/vision.hpp"

namespace rulelab {

namespace {

// Ties CLI options to keys of the resolved configuration.
class Bindings {
 public:
  template <class T>
  CLI::Option* option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    entries_.push_back({key, opt, [value] { return json(*value); }});
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    entries_.push_back({key, opt, [] { return json(true); }});
    return opt;
  }

  // defaults <- config file <- explicit flags. Returns the keys that were
  // set explicitly by either source.
  json resolve(const json& defaults, const std::string& config_path, std::set<std::string>& explicit_keys) const {
    json resolved = defaults;
    if (!config_path.empty()) {
      json file = read_json_file(config_path);
      if (!file.is_object()) throw ConfigError("config file must hold a JSON object: " + config_path);
      for (auto it = file.begin(); it != file.end(); ++it) {
        if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
        resolved[it.key()] = it.value();
        explicit_keys.insert(it.key());
      }
    }
    for (const auto& e : entries_)
      if (e.opt->count() > 0) {
        resolved[e.key] = e.value();
        explicit_keys.insert(e.key);
      }
    return resolved;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<json()> value;
  };
  std::vector<Entry> entries_;
};

template <class T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type or is missing");
  }
}

bool is_set(const json& cfg, const std::string& key) { return cfg.contains(key) && !cfg.at(key).is_null(); }

int positive_int(const json& cfg, const std::string& key) {
  const int v = get<int>(cfg, key);
  if (v < 1) throw ConfigError("--" + key + " must be positive, got " + std::to_string(v));
  return v;
}

fs::path output_root() {
  const char* env = std::getenv("RULELAB_OUT");
  return env && *env ? fs::path(env) : fs::path("rulelab_out");
}

fs::path resolve_out(json& cfg, const std::string& leaf) {
  fs::path out = is_set(cfg, "out") ? fs::path(get<std::string>(cfg, "out")) : output_root() / leaf;
  cfg["out"] = out.string();
  return out;
}

void write_resolved(const fs::path& dir, const std::string& command, const json& cfg) {
  json j = {{"schema", "rulelab-run-config"}, {"version", 1}, {"command", command}, {"config", cfg}};
  write_json_file(dir / "resolved_config.json", j);
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string s;
  for (size_t i = 0; i < fields.size(); ++i) s += (i ? "," : "") + fields[i];
  return s + "\n";
}

// ---------------------------------------------------------------- gen

json gen_defaults() {
  return {{"task", nullptr},          {"kind", "train"},      {"n", nullptr},          {"size", 32},
          {"seed", 0},                {"bias", 0.05},         {"noise_sd", 0.02},      {"low", 0.8},
          {"high", 1.25},             {"raster_tolerance", 0.002}, {"offrule_tolerance", 0.002},
          {"retry_budget", 1000},     {"threads", 1},         {"out", nullptr}};
}

void add_gen(CLI::App* app, Bindings& b) {
  b.option<std::string>(app, "--task", "task", "Task A, B, C or D");
  b.option<std::string>(app, "--kind", "kind", "train | perturbed | contrastive");
  b.option<int>(app, "--n", "n", "Sample count (per class for contrastive)");
  b.option<int>(app, "--size", "size", "Image side in pixels (32 or 64)");
  b.option<std::uint64_t>(app, "--seed", "seed", "Generator seed");
  b.option<double>(app, "--bias", "bias", "Perturbed: ratio factor bias");
  b.option<double>(app, "--noise-sd", "noise_sd", "Perturbed: ratio factor noise sd");
  b.option<double>(app, "--low", "low", "Contrastive: class 0 ratio factor");
  b.option<double>(app, "--high", "high", "Contrastive: class 2 ratio factor");
  b.option<int>(app, "--retry-budget", "retry_budget", "Rejection attempts per sample");
  b.option<int>(app, "--threads", "threads", "Worker threads");
  b.option<std::string>(app, "--out", "out", "Output directory");
}

int cmd_gen(json cfg, std::ostream& out) {
  if (!is_set(cfg, "task")) throw ConfigError("gen requires --task");
  const TaskId task = parse_task(get<std::string>(cfg, "task"));
  const std::string kind = get<std::string>(cfg, "kind");
  if (kind != "train" && kind != "perturbed" && kind != "contrastive")
    throw ConfigError("--kind must be train, perturbed or contrastive");
  const int n = is_set(cfg, "n") ? get<int>(cfg, "n") : default_sample_count(task);
  if (n < 1) throw ConfigError("--n must be positive, got " + std::to_string(n));
  cfg["n"] = n;
  GenerateOptions o;
  o.image_size = get<int>(cfg, "size");
  if (o.image_size != 32 && o.image_size != 64) throw ConfigError("--size must be 32 or 64");
  o.seed = get<std::uint64_t>(cfg, "seed");
  o.raster_tolerance = get<double>(cfg, "raster_tolerance");
  o.offrule_tolerance = get<double>(cfg, "offrule_tolerance");
  o.retry_budget = positive_int(cfg, "retry_budget");
  o.threads = positive_int(cfg, "threads");
  const fs::path dir =
      resolve_out(cfg, "gen_" + task_name(task) + "_" + kind + "_s" + std::to_string(o.seed));

  if (kind == "contrastive") {
    auto sets = generate_contrastive(task, n, get<double>(cfg, "low"), get<double>(cfg, "high"), o);
    for (int c = 0; c < 3; ++c) write_dataset(sets[c], dir / ("class" + std::to_string(c)));
  } else {
    Dataset ds = kind == "train" ? generate_dataset(task, n, o)
                                 : generate_perturbed(task, n, get<double>(cfg, "bias"), get<double>(cfg, "noise_sd"), o);
    for (const auto& w : ds.manifest.warnings) out << "warning: " << w << "\n";
    write_dataset(ds, dir);
  }
  write_resolved(dir, "gen", cfg);
  out << "wrote " << kind << " set for task " << task_name(task) << " to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

json eval_defaults() {
  return {{"task", nullptr}, {"dir", nullptr},   {"upscale", 1},       {"eps", kDefaultEpsilon},
          {"size", 0},       {"memcheck", false}, {"train", nullptr},  {"query", nullptr},
          {"dim", 4},        {"threads", 1},      {"out", nullptr}};
}

void add_eval(CLI::App* app, Bindings& b) {
  b.option<std::string>(app, "--task", "task", "Task A, B, C or D");
  b.option<std::string>(app, "--dir", "dir", "Directory of PNG images to evaluate");
  b.option<int>(app, "--upscale", "upscale", "Nearest-neighbour upscale factor (1 or 4)");
  b.option<double>(app, "--eps", "eps", "Fine-rule relative tolerance");
  b.option<int>(app, "--size", "size", "Expected image side (0 accepts 32 or 64)");
  b.flag(app, "--memcheck", "memcheck", "Nearest-neighbour memorization analysis");
  b.option<std::string>(app, "--train", "train", "Memcheck: training image directory");
  b.option<std::string>(app, "--query", "query", "Memcheck: generated image directory");
  b.option<int>(app, "--dim", "dim", "Memcheck embedding dimension (4 or the colored dimension)");
  b.option<int>(app, "--threads", "threads", "Worker threads");
  b.option<std::string>(app, "--out", "out", "Output directory");
}

EvalConfig eval_config(const json& cfg) {
  EvalConfig ec;
  ec.upscale_factor = get<int>(cfg, "upscale");
  if (ec.upscale_factor != 1 && ec.upscale_factor != 4) throw ConfigError("--upscale must be 1 or 4");
  ec.eps = get<double>(cfg, "eps");
  if (!(ec.eps > 0)) throw ConfigError("--eps must be positive");
  ec.expected_size = get<int>(cfg, "size");
  ec.threads = positive_int(cfg, "threads");
  return ec;
}

// Falls back to the task recorded in a directory's manifest.
TaskId task_of(const json& cfg, const std::string& dir_key, const std::string& command) {
  if (is_set(cfg, "task")) return parse_task(get<std::string>(cfg, "task"));
  if (is_set(cfg, dir_key)) {
    const fs::path manifest = fs::path(get<std::string>(cfg, dir_key)) / "manifest.jsonl";
    if (fs::exists(manifest)) return read_manifest(manifest).task;
  }
  throw ConfigError(command + " requires --task (or a --" + dir_key + " holding a manifest.jsonl)");
}

fs::path existing_dir(const json& cfg, const std::string& key) {
  if (!is_set(cfg, key)) throw ConfigError("missing --" + key);
  fs::path p = get<std::string>(cfg, key);
  if (!fs::is_directory(p)) throw ConfigError("--" + key + " is not a directory: " + p.string());
  return p;
}

int cmd_eval(json cfg, std::ostream& out) {
  const TaskId task = task_of(cfg, get<bool>(cfg, "memcheck") ? "train" : "dir", "eval");
  cfg["task"] = task_name(task);
  const EvalConfig ec = eval_config(cfg);

  if (get<bool>(cfg, "memcheck")) {
    const fs::path train = existing_dir(cfg, "train"), query = existing_dir(cfg, "query");
    const int dim = get<int>(cfg, "dim");
    if (dim != 4 && dim != colored_embedding_dim(task))
      throw ConfigError("--dim must be 4 or " + std::to_string(colored_embedding_dim(task)) + " for task " +
                        task_name(task));
    const fs::path dir = resolve_out(cfg, "memcheck_" + task_name(task));
    DirectoryReport tr = evaluate_directory(train, task, ec);
    DirectoryReport qr = evaluate_directory(query, task, ec);
    MemorizationReport mr = memorization(qr.records, tr.records, dim, default_thresholds());
    write_json_file(dir / "memorization.json", memorization_json(mr));
    write_text_file(dir / "distance_histogram.csv", distance_histogram_csv(mr));
    write_resolved(dir, "eval", cfg);
    out << "memorization: " << mr.nn_distance.size() << " queries against " << tr.records.size()
        << " training images, written to " << dir.string() << "\n";
    return 0;
  }

  const fs::path src = existing_dir(cfg, "dir");
  const fs::path dir = resolve_out(cfg, "eval_" + task_name(task));
  fs::create_directories(dir);
  std::ostringstream csv;
  DirectoryReport dr = evaluate_directory(src, task, ec, &csv);
  write_text_file(dir / "features.csv", csv.str());
  json summary = directory_summary_json(dr, ec);
  std::vector<std::string> warnings = dr.warnings;
  try {
    RegressionReport rr = fit_rule_regression(dr.records, task);
    write_json_file(dir / "regression.json", regression_report_json(rr));
    write_text_file(dir / "regression_plot.csv", regression_plot_csv(dr.records, rr));
    out << "task " << task_name(task) << ": R2 " << rr.r2 << ", slope " << rr.beta1_hat << " (rule "
        << rr.beta1_true << "), Error " << rr.error << "\n";
  } catch (const Error& e) {
    warnings.push_back(std::string("regression skipped: ") + e.what());
  }
  write_json_file(dir / "conformance.json", conformance_json(conformance_counts(dr.records, task, ec.eps)));
  summary["warnings"] = warnings;
  write_json_file(dir / "summary.json", summary);
  write_resolved(dir, "eval", cfg);
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  out << "evaluated " << dr.n_files << " files (" << dr.n_invalid << " invalid, " << dr.coarse_violations
      << " coarse violations), reports in " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- theory

json theory_defaults() {
  return {{"activation", "linear"},
          {"all_activations", false},
          {"m", 20},
          {"d", 100},
          {"P", 2},
          {"t", {0.2, 0.4, 0.6, 0.8}},
          {"n", 1000},
          {"n_eps", 1000},
          {"epochs", 5000},
          {"lr", 0.05},
          {"lr_overrides", {{"cubic", 0.005}}},
          {"sigma0", nullptr},
          {"seed", 0},
          {"n_mc", 5000},
          {"mode", "sampled"},
          {"profile", "full"},
          {"zeta", {{"kind", "uniform"}, {"lo", 0.2}, {"hi", 0.8}}},
          {"verify_stationary", false},
          {"sample", false},
          {"lambda", 1.0},
          {"steps", 100},
          {"n_samples", 2000},
          {"score", "net"},
          {"guidance_last_steps", 0},
          {"bank_m", 1},
          {"bank_epochs", 200000},
          {"bank_grad_tol", 1e-8},
          {"threads", 1},
          {"out", nullptr}};
}

void add_theory(CLI::App* app, Bindings& b) {
  b.option<std::string>(app, "--activation", "activation", "relu | linear | quadratic | cubic");
  b.flag(app, "--all-activations", "all_activations", "Run all four activations");
  b.option<int>(app, "--m", "m", "Network width");
  b.option<int>(app, "--d", "d", "Patch dimension");
  b.option<std::vector<double>>(app, "--t", "t", "Diffusion times")->delimiter(',');
  b.option<int>(app, "--n", "n", "Clean training samples");
  b.option<int>(app, "--n-eps", "n_eps", "Noise draws per clean sample");
  b.option<int>(app, "--epochs", "epochs", "Gradient descent epochs");
  b.option<double>(app, "--lr", "lr", "Learning rate");
  b.option<std::uint64_t>(app, "--seed", "seed", "Seed");
  b.option<int>(app, "--n-mc", "n_mc", "Monte Carlo draws for the rule error");
  b.option<std::string>(app, "--mode", "mode", "sampled | expected (linear only)");
  b.option<std::string>(app, "--profile", "profile", "full | ci (d=50, n=200, n_eps=100, 500 epochs)");
  b.flag(app, "--verify-stationary", "verify_stationary", "Check GD against the closed-form stationary point");
  b.flag(app, "--sample", "sample", "Run the ancestral sampler with and without guidance");
  b.option<double>(app, "--lambda", "lambda", "Guidance weight");
  b.option<int>(app, "--steps", "steps", "Sampler steps");
  b.option<int>(app, "--n-samples", "n_samples", "Sampler sample count");
  b.option<std::string>(app, "--score", "score", "Sampler score source: net | true");
  b.option<int>(app, "--threads", "threads", "Worker threads");
  b.option<std::string>(app, "--out", "out", "Output directory");
}

theory::TrainConfig train_config(const json& cfg, theory::Activation a) {
  theory::TrainConfig c;
  c.activation = a;
  c.m = positive_int(cfg, "m");
  c.sigma0 = is_set(cfg, "sigma0") ? get<double>(cfg, "sigma0") : -1;
  c.n = positive_int(cfg, "n");
  c.n_eps = positive_int(cfg, "n_eps");
  c.epochs = get<int>(cfg, "epochs");
  c.lr = get<double>(cfg, "lr");
  const json& over = cfg.at("lr_overrides");
  if (!over.is_object()) throw ConfigError("lr_overrides must be an object");
  if (over.contains(theory::activation_name(a))) c.lr = get<double>(over, theory::activation_name(a));
  c.seed = get<std::uint64_t>(cfg, "seed");
  const std::string mode = get<std::string>(cfg, "mode");
  if (mode != "sampled" && mode != "expected") throw ConfigError("--mode must be sampled or expected");
  c.mode = mode == "expected" ? theory::LossMode::Expected : theory::LossMode::Sampled;
  c.threads = positive_int(cfg, "threads");
  c.validate();
  return c;
}

std::string t_label(double t) { return "t" + format_double(t); }

int theory_verify(const json& cfg, const theory::MultiPatchDistribution& dist, const std::vector<double>& ts,
                  const fs::path& dir, std::ostream& out) {
  using namespace theory;
  if (parse_activation(get<std::string>(cfg, "activation")) != Activation::Linear || get<int>(cfg, "m") != 1)
    throw ConfigError("--verify-stationary needs --activation linear --m 1");
  json runs = json::array();
  bool all_pass = true;
  for (double t : ts) {
    const NoiseSchedulePoint s = NoiseSchedulePoint::vp(t);
    TrainConfig c = train_config(cfg, Activation::Linear);
    c.m = 1;
    c.mode = LossMode::Expected;
    c.epochs = std::max(c.epochs, 1000000);
    c.grad_tol = 1e-10;
    TrainResult r = train_gd(dist, s, c);
    const StationaryLinear st = stationary_linear(dist.zeta.mean(), dist.zeta.second_moment(), s.alpha, s.beta);
    const AnalyticError ae =
        analytic_error(dist.zeta.mean(), dist.zeta.second_moment(), dist.zeta.variance(), s.alpha, s.beta, st);
    json patches = json::array();
    bool pass = true;
    const Eigen::VectorXd* dirs[2] = {&dist.u, &dist.v};
    const StationaryPatch* sp[2] = {&st.patch1, &st.patch2};
    for (int p = 0; p < 2; ++p) {
      const Eigen::VectorXd w = r.net.W[p].row(0).transpose();
      const double proj = std::pow(w.dot(*dirs[p]), 2), norm = w.squaredNorm();
      const double e1 = std::abs(proj / sp[p]->proj() - 1), e2 = std::abs(norm / sp[p]->norm() - 1);
      pass = pass && e1 < 1e-3 && e2 < 1e-3;
      patches.push_back({{"proj_sq", proj},
                         {"norm_sq", norm},
                         {"closed_form_proj_sq", sp[p]->proj()},
                         {"closed_form_norm_sq", sp[p]->norm()},
                         {"orthogonal_root_norm_sq", sp[p]->norm_sq[1]},
                         {"rel_err_proj_sq", e1},
                         {"rel_err_norm_sq", e2}});
    }
    all_pass = all_pass && pass;
    runs.push_back({{"t", t},
                    {"epochs_run", r.epochs_run},
                    {"final_grad_norm", r.final_grad_norm},
                    {"patches", patches},
                    {"c0", ae.c0},
                    {"c1", ae.c1},
                    {"pass", pass}});
    out << "t=" << t << ": " << (pass ? "PASS" : "FAIL") << " (<w,u>^2 " << patches[0]["proj_sq"].get<double>()
        << " vs " << st.patch1.proj() << ")\n";
  }
  write_json_file(dir / "stationary.json",
                  {{"schema", "rulelab-stationary"}, {"version", 1}, {"runs", runs}, {"pass", all_pass}});
  return all_pass ? 0 : 1;
}

int theory_sample(const json& cfg, const theory::MultiPatchDistribution& dist, const fs::path& dir,
                  std::ostream& out) {
  using namespace theory;
  SamplerConfig sc;
  sc.steps = positive_int(cfg, "steps");
  sc.n = positive_int(cfg, "n_samples");
  sc.seed = get<std::uint64_t>(cfg, "seed");
  sc.guidance_last_steps = get<int>(cfg, "guidance_last_steps");
  const double lambda = get<double>(cfg, "lambda");
  const std::string score = get<std::string>(cfg, "score");
  std::unique_ptr<ScoreModel> model;
  if (score == "true") {
    model = std::make_unique<TrueScoreModel>(dist, ZetaQuadrature::from_law(dist.zeta));
  } else if (score == "net") {
    std::vector<double> times;
    for (int k = 0; k <= sc.steps; ++k) times.push_back(sc.t_max - (sc.t_max - sc.t_min) * k / sc.steps);
    TrainConfig c = train_config(cfg, Activation::Linear);
    c.m = positive_int(cfg, "bank_m");
    c.mode = LossMode::Expected;
    c.epochs = get<int>(cfg, "bank_epochs");
    c.grad_tol = get<double>(cfg, "bank_grad_tol");
    model = std::make_unique<NetworkBankModel>(train_score_bank(dist, times, c));
  } else {
    throw ConfigError("--score must be net or true");
  }
  SamplerConfig base = sc;
  base.lambda = 0;
  SamplerConfig guided = sc;
  guided.lambda = lambda;
  const SamplerResult r0 = ancestral_sample(*model, dist, base);
  const SamplerResult r1 = ancestral_sample(*model, dist, guided);
  std::ostringstream gaps;
  gaps << "index,gap_lambda0,gap_lambda\n";
  for (size_t i = 0; i < r0.gaps.size(); ++i)
    gaps << i << ',' << format_double(r0.gaps[i]) << ',' << format_double(r1.gaps[i]) << '\n';
  write_text_file(dir / "sampler_gaps.csv", gaps.str());
  const double reduction = r0.mean_gap > 0 ? 1 - r1.mean_gap / r0.mean_gap : 0.0;
  write_json_file(dir / "sampler.json", {{"schema", "rulelab-sampler-comparison"},
                                         {"version", 1},
                                         {"score", score},
                                         {"baseline", sampler_result_json(r0, base)},
                                         {"guided", sampler_result_json(r1, guided)},
                                         {"relative_reduction", reduction}});
  out << "mean rule gap: lambda=0 " << r0.mean_gap << ", lambda=" << lambda << " " << r1.mean_gap << "\n";
  return 0;
}

int theory_train(const json& cfg, const theory::MultiPatchDistribution& dist, const std::vector<double>& ts,
                 const fs::path& dir, std::ostream& out) {
  using namespace theory;
  std::vector<Activation> acts;
  if (get<bool>(cfg, "all_activations"))
    acts.assign(std::begin(kAllActivations), std::end(kAllActivations));
  else
    acts.push_back(parse_activation(get<std::string>(cfg, "activation")));
  const int n_mc = get<int>(cfg, "n_mc");
  json reports = json::array();
  for (Activation a : acts) {
    const TrainConfig c = train_config(cfg, a);
    const std::string name = activation_name(a);
    std::vector<std::vector<double>> losses, psis;
    std::vector<RuleErrorReport> reps;
    for (double t : ts) {
      const NoiseSchedulePoint s = NoiseSchedulePoint::vp(t);
      TrainResult r = train_gd(dist, s, c);
      RuleErrorReport rep = rule_error(r.net, dist, s, n_mc, c.seed + 1, c.threads);
      if (a == Activation::Linear && c.m == 1) {
        const StationaryLinear st =
            stationary_linear(dist.zeta.mean(), dist.zeta.second_moment(), s.alpha, s.beta);
        const AnalyticError ae =
            analytic_error(dist.zeta.mean(), dist.zeta.second_moment(), dist.zeta.variance(), s.alpha, s.beta, st);
        rep.c0 = ae.c0;
        rep.c1 = ae.c1;
      }
      write_json_file(dir / ("net_" + name + "_" + t_label(t) + ".json"), r.net.to_json());
      json rj = rule_error_json(rep);
      rj["activation"] = name;
      rj["lr"] = c.lr;
      rj["epochs_run"] = r.epochs_run;
      rj["final_loss"] = r.loss_history.back();
      reports.push_back(rj);
      out << name << " t=" << t << ": E " << rep.error << " (se " << rep.se_error << "), bias^2 " << rep.bias_sq
          << ", var " << rep.variance << "\n";
      losses.push_back(std::move(r.loss_history));
      psis.push_back(rep.samples);
      reps.push_back(std::move(rep));
    }
    std::vector<std::string> head = {"epoch"};
    for (double t : ts) head.push_back(t_label(t));
    std::ostringstream lc, pc, hc;
    lc << join_csv(head);
    size_t rows = 0;
    for (const auto& l : losses) rows = std::max(rows, l.size());
    for (size_t e = 0; e < rows; ++e) {
      std::vector<std::string> f = {std::to_string(e)};
      for (const auto& l : losses) f.push_back(e < l.size() ? format_double(l[e]) : "");
      lc << join_csv(f);
    }
    head[0] = "index";
    pc << join_csv(head);
    for (int i = 0; i < n_mc; ++i) {
      std::vector<std::string> f = {std::to_string(i)};
      for (const auto& p : psis) f.push_back(format_double(p[i]));
      pc << join_csv(f);
    }
    hc << "t,target,bin_lo,bin_hi,count\n";
    for (const auto& rep : reps)
      for (size_t k = 0; k < rep.histogram.counts.size(); ++k)
        hc << join_csv({format_double(rep.t), format_double(rep.target), format_double(rep.histogram.edges[k]),
                        format_double(rep.histogram.edges[k + 1]), std::to_string(rep.histogram.counts[k])});
    write_text_file(dir / ("loss_history_" + name + ".csv"), lc.str());
    write_text_file(dir / ("psi_" + name + ".csv"), pc.str());
    write_text_file(dir / ("psi_hist_" + name + ".csv"), hc.str());
  }
  write_json_file(dir / "theory_report.json", {{"schema", "rulelab-theory"}, {"version", 1}, {"runs", reports}});
  return 0;
}

int cmd_theory(json cfg, const std::set<std::string>& explicit_keys, std::ostream& out) {
  using namespace theory;
  const std::string profile = get<std::string>(cfg, "profile");
  if (profile == "ci") {
    const std::pair<const char*, int> ci[] = {{"d", 50}, {"n", 200}, {"n_eps", 100}, {"epochs", 500}};
    for (const auto& [k, v] : ci)
      if (!explicit_keys.count(k)) cfg[k] = v;
  } else if (profile != "full") {
    throw ConfigError("--profile must be full or ci");
  }
  const auto ts = get<std::vector<double>>(cfg, "t");
  if (ts.empty()) throw ConfigError("--t needs at least one time");
  for (double t : ts)
    if (!(t > 0)) throw ConfigError("diffusion times must be positive");
  const MultiPatchDistribution dist =
      MultiPatchDistribution::standard(positive_int(cfg, "d"), get<int>(cfg, "P"), ZetaLaw::from_json(cfg.at("zeta")));
  const fs::path dir = resolve_out(cfg, "theory");
  fs::create_directories(dir);
  write_resolved(dir, "theory", cfg);
  if (get<bool>(cfg, "verify_stationary")) return theory_verify(cfg, dist, ts, dir, out);
  if (get<bool>(cfg, "sample")) return theory_sample(cfg, dist, dir, out);
  return theory_train(cfg, dist, ts, dir, out);
}

// ---------------------------------------------------------------- mitigate

json mitigate_defaults() {
  return {{"task", nullptr},      {"train_classifier", false}, {"filter", false},   {"dir", nullptr},
          {"eps", kDefaultEpsilon}, {"classifier", nullptr},   {"labeled", nullptr}, {"n_per_class", 300},
          {"low", 0.8},           {"high", 1.25},              {"size", 32},        {"lambda", 1.0},
          {"tau", 0.5},           {"hidden", 32},              {"epochs", 500},     {"lr", 0.1},
          {"contrastive_pairs", 32}, {"seed", 0},              {"upscale", 1},      {"threads", 1},
          {"out", nullptr}};
}

void add_mitigate(CLI::App* app, Bindings& b) {
  b.option<std::string>(app, "--task", "task", "Task A, B, C or D");
  b.flag(app, "--train-classifier", "train_classifier", "Train the three-class feature classifier");
  b.flag(app, "--filter", "filter", "Filter a generated directory by the fine rule");
  b.option<std::string>(app, "--dir", "dir", "Filter: image directory");
  b.option<double>(app, "--eps", "eps", "Filter: fine-rule relative tolerance");
  b.option<std::string>(app, "--classifier", "classifier", "Filter: classifier JSON (learned variant)");
  b.option<std::string>(app, "--labeled", "labeled", "Classifier: labeled feature CSV instead of generating");
  b.option<int>(app, "--n-per-class", "n_per_class", "Classifier: generated samples per class");
  b.option<double>(app, "--low", "low", "Classifier: class 0 ratio factor");
  b.option<double>(app, "--high", "high", "Classifier: class 2 ratio factor");
  b.option<double>(app, "--lambda", "lambda", "Contrastive weight");
  b.option<double>(app, "--tau", "tau", "NT-Xent temperature");
  b.option<int>(app, "--hidden", "hidden", "Hidden width");
  b.option<int>(app, "--epochs", "epochs", "Training epochs");
  b.option<double>(app, "--lr", "lr", "Learning rate");
  b.option<std::uint64_t>(app, "--seed", "seed", "Seed");
  b.option<int>(app, "--threads", "threads", "Worker threads");
  b.option<std::string>(app, "--out", "out", "Output directory");
}

int cmd_mitigate(json cfg, std::ostream& out) {
  const TaskId task = task_of(cfg, "dir", "mitigate");
  cfg["task"] = task_name(task);
  const bool do_train = get<bool>(cfg, "train_classifier"), do_filter = get<bool>(cfg, "filter");
  if (!do_train && !do_filter) throw ConfigError("mitigate needs --train-classifier and/or --filter");
  MitigationConfig mc;
  mc.lambda = get<double>(cfg, "lambda");
  mc.tau = get<double>(cfg, "tau");
  mc.hidden = get<int>(cfg, "hidden");
  mc.epochs = get<int>(cfg, "epochs");
  mc.lr = get<double>(cfg, "lr");
  mc.contrastive_pairs = get<int>(cfg, "contrastive_pairs");
  mc.seed = get<std::uint64_t>(cfg, "seed");
  mc.validate();
  EvalConfig ec;
  ec.upscale_factor = get<int>(cfg, "upscale");
  ec.eps = get<double>(cfg, "eps");
  ec.threads = positive_int(cfg, "threads");
  const fs::path dir = resolve_out(cfg, "mitigate_" + task_name(task));
  fs::create_directories(dir);
  write_resolved(dir, "mitigate", cfg);

  std::optional<FeatureClassifier> clf;
  if (do_train) {
    LabeledFeatureSet data;
    if (is_set(cfg, "labeled")) {
      data = read_labeled_csv(get<std::string>(cfg, "labeled"));
      if (data.task != task) throw ConfigError("labeled CSV belongs to another task");
    } else {
      GenerateOptions o;
      o.seed = mc.seed;
      o.image_size = get<int>(cfg, "size");
      o.threads = ec.threads;
      auto sets = generate_contrastive(task, positive_int(cfg, "n_per_class"), get<double>(cfg, "low"),
                                       get<double>(cfg, "high"), o);
      data.task = task;
      for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < sets[c].images.size(); ++i) {
          FeatureRecord r = extract_features(sets[c].images[i], task, ec.upscale_factor);
          r.source = "class" + std::to_string(c) + "/" + sets[c].manifest.samples[i].file;
          if (!r.valid) continue;
          data.records.push_back(std::move(r));
          data.labels.push_back(c);
        }
    }
    write_labeled_csv(dir / "labeled.csv", data);
    ClassifierResult res = train_classifier(data, mc);
    write_json_file(dir / "classifier.json", res.classifier.to_json());
    write_json_file(dir / "classifier_report.json", classifier_report_json(res, mc));
    std::ostringstream lc;
    lc << "epoch,total,ce,contrastive\n";
    for (size_t e = 0; e < res.loss_history.size(); ++e)
      lc << join_csv({std::to_string(e), format_double(res.loss_history[e]), format_double(res.ce_history[e]),
                      format_double(res.contrastive_history[e])});
    write_text_file(dir / "classifier_loss.csv", lc.str());
    out << "classifier: train accuracy " << res.train.overall() << ", test accuracy " << res.test.overall() << "\n";
    clf = res.classifier;
  }
  if (do_filter) {
    const fs::path src = existing_dir(cfg, "dir");
    if (is_set(cfg, "classifier")) clf = FeatureClassifier::from_json(read_json_file(get<std::string>(cfg, "classifier")));
    FilterReport fr = filter_directory(src, task, ec.eps, ec, clf ? &*clf : nullptr);
    write_filter_outputs(fr, dir);
    for (const auto& w : fr.warnings) out << "warning: " << w << "\n";
    out << fr.variant << " filter kept " << fr.kept.size() << " of " << fr.kept.size() + fr.rejected.size()
        << "; Error " << fr.before.error;
    if (fr.after) out << " -> " << fr.after->error;
    out << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"rulelab: hidden inter-feature rule laboratory"};
  app.require_subcommand(1);
  std::string config_path;
  struct Sub {
    CLI::App* app;
    Bindings bindings;
  };
  std::map<std::string, Sub> subs;
  auto make = [&](const std::string& name, const std::string& help, auto add) {
    CLI::App* sc = app.add_subcommand(name, help);
    sc->add_option("--config", config_path, "JSON file with option values");
    subs[name].app = sc;
    add(sc, subs[name].bindings);
  };
  make("gen", "Generate a synthetic task dataset", add_gen);
  make("eval", "Evaluate rule conformity of an image directory", add_eval);
  make("theory", "Two-layer diffusion theory experiments", add_theory);
  make("mitigate", "Contrastive classifier and rule-based filtering", add_mitigate);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    for (auto& [name, sub] : subs)
      if (sub.app->parsed()) {
        out << sub.app->help();
        return 0;
      }
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    for (auto& [name, sub] : subs) {
      if (!sub.app->parsed()) continue;
      std::set<std::string> explicit_keys;
      json defaults = name == "gen" ? gen_defaults()
                      : name == "eval" ? eval_defaults()
                      : name == "theory" ? theory_defaults()
                                         : mitigate_defaults();
      json cfg = sub.bindings.resolve(defaults, config_path, explicit_keys);
      if (name == "gen") return cmd_gen(cfg, out);
      if (name == "eval") return cmd_eval(cfg, out);
      if (name == "theory") return cmd_theory(cfg, explicit_keys, out);
      return cmd_mitigate(cfg, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    for (auto& [name, sub] : subs)
      if (sub.app->parsed()) err << sub.app->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace rulelab

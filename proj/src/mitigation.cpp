#include "rulelab/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "rulelab/error.hpp"
#include "rulelab/rng.hpp"

namespace rulelab {

namespace {

void check_pairs(const Eigen::MatrixXd& z, const std::vector<int>& positive, double tau) {
  const int n = static_cast<int>(z.rows());
  if (n < 2) throw Error("NT-Xent needs at least two embeddings");
  if (static_cast<int>(positive.size()) != n) throw Error("NT-Xent needs one positive per anchor");
  if (!(tau > 0)) throw ConfigError("NT-Xent temperature must be positive");
  for (int i = 0; i < n; ++i) {
    if (positive[i] < 0 || positive[i] >= n || positive[i] == i)
      throw Error("NT-Xent positive index out of range for anchor " + std::to_string(i));
    if (!(z.row(i).norm() > 0)) throw Error("NT-Xent embedding " + std::to_string(i) + " has zero norm");
  }
}

}  // namespace

NtXentResult nt_xent_with_grad(const Eigen::MatrixXd& z, const std::vector<int>& positive, double tau) {
  check_pairs(z, positive, tau);
  const int n = static_cast<int>(z.rows());
  const Eigen::VectorXd norms = z.rowwise().norm();
  const Eigen::MatrixXd zh = norms.asDiagonal().inverse() * z;
  const Eigen::MatrixXd sim = zh * zh.transpose();

  NtXentResult out;
  // dL/dsim, accumulated over anchors; sim is symmetric so both (i,k) and
  // (k,i) entries feed the same gradient formula below.
  Eigen::MatrixXd dsim = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, sim(i, k) / tau);
    double denom = 0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau - mx);
    out.loss += -(sim(i, positive[i]) / tau - mx) + std::log(denom);
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      const double p = std::exp(sim(i, k) / tau - mx) / denom;
      dsim(i, k) += (p - (k == positive[i] ? 1.0 : 0.0)) / (tau * n);
    }
  }
  out.loss /= n;

  out.grad = Eigen::MatrixXd::Zero(n, z.cols());
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      if (k == i || dsim(i, k) == 0) continue;
      const double s = sim(i, k);
      out.grad.row(i) += dsim(i, k) * (zh.row(k) - s * zh.row(i)) / norms(i);
      out.grad.row(k) += dsim(i, k) * (zh.row(i) - s * zh.row(k)) / norms(k);
    }
  return out;
}

double nt_xent(const Eigen::MatrixXd& z, const std::vector<int>& positive, double tau) {
  return nt_xent_with_grad(z, positive, tau).loss;
}

void MitigationConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be nonnegative");
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (hidden < 1) throw ConfigError("hidden width must be positive");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (contrastive_pairs < 1) throw ConfigError("contrastive_pairs must be positive");
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test_fraction must lie in (0, 1)");
}

json MitigationConfig::to_json() const {
  return {{"lambda", lambda}, {"tau", tau},
          {"hidden", hidden}, {"epochs", epochs},
          {"lr", lr},         {"contrastive_pairs", contrastive_pairs},
          {"test_fraction", test_fraction}, {"seed", seed}};
}

void LabeledFeatureSet::validate() const {
  if (records.size() != labels.size()) throw Error("labeled set needs one label per record");
  for (size_t i = 0; i < records.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 2) throw Error("labels must be 0, 1 or 2");
    if (!records[i].valid) throw Error("labeled set contains an invalid record: " + records[i].source);
  }
}

int classifier_input_dim(TaskId task) {
  switch (task) {
    case TaskId::A:
    case TaskId::B: return 5;
    case TaskId::C:
    case TaskId::D: return 3;
  }
  return 0;
}

Eigen::VectorXd classifier_features(const FeatureRecord& r, TaskId task) {
  if (!r.valid) throw Error("classifier features of an invalid record: " + r.source);
  if (!(r.ratio > 0)) throw Error("classifier features need a positive ratio: " + r.source);
  Eigen::VectorXd f(classifier_input_dim(task));
  switch (task) {
    case TaskId::A:
    case TaskId::B: f << r.l1, r.l2, r.h1, r.h2, std::log(r.ratio); break;
    case TaskId::C: f << r.r1, r.r2, std::log(r.ratio); break;
    case TaskId::D: f << r.l1, r.l2, std::log(r.ratio); break;
  }
  return f;
}

void write_labeled_csv(const std::filesystem::path& path, const LabeledFeatureSet& data) {
  data.validate();
  std::string header = records_csv_header(data.task);
  header.pop_back();
  std::ostringstream ss;
  ss << header << ",label\n";
  for (size_t i = 0; i < data.records.size(); ++i) {
    std::string row = record_csv_row(data.records[i], verdict(data.records[i], data.task));
    row.pop_back();
    ss << row << ',' << data.labels[i] << '\n';
  }
  write_text_file(path, ss.str());
}

LabeledFeatureSet read_labeled_csv(const std::filesystem::path& path) {
  LabeledFeatureSet out;
  out.records = read_records_csv(path);
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), "label");
  if (it == header.end()) throw Error("labeled CSV " + path.string() + " lacks a label column");
  const size_t col = it - header.begin();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.labels.push_back(std::stoi(split_csv_line(line).at(col)));
  }
  if (!out.records.empty()) out.task = out.records.front().task;
  out.validate();
  return out;
}

Eigen::MatrixXd FeatureClassifier::standardize(const Eigen::MatrixXd& raw) const {
  return (raw.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::MatrixXd FeatureClassifier::hidden(const Eigen::MatrixXd& x) const {
  return ((x * W1.transpose()).rowwise() + b1.transpose()).array().tanh();
}

Eigen::MatrixXd FeatureClassifier::logits(const Eigen::MatrixXd& x) const {
  return (hidden(x) * W2.transpose()).rowwise() + b2.transpose();
}

int FeatureClassifier::predict(const FeatureRecord& record) const {
  Eigen::MatrixXd raw = classifier_features(record, task).transpose();
  Eigen::Index best;
  logits(standardize(raw)).row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (int c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows ? static_cast<int>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    auto row = j[r].get<std::vector<double>>();
    if (static_cast<int>(row.size()) != cols) throw ConfigError("ragged matrix in classifier json");
    for (int c = 0; c < cols; ++c) m(r, c) = row[c];
  }
  return m;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json FeatureClassifier::to_json() const {
  return {{"schema", "rulelab-classifier"}, {"version", 1},          {"task", task_name(task)},
          {"mean", vector_json(mean)},      {"scale", vector_json(scale)}, {"W1", matrix_json(W1)},
          {"b1", vector_json(b1)},          {"W2", matrix_json(W2)},   {"b2", vector_json(b2)}};
}

FeatureClassifier FeatureClassifier::from_json(const json& j) {
  try {
    FeatureClassifier c;
    c.task = parse_task(j.at("task").get<std::string>());
    c.mean = vector_from_json(j.at("mean"));
    c.scale = vector_from_json(j.at("scale"));
    c.W1 = matrix_from_json(j.at("W1"));
    c.b1 = vector_from_json(j.at("b1"));
    c.W2 = matrix_from_json(j.at("W2"));
    c.b2 = vector_from_json(j.at("b2"));
    const int D = classifier_input_dim(c.task);
    if (c.mean.size() != D || c.scale.size() != D || c.W1.cols() != D || c.W1.rows() != c.b1.size() ||
        c.W2.rows() != 3 || c.W2.cols() != c.W1.rows() || c.b2.size() != 3)
      throw ConfigError("classifier json has inconsistent shapes");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad classifier json: ") + e.what());
  }
}

ObjectiveParts classifier_objective(const FeatureClassifier& clf, const Eigen::MatrixXd& x,
                                    const std::vector<int>& y, const std::vector<int>& batch,
                                    const std::vector<int>& positive, double lambda, double tau) {
  const int n = static_cast<int>(x.rows());
  if (static_cast<int>(y.size()) != n || n == 0) throw Error("objective needs one label per row");
  const Eigen::MatrixXd h = clf.hidden(x);
  const Eigen::MatrixXd logit = (h * clf.W2.transpose()).rowwise() + clf.b2.transpose();

  ObjectiveParts out;
  Eigen::MatrixXd dlogit(n, 3);
  for (int i = 0; i < n; ++i) {
    const double mx = logit.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logit.row(i).array() - mx).exp();
    const double denom = e.sum();
    out.ce += -(logit(i, y[i]) - mx - std::log(denom));
    dlogit.row(i) = e / denom;
    dlogit(i, y[i]) -= 1;
  }
  out.ce /= n;
  dlogit /= n;

  Eigen::MatrixXd dh = dlogit * clf.W2;
  if (lambda > 0 && !batch.empty()) {
    Eigen::MatrixXd zb(batch.size(), h.cols());
    for (size_t k = 0; k < batch.size(); ++k) zb.row(k) = h.row(batch[k]);
    NtXentResult nt = nt_xent_with_grad(zb, positive, tau);
    out.contrastive = nt.loss;
    for (size_t k = 0; k < batch.size(); ++k) dh.row(batch[k]) += lambda * nt.grad.row(k);
  } else if (!batch.empty()) {
    Eigen::MatrixXd zb(batch.size(), h.cols());
    for (size_t k = 0; k < batch.size(); ++k) zb.row(k) = h.row(batch[k]);
    out.contrastive = nt_xent(zb, positive, tau);
  }
  out.total = out.ce + lambda * out.contrastive;
  if (!std::isfinite(out.total)) throw DivergenceError("classifier objective is not finite");

  out.gW2 = dlogit.transpose() * h;
  out.gb2 = dlogit.colwise().sum().transpose();
  const Eigen::MatrixXd da = dh.cwiseProduct((1 - h.array().square()).matrix());
  out.gW1 = da.transpose() * x;
  out.gb1 = da.colwise().sum().transpose();
  return out;
}

double ClassAccuracy::overall() const {
  const int c = correct[0] + correct[1] + correct[2];
  const int t = total[0] + total[1] + total[2];
  return t ? static_cast<double>(c) / t : 0.0;
}

double ClassAccuracy::of(int c) const { return total[c] ? static_cast<double>(correct[c]) / total[c] : 0.0; }

namespace {

ClassAccuracy accuracy(const FeatureClassifier& clf, const Eigen::MatrixXd& x, const std::vector<int>& y) {
  ClassAccuracy acc;
  if (x.rows() == 0) return acc;
  const Eigen::MatrixXd logit = clf.logits(x);
  for (int i = 0; i < x.rows(); ++i) {
    Eigen::Index best;
    logit.row(i).maxCoeff(&best);
    acc.total[y[i]]++;
    if (best == y[i]) acc.correct[y[i]]++;
  }
  return acc;
}

}  // namespace

ClassifierResult train_classifier(const LabeledFeatureSet& data, const MitigationConfig& config) {
  config.validate();
  data.validate();
  const TaskId task = data.task;
  const int n = static_cast<int>(data.records.size());
  std::array<int, 3> counts{};
  for (int l : data.labels) counts[l]++;
  if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0)
    throw Error("classifier training needs all three classes present");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(config.seed, {0x5b1, 0});
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[split_rng.uniform_int(0, i)]);
  const int n_test = std::max(1, static_cast<int>(std::lround(config.test_fraction * n)));
  if (n - n_test < 2) throw Error("too few records for an 80/20 split");

  ClassifierResult res;
  res.train_index.assign(order.begin(), order.end() - n_test);
  res.test_index.assign(order.end() - n_test, order.end());
  std::sort(res.train_index.begin(), res.train_index.end());
  std::sort(res.test_index.begin(), res.test_index.end());

  const int D = classifier_input_dim(task);
  auto gather = [&](const std::vector<int>& idx, Eigen::MatrixXd& x, std::vector<int>& y) {
    x.resize(idx.size(), D);
    y.resize(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
      x.row(k) = classifier_features(data.records[idx[k]], task).transpose();
      y[k] = data.labels[idx[k]];
    }
  };
  Eigen::MatrixXd x_train, x_test;
  std::vector<int> y_train, y_test;
  gather(res.train_index, x_train, y_train);
  gather(res.test_index, x_test, y_test);

  FeatureClassifier& clf = res.classifier;
  clf.task = task;
  clf.mean = x_train.colwise().mean().transpose();
  clf.scale = ((x_train.rowwise() - clf.mean.transpose()).array().square().colwise().sum() /
               std::max(1, static_cast<int>(x_train.rows()) - 1))
                  .sqrt()
                  .transpose();
  for (int k = 0; k < D; ++k)
    if (!(clf.scale(k) > 0)) clf.scale(k) = 1;
  Rng init(config.seed, {0x1417, 1});
  clf.W1.resize(config.hidden, D);
  clf.W2.resize(3, config.hidden);
  for (int r = 0; r < config.hidden; ++r)
    for (int c = 0; c < D; ++c) clf.W1(r, c) = init.normal() / std::sqrt(static_cast<double>(D));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < config.hidden; ++c) clf.W2(r, c) = init.normal() / std::sqrt(static_cast<double>(config.hidden));
  clf.b1 = Eigen::VectorXd::Zero(config.hidden);
  clf.b2 = Eigen::VectorXd::Zero(3);
  const Eigen::MatrixXd xs_train = clf.standardize(x_train);
  const Eigen::MatrixXd xs_test = clf.standardize(x_test);

  std::array<std::vector<int>, 3> by_class;
  for (size_t k = 0; k < y_train.size(); ++k) by_class[y_train[k]].push_back(static_cast<int>(k));
  std::vector<int> usable;
  for (int c = 0; c < 3; ++c)
    if (by_class[c].size() >= 2) usable.push_back(c);
  if (usable.empty()) throw Error("no class has two training samples for contrastive pairs");

  // Same-class positive pairs, redrawn each epoch from a stream fixed by
  // (seed, epoch).
  auto draw_batch = [&](int epoch, std::vector<int>& batch, std::vector<int>& positive) {
    Rng rng(config.seed, {0xc0e, static_cast<std::uint64_t>(epoch)});
    batch.clear();
    positive.clear();
    for (int p = 0; p < config.contrastive_pairs; ++p) {
      const auto& pool = by_class[usable[rng.uniform_int(0, static_cast<std::int64_t>(usable.size()) - 1)]];
      const int a = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1));
      int b = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 2));
      if (b >= a) ++b;
      batch.push_back(pool[a]);
      batch.push_back(pool[b]);
      positive.push_back(2 * p + 1);
      positive.push_back(2 * p);
    }
  };

  std::vector<int> batch, positive;
  for (int epoch = 0;; ++epoch) {
    draw_batch(epoch, batch, positive);
    ObjectiveParts o = classifier_objective(clf, xs_train, y_train, batch, positive, config.lambda, config.tau);
    res.loss_history.push_back(o.total);
    res.ce_history.push_back(o.ce);
    res.contrastive_history.push_back(o.contrastive);
    if (epoch == config.epochs) break;
    clf.W1 -= config.lr * o.gW1;
    clf.b1 -= config.lr * o.gb1;
    clf.W2 -= config.lr * o.gW2;
    clf.b2 -= config.lr * o.gb2;
  }
  res.train = accuracy(clf, xs_train, y_train);
  res.test = accuracy(clf, xs_test, y_test);
  return res;
}

json classifier_report_json(const ClassifierResult& r, const MitigationConfig& config) {
  auto acc_json = [](const ClassAccuracy& a) {
    return json{{"overall", a.overall()},
                {"per_class", {a.of(0), a.of(1), a.of(2)}},
                {"counts", {a.total[0], a.total[1], a.total[2]}}};
  };
  return {{"schema", "rulelab-classifier-report"},
          {"version", 1},
          {"task", task_name(r.classifier.task)},
          {"config", config.to_json()},
          {"n_train", r.train_index.size()},
          {"n_test", r.test_index.size()},
          {"final_loss", r.loss_history.empty() ? 0.0 : r.loss_history.back()},
          {"final_ce", r.ce_history.empty() ? 0.0 : r.ce_history.back()},
          {"final_contrastive", r.contrastive_history.empty() ? 0.0 : r.contrastive_history.back()},
          {"train_accuracy", acc_json(r.train)},
          {"test_accuracy", acc_json(r.test)}};
}

FilterReport filter_records(const std::vector<FeatureRecord>& records, TaskId task, double eps,
                            const FeatureClassifier* classifier) {
  if (!(eps >= 0)) throw ConfigError("filter eps must be nonnegative");
  if (classifier && classifier->task != task) throw ConfigError("classifier was trained for another task");
  FilterReport rep;
  rep.task = task;
  rep.variant = classifier ? "classifier" : "oracle";
  rep.eps = eps;
  for (const auto& r : records) {
    bool keep = false;
    if (r.valid) keep = classifier ? classifier->predict(r) == 1 : fine_ok(r.ratio, task, eps);
    if (keep) {
      rep.kept.push_back(r.source);
      rep.kept_records.push_back(r);
    } else {
      rep.rejected.push_back(r.source);
    }
  }
  rep.before_counts = conformance_counts(records, task, eps);
  rep.after_counts = conformance_counts(rep.kept_records, task, eps);
  try {
    rep.before = fit_rule_regression(records, task);
  } catch (const Error& e) {
    rep.warnings.push_back(std::string("unfiltered regression unavailable: ") + e.what());
  }
  if (rep.kept_records.empty()) {
    rep.warnings.push_back("filter kept no records; reporting the unfiltered set only");
  } else {
    try {
      rep.after = fit_rule_regression(rep.kept_records, task);
    } catch (const Error& e) {
      rep.warnings.push_back(std::string("filtered regression unavailable: ") + e.what());
    }
  }
  return rep;
}

FilterReport filter_directory(const std::filesystem::path& dir, TaskId task, double eps,
                              const EvalConfig& eval, const FeatureClassifier* classifier) {
  DirectoryReport dr = evaluate_directory(dir, task, eval);
  FilterReport rep = filter_records(dr.records, task, eps, classifier);
  rep.warnings.insert(rep.warnings.begin(), dr.warnings.begin(), dr.warnings.end());
  return rep;
}

json filter_report_json(const FilterReport& r) {
  json j = {{"schema", "rulelab-filter"},
            {"version", 1},
            {"task", task_name(r.task)},
            {"variant", r.variant},
            {"eps", r.eps},
            {"n_kept", r.kept.size()},
            {"n_rejected", r.rejected.size()},
            {"before", regression_report_json(r.before)},
            {"before_conformance", conformance_json(r.before_counts)},
            {"after_conformance", conformance_json(r.after_counts)},
            {"warnings", r.warnings}};
  j["after"] = r.after ? regression_report_json(*r.after) : json(nullptr);
  return j;
}

void write_filter_outputs(const FilterReport& r, const std::filesystem::path& out_dir) {
  auto lines = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += x + "\n";
    return s;
  };
  write_text_file(out_dir / "kept.txt", lines(r.kept));
  write_text_file(out_dir / "rejected.txt", lines(r.rejected));
  write_json_file(out_dir / "filter_report.json", filter_report_json(r));
}

}  // namespace rulelab

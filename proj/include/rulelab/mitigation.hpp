#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rulelab/analysis.hpp"
#include "rulelab/io.hpp"
#include "rulelab/task.hpp"
#include "rulelab/vision.hpp"

namespace rulelab {

struct NtXentResult {
  double loss = 0;
  Eigen::MatrixXd grad;  // d loss / d embeddings, same shape as the input
};

// Rows of z are embeddings; positive[i] is the index paired with anchor i.
// Loss is the mean over anchors of
//   -log( exp(sim(i, pos)/tau) / sum_{k != i} exp(sim(i, k)/tau) )
// with cosine similarity.
double nt_xent(const Eigen::MatrixXd& z, const std::vector<int>& positive, double tau);
NtXentResult nt_xent_with_grad(const Eigen::MatrixXd& z, const std::vector<int>& positive, double tau);

struct MitigationConfig {
  double lambda = 1.0;
  double tau = 0.5;
  int hidden = 32;
  int epochs = 500;
  double lr = 0.1;
  int contrastive_pairs = 32;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  json to_json() const;
};

struct LabeledFeatureSet {
  TaskId task = TaskId::A;
  std::vector<FeatureRecord> records;
  std::vector<int> labels;  // 0, 1 (fine-conforming) or 2

  void validate() const;  // throws Error
};

// Raw geometric features of the task plus the log of the fine ratio.
Eigen::VectorXd classifier_features(const FeatureRecord& record, TaskId task);
int classifier_input_dim(TaskId task);

void write_labeled_csv(const std::filesystem::path& path, const LabeledFeatureSet& data);
LabeledFeatureSet read_labeled_csv(const std::filesystem::path& path);

// One tanh hidden layer over standardized features, three logits. The hidden
// activations double as the contrastive embedding.
struct FeatureClassifier {
  TaskId task = TaskId::A;
  Eigen::VectorXd mean, scale;
  Eigen::MatrixXd W1, W2;
  Eigen::VectorXd b1, b2;

  Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw) const;  // rows are samples
  Eigen::MatrixXd hidden(const Eigen::MatrixXd& x) const;         // standardized input
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  int predict(const FeatureRecord& record) const;
  json to_json() const;
  static FeatureClassifier from_json(const json& j);
};

struct ObjectiveParts {
  double ce = 0, contrastive = 0, total = 0;
  Eigen::MatrixXd gW1, gW2;
  Eigen::VectorXd gb1, gb2;
};

// Mean cross-entropy over (x, y) plus lambda times NT-Xent over the hidden
// embeddings of x.row(batch[k]), paired by positive.
ObjectiveParts classifier_objective(const FeatureClassifier& clf, const Eigen::MatrixXd& x,
                                    const std::vector<int>& y, const std::vector<int>& batch,
                                    const std::vector<int>& positive, double lambda, double tau);

struct ClassAccuracy {
  std::array<int, 3> correct{}, total{};
  double overall() const;
  double of(int c) const;
};

struct ClassifierResult {
  FeatureClassifier classifier;
  std::vector<double> loss_history, ce_history, contrastive_history;
  ClassAccuracy train, test;
  std::vector<int> train_index, test_index;
};

ClassifierResult train_classifier(const LabeledFeatureSet& data, const MitigationConfig& config);
json classifier_report_json(const ClassifierResult& result, const MitigationConfig& config);

struct FilterReport {
  TaskId task = TaskId::A;
  std::string variant;  // "oracle" or "classifier"
  double eps = 0;
  std::vector<std::string> kept, rejected;
  std::vector<FeatureRecord> kept_records;
  RegressionReport before;
  std::optional<RegressionReport> after;
  ConformanceCounts before_counts, after_counts;
  std::vector<std::string> warnings;
};

// Keeps Valid records whose ratio is within rho*(1 +- eps) (oracle) or which
// the classifier assigns to class 1.
FilterReport filter_records(const std::vector<FeatureRecord>& records, TaskId task, double eps,
                            const FeatureClassifier* classifier = nullptr);
FilterReport filter_directory(const std::filesystem::path& dir, TaskId task, double eps,
                              const EvalConfig& eval, const FeatureClassifier* classifier = nullptr);
json filter_report_json(const FilterReport& report);
// kept.txt, rejected.txt and filter_report.json.
void write_filter_outputs(const FilterReport& report, const std::filesystem::path& out_dir);

}  // namespace rulelab

#include <gtest/gtest.h>

#include <cmath>

#include "rulelab/error.hpp"
#include "rulelab/mitigation.hpp"
#include "rulelab/rng.hpp"
#include "rulelab/scenegen.hpp"
#include "support.hpp"

using namespace rulelab;

namespace {

std::vector<FeatureRecord> features_of(const Dataset& ds, TaskId task) {
  std::vector<FeatureRecord> out;
  for (size_t i = 0; i < ds.images.size(); ++i) {
    FeatureRecord r = extract_features(ds.images[i], task);
    r.source = ds.manifest.samples[i].file;
    out.push_back(r);
  }
  return out;
}

LabeledFeatureSet contrastive_set(TaskId task, int n_per_class, std::uint64_t seed) {
  GenerateOptions o;
  o.seed = seed;
  const auto classes = generate_contrastive(task, n_per_class, 0.8, 1.25, o);
  LabeledFeatureSet set;
  set.task = task;
  for (int c = 0; c < 3; ++c)
    for (const FeatureRecord& r : features_of(classes[c], task)) {
      if (!r.valid) continue;
      set.records.push_back(r);
      set.labels.push_back(c);
    }
  return set;
}

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

TEST(NtXent, TwoEmbeddingsGiveZeroLoss) {
  const Eigen::MatrixXd z = random_matrix(2, 4, 1);
  EXPECT_NEAR(nt_xent(z, {1, 0}, 0.5), 0.0, 1e-15);
}

TEST(NtXent, ManualFourSampleCase) {
  Eigen::MatrixXd z(4, 2);
  z << 1, 0, 0.6, 0.8, 0, 1, -1, 0;
  const std::vector<int> pos = {1, 0, 3, 2};
  const double tau = 0.5;
  Eigen::MatrixXd sim(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) sim(i, k) = z.row(i).normalized().dot(z.row(k).normalized());
  double expected = 0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0;
    for (int k = 0; k < 4; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau);
    expected += -std::log(std::exp(sim(i, pos[i]) / tau) / denom);
  }
  expected /= 4;
  EXPECT_NEAR(nt_xent(z, pos, tau), expected, 1e-10);
}

TEST(NtXent, ScaleInvariantPerRow) {
  Eigen::MatrixXd z = random_matrix(6, 3, 2);
  const std::vector<int> pos = {1, 0, 3, 2, 5, 4};
  const double base = nt_xent(z, pos, 0.3);
  z.row(2) *= 7.5;
  z.row(5) *= 0.01;
  EXPECT_NEAR(nt_xent(z, pos, 0.3), base, 1e-12);
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
  const Eigen::MatrixXd z = random_matrix(6, 4, 3);
  const std::vector<int> pos = {3, 4, 5, 0, 1, 2};
  const NtXentResult r = nt_xent_with_grad(z, pos, 0.4);
  EXPECT_NEAR(r.loss, nt_xent(z, pos, 0.4), 1e-14);
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 4; ++c) {
      Eigen::MatrixXd zp = z, zm = z;
      zp(i, c) += 1e-6;
      zm(i, c) -= 1e-6;
      const double fd = (nt_xent(zp, pos, 0.4) - nt_xent(zm, pos, 0.4)) / 2e-6;
      EXPECT_NEAR(r.grad(i, c), fd, 1e-6 * std::max(1.0, std::fabs(fd)));
    }
}

TEST(NtXent, RejectsBadInput) {
  const Eigen::MatrixXd z = random_matrix(3, 2, 4);
  EXPECT_THROW(nt_xent(z.topRows(1), {0}, 0.5), Error);
  EXPECT_THROW(nt_xent(z, {1, 0}, 0.5), Error);
  EXPECT_THROW(nt_xent(z, {1, 0, 3}, 0.5), Error);
  EXPECT_THROW(nt_xent(z, {1, 0, 0}, 0.0), ConfigError);
  Eigen::MatrixXd zero = z;
  zero.row(1).setZero();
  EXPECT_THROW(nt_xent(zero, {1, 0, 0}, 0.5), Error);
}

TEST(Objective, AdditiveAndGradientExact) {
  FeatureClassifier clf;
  clf.task = TaskId::C;
  clf.W1 = random_matrix(5, 3, 5) * 0.5;
  clf.b1 = random_matrix(5, 1, 6).col(0) * 0.1;
  clf.W2 = random_matrix(3, 5, 7) * 0.5;
  clf.b2 = random_matrix(3, 1, 8).col(0) * 0.1;
  const Eigen::MatrixXd x = random_matrix(10, 3, 9);
  const std::vector<int> y = {0, 1, 2, 1, 0, 2, 2, 1, 0, 1};
  const std::vector<int> batch = {0, 4, 1, 3, 2, 5};
  const std::vector<int> pos = {1, 0, 3, 2, 5, 4};

  const ObjectiveParts full = classifier_objective(clf, x, y, batch, pos, 0.7, 0.5);
  EXPECT_NEAR(full.total, full.ce + 0.7 * full.contrastive, 1e-12);
  const ObjectiveParts ce_only = classifier_objective(clf, x, y, batch, pos, 0.0, 0.5);
  EXPECT_EQ(ce_only.total, ce_only.ce);
  EXPECT_NEAR(ce_only.ce, full.ce, 1e-15);

  auto total_at = [&](const FeatureClassifier& c) { return classifier_objective(c, x, y, batch, pos, 0.7, 0.5).total; };
  auto check = [&](Eigen::MatrixXd FeatureClassifier::*field, const Eigen::MatrixXd& grad) {
    double worst = 0, scale = 0;
    for (int r = 0; r < grad.rows(); ++r)
      for (int c = 0; c < grad.cols(); ++c) {
        FeatureClassifier p = clf, m = clf;
        (p.*field)(r, c) += 1e-6;
        (m.*field)(r, c) -= 1e-6;
        const double fd = (total_at(p) - total_at(m)) / 2e-6;
        worst = std::max(worst, std::fabs(fd - grad(r, c)));
        scale = std::max(scale, std::fabs(fd));
      }
    EXPECT_LT(worst, 1e-4 * scale);
  };
  check(&FeatureClassifier::W1, full.gW1);
  check(&FeatureClassifier::W2, full.gW2);
  for (int k = 0; k < 5; ++k) {
    FeatureClassifier p = clf, m = clf;
    p.b1(k) += 1e-6;
    m.b1(k) -= 1e-6;
    EXPECT_NEAR(full.gb1(k), (total_at(p) - total_at(m)) / 2e-6, 1e-6);
  }
  for (int k = 0; k < 3; ++k) {
    FeatureClassifier p = clf, m = clf;
    p.b2(k) += 1e-6;
    m.b2(k) -= 1e-6;
    EXPECT_NEAR(full.gb2(k), (total_at(p) - total_at(m)) / 2e-6, 1e-6);
  }
}

TEST(MitigationConfig, Validation) {
  MitigationConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MitigationConfig{};
  c.lambda = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MitigationConfig{};
  c.test_fraction = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Classifier, SeparatesContrastiveClasses) {
  const LabeledFeatureSet set = contrastive_set(TaskId::C, 80, 3);
  MitigationConfig c;
  c.epochs = 300;
  c.seed = 1;
  const ClassifierResult r = train_classifier(set, c);
  EXPECT_GT(r.test.overall(), 0.9);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  const ClassifierResult again = train_classifier(set, c);
  EXPECT_EQ(again.loss_history, r.loss_history);
  const json rep = classifier_report_json(r, c);
  EXPECT_TRUE(rep.contains("test_accuracy"));

  const FeatureClassifier back = FeatureClassifier::from_json(r.classifier.to_json());
  for (const FeatureRecord& rec : set.records) EXPECT_EQ(back.predict(rec), r.classifier.predict(rec));
  json bad = r.classifier.to_json();
  bad["b2"] = std::vector<double>{0.0};
  EXPECT_THROW(FeatureClassifier::from_json(bad), ConfigError);
}

TEST(Labeled, CsvRoundTrip) {
  const LabeledFeatureSet set = contrastive_set(TaskId::D, 5, 4);
  testutil::TempDir tmp("labeled");
  write_labeled_csv(tmp / "labeled.csv", set);
  const LabeledFeatureSet back = read_labeled_csv(tmp / "labeled.csv");
  EXPECT_EQ(back.task, TaskId::D);
  EXPECT_EQ(back.labels, set.labels);
  ASSERT_EQ(back.records.size(), set.records.size());
  for (size_t i = 0; i < set.records.size(); ++i) EXPECT_NEAR(back.records[i].ratio, set.records[i].ratio, 1e-12);
}

TEST(Filter, OracleIsSoundAndMonotone) {
  GenerateOptions o;
  o.seed = 12;
  for (TaskId task : kAllTasks) {
    const auto recs = features_of(generate_perturbed(task, 80, 0.0, 0.05, o), task);
    size_t prev = 0;
    for (double eps : {0.005, 0.01, 0.05, 0.2}) {
      const FilterReport f = filter_records(recs, task, eps);
      EXPECT_EQ(f.variant, "oracle");
      for (const FeatureRecord& r : f.kept_records) EXPECT_TRUE(fine_ok(r.ratio, task, eps));
      for (const FeatureRecord& r : recs)
        if (r.valid && std::find(f.kept.begin(), f.kept.end(), r.source) == f.kept.end()) {
          EXPECT_FALSE(fine_ok(r.ratio, task, eps));
        }
      EXPECT_EQ(f.kept.size() + f.rejected.size(), recs.size());
      EXPECT_GE(f.kept.size(), prev);
      prev = f.kept.size();
    }
  }
}

TEST(Filter, OracleKeepsExactSetAndReducesPerturbedError) {
  GenerateOptions o;
  o.seed = 13;
  const auto exact = features_of(generate_dataset(TaskId::B, 60, o), TaskId::B);
  EXPECT_EQ(filter_records(exact, TaskId::B, 0.01).kept.size(), 60u);

  const auto noisy = features_of(generate_perturbed(TaskId::C, 300, 0.0, 0.05, o), TaskId::C);
  const FilterReport f = filter_records(noisy, TaskId::C, 0.01);
  ASSERT_TRUE(f.after.has_value());
  EXPECT_LT(f.after->error, f.before.error);
  const json j = filter_report_json(f);
  EXPECT_EQ(j["variant"], "oracle");
}

TEST(Filter, ClassifierKeepsPredictedConformingRecords) {
  const LabeledFeatureSet set = contrastive_set(TaskId::C, 60, 5);
  MitigationConfig c;
  c.epochs = 300;
  const ClassifierResult r = train_classifier(set, c);
  const FilterReport f = filter_records(set.records, TaskId::C, 0.01, &r.classifier);
  EXPECT_EQ(f.variant, "classifier");
  for (const FeatureRecord& rec : f.kept_records) EXPECT_EQ(r.classifier.predict(rec), 1);
  int class1 = 0;
  for (int l : set.labels) class1 += l == 1;
  EXPECT_NEAR(static_cast<double>(f.kept.size()), class1, 0.1 * class1);
}

TEST(Filter, DirectoryOutputs) {
  testutil::TempDir tmp("filter");
  GenerateOptions o;
  o.seed = 2;
  write_dataset(generate_perturbed(TaskId::A, 40, 0.0, 0.05, o), tmp / "data");
  const FilterReport f = filter_directory(tmp / "data", TaskId::A, 0.01, EvalConfig{});
  write_filter_outputs(f, tmp / "out");
  EXPECT_TRUE(std::filesystem::exists(tmp / "out" / "kept.txt"));
  EXPECT_TRUE(std::filesystem::exists(tmp / "out" / "rejected.txt"));
  const json rep = read_json_file(tmp / "out" / "filter_report.json");
  EXPECT_EQ(rep["n_kept"].get<int>() + rep["n_rejected"].get<int>(), 40);
}

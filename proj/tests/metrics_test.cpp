#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "nascore/metrics.hpp"
#include "nascore/report.hpp"
#include "nascore/verify.hpp"

using namespace nascore;

namespace {

Prediction logits_for(std::size_t true_class, std::size_t guess, std::size_t fold = 0) {
  Prediction p{"v", fold, true_class, std::vector<Scalar>(kClassCount, 0.0)};
  p.outputs[guess] = 2.0;
  return p;
}

Prediction score_for(std::size_t true_class, Scalar score, std::size_t fold = 0) {
  return {"v", fold, true_class, {score}};
}

void expect_throws_code(const std::function<void()>& fn, ErrorCode code) {
  try {
    fn();
    ADD_FAILURE() << "no exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(Argmax, LowestIndexWinsTies) {
  const std::vector<Scalar> v{1, 3, 3, 2};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(Accuracy, Examples) {
  std::vector<Prediction> all;
  for (std::size_t c = 0; c < kClassCount; ++c) all.push_back(logits_for(c, c));
  EXPECT_EQ(accuracy(all), 1.0);
  for (std::size_t c = 5; c < kClassCount; ++c) all[c] = logits_for(c, 0);
  EXPECT_EQ(accuracy(all), 0.625);
  expect_throws_code([] { accuracy({}); }, ErrorCode::kEmptySet);
}

TEST(Accuracy, ShiftInvariant) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto set = random_prediction_set(s);
    const Scalar acc = accuracy(set), f1 = f1_macro(set);
    for (auto& p : set)
      for (auto& x : p.outputs) x += 17.25;
    EXPECT_EQ(accuracy(set), acc);
    EXPECT_EQ(f1_macro(set), f1);
  }
}

TEST(F1, PerfectPredictionsScoreOne) {
  std::vector<Prediction> all;
  for (std::size_t c = 0; c < kClassCount; ++c) all.push_back(logits_for(c, c));
  EXPECT_DOUBLE_EQ(f1_macro(all), 1.0);
}

TEST(F1, OneClassWithTwoTruePositivesOneFalsePositiveOneFalseNegative) {
  // Class 0: TP=2, FP=1 (a class-1 video predicted 0), FN=1 (a class-0 video predicted 1).
  const std::vector<Prediction> set{logits_for(0, 0), logits_for(0, 0), logits_for(1, 0), logits_for(0, 1)};
  // Class 1: TP=0, FP=1, FN=1 -> 0. Other classes absent -> 0.
  EXPECT_NEAR(f1_macro(set), (4.0 / 6.0) / 8.0, 1e-15);
}

TEST(F1, MatchesConfusionOracle) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto set = random_prediction_set(s);
    EXPECT_NEAR(f1_macro(set), oracle::confusion_f1_macro(set), 1e-12);
  }
}

TEST(Auc, PairCountingExamples) {
  EXPECT_EQ(pairwise_auc(std::vector<Scalar>{0.9, 0.8}, std::vector<Scalar>{0.3, 0.2}), 1.0);
  EXPECT_EQ(pairwise_auc(std::vector<Scalar>{0.9, 0.2}, std::vector<Scalar>{0.8, 0.3}), 0.5);
  EXPECT_EQ(pairwise_auc(std::vector<Scalar>{0.4, 0.4}, std::vector<Scalar>{0.4, 0.4, 0.4}), 0.5);
  expect_throws_code([] { pairwise_auc(std::vector<Scalar>{}, std::vector<Scalar>{0.1}); }, ErrorCode::kDegenerate);
}

TEST(Auc, MatchesThresholdSweep) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    std::vector<Scalar> pos(1 + rng.below(20)), neg(1 + rng.below(20));
    for (auto& x : pos) x = static_cast<Scalar>(rng.below(6)) / 5.0;  // coarse, so ties occur
    for (auto& x : neg) x = rng.uniform();
    EXPECT_NEAR(pairwise_auc(pos, neg), oracle::threshold_sweep_auc(pos, neg), 1e-9);
  }
}

TEST(Auc, InvariantUnderIncreasingTransforms) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s + 1000);
    std::vector<Scalar> pos(2 + rng.below(10)), neg(2 + rng.below(10));
    for (auto& x : pos) x = rng.uniform(-1, 2);
    for (auto& x : neg) x = rng.uniform(-2, 1);
    const Scalar base = pairwise_auc(pos, neg);
    for (auto transform : {+[](Scalar x) { return 2 * x + 1; }, +[](Scalar x) { return std::exp(x); }}) {
      std::vector<Scalar> tp, tn;
      for (Scalar x : pos) tp.push_back(transform(x));
      for (Scalar x : neg) tn.push_back(transform(x));
      EXPECT_NEAR(pairwise_auc(tp, tn), base, 1e-12);
    }
  }
}

TEST(Auc, DegenerateClassesAreExcluded) {
  // Only classes 0 and 1 present: classes 2..7 have no positives.
  const std::vector<Prediction> set{logits_for(0, 0), logits_for(1, 1), logits_for(0, 1)};
  const AucResult r = roc_auc(set);
  EXPECT_EQ(r.excluded, (std::vector<std::size_t>{2, 3, 4, 5, 6, 7}));
  EXPECT_TRUE(r.per_class[0].has_value());
  EXPECT_FALSE(r.per_class[5].has_value());
  EXPECT_NEAR(r.macro, (*r.per_class[0] + *r.per_class[1]) / 2, 1e-15);

  const std::vector<Prediction> one_class{logits_for(3, 3), logits_for(3, 1)};
  expect_throws_code([&] { roc_auc(one_class); }, ErrorCode::kDegenerate);
}

TEST(Auc, PermutedLogitsGiveTiedScores) {
  Prediction a{"a", 0, 0, {1, 0, 2, 0, 0, 0, 0, 0.5}}, b{"b", 0, 1, {1, 0.5, 0, 0, 0, 0, 2, 0}};
  EXPECT_EQ(class_probabilities(a)[0], class_probabilities(b)[0]);
}

TEST(Mse, Examples) {
  const std::vector<Prediction> one{logits_for(6, 7)};  // Medication predicted as Blood taking
  EXPECT_NEAR(nas_mse(one, Method::kIndirect), (5.60 - 4.30) * (5.60 - 4.30), 1e-12);
  std::vector<Prediction> perfect, exact;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    perfect.push_back(logits_for(c, c));
    exact.push_back(score_for(c, avg_nas(c)));
  }
  EXPECT_EQ(nas_mse(perfect, Method::kIndirect), 0.0);
  EXPECT_EQ(nas_mse(exact, Method::kDirect), 0.0);
  const std::vector<Prediction> off{score_for(0, 14.07), score_for(1, 2.80)};
  EXPECT_NEAR(nas_mse(off, Method::kDirect), 2.0, 1e-12);
  expect_throws_code([] { nas_mse({}, Method::kDirect); }, ErrorCode::kEmptySet);
}

TEST(Mse, IndirectValuesStayInTable) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    for (const auto& p : random_prediction_set(s)) {
      const Scalar nas = predicted_nas(p, Method::kIndirect);
      EXPECT_TRUE(std::any_of(kActivityTable.begin(), kActivityTable.end(),
                              [&](const Activity& a) { return a.average_nas == nas; }));
    }
  }
}

TEST(Mse, WrongOutputWidthIsRejected) {
  const std::vector<Prediction> direct{score_for(0, 1.0)};
  expect_throws_code([&] { nas_mse(direct, Method::kIndirect); }, ErrorCode::kInvalidArgument);
  expect_throws_code([&] { accuracy(direct); }, ErrorCode::kInvalidArgument);
}

TEST(Aggregate, Examples) {
  MetricsRecord a{0.5, 0.6, 0.4, 10.0, {}}, b{0.7, 0.8, 0.6, 20.0, {3}};
  const std::vector<MetricsRecord> two{a, b};
  const MetricsRecord m = aggregate_folds(two);
  EXPECT_DOUBLE_EQ(*m.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(*m.roc_auc, 0.7);
  EXPECT_DOUBLE_EQ(*m.f1_macro, 0.5);
  EXPECT_DOUBLE_EQ(m.mse, 15.0);
  EXPECT_EQ(m.auc_excluded, std::vector<std::size_t>{3});
  const MetricsRecord exact{0.5, 0.625, 0.25, 4.0, {}};
  const std::vector<MetricsRecord> same{exact, exact, exact};
  EXPECT_EQ(aggregate_folds(same), exact);
  const std::vector<MetricsRecord> single{b};
  EXPECT_EQ(aggregate_folds(single), b);
  expect_throws_code([] { aggregate_folds({}); }, ErrorCode::kEmptySet);
}

TEST(Evaluate, DirectRecordsCarryOnlyMse) {
  const std::vector<Prediction> set{score_for(0, 12.0, 0), score_for(1, 3.0, 1)};
  const auto folds = evaluate_by_fold(set, Method::kDirect);
  ASSERT_EQ(folds.size(), 2u);
  EXPECT_FALSE(folds[0].accuracy.has_value());
  EXPECT_NEAR(folds[0].mse, 0.07 * 0.07, 1e-12);
  EXPECT_NEAR(folds[1].mse, 0.2 * 0.2, 1e-12);
}

TEST(Oracles, VerifySuitePasses) {
  const auto outcomes = check_metric_oracles();
  for (const auto& o : outcomes) EXPECT_TRUE(o.passed) << o.name << ": " << o.detail;
  for (const auto& o : check_output_space()) EXPECT_TRUE(o.passed) << o.name << ": " << o.detail;
}

// ---------------------------------------------------------------- report

namespace {

StoredRun fake_run(ModelVariant model, Method method, const std::string& digest, std::uint64_t seed) {
  StoredRun run;
  run.directory = std::string(to_string(model)) + "-" + std::string(to_string(method));
  run.config.model.variant = model;
  run.config.train.method = method;
  run.config.model.head = method == Method::kIndirect ? HeadKind::kClassify8 : HeadKind::kRegress1;
  run.manifest_digest = digest;
  Rng rng(seed);
  for (std::size_t i = 0; i < 40; ++i) {
    const std::size_t cls = i % kClassCount;
    Prediction p{"v" + std::to_string(i), i % 5, cls, {}};
    if (method == Method::kIndirect) {
      for (std::size_t c = 0; c < kClassCount; ++c) p.outputs.push_back(rng.uniform(-1, 1) + (c == cls ? 0.7 : 0.0));
    } else {
      p.outputs.push_back(avg_nas(cls) + rng.uniform(-3, 3));
    }
    run.predictions.push_back(p);
  }
  return run;
}

std::vector<StoredRun> six_runs(const std::string& digest = "abc") {
  std::vector<StoredRun> runs;
  std::uint64_t seed = 0;
  for (Method m : {Method::kDirect, Method::kIndirect})
    for (ModelVariant v : {ModelVariant::kMicroCnnRnn, ModelVariant::kMiniMvit, ModelVariant::kMicroR2plus1d})
      runs.push_back(fake_run(v, m, digest, ++seed));
  return runs;
}

}  // namespace

TEST(Report, SixRowsInTableOrder) {
  const Report r = build_report(six_runs());
  ASSERT_EQ(r.rows.size(), 6u);
  EXPECT_EQ(r.rows[0].method, Method::kIndirect);
  EXPECT_EQ(r.rows[0].model, ModelVariant::kMiniMvit);
  EXPECT_EQ(r.rows[2].model, ModelVariant::kMicroCnnRnn);
  EXPECT_EQ(r.rows[3].method, Method::kDirect);
  EXPECT_EQ(r.rows[0].per_fold.size(), 5u);
  EXPECT_EQ(r.corpus_digest, "abc");
}

TEST(Report, RoundTripsExactly) {
  const Report r = build_report(six_runs());
  const std::string text = format_report(r);
  EXPECT_EQ(parse_report(text), r);
  EXPECT_EQ(format_report(parse_report(text)), text);
}

TEST(Report, DirectRowsHaveNoClassificationFields) {
  const std::string text = format_report(build_report(six_runs()));
  const auto direct = text.substr(text.find("\"direct\""), text.find("\"provenance\"") - text.find("\"direct\""));
  EXPECT_EQ(direct.find("accuracy"), std::string::npos);
  EXPECT_EQ(direct.find("roc_auc"), std::string::npos);
  EXPECT_NE(direct.find("\"mse\""), std::string::npos);
  EXPECT_NE(text.find("\"corpus_digest\": \"abc\""), std::string::npos);
}

TEST(Report, SingleRun) {
  const std::vector<StoredRun> one{fake_run(ModelVariant::kMicroR2plus1d, Method::kIndirect, "d", 3)};
  EXPECT_EQ(build_report(one).rows.size(), 1u);
}

TEST(Report, IncompatibleRunsAreRefused) {
  auto runs = six_runs();
  runs[4].manifest_digest = "other";
  expect_throws_code([&] { build_report(runs); }, ErrorCode::kIncompatibleRuns);
  auto dup = six_runs();
  dup.push_back(dup.front());
  expect_throws_code([&] { build_report(dup); }, ErrorCode::kIncompatibleRuns);
  expect_throws_code([] { build_report({}); }, ErrorCode::kEmptySet);
}

TEST(Report, MalformedTextIsRejected) {
  expect_throws_code([] { parse_report("{"); }, ErrorCode::kFormat);
  expect_throws_code([] { parse_report("{\"indirect\": {}}"); }, ErrorCode::kFormat);
}

TEST(Report, EmitWritesFile) {
  const auto path = std::filesystem::temp_directory_path() / "nascore_report_test" / "report.json";
  std::filesystem::remove_all(path.parent_path());
  const Report r = build_report(six_runs());
  emit_report(r, path);
  EXPECT_EQ(parse_report(read_text_file(path.string())), r);
  std::filesystem::remove_all(path.parent_path());
}

#include "nascore/verify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "nascore/datagen.hpp"
#include "nascore/dataset.hpp"
#include "nascore/metrics.hpp"

namespace nascore {

std::string_view to_string(Suite suite) {
  switch (suite) {
    case Suite::kGradcheck: return "gradcheck";
    case Suite::kMetricsOracle: return "metrics-oracle";
    case Suite::kPrepCounts: return "prep-counts";
    case Suite::kAll: return "all";
  }
  return "?";
}

Suite parse_suite(std::string_view text) {
  for (Suite s : {Suite::kGradcheck, Suite::kMetricsOracle, Suite::kPrepCounts, Suite::kAll})
    if (to_string(s) == text) return s;
  throw Error(ErrorCode::kInvalidArgument, "unknown suite '" + std::string(text) + "'");
}

std::vector<CheckOutcome> run_suite(Suite suite) {
  std::vector<CheckOutcome> out;
  auto append = [&](std::vector<CheckOutcome> more) { out.insert(out.end(), more.begin(), more.end()); };
  if (suite == Suite::kGradcheck || suite == Suite::kAll) append(check_gradients());
  if (suite == Suite::kMetricsOracle || suite == Suite::kAll) {
    append(check_metric_oracles());
    append(check_output_space());
  }
  if (suite == Suite::kPrepCounts || suite == Suite::kAll) append(check_prep_counts());
  return out;
}

bool all_passed(std::span<const CheckOutcome> outcomes) {
  return std::all_of(outcomes.begin(), outcomes.end(), [](const CheckOutcome& o) { return o.passed; });
}

// ---------------------------------------------------------------- gradients

ModelConfig micro_model_config(ModelVariant variant, HeadKind head, std::uint64_t seed) {
  ModelConfig c;
  c.variant = variant;
  c.head = head;
  c.height = 8;
  c.width = 8;
  c.seed = seed;
  c.stage_dims = {4, 8};
  c.blocks_per_stage = {1, 1};
  c.kv_pool_stride = {1, 2, 2};
  c.conv_channels = {3, 4};
  c.hidden_size = 5;
  return c;
}

CheckReport model_grad_check(ModelVariant variant, HeadKind head, std::uint64_t seed, std::size_t samples) {
  auto model = build_model(micro_model_config(variant, head, seed));
  Rng jitter(derive_seed(seed, "jitter"));
  for (auto& p : model->parameters()) {
    if (!p.name.ends_with(".bias") && !p.name.ends_with(".beta")) continue;
    for (auto& x : p.value.mutable_data()) x = jitter.uniform(-0.1, 0.1);
  }

  Rng rng(derive_seed(seed, "batch"));
  std::vector<Scalar> pixels(2 * 16 * 8 * 8);
  for (auto& x : pixels) x = rng.uniform();
  const Tensor batch = Tensor::from_data({2, 16, 8, 8}, std::move(pixels));
  const std::vector<std::size_t> classes{seed % kClassCount, (seed + 3) % kClassCount};
  const Tensor targets = Tensor::from_data({2, 1}, {avg_nas(classes[0]), avg_nas(classes[1])});
  auto loss = [&] {
    const Tensor out = model->forward(batch);
    return head == HeadKind::kClassify8 ? cross_entropy(out, classes) : squared_error_sum(out, targets);
  };

  std::vector<Tensor> leaves;
  std::size_t total = 0;
  for (const auto& p : model->parameters()) {
    leaves.push_back(p.value);
    total += p.value.numel();
  }
  std::vector<Coordinate> coords;
  Rng pick(derive_seed(seed, "coords"));
  for (std::size_t i = 0; i < samples; ++i) {
    std::size_t flat = pick.below(total), leaf = 0;
    while (flat >= leaves[leaf].numel()) flat -= leaves[leaf++].numel();
    coords.push_back({leaf, flat});
  }
  return finite_difference_check(loss, leaves, coords);
}

std::vector<CheckOutcome> check_gradients() {
  std::vector<CheckOutcome> out;
  for (OpKind kind : all_op_kinds()) {
    Scalar worst = 0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 1; seed <= kGradientSeeds; ++seed) {
      const CheckReport r = grad_check(kind, default_check_shapes(kind), seed);
      worst = std::max(worst, r.max_rel_error);
      checked += r.checked;
    }
    out.push_back({"gradcheck/op/" + std::string(op_name(kind)), checked > 0 && worst < kOpTolerance,
                   fmt::format("max rel err {:.3e} over {} partials", worst, checked)});
  }
  for (ModelVariant v : {ModelVariant::kMiniMvit, ModelVariant::kMicroR2plus1d, ModelVariant::kMicroCnnRnn}) {
    for (HeadKind h : {HeadKind::kClassify8, HeadKind::kRegress1}) {
      Scalar worst = 0;
      std::size_t checked = 0;
      for (std::uint64_t seed = 1; seed <= kGradientSeeds; ++seed) {
        const CheckReport r = model_grad_check(v, h, seed);
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
      }
      out.push_back({fmt::format("gradcheck/model/{}/{}", to_string(v), to_string(h)),
                     checked == kGradientSeeds * kSampledModelCoordinates && worst < kModelTolerance,
                     fmt::format("max rel err {:.3e} over {} parameters", worst, checked)});
    }
  }
  return out;
}

// ---------------------------------------------------------------- metrics

std::vector<Prediction> random_prediction_set(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "prediction-set"));
  const auto n = static_cast<std::size_t>(rng.between(8, 64));
  const std::uint64_t style = rng.below(3);  // 0 smooth, 1 coarse logits, 2 repeated rows
  std::vector<Prediction> set(n);
  for (std::size_t i = 0; i < n; ++i) {
    Prediction& p = set[i];
    p.video_id = fmt::format("v{:03}", i);
    p.true_class = rng.below(kClassCount);
    p.outputs.resize(kClassCount);
    for (Scalar& x : p.outputs) x = style == 1 ? static_cast<Scalar>(rng.between(-2, 2)) : rng.uniform(-3.0, 3.0);
    if (style == 2 && i > 0 && rng.below(3) == 0) p.outputs = set[rng.below(i)].outputs;
  }
  // At least two classes present, so some class has both positives and negatives.
  if (std::all_of(set.begin(), set.end(), [&](const Prediction& p) { return p.true_class == set[0].true_class; }))
    set[1].true_class = (set[0].true_class + 1) % kClassCount;
  return set;
}

namespace oracle {

Scalar confusion_f1_macro(std::span<const Prediction> predictions) {
  std::array<std::array<std::size_t, kClassCount>, kClassCount> confusion{};  // [true][predicted]
  for (const Prediction& p : predictions) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kClassCount; ++c)
      if (p.outputs[c] > p.outputs[best]) best = c;
    ++confusion[p.true_class][best];
  }
  Scalar sum = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < kClassCount; ++k) {
      row += confusion[c][k];
      col += confusion[k][c];
    }
    const std::size_t tp = confusion[c][c], fp = col - tp, fn = row - tp;
    const Scalar denom = static_cast<Scalar>(2 * tp + fp + fn);
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<Scalar>(tp) / denom;
  }
  return sum / static_cast<Scalar>(kClassCount);
}

Scalar threshold_sweep_auc(std::span<const Scalar> positives, std::span<const Scalar> negatives) {
  std::set<Scalar, std::greater<>> thresholds(positives.begin(), positives.end());
  thresholds.insert(negatives.begin(), negatives.end());
  Scalar area = 0, fpr_prev = 0, tpr_prev = 0;
  for (Scalar t : thresholds) {
    const auto tp = std::count_if(positives.begin(), positives.end(), [t](Scalar s) { return s >= t; });
    const auto fp = std::count_if(negatives.begin(), negatives.end(), [t](Scalar s) { return s >= t; });
    const Scalar tpr = static_cast<Scalar>(tp) / static_cast<Scalar>(positives.size());
    const Scalar fpr = static_cast<Scalar>(fp) / static_cast<Scalar>(negatives.size());
    area += (fpr - fpr_prev) * (tpr + tpr_prev) / 2.0;
    fpr_prev = fpr;
    tpr_prev = tpr;
  }
  return area;
}

Scalar threshold_sweep_auc_macro(std::span<const Prediction> predictions) {
  Scalar sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    std::vector<Scalar> pos, neg;
    for (const Prediction& p : predictions) (p.true_class == c ? pos : neg).push_back(class_probabilities(p)[c]);
    if (pos.empty() || neg.empty()) continue;
    sum += threshold_sweep_auc(pos, neg);
    ++used;
  }
  return sum / static_cast<Scalar>(used);
}

Scalar counted_accuracy(std::span<const Prediction> predictions) {
  std::size_t correct = 0;
  for (const Prediction& p : predictions) {
    bool top = true;
    for (std::size_t c = 0; c < kClassCount && top; ++c)
      top = c < p.true_class ? p.outputs[c] < p.outputs[p.true_class] : p.outputs[c] <= p.outputs[p.true_class];
    correct += top;
  }
  return static_cast<Scalar>(correct) / static_cast<Scalar>(predictions.size());
}

}  // namespace oracle

std::vector<CheckOutcome> check_metric_oracles(std::size_t sets) {
  Scalar f1_gap = 0, auc_gap = 0;
  std::size_t accuracy_mismatches = 0;
  for (std::size_t s = 0; s < sets; ++s) {
    const auto set = random_prediction_set(s);
    f1_gap = std::max(f1_gap, std::abs(f1_macro(set) - oracle::confusion_f1_macro(set)));
    auc_gap = std::max(auc_gap, std::abs(roc_auc_macro(set) - oracle::threshold_sweep_auc_macro(set)));
    accuracy_mismatches += accuracy(set) != oracle::counted_accuracy(set);
  }
  return {
      {"metrics-oracle/f1", f1_gap <= 1e-12, fmt::format("max gap {:.3e} over {} sets", f1_gap, sets)},
      {"metrics-oracle/auc", auc_gap <= 1e-9, fmt::format("max gap {:.3e} over {} sets", auc_gap, sets)},
      {"metrics-oracle/accuracy", accuracy_mismatches == 0,
       fmt::format("{} mismatches over {} sets", accuracy_mismatches, sets)},
  };
}

std::vector<CheckOutcome> check_output_space() {
  std::set<Scalar> table;
  for (const Activity& a : kActivityTable) table.insert(a.average_nas);
  std::size_t outside = 0, total = 0;
  for (std::size_t s = 0; s < kOracleSets; ++s) {
    for (const Prediction& p : random_prediction_set(s)) {
      outside += !table.contains(predicted_nas(p, Method::kIndirect));
      ++total;
    }
  }

  std::vector<Prediction> perfect, exact_scores;
  for (std::size_t i = 0; i < 4 * kClassCount; ++i) {
    Prediction p{fmt::format("v{:03}", i), 0, i % kClassCount, std::vector<Scalar>(kClassCount, -1.0)};
    p.outputs[p.true_class] = 1.0;
    perfect.push_back(p);
    p.outputs = {avg_nas(p.true_class)};
    exact_scores.push_back(p);
  }
  const Scalar indirect = nas_mse(perfect, Method::kIndirect), direct = nas_mse(exact_scores, Method::kDirect);
  return {
      {"output-space/indirect-in-table", outside == 0, fmt::format("{} of {} outside the table", outside, total)},
      {"output-space/perfect-indirect-mse", indirect == 0.0, fmt::format("mse {}", indirect)},
      {"output-space/perfect-direct-mse", direct == 0.0, fmt::format("mse {}", direct)},
  };
}

// ---------------------------------------------------------------- preprocessing

std::vector<CheckOutcome> check_prep_counts() {
  const CorpusPlan plan = plan_corpus(0);
  std::vector<CheckOutcome> out;

  const auto occurrences = plan.occurrences();
  bool before_ok = true;
  for (std::size_t a = 0; a < kNasActivityCount; ++a) {
    const std::size_t want = a < kObservedActivityCount ? kObservedActivities[a].occurrences_before : 0;
    before_ok = before_ok && occurrences[a] == want;
  }
  out.push_back({"prep-counts/before-column", before_ok, "per-activity occurrence totals"});

  std::vector<LabelRecord> records;
  for (const PlanEntry& e : plan.entries) records.push_back({e.video_id, e.labels, {}});
  for (ReductionRule rule : {ReductionRule::kExactlyOneBeforeDrop, ReductionRule::kExactlyOneAfterDrop}) {
    ReductionOptions options;
    options.rule = rule;
    const Manifest m = reduce_labels(records, options);
    bool counts_ok = m.entries.size() == 458;
    std::string got;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      counts_ok = counts_ok && m.class_counts[c] == kObservedActivities[kActivityTable[c].column].occurrences_after;
      got += (c ? "," : "") + std::to_string(m.class_counts[c]);
    }
    out.push_back({fmt::format("prep-counts/{}", rule == ReductionRule::kExactlyOneBeforeDrop ? "before" : "after"),
                   counts_ok, fmt::format("{} videos [{}]", m.entries.size(), got)});
  }
  return out;
}

}  // namespace nascore

#include "nascore/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace nascore {

namespace {

void require_nonempty(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw Error(ErrorCode::kEmptySet, "empty prediction set");
}

void require_class(const Prediction& p) {
  if (p.true_class >= kClassCount)
    throw Error(ErrorCode::kClassOutOfRange, "video " + p.video_id + ": class " + std::to_string(p.true_class));
}

}  // namespace

std::size_t argmax(std::span<const Scalar> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptySet, "argmax of nothing");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::size_t predicted_class(const Prediction& prediction) {
  if (prediction.outputs.size() != kClassCount)
    throw Error(ErrorCode::kInvalidArgument, "video " + prediction.video_id + ": expected " +
                                                 std::to_string(kClassCount) + " logits, got " +
                                                 std::to_string(prediction.outputs.size()));
  return argmax(prediction.outputs);
}

Scalar predicted_nas(const Prediction& prediction, Method method) {
  if (method == Method::kIndirect) return avg_nas(predicted_class(prediction));
  if (prediction.outputs.size() != 1)
    throw Error(ErrorCode::kInvalidArgument, "video " + prediction.video_id + ": direct prediction needs 1 score");
  return prediction.outputs[0];
}

std::array<Scalar, kClassCount> class_probabilities(const Prediction& prediction) {
  predicted_class(prediction);  // validates the width
  const Scalar top = *std::max_element(prediction.outputs.begin(), prediction.outputs.end());
  std::array<Scalar, kClassCount> probs{};
  for (std::size_t c = 0; c < kClassCount; ++c) probs[c] = std::exp(prediction.outputs[c] - top);
  // Summing in sorted order keeps the normaliser independent of class order,
  // so rows that are permutations of each other yield exactly tied scores.
  std::array<Scalar, kClassCount> sorted = probs;
  std::sort(sorted.begin(), sorted.end());
  Scalar total = 0;
  for (Scalar v : sorted) total += v;
  for (Scalar& v : probs) v /= total;
  return probs;
}

Scalar accuracy(std::span<const Prediction> predictions) {
  require_nonempty(predictions);
  std::size_t correct = 0;
  for (const Prediction& p : predictions) correct += predicted_class(p) == p.true_class;
  return static_cast<Scalar>(correct) / static_cast<Scalar>(predictions.size());
}

Scalar f1_macro(std::span<const Prediction> predictions) {
  require_nonempty(predictions);
  std::array<std::size_t, kClassCount> tp{}, fp{}, fn{};
  for (const Prediction& p : predictions) {
    require_class(p);
    const std::size_t guess = predicted_class(p);
    if (guess == p.true_class) {
      ++tp[guess];
    } else {
      ++fp[guess];
      ++fn[p.true_class];
    }
  }
  Scalar sum = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) sum += static_cast<Scalar>(2 * tp[c]) / static_cast<Scalar>(denom);
  }
  return sum / static_cast<Scalar>(kClassCount);
}

Scalar pairwise_auc(std::span<const Scalar> positives, std::span<const Scalar> negatives) {
  if (positives.empty() || negatives.empty())
    throw Error(ErrorCode::kDegenerate, "AUC needs at least one positive and one negative");
  // Sweep ascending score groups; each positive beats every negative below it
  // and ties with the negatives in its own group. Counts stay exact in doubles.
  std::vector<std::pair<Scalar, bool>> scored;
  scored.reserve(positives.size() + negatives.size());
  for (Scalar s : positives) scored.emplace_back(s, true);
  for (Scalar s : negatives) scored.emplace_back(s, false);
  std::sort(scored.begin(), scored.end());
  Scalar wins = 0;
  std::size_t negatives_below = 0;
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    for (; j < scored.size() && scored[j].first == scored[i].first; ++j) (scored[j].second ? pos : neg)++;
    wins += static_cast<Scalar>(pos * negatives_below) + 0.5 * static_cast<Scalar>(pos * neg);
    negatives_below += neg;
    i = j;
  }
  return wins / (static_cast<Scalar>(positives.size()) * static_cast<Scalar>(negatives.size()));
}

AucResult roc_auc(std::span<const Prediction> predictions) {
  require_nonempty(predictions);
  std::vector<std::array<Scalar, kClassCount>> probs;
  probs.reserve(predictions.size());
  for (const Prediction& p : predictions) {
    require_class(p);
    probs.push_back(class_probabilities(p));
  }
  AucResult result;
  Scalar sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    std::vector<Scalar> pos, neg;
    for (std::size_t i = 0; i < predictions.size(); ++i)
      (predictions[i].true_class == c ? pos : neg).push_back(probs[i][c]);
    if (pos.empty() || neg.empty()) {
      result.excluded.push_back(c);
      continue;
    }
    result.per_class[c] = pairwise_auc(pos, neg);
    sum += *result.per_class[c];
    ++used;
  }
  if (used == 0) throw Error(ErrorCode::kDegenerate, "every class lacks positives or negatives");
  result.macro = sum / static_cast<Scalar>(used);
  return result;
}

Scalar roc_auc_macro(std::span<const Prediction> predictions) { return roc_auc(predictions).macro; }

Scalar nas_mse(std::span<const Prediction> predictions, Method method) {
  require_nonempty(predictions);
  Scalar sum = 0;
  for (const Prediction& p : predictions) {
    require_class(p);
    const Scalar diff = predicted_nas(p, method) - avg_nas(p.true_class);
    sum += diff * diff;
  }
  return sum / static_cast<Scalar>(predictions.size());
}

MetricsRecord evaluate(std::span<const Prediction> predictions, Method method) {
  MetricsRecord r;
  r.mse = nas_mse(predictions, method);
  if (method == Method::kIndirect) {
    r.accuracy = accuracy(predictions);
    r.f1_macro = f1_macro(predictions);
    AucResult auc = roc_auc(predictions);
    r.roc_auc = auc.macro;
    r.auc_excluded = std::move(auc.excluded);
  }
  return r;
}

MetricsRecord aggregate_folds(std::span<const MetricsRecord> folds) {
  if (folds.empty()) throw Error(ErrorCode::kEmptySet, "no fold records to aggregate");
  const auto n = static_cast<Scalar>(folds.size());
  auto mean_of = [&](std::optional<Scalar> MetricsRecord::*field) -> std::optional<Scalar> {
    const bool present = (folds.front().*field).has_value();
    Scalar sum = 0;
    for (const MetricsRecord& r : folds) {
      if ((r.*field).has_value() != present)
        throw Error(ErrorCode::kInvalidArgument, "fold records mix indirect and direct metrics");
      if (present) sum += *(r.*field);
    }
    return present ? std::optional<Scalar>(sum / n) : std::nullopt;
  };
  MetricsRecord out;
  out.accuracy = mean_of(&MetricsRecord::accuracy);
  out.roc_auc = mean_of(&MetricsRecord::roc_auc);
  out.f1_macro = mean_of(&MetricsRecord::f1_macro);
  std::set<std::size_t> excluded;
  for (const MetricsRecord& r : folds) {
    out.mse += r.mse;
    excluded.insert(r.auc_excluded.begin(), r.auc_excluded.end());
  }
  out.mse /= n;
  out.auc_excluded.assign(excluded.begin(), excluded.end());
  return out;
}

std::vector<MetricsRecord> evaluate_by_fold(std::span<const Prediction> predictions, Method method) {
  require_nonempty(predictions);
  std::map<std::size_t, std::vector<Prediction>> by_fold;
  for (const Prediction& p : predictions) by_fold[p.fold].push_back(p);
  std::vector<MetricsRecord> out;
  out.reserve(by_fold.size());
  for (const auto& [fold, members] : by_fold) out.push_back(evaluate(members, method));
  return out;
}

}  // namespace nascore

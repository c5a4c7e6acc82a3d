#pragma once

#include <optional>
#include <span>
#include <vector>

#include "nascore/nas_table.hpp"
#include "nascore/prediction.hpp"

namespace nascore {

/// Index of the largest value; the lowest index wins exact ties.
std::size_t argmax(std::span<const Scalar> values);

/// Predicted class of an indirect prediction. Throws kInvalidArgument when
/// the prediction does not carry 8 logits.
std::size_t predicted_class(const Prediction& prediction);

/// NAS implied by a prediction: the class's Average NAS for indirect, the raw
/// score for direct.
Scalar predicted_nas(const Prediction& prediction, Method method);

/// Softmax of the 8 logits; the scores ranked by the AUC.
std::array<Scalar, kClassCount> class_probabilities(const Prediction& prediction);

// Each metric throws kEmptySet on an empty prediction set.

Scalar accuracy(std::span<const Prediction> predictions);

/// Mean over all 8 classes of 2TP / (2TP + FP + FN); a class whose
/// denominator is zero scores 0.
Scalar f1_macro(std::span<const Prediction> predictions);

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Throws kDegenerate if either side is empty.
Scalar pairwise_auc(std::span<const Scalar> positives, std::span<const Scalar> negatives);

struct AucResult {
  Scalar macro = 0;
  std::array<std::optional<Scalar>, kClassCount> per_class{};
  /// Classes with no positives or no negatives, left out of the mean.
  std::vector<std::size_t> excluded;
};

/// One-vs-rest AUC on softmax probabilities, averaged over the classes that
/// have both positives and negatives. Throws kDegenerate if none do.
AucResult roc_auc(std::span<const Prediction> predictions);
Scalar roc_auc_macro(std::span<const Prediction> predictions);

Scalar nas_mse(std::span<const Prediction> predictions, Method method);

/// Direct-method records leave the classification fields empty.
struct MetricsRecord {
  std::optional<Scalar> accuracy;
  std::optional<Scalar> roc_auc;
  std::optional<Scalar> f1_macro;
  Scalar mse = 0;
  std::vector<std::size_t> auc_excluded;

  bool operator==(const MetricsRecord&) const = default;
};

MetricsRecord evaluate(std::span<const Prediction> predictions, Method method);

/// Unweighted mean of each field. Throws kEmptySet on no records.
MetricsRecord aggregate_folds(std::span<const MetricsRecord> folds);

/// Metrics of each fold (grouped by the prediction's fold index, ascending).
std::vector<MetricsRecord> evaluate_by_fold(std::span<const Prediction> predictions, Method method);

}  // namespace nascore

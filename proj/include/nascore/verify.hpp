#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nascore/gradcheck.hpp"
#include "nascore/models.hpp"
#include "nascore/prediction.hpp"

namespace nascore {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

enum class Suite { kGradcheck, kMetricsOracle, kPrepCounts, kAll };

std::string_view to_string(Suite suite);
/// Throws kInvalidArgument for unknown names.
Suite parse_suite(std::string_view text);

std::vector<CheckOutcome> run_suite(Suite suite);
bool all_passed(std::span<const CheckOutcome> outcomes);

inline constexpr Scalar kOpTolerance = 1e-4;
inline constexpr Scalar kModelTolerance = 1e-3;
inline constexpr std::size_t kGradientSeeds = 5;
inline constexpr std::size_t kSampledModelCoordinates = 20;

/// Every op on `kGradientSeeds` seeds, then every model variant and head.
std::vector<CheckOutcome> check_gradients();

/// Model small enough for finite differences on 8x8 frames.
ModelConfig micro_model_config(ModelVariant variant, HeadKind head, std::uint64_t seed);

/// End-to-end check of `samples` random parameter coordinates on a 2-clip
/// batch. Bias and shift parameters are first moved off zero, since zero
/// biases leave ReLU inputs exactly on the kink wherever activations vanish.
CheckReport model_grad_check(ModelVariant variant, HeadKind head, std::uint64_t seed,
                             std::size_t samples = kSampledModelCoordinates);

inline constexpr std::size_t kOracleSets = 200;

/// Seeded indirect prediction set with 8 to 64 videos; some sets use coarse
/// logits or repeated rows so ties occur.
std::vector<Prediction> random_prediction_set(std::uint64_t seed);

namespace oracle {

/// Macro F1 from a full 8x8 confusion matrix.
Scalar confusion_f1_macro(std::span<const Prediction> predictions);
/// Trapezoid area under the ROC curve traced by sweeping every distinct score
/// as a threshold.
Scalar threshold_sweep_auc(std::span<const Scalar> positives, std::span<const Scalar> negatives);
Scalar threshold_sweep_auc_macro(std::span<const Prediction> predictions);
Scalar counted_accuracy(std::span<const Prediction> predictions);

}  // namespace oracle

/// Library metrics against the oracles on `sets` random prediction sets.
std::vector<CheckOutcome> check_metric_oracles(std::size_t sets = kOracleSets);

/// Indirect NAS stays in the 8-value table; perfect predictions score MSE 0.
std::vector<CheckOutcome> check_output_space();

/// Plans the seed-0 corpus and reduces its labels under both rules.
std::vector<CheckOutcome> check_prep_counts();

}  // namespace nascore

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nascore/dataset.hpp"
#include "nascore/models.hpp"
#include "nascore/prediction.hpp"

namespace nascore {

HeadKind head_for(Method method);

struct TrainConfig {
  Scalar learning_rate = 3e-5;
  std::size_t batch_size = 3;
  std::size_t epochs = 30;
  std::size_t folds = 5;
  Method method = Method::kIndirect;
  std::uint64_t seed = 0;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;

  /// Throws kInvalidConfig.
  void validate() const;
};

std::string to_text(const TrainConfig& config);
TrainConfig train_config_from_map(const std::map<std::string, std::string>& values);

/// Model and training settings of one run, stored as one key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

std::string to_text(const RunConfig& config);
RunConfig run_config_from_text(std::string_view text);

struct FoldSplit {
  std::size_t fold = 0;
  std::vector<std::size_t> train;       // manifest entry indices
  std::vector<std::size_t> validation;  // ascending manifest order
};

struct FoldPlan {
  std::vector<FoldSplit> folds;
  /// False when some class had fewer than k members and the plan fell back
  /// to a plain shuffled k-fold.
  bool stratified = true;
};

/// Members of each class are shuffled and dealt to folds round-robin; the
/// dealing position carries over from one class to the next.
FoldPlan stratified_kfold(const Manifest& manifest, std::size_t k, std::uint64_t seed);

/// Σ_b −log softmax(logits_b)[class_b]. Throws kClassOutOfRange.
Tensor loss_indirect(const Tensor& logits, std::span<const std::size_t> classes);
/// Σ_b (pred_b − target_b)². Throws kShapeMismatch.
Tensor loss_direct(const Tensor& pred, std::span<const Scalar> targets);

struct AdamState {
  std::vector<std::vector<Scalar>> m;
  std::vector<std::vector<Scalar>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated
/// gradient. A non-finite gradient throws kNonFiniteGradient before any
/// parameter changes.
void adam_step(std::span<NamedParameter> params, AdamState& state, const TrainConfig& config);

struct FoldResult {
  std::size_t fold = 0;
  std::vector<Scalar> history;  // mean training loss per sample, per epoch
  std::vector<Prediction> predictions;
  std::unique_ptr<Model> model;
};

/// Sampled clips aligned with the manifest entries.
struct Dataset {
  Manifest manifest;
  std::vector<SampledClip> clips;
};

Dataset load_dataset(const Manifest& manifest, std::size_t jobs = 1);

using ProgressFn = std::function<void(const std::string&)>;

std::uint64_t fold_seed(std::uint64_t run_seed, std::size_t fold);

FoldResult train_fold(const Dataset& data, const FoldSplit& split, const RunConfig& config,
                      const ProgressFn& progress = {});

struct ExperimentRun {
  RunConfig config;
  std::string manifest_digest;
  bool stratified = true;
  std::vector<FoldResult> folds;

  /// Validation predictions of every fold, in fold order.
  std::vector<Prediction> predictions() const;
};

/// Trains every fold; `jobs` folds run concurrently. Results do not depend on
/// `jobs`.
ExperimentRun run_experiment(const Dataset& data, const RunConfig& config, std::size_t jobs = 1,
                             const ProgressFn& progress = {});

inline constexpr const char* kRunConfigName = "config.txt";
inline constexpr const char* kRunInfoName = "run.txt";
inline constexpr const char* kPredictionsName = "predictions.csv";
inline constexpr const char* kHistoryName = "history.csv";

std::string format_predictions(std::span<const Prediction> predictions);
std::vector<Prediction> parse_predictions(std::string_view text);
std::string format_history(const ExperimentRun& run);

/// Writes config, run info, histories, predictions and one checkpoint per fold.
void write_run(const ExperimentRun& run, const std::filesystem::path& directory);

/// What eval needs from a run directory.
struct StoredRun {
  std::filesystem::path directory;
  RunConfig config;
  std::string manifest_digest;
  std::vector<Prediction> predictions;
};

StoredRun read_run(const std::filesystem::path& directory);

}  // namespace nascore

#include "nascore/training.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace nascore {

std::string_view to_string(Method method) { return method == Method::kIndirect ? "indirect" : "direct"; }

Method parse_method(std::string_view text) {
  if (text == "indirect") return Method::kIndirect;
  if (text == "direct") return Method::kDirect;
  throw Error(ErrorCode::kInvalidConfig, "unknown method '" + std::string(text) + "'");
}

HeadKind head_for(Method method) { return method == Method::kIndirect ? HeadKind::kClassify8 : HeadKind::kRegress1; }

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); }

std::string format_real(Scalar value, std::chars_format fmt = std::chars_format::general) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, fmt);
  if (ec != std::errc()) throw Error(ErrorCode::kFormat, "cannot format real");
  return std::string(buf, ptr);
}

Scalar parse_real(const std::string& key, std::string_view text) {
  Scalar v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) invalid(key + ": not a real number: '" + std::string(text) + "'");
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) invalid(key + ": not an unsigned integer: '" + std::string(text) + "'");
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) invalid("learning rate must be > 0");
  if (batch_size < 1) invalid("batch size must be >= 1");
  if (folds < 2) invalid("folds must be >= 2");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) invalid("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) invalid("Adam epsilon must be > 0");
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "train.method=" << to_string(c.method) << '\n'
      << "train.learning_rate=" << format_real(c.learning_rate, std::chars_format::fixed) << '\n'
      << "train.batch_size=" << c.batch_size << '\n'
      << "train.epochs=" << c.epochs << '\n'
      << "train.folds=" << c.folds << '\n'
      << "train.seed=" << c.seed << '\n'
      << "train.adam_beta1=" << format_real(c.beta1) << '\n'
      << "train.adam_beta2=" << format_real(c.beta2) << '\n'
      << "train.adam_epsilon=" << format_real(c.epsilon) << '\n';
  return out.str();
}

TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "train.method") c.method = parse_method(value);
    else if (key == "train.learning_rate") c.learning_rate = parse_real(key, value);
    else if (key == "train.batch_size") c.batch_size = parse_unsigned(key, value);
    else if (key == "train.epochs") c.epochs = parse_unsigned(key, value);
    else if (key == "train.folds") c.folds = parse_unsigned(key, value);
    else if (key == "train.seed") c.seed = parse_unsigned(key, value);
    else if (key == "train.adam_beta1") c.beta1 = parse_real(key, value);
    else if (key == "train.adam_beta2") c.beta2 = parse_real(key, value);
    else if (key == "train.adam_epsilon") c.epsilon = parse_real(key, value);
    else if (key.starts_with("train.")) invalid("unknown key '" + key + "'");
  }
  return c;
}

std::string to_text(const RunConfig& config) { return to_text(config.model) + to_text(config.train); }

RunConfig run_config_from_text(std::string_view text) {
  const auto kv = parse_key_values(text);
  for (const auto& [key, value] : kv) {
    if (!key.starts_with("model.") && !key.starts_with("train.")) invalid("unknown key '" + key + "'");
  }
  return {model_config_from_map(kv), train_config_from_map(kv)};
}

// ---------------------------------------------------------------------------
// Folds

FoldPlan stratified_kfold(const Manifest& manifest, std::size_t k, std::uint64_t seed) {
  const std::size_t n = manifest.entries.size();
  if (k < 2) invalid("k-fold needs k >= 2, got " + std::to_string(k));
  if (k > n) invalid("k = " + std::to_string(k) + " exceeds corpus size " + std::to_string(n));

  std::array<std::vector<std::size_t>, kClassCount> members;
  for (std::size_t i = 0; i < n; ++i) members.at(manifest.entries[i].class_index).push_back(i);

  FoldPlan plan;
  for (const auto& m : members) {
    if (!m.empty() && m.size() < k) plan.stratified = false;
  }
  std::vector<std::vector<std::size_t>> groups;
  if (plan.stratified) {
    groups.assign(members.begin(), members.end());
  } else {
    groups.emplace_back(n);
    for (std::size_t i = 0; i < n; ++i) groups[0][i] = i;
  }

  std::vector<std::size_t> fold_of(n);
  std::size_t dealer = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Rng rng(derive_seed(seed, derive_seed(g, "fold-shuffle")));
    rng.shuffle(groups[g]);
    for (auto idx : groups[g]) fold_of[idx] = dealer++ % k;
  }
  plan.folds.resize(k);
  for (std::size_t f = 0; f < k; ++f) plan.folds[f].fold = f;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) (f == fold_of[i] ? plan.folds[f].validation : plan.folds[f].train).push_back(i);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Losses and optimizer

Tensor loss_indirect(const Tensor& logits, std::span<const std::size_t> classes) {
  for (auto c : classes) {
    if (c >= kClassCount) throw Error(ErrorCode::kClassOutOfRange, "class " + std::to_string(c));
  }
  return cross_entropy(logits, classes);
}

Tensor loss_direct(const Tensor& pred, std::span<const Scalar> targets) {
  if (pred.rank() != 2 || pred.dim(1) != 1 || pred.dim(0) != targets.size()) {
    throw Error(ErrorCode::kShapeMismatch, "direct loss: prediction " + shape_to_string(pred.shape()) + " vs " +
                                               std::to_string(targets.size()) + " targets");
  }
  return squared_error_sum(pred, Tensor::from_data({targets.size(), 1}, {targets.begin(), targets.end()}));
}

void adam_step(std::span<NamedParameter> params, AdamState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match parameters");
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (Scalar g : p.value.grad()) {
      if (!std::isfinite(g)) throw Error(ErrorCode::kNonFiniteGradient, "parameter '" + p.name + "'");
    }
  }
  ++state.t;
  const Scalar b1 = config.beta1, b2 = config.beta2;
  const Scalar c1 = 1.0 - std::pow(b1, static_cast<Scalar>(state.t));
  const Scalar c2 = 1.0 - std::pow(b2, static_cast<Scalar>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) throw Error(ErrorCode::kShapeMismatch, "optimizer state for '" + params[i].name + "'");
    const bool has = params[i].value.has_grad();
    const auto g = has ? params[i].value.grad() : std::span<const Scalar>{};
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const Scalar gj = has ? g[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const Scalar mhat = m[j] / c1;
      const Scalar vhat = v[j] / c2;
      theta[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Data

Dataset load_dataset(const Manifest& manifest, std::size_t jobs) {
  Dataset data;
  data.manifest = manifest;
  data.clips.resize(manifest.entries.size());
  std::atomic<std::size_t> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < data.clips.size(); i = next++) {
      try {
        const auto& e = manifest.entries[i];
        data.clips[i] = sample_frames(read_tvf(e.clip_path), e.video_id);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  for (const auto& c : data.clips) {
    if (c.frames.shape() != data.clips.front().frames.shape()) {
      throw Error(ErrorCode::kGeometryMismatch, c.video_id + ": frame geometry differs from " + data.clips.front().video_id);
    }
  }
  return data;
}

namespace {

Tensor stack_clips(const Dataset& data, std::span<const std::size_t> indices) {
  const Shape& s = data.clips.at(indices[0]).frames.shape();
  const std::size_t per = shape_numel(s);
  std::vector<Scalar> values(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = data.clips.at(indices[i]).frames.data();
    std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor::from_data({indices.size(), s[0], s[1], s[2]}, std::move(values));
}

Tensor batch_loss(const Dataset& data, std::span<const std::size_t> indices, const Tensor& out, Method method) {
  if (method == Method::kIndirect) {
    std::vector<std::size_t> classes;
    for (auto i : indices) classes.push_back(data.manifest.entries[i].class_index);
    return loss_indirect(out, classes);
  }
  std::vector<Scalar> targets;
  for (auto i : indices) targets.push_back(avg_nas(data.manifest.entries[i].class_index));
  return loss_direct(out, targets);
}

}  // namespace

std::uint64_t fold_seed(std::uint64_t run_seed, std::size_t fold) { return derive_seed(run_seed, derive_seed(fold, "fold")); }

FoldResult train_fold(const Dataset& data, const FoldSplit& split, const RunConfig& config, const ProgressFn& progress) {
  config.train.validate();
  const std::uint64_t seed = fold_seed(config.train.seed, split.fold);
  ModelConfig mc = config.model;
  mc.head = head_for(config.train.method);
  mc.seed = derive_seed(seed, "init");

  FoldResult result;
  result.fold = split.fold;
  result.model = build_model(mc);
  auto& params = result.model->parameters();
  AdamState adam;
  Rng order_rng(derive_seed(seed, "batches"));
  std::vector<std::size_t> order = split.train;
  const std::size_t bs = config.train.batch_size;

  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    order_rng.shuffle(order);
    Scalar total = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      for (auto& p : params) p.value.zero_grad();
      Tensor loss = batch_loss(data, idx, result.model->forward(stack_clips(data, idx)), config.train.method);
      total += loss.item();
      backward(loss);
      adam_step(params, adam, config.train);
    }
    const Scalar mean_loss = order.empty() ? 0.0 : total / static_cast<Scalar>(order.size());
    result.history.push_back(mean_loss);
    if (progress) {
      progress("fold " + std::to_string(split.fold + 1) + " epoch " + std::to_string(epoch + 1) + "/" +
               std::to_string(config.train.epochs) + " loss " + format_real(mean_loss));
    }
  }
  for (auto& p : params) p.value.zero_grad();

  NoGradGuard no_grad;
  for (std::size_t start = 0; start < split.validation.size(); start += bs) {
    const std::span<const std::size_t> idx(split.validation.data() + start, std::min(bs, split.validation.size() - start));
    const Tensor out = result.model->forward(stack_clips(data, idx));
    const std::size_t width = out.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& e = data.manifest.entries[idx[r]];
      Prediction p{e.video_id, split.fold, e.class_index, {}};
      p.outputs.assign(out.data().begin() + static_cast<std::ptrdiff_t>(r * width),
                       out.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
      result.predictions.push_back(std::move(p));
    }
  }
  return result;
}

std::vector<Prediction> ExperimentRun::predictions() const {
  std::vector<Prediction> out;
  for (const auto& f : folds) out.insert(out.end(), f.predictions.begin(), f.predictions.end());
  return out;
}

ExperimentRun run_experiment(const Dataset& data, const RunConfig& config, std::size_t jobs, const ProgressFn& progress) {
  config.train.validate();
  ExperimentRun run;
  run.config = config;
  run.config.model.head = head_for(config.train.method);
  run.manifest_digest = manifest_digest(data.manifest);
  const FoldPlan plan = stratified_kfold(data.manifest, config.train.folds, derive_seed(config.train.seed, "folds"));
  run.stratified = plan.stratified;
  run.folds.resize(plan.folds.size());

  std::mutex log_mutex;
  ProgressFn locked;
  if (progress) {
    locked = [&](const std::string& msg) {
      std::lock_guard lock(log_mutex);
      progress(msg);
    };
  }
  std::atomic<std::size_t> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t f = next++; f < plan.folds.size(); f = next++) {
      try {
        run.folds[f] = train_fold(data, plan.folds[f], run.config, locked);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, plan.folds.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return run;
}

// ---------------------------------------------------------------------------
// Run directory

std::string format_predictions(std::span<const Prediction> predictions) {
  const std::size_t width = predictions.empty() ? 0 : predictions.front().outputs.size();
  std::string out = "video_id,fold,true_class";
  if (width == 1) {
    out += ",score";
  } else {
    for (std::size_t j = 0; j < width; ++j) out += ",logit" + std::to_string(j);
  }
  out += '\n';
  for (const auto& p : predictions) {
    if (p.outputs.size() != width) throw Error(ErrorCode::kShapeMismatch, p.video_id + ": inconsistent output width");
    out += p.video_id + ',' + std::to_string(p.fold) + ',' + std::to_string(p.true_class);
    for (Scalar v : p.outputs) out += ',' + format_real(v);
    out += '\n';
  }
  return out;
}

std::vector<Prediction> parse_predictions(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("video_id,fold,true_class,")) {
    throw Error(ErrorCode::kFormat, "predictions: bad header");
  }
  const std::size_t width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
  std::vector<Prediction> out;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream row(line);
    std::string f;
    while (std::getline(row, f, ',')) fields.push_back(f);
    if (fields.size() != width + 3) {
      throw Error(ErrorCode::kWrongColumnCount, "predictions line " + std::to_string(line_no));
    }
    Prediction p;
    p.video_id = fields[0];
    try {
      p.fold = parse_unsigned("fold", fields[1]);
      p.true_class = parse_unsigned("true_class", fields[2]);
      for (std::size_t j = 0; j < width; ++j) p.outputs.push_back(parse_real("output", fields[3 + j]));
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedRow, "predictions line " + std::to_string(line_no) + ": " + e.what());
    }
    if (p.true_class >= kClassCount) throw Error(ErrorCode::kClassOutOfRange, "predictions line " + std::to_string(line_no));
    if (!seen.insert(p.video_id).second) throw Error(ErrorCode::kDuplicateVideo, p.video_id);
    out.push_back(std::move(p));
  }
  return out;
}

std::string format_history(const ExperimentRun& run) {
  std::string out = "fold,epoch,mean_loss\n";
  for (const auto& f : run.folds) {
    for (std::size_t e = 0; e < f.history.size(); ++e) {
      out += std::to_string(f.fold) + ',' + std::to_string(e + 1) + ',' + format_real(f.history[e]) + '\n';
    }
  }
  return out;
}

void write_run(const ExperimentRun& run, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + directory.string() + ": " + ec.message());
  if (std::filesystem::exists(directory / kRunInfoName)) {
    throw Error(ErrorCode::kIo, directory.string() + " already holds a run");
  }
  const auto preds = run.predictions();
  const std::string predictions = format_predictions(preds);
  write_text_file((directory / kRunConfigName).string(), to_text(run.config));
  write_text_file((directory / kPredictionsName).string(), predictions);
  write_text_file((directory / kHistoryName).string(), format_history(run));
  std::string checkpoints;
  for (const auto& f : run.folds) {
    const std::string name = "fold" + std::to_string(f.fold + 1) + ".ckpt";
    save_checkpoint(*f.model, directory / name);
    checkpoints += (checkpoints.empty() ? "" : ",") + name;
  }
  std::ostringstream info;
  info << "variant=" << to_string(run.config.model.variant) << '\n'
       << "method=" << to_string(run.config.train.method) << '\n'
       << "manifest_digest=" << run.manifest_digest << '\n'
       << "stratified=" << (run.stratified ? "true" : "false") << '\n'
       << "videos=" << preds.size() << '\n'
       << "checkpoints=" << checkpoints << '\n'
       << "predictions_sha256=" << sha256_hex(predictions) << '\n';
  write_text_file((directory / kRunInfoName).string(), info.str());
}

StoredRun read_run(const std::filesystem::path& directory) {
  StoredRun run;
  run.directory = directory;
  run.config = run_config_from_text(read_text_file((directory / kRunConfigName).string()));
  const auto info = parse_key_values(read_text_file((directory / kRunInfoName).string()));
  const auto get = [&](const std::string& key) {
    auto it = info.find(key);
    if (it == info.end()) throw Error(ErrorCode::kFormat, (directory / kRunInfoName).string() + ": missing " + key);
    return it->second;
  };
  run.manifest_digest = get("manifest_digest");
  const std::string predictions = read_text_file((directory / kPredictionsName).string());
  if (sha256_hex(predictions) != get("predictions_sha256")) {
    throw Error(ErrorCode::kFormat, directory.string() + ": predictions do not match the recorded digest");
  }
  run.predictions = parse_predictions(predictions);
  const std::size_t width = run.config.model.output_width();
  for (const auto& p : run.predictions) {
    if (p.outputs.size() != width) throw Error(ErrorCode::kFormat, directory.string() + ": output width does not match method");
  }
  return run;
}

}  // namespace nascore

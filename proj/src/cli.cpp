#include "nascore/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "nascore/datagen.hpp"
#include "nascore/dataset.hpp"
#include "nascore/report.hpp"
#include "nascore/training.hpp"
#include "nascore/verify.hpp"

namespace nascore {

namespace {

std::size_t default_jobs() {
  if (const char* env = std::getenv("NASCORE_JOBS")) {
    try {
      const unsigned long v = std::stoul(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::string geometry;
  bool smoke = false;
  std::size_t jobs = 1;
};

struct PrepArgs {
  std::string corpus;
  std::string out;
  std::string rule = "before";
  std::size_t min_occurrences = kMinOccurrences;
};

struct TrainArgs {
  std::string manifest;
  std::string model;
  std::string method = "indirect";
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<Scalar> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> folds;
  std::optional<std::size_t> batch_size;
  std::size_t jobs = 1;
};

struct EvalArgs {
  std::vector<std::string> runs;
  std::string out;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const Geometry geometry = parse_geometry(a.geometry.empty() ? (a.smoke ? "24x32" : "72x96") : a.geometry);
  const CorpusPlan plan = a.smoke ? plan_smoke_corpus(a.seed) : plan_corpus(a.seed);
  const auto manifest = write_corpus(plan, a.out, geometry, a.seed, a.jobs);
  out << fmt::format("wrote {} clips ({}x{}) and {}\n", plan.entries.size(), geometry.height, geometry.width,
                     manifest.string());
}

void cmd_prep(const PrepArgs& a, std::ostream& out) {
  const auto records = load_labels(std::filesystem::path(a.corpus) / kLabelManifestName);
  ReductionOptions options;
  options.rule = a.rule == "before" ? ReductionRule::kExactlyOneBeforeDrop : ReductionRule::kExactlyOneAfterDrop;
  options.min_occurrences = a.min_occurrences;
  const Manifest m = reduce_labels(records, options);
  write_prepared_manifest(m, a.out);
  out << fmt::format("{} videos before, {} kept\n", m.total_before, m.total_after);
  for (std::size_t c = 0; c < kClassCount; ++c)
    out << fmt::format("  {} {:<46} {:>4}\n", c, class_name(c), m.class_counts[c]);
}

void cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig config = a.config.empty() ? RunConfig{} : run_config_from_text(read_text_file(a.config));
  config.model.variant = parse_variant(a.model);
  config.train.method = parse_method(a.method);
  config.model.head = head_for(config.train.method);
  if (a.seed) config.train.seed = *a.seed;
  if (a.lr) config.train.learning_rate = *a.lr;
  if (a.epochs) config.train.epochs = *a.epochs;
  if (a.folds) config.train.folds = *a.folds;
  if (a.batch_size) config.train.batch_size = *a.batch_size;

  const Manifest manifest = read_prepared_manifest(a.manifest);
  const Dataset data = load_dataset(manifest, a.jobs);
  const Shape frame_shape = data.clips.front().frames.shape();
  config.model.frames = frame_shape[0];
  config.model.height = frame_shape[1];
  config.model.width = frame_shape[2];
  config.model.validate();
  config.train.validate();

  std::mutex log_mutex;
  const ProgressFn progress = [&](const std::string& line) {
    std::lock_guard lock(log_mutex);
    err << line << '\n';
  };
  const ExperimentRun run = run_experiment(data, config, a.jobs, progress);
  write_run(run, a.out);
  const auto predictions = run.predictions();
  out << fmt::format("trained {} {} on {} videos, {} folds; wrote {}\n", to_string(config.model.variant),
                     to_string(config.train.method), predictions.size(), run.folds.size(), a.out);
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<StoredRun> runs;
  for (const auto& dir : a.runs) runs.push_back(read_run(dir));
  const Report report = build_report(runs);
  emit_report(report, a.out);
  out << format_table(report);
}

bool cmd_verify(const std::string& suite, std::ostream& out) {
  const auto outcomes = run_suite(parse_suite(suite));
  std::size_t failed = 0;
  for (const auto& o : outcomes) {
    out << (o.passed ? "PASS " : "FAIL ") << o.name << ": " << o.detail << '\n';
    failed += !o.passed;
  }
  out << fmt::format("{} checks, {} failed\n", outcomes.size(), failed);
  return failed == 0;
}

bool is_usage_error(ErrorCode code) {
  return code == ErrorCode::kInvalidGeometry || code == ErrorCode::kInvalidConfig;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nursing activity score estimation from thermal video", "nascore"};
  app.require_subcommand(1);
  const std::size_t jobs = default_jobs();

  SynthArgs synth;
  synth.jobs = jobs;
  auto* s = app.add_subcommand("synth", "Generate a synthetic thermal-video corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Corpus seed");
  s->add_option("--geometry", synth.geometry, "Frame size HxW (default 72x96, smoke 24x32)");
  s->add_flag("--smoke", synth.smoke, "Emit the 80-clip separable smoke corpus");
  s->add_option("--jobs", synth.jobs, "Rendering threads")->check(CLI::PositiveNumber);

  PrepArgs prep;
  auto* p = app.add_subcommand("prep", "Reduce corpus labels to the prepared manifest");
  p->add_option("--corpus", prep.corpus, "Corpus directory")->required();
  p->add_option("--out", prep.out, "Prepared manifest file")->required();
  p->add_option("--rule", prep.rule, "Order of the single-label filter and the drop")
      ->check(CLI::IsMember({"before", "after"}));
  p->add_option("--min-occurrences", prep.min_occurrences, "Minimum occurrences of a retained activity");

  TrainArgs train;
  train.jobs = jobs;
  auto* t = app.add_subcommand("train", "Cross-validated training of one model");
  t->add_option("--manifest", train.manifest, "Prepared manifest")->required();
  t->add_option("--model", train.model, "Backbone")->required()->check(CLI::IsMember({"mvit", "r2plus1d", "cnnrnn"}));
  t->add_option("--method", train.method, "Prediction method")->check(CLI::IsMember({"indirect", "direct"}));
  t->add_option("--config", train.config, "key=value file with model.* and train.* settings");
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--seed", train.seed, "Training seed");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--epochs", train.epochs, "Epochs per fold");
  t->add_option("--folds", train.folds, "Cross-validation folds");
  t->add_option("--batch-size", train.batch_size, "Mini-batch size");
  t->add_option("--jobs", train.jobs, "Folds trained concurrently")->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Aggregate run directories into a report");
  e->add_option("--runs", eval.runs, "Run directories")->required()->expected(1, -1);
  e->add_option("--out", eval.out, "Report file")->required();

  std::string suite = "all";
  auto* v = app.add_subcommand("verify", "Run the built-in verification suites");
  v->add_option("--suite", suite, "Suite to run")
      ->check(CLI::IsMember({"gradcheck", "metrics-oracle", "prep-counts", "all"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& error) {
    const int code = app.exit(error, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) cmd_synth(synth, out);
    else if (p->parsed()) cmd_prep(prep, out);
    else if (t->parsed()) cmd_train(train, out, err);
    else if (e->parsed()) cmd_eval(eval, out);
    else if (v->parsed()) return cmd_verify(suite, out) ? kExitOk : kExitFailure;
    return kExitOk;
  } catch (const Error& error) {
    err << "error: " << error.what() << '\n';
    return is_usage_error(error.code()) ? kExitUsage : kExitFailure;
  } catch (const std::exception& error) {
    err << "error: " << error.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace nascore

// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance <work-dir>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "nascore/cli.hpp"
#include "nascore/dataset.hpp"
#include "nascore/report.hpp"
#include "nascore/verify.hpp"

using namespace nascore;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool passed = false;
  std::string detail;
};

Scalar seconds_since(Clock::time_point start) {
  return std::chrono::duration<Scalar>(Clock::now() - start).count();
}

void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  if (run_cli(args, out, err) != kExitOk) {
    std::string cmd;
    for (const auto& a : args) cmd += a + " ";
    throw std::runtime_error("`nascore " + cmd + "` failed: " + err.str());
  }
}

Verdict failures_of(const std::vector<CheckOutcome>& outcomes) {
  std::string failed;
  for (const auto& o : outcomes)
    if (!o.passed) failed += " " + o.name + " (" + o.detail + ")";
  return {failed.empty(), failed.empty() ? fmt::format("{} checks passed", outcomes.size()) : "failed:" + failed};
}

// 1 ------------------------------------------------------------------------

Verdict preprocessing_counts(const fs::path& work) {
  const auto corpus = work / "corpus", prepared = work / "prepared.csv";
  const auto start = Clock::now();
  cli({"synth", "--seed", "0", "--out", corpus.string()});
  cli({"prep", "--corpus", corpus.string(), "--out", prepared.string()});
  const Scalar elapsed = seconds_since(start);

  const auto records = load_labels(corpus / kLabelManifestName);
  bool before_ok = records.size() == kCorpusSize;
  for (std::size_t a = 0; a < kNasActivityCount; ++a) {
    std::size_t n = 0;
    for (const auto& r : records) n += r.flags[a];
    before_ok = before_ok && n == (a < kObservedActivityCount ? kObservedActivities[a].occurrences_before : 0);
  }
  const Manifest m = read_prepared_manifest(prepared);
  const std::array<std::size_t, kClassCount> want{65, 58, 68, 54, 60, 46, 57, 50};
  const bool counts_ok = m.entries.size() == 458 && m.class_counts == want;
  fs::remove_all(corpus);

  std::string got;
  for (std::size_t c = 0; c < kClassCount; ++c) got += (c ? "," : "") + std::to_string(m.class_counts[c]);
  return {before_ok && counts_ok && elapsed < 120.0,
          fmt::format("{} kept [{}], before column {}, {:.1f} s", m.entries.size(), got,
                      before_ok ? "exact" : "MISMATCH", elapsed)};
}

// 2 ------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto start = Clock::now();
  Verdict v = failures_of(check_gradients());
  const Scalar elapsed = seconds_since(start);
  v.passed = v.passed && elapsed < 180.0;
  v.detail += fmt::format(", {} seeds each, {:.1f} s", kGradientSeeds, elapsed);
  return v;
}

// 5 ------------------------------------------------------------------------

Verdict multiscale_shapes() {
  ModelConfig c;
  c.height = 32;
  c.width = 32;
  auto model = build_model(c);
  Rng rng(5);
  std::vector<Scalar> pixels(16 * 32 * 32);
  for (auto& x : pixels) x = rng.uniform();
  ForwardTrace trace;
  {
    NoGradGuard guard;
    model->forward(Tensor::from_data({1, 16, 32, 32}, std::move(pixels)), &trace);
  }
  const std::size_t base = c.stage_dims.front();
  const std::vector<std::array<std::size_t, 4>> want{{8, 8, 8, base}, {8, 4, 4, 2 * base}, {8, 2, 2, 4 * base}};
  std::vector<std::array<std::size_t, 4>> got;
  std::string text;
  for (const auto& g : trace.stages) {
    got.push_back({g.t, g.h, g.w, g.channels});
    text += fmt::format("{}{}x{}x{}/{}", text.empty() ? "" : ", ", g.t, g.h, g.w, g.channels);
  }
  return {got == want, text};
}

// 6 ------------------------------------------------------------------------

Verdict frame_sampling() {
  bool ok = true;
  std::string text;
  for (auto [t, start] : {std::pair<std::size_t, std::size_t>{672, 0}, {676, 2}, {820, 74}}) {
    const auto idx = sample_indices(t);
    bool this_ok = idx.front() == start && idx.back() < t;
    for (std::size_t k = 1; k < idx.size(); ++k) this_ok = this_ok && idx[k] - idx[k - 1] == 42;
    ok = ok && this_ok;
    text += fmt::format("T={} start {}; ", t, idx.front());
  }
  bool rejected = false;
  try {
    sample_indices(671);
  } catch (const Error& e) {
    rejected = e.code() == ErrorCode::kTooShortClip;
  }
  return {ok && rejected, text + (rejected ? "T=671 too-short-clip" : "T=671 NOT rejected")};
}

// 7, 8 ---------------------------------------------------------------------

struct SmokeRun {
  fs::path root;
  std::vector<std::string> run_names;
  Scalar mvit_seconds = 0;
};

const std::vector<std::pair<std::string, std::string>> kSmokeRuns{
    {"mvit", "indirect"},     {"r2plus1d", "indirect"}, {"cnnrnn", "indirect"},
    {"mvit", "direct"},       {"r2plus1d", "direct"},   {"cnnrnn", "direct"},
};

SmokeRun smoke_pipeline(const fs::path& root) {
  SmokeRun s{root, {}, 0};
  fs::remove_all(root);
  cli({"synth", "--smoke", "--seed", "0", "--out", (root / "corpus").string()});
  cli({"prep", "--corpus", (root / "corpus").string(), "--out", (root / "prepared.csv").string(), "--min-occurrences",
       "10"});
  std::vector<std::string> eval{"eval", "--out", (root / "report.json").string(), "--runs"};
  for (const auto& [model, method] : kSmokeRuns) {
    const std::string name = model + "-" + method;
    const auto start = Clock::now();
    cli({"train", "--manifest", (root / "prepared.csv").string(), "--model", model, "--method", method, "--lr", "1e-3",
         "--epochs", "30", "--batch-size", "3", "--folds", "5", "--seed", "0", "--out", (root / name).string()});
    if (name == "mvit-indirect") s.mvit_seconds = seconds_since(start);
    s.run_names.push_back(name);
    eval.push_back((root / name).string());
  }
  cli(eval);
  return s;
}

Verdict learnability(const SmokeRun& s) {
  // Fold-averaged mean training loss of the first and last epoch.
  std::istringstream history(read_text_file((s.root / "mvit-indirect" / kHistoryName).string()));
  std::string line;
  std::getline(history, line);
  std::map<std::size_t, std::vector<Scalar>> by_epoch;
  std::size_t last_epoch = 0;
  while (std::getline(history, line)) {
    std::size_t fold = 0, epoch = 0;
    double loss = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &fold, &epoch, &loss) != 3) continue;
    by_epoch[epoch].push_back(loss);
    last_epoch = std::max(last_epoch, epoch);
  }
  auto mean = [](const std::vector<Scalar>& v) {
    Scalar t = 0;
    for (Scalar x : v) t += x;
    return t / static_cast<Scalar>(v.size());
  };
  const Scalar first = mean(by_epoch.begin()->second), final = mean(by_epoch.at(last_epoch));

  const Report report = parse_report(read_text_file((s.root / "report.json").string()));
  Scalar accuracy = -1;
  for (const auto& row : report.rows)
    if (row.model == ModelVariant::kMiniMvit && row.method == Method::kIndirect) accuracy = *row.mean.accuracy;

  const bool ok = final <= 0.5 * first && accuracy >= 0.375 && s.mvit_seconds < 600.0 && report.rows.size() == 6;
  return {ok, fmt::format("mvit loss {:.4f} -> {:.4f} (ratio {:.4f}), fold-mean accuracy {:.4f}, {:.1f} s; "
                          "{} report rows",
                          first, final, final / first, accuracy, s.mvit_seconds, report.rows.size())};
}

Verdict determinism(const SmokeRun& a, const SmokeRun& b) {
  std::size_t compared = 0;
  std::string differing;
  auto compare = [&](const fs::path& rel) {
    ++compared;
    if (read_text_file((a.root / rel).string()) != read_text_file((b.root / rel).string()))
      differing += " " + rel.string();
  };
  for (const auto& name : a.run_names) compare(fs::path(name) / kPredictionsName);
  compare("report.json");
  return {differing.empty(), differing.empty() ? fmt::format("{} files byte-identical", compared)
                                               : "differing:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <work-dir>\n";
    return kExitUsage;
  }
  const fs::path work = argv[1];
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.passed;
    std::cout << fmt::format("[{}] {} {}: {}", v.passed ? "PASS" : "FAIL", id, name, v.detail) << std::endl;
  };

  report(1, "preprocessing-counts", [&] { return preprocessing_counts(work / "table1"); });
  report(2, "gradient-correctness", gradient_correctness);
  report(3, "metric-oracles", [] { return failures_of(check_metric_oracles(kOracleSets)); });
  report(4, "output-space", [] { return failures_of(check_output_space()); });
  report(5, "multiscale-shapes", multiscale_shapes);
  report(6, "frame-sampling", frame_sampling);

  std::optional<SmokeRun> first, second;
  report(7, "training-smoke", [&] {
    first = smoke_pipeline(work / "smoke-a");
    return learnability(*first);
  });
  report(8, "determinism", [&] {
    if (!first) throw std::runtime_error("first smoke pipeline did not complete");
    second = smoke_pipeline(work / "smoke-b");
    return determinism(*first, *second);
  });

  std::cout << fmt::format("{} of 8 criteria passed", 8 - failures) << std::endl;
  return failures == 0 ? kExitOk : kExitFailure;
}

#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nascore/metrics.hpp"
#include "nascore/models.hpp"
#include "nascore/training.hpp"

namespace nascore {

struct ReportRow {
  ModelVariant model = ModelVariant::kMiniMvit;
  Method method = Method::kIndirect;
  std::string run;  // run directory name
  std::map<std::string, std::string> config;
  MetricsRecord mean;
  std::vector<MetricsRecord> per_fold;

  bool operator==(const ReportRow&) const = default;
};

/// One row per (model, method), indirect rows first.
struct Report {
  std::string corpus_digest;
  std::vector<ReportRow> rows;

  bool operator==(const Report&) const = default;
};

/// Throws kEmptySet for no runs and kIncompatibleRuns when the runs were
/// trained on different manifests or repeat a (model, method) pair.
Report build_report(std::span<const StoredRun> runs);

/// JSON with `indirect`, `direct` and `provenance` sections. Direct rows carry
/// only `mse`.
std::string format_report(const Report& report);
/// Inverse of format_report. Throws kFormat.
Report parse_report(std::string_view text);
/// Throws kIo.
void emit_report(const Report& report, const std::filesystem::path& path);

/// Fixed-width summary table for terminals.
std::string format_table(const Report& report);

}  // namespace nascore

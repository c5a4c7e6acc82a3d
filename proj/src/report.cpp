#include "nascore/report.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace nascore {

namespace {

using Json = nlohmann::ordered_json;

constexpr ModelVariant kVariantOrder[] = {ModelVariant::kMiniMvit, ModelVariant::kMicroR2plus1d,
                                          ModelVariant::kMicroCnnRnn};
constexpr const char* kClassificationFields[] = {"accuracy", "roc_auc", "f1_macro"};

std::optional<Scalar> MetricsRecord::*classification_field(std::string_view name) {
  if (name == "accuracy") return &MetricsRecord::accuracy;
  if (name == "roc_auc") return &MetricsRecord::roc_auc;
  return &MetricsRecord::f1_macro;
}

Json metrics_json(const ReportRow& row) {
  Json out;
  const bool indirect = row.method == Method::kIndirect;
  if (indirect)
    for (const char* f : kClassificationFields) out[f] = *(row.mean.*classification_field(f));
  out["mse"] = row.mean.mse;
  if (indirect) out["auc_excluded_classes"] = row.mean.auc_excluded;

  Json folds;
  if (indirect) {
    for (const char* f : kClassificationFields) {
      Json values = Json::array();
      for (const MetricsRecord& r : row.per_fold) values.push_back(*(r.*classification_field(f)));
      folds[f] = values;
    }
  }
  Json mse = Json::array();
  for (const MetricsRecord& r : row.per_fold) mse.push_back(r.mse);
  folds["mse"] = mse;
  if (indirect) {
    Json excluded = Json::array();
    for (const MetricsRecord& r : row.per_fold) excluded.push_back(r.auc_excluded);
    folds["auc_excluded_classes"] = excluded;
  }
  out["per_fold"] = folds;
  return out;
}

void read_metrics(const Json& j, ReportRow& row) {
  const bool indirect = row.method == Method::kIndirect;
  const Json& folds = j.at("per_fold");
  const std::size_t n = folds.at("mse").size();
  row.per_fold.assign(n, MetricsRecord{});
  for (std::size_t i = 0; i < n; ++i) row.per_fold[i].mse = folds.at("mse").at(i).get<Scalar>();
  row.mean.mse = j.at("mse").get<Scalar>();
  if (!indirect) {
    for (const char* f : kClassificationFields)
      if (j.contains(f)) throw Error(ErrorCode::kFormat, std::string("direct row carries ") + f);
    return;
  }
  for (const char* f : kClassificationFields) {
    row.mean.*classification_field(f) = j.at(f).get<Scalar>();
    const Json& values = folds.at(f);
    if (values.size() != n) throw Error(ErrorCode::kFormat, std::string("per_fold.") + f + " length differs");
    for (std::size_t i = 0; i < n; ++i) row.per_fold[i].*classification_field(f) = values.at(i).get<Scalar>();
  }
  row.mean.auc_excluded = j.at("auc_excluded_classes").get<std::vector<std::size_t>>();
  const Json& excluded = folds.at("auc_excluded_classes");
  for (std::size_t i = 0; i < n; ++i) row.per_fold[i].auc_excluded = excluded.at(i).get<std::vector<std::size_t>>();
}

std::string fmt_metric(const std::optional<Scalar>& v) { return v ? fmt::format("{:.4f}", *v) : "-"; }

}  // namespace

Report build_report(std::span<const StoredRun> runs) {
  if (runs.empty()) throw Error(ErrorCode::kEmptySet, "no runs to evaluate");
  Report report;
  report.corpus_digest = runs.front().manifest_digest;
  std::set<std::pair<Method, ModelVariant>> seen;
  for (const StoredRun& run : runs) {
    if (run.manifest_digest != report.corpus_digest)
      throw Error(ErrorCode::kIncompatibleRuns, run.directory.string() + " was trained on a different manifest (" +
                                                    run.manifest_digest + " vs " + report.corpus_digest + ")");
    ReportRow row;
    row.model = run.config.model.variant;
    row.method = run.config.train.method;
    if (!seen.emplace(row.method, row.model).second)
      throw Error(ErrorCode::kIncompatibleRuns,
                  fmt::format("more than one run of {} {}", to_string(row.model), to_string(row.method)));
    row.run = run.directory.filename().string();
    if (row.run.empty()) row.run = run.directory.parent_path().filename().string();
    row.config = parse_key_values(to_text(run.config));
    row.per_fold = evaluate_by_fold(run.predictions, row.method);
    row.mean = aggregate_folds(row.per_fold);
    report.rows.push_back(std::move(row));
  }
  std::ranges::sort(report.rows, {}, [](const ReportRow& r) {
    return std::pair(r.method, std::ranges::find(kVariantOrder, r.model) - std::begin(kVariantOrder));
  });
  return report;
}

std::string format_report(const Report& report) {
  Json doc;
  Json runs = Json::array();
  for (Method method : {Method::kIndirect, Method::kDirect}) {
    Json section = Json::object();
    for (const ReportRow& row : report.rows) {
      if (row.method != method) continue;
      section[std::string(to_string(row.model))] = metrics_json(row);
      Json config = Json::object();
      for (const auto& [k, v] : row.config) config[k] = v;
      runs.push_back({{"model", to_string(row.model)},
                      {"method", to_string(row.method)},
                      {"run", row.run},
                      {"seed", row.config.contains("train.seed") ? row.config.at("train.seed") : ""},
                      {"config", config}});
    }
    doc[std::string(to_string(method))] = section;
  }
  doc["provenance"] = {
      {"corpus_digest", report.corpus_digest},
      {"averaging", "unweighted mean over folds"},
      {"f1_zero_division", 0},
      {"argmax_ties", "lowest class index"},
      {"auc_scores", "softmax probability, one-vs-rest, ties credited 0.5"},
      {"runs", runs},
  };
  return doc.dump(2) + "\n";
}

Report parse_report(std::string_view text) {
  try {
    const Json doc = Json::parse(text);
    Report report;
    report.corpus_digest = doc.at("provenance").at("corpus_digest").get<std::string>();
    std::map<std::pair<std::string, std::string>, const Json*> run_info;
    for (const Json& r : doc.at("provenance").at("runs"))
      run_info[{r.at("method").get<std::string>(), r.at("model").get<std::string>()}] = &r;
    for (Method method : {Method::kIndirect, Method::kDirect}) {
      const std::string section(to_string(method));
      for (const auto& [model, metrics] : doc.at(section).items()) {
        ReportRow row;
        row.model = parse_variant(model);
        row.method = method;
        const auto it = run_info.find({section, model});
        if (it == run_info.end()) throw Error(ErrorCode::kFormat, "no provenance for " + section + " " + model);
        row.run = it->second->at("run").get<std::string>();
        for (const auto& [k, v] : it->second->at("config").items()) row.config[k] = v.get<std::string>();
        read_metrics(metrics, row);
        report.rows.push_back(std::move(row));
      }
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("malformed report: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kFormat) throw;
    throw Error(ErrorCode::kFormat, std::string("malformed report: ") + e.what());
  }
}

void emit_report(const Report& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  write_text_file(path.string(), format_report(report));
}

std::string format_table(const Report& report) {
  std::ostringstream out;
  out << fmt::format("{:<9} {:<15} {:>9} {:>8} {:>9} {:>9}\n", "method", "model", "accuracy", "roc_auc", "f1_macro",
                     "mse");
  for (const ReportRow& r : report.rows) {
    out << fmt::format("{:<9} {:<15} {:>9} {:>8} {:>9} {:>9.3f}\n", to_string(r.method), to_string(r.model),
                       fmt_metric(r.mean.accuracy), fmt_metric(r.mean.roc_auc), fmt_metric(r.mean.f1_macro),
                       r.mean.mse);
  }
  return out.str();
}

}  // namespace nascore

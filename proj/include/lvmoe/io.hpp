#pragma once

// Table ingestion, preprocessing into a Dataset, run orchestration, and
// result serialization.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lvmoe/core_model.hpp"
#include "lvmoe/em_engine.hpp"
#include "lvmoe/estimators.hpp"
#include "lvmoe/simulation.hpp"

namespace lvmoe {

enum class ColumnKind { Numeric, Categorical };

struct CovariateRole {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  bool operator==(const CovariateRole&) const = default;
};

/// Which columns hold the outcome, the treatment, and the covariates.
struct Roles {
  std::string outcome;
  std::string treatment;
  std::vector<CovariateRole> covariates;  // in design order
};

/// Parses a roles document:
///   {"outcome": "y", "treatment": "arm",
///    "covariates": {"age": "numeric", "school": "categorical"}}
Roles parse_roles(const std::string& text);
Roles load_roles(const std::filesystem::path& path);

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line per row
  Roles roles;
  // Dense treatment labels in first-appearance order; -1 where missing.
  std::vector<int> treatment_labels;
  std::vector<std::string> treatment_levels;

  std::size_t column(const std::string& name) const;
};

/// True for the cell spellings treated as missing: "", NA, NaN, nan, ".".
bool is_missing(const std::string& cell);

RawTable ingest_text(const std::string& text, const Roles& roles,
                     char delimiter = ',');
RawTable ingest(const std::filesystem::path& path, const Roles& roles,
                std::optional<char> delimiter = std::nullopt);

struct RareCategory {
  std::string column;
  std::string category;
  std::vector<double> proportions;  // per treatment label
};

struct Standardization {
  std::string column;
  double mean = 0.0;
  double sd = 1.0;
};

struct OneHotEncoding {
  std::string column;
  std::string reference;
  std::vector<std::string> levels;  // encoded (non-reference), column order
};

struct PreprocessReport {
  std::size_t n_input = 0;
  std::size_t n_dropped_missing = 0;
  std::size_t n_dropped_rare = 0;
  std::vector<RareCategory> rare;
  std::vector<Standardization> standardization;
  std::vector<OneHotEncoding> one_hot;
  std::vector<std::string> design_columns;
  std::vector<std::string> treatment_levels;
  std::vector<std::size_t> kept_rows;  // indices into RawTable::rows
};

struct PreprocessResult {
  Dataset data;
  PreprocessReport report;
};

/// Complete cases, rare-category removal (proportion <= threshold within
/// any treatment), standardization of numeric covariates with population
/// variance, and one-hot encoding with the most frequent level as reference.
PreprocessResult preprocess(const RawTable& table, double rare_threshold = 0.05);

struct RunConfig {
  VersionStructure versions;
  EmConfig em;
  int resamples = 100;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::optional<double> floor;
  ContrastSet contrasts = ContrastSet::WithinTreatment;
  std::filesystem::path out_dir;  // empty: write nothing
  unsigned threads = 0;
};

/// Extra content carried by the structured report.
struct ReportContext {
  const PreprocessReport* preprocess = nullptr;
  const std::vector<EmTrace>* traces = nullptr;
  const BootstrapResult* bootstrap = nullptr;
};

enum class ReportFormat { Tabular, Structured };

ReportFormat report_format_from_string(const std::string& name);

void emit_report(const EstimandReport& report, ReportFormat format,
                 const std::filesystem::path& path,
                 const ReportContext& context = {});
std::string format_report(const EstimandReport& report, ReportFormat format,
                          const ReportContext& context = {});
EstimandReport parse_report(const std::string& text);
EstimandReport load_report(const std::filesystem::path& path);

struct RunResult {
  FittedModel fit;
  EstimandReport report;
};

/// Fits the model and computes every estimand; writes estimates.tsv and
/// report.json into config.out_dir when it is set.
RunResult run_fit(const RunConfig& config, const Dataset& data,
                  const PreprocessReport* preprocess = nullptr);

struct BootstrapRun {
  RunResult point;
  BootstrapResult bootstrap;
};

/// Point estimates plus percentile intervals; additionally writes
/// replicates.tsv.
BootstrapRun run_bootstrap(const RunConfig& config, const Dataset& data,
                           const PreprocessReport* preprocess = nullptr);

/// Within-treatment metrics with columns p, snr, n, t, v, v2, bias, sd,
/// failures.
void write_metrics(const MonteCarloResult& result,
                   const std::filesystem::path& path);
/// One row per replicate and contrast, for external plotting.
void write_replicates(const MonteCarloResult& result,
                      const std::filesystem::path& path);

/// "2,2,3" -> {2,2,3}.
VersionStructure parse_versions(const std::string& list);

/// %.17g.
std::string format_double(double value);

}  // namespace lvmoe

#pragma once

// Plug-in Horvitz-Thompson estimation of version-specific potential outcome
// means, treatment-level averages, contrasts, and percentile bootstrap
// intervals around them.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lvmoe/core_model.hpp"
#include "lvmoe/em_engine.hpp"

namespace lvmoe {

/// Everything the estimators need from a fit: parameters for all
/// treatments plus the responsibilities of each treatment's units, in the
/// order of make_slice(data, t).
struct FittedModel {
  ModelParams params;
  std::vector<Responsibilities> resp;
  std::vector<EmTrace> traces;  // empty for plugged-in parameters
  LogitFit treatment_fit;
};

/// Treatment model, EM with restarts per treatment, canonicalization, and
/// responsibilities recomputed at the canonical parameters. Treatment t's
/// EM seed is derived from (config.seed, t).
FittedModel fit_model(const Dataset& data, const VersionStructure& versions,
                      const EmConfig& config);

/// Wraps known parameters (e.g. the true DGP) with their posterior
/// responsibilities.
FittedModel plug_in_model(const Dataset& data, const ModelParams& params);

enum class EstimandKind { Psi, PsiTreatment, Contrast };

std::string to_string(EstimandKind kind);
EstimandKind estimand_kind_from_string(const std::string& name);

struct VersionPair {
  int t = 0;
  int v = 0;
  auto operator<=>(const VersionPair&) const = default;
};

/// psi_{t,v}: (Psi, t, v); psi_t: (PsiTreatment, t); contrast
/// psi_{t2,v2} - psi_{t,v}: (Contrast, t, v, t2, v2). Unused indices are -1.
struct EstimandKey {
  EstimandKind kind = EstimandKind::Psi;
  int t = -1;
  int v = -1;
  int t2 = -1;
  int v2 = -1;

  static EstimandKey psi(int t, int v) { return {EstimandKind::Psi, t, v}; }
  static EstimandKey psi_treatment(int t) {
    return {EstimandKind::PsiTreatment, t};
  }
  static EstimandKey contrast(VersionPair a, VersionPair b) {
    return {EstimandKind::Contrast, a.t, a.v, b.t, b.v};
  }
  auto operator<=>(const EstimandKey&) const = default;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool operator==(const Interval&) const = default;
};

enum class ContrastSet { None, WithinTreatment, All };

struct EstimateOptions {
  std::optional<double> floor;  // lower bound on e_t * pi_{t,v}, in [0, 0.1)
  ContrastSet contrasts = ContrastSet::WithinTreatment;
};

struct EstimandReport {
  std::map<EstimandKey, double> estimates;
  std::map<EstimandKey, Interval> ci;
  std::size_t n_used = 0;
  std::optional<double> floor;
  std::optional<double> level;  // CI level when intervals are attached

  double psi(int t, int v) const;
  double psi_treatment(int t) const;
  bool operator==(const EstimandReport&) const = default;
};

/// (1/n) sum_i D_i^{(t)} r_{t,v,i} Y_i / (e_t(X_i) pi_{t,v}(X_i)).
double ht_psi(const Dataset& data, const FittedModel& fit, int t, int v,
              std::optional<double> floor = std::nullopt);

/// Sample average over all units of the fitted gating probabilities of t.
Vector version_shares(const Dataset& data, const FittedModel& fit, int t);

/// sum_v share_{t,v} * psi_{t,v}.
double psi_treatment(const Dataset& data, const FittedModel& fit, int t,
                     std::optional<double> floor = std::nullopt);

/// psi_{b} - psi_{a}, read from the stored estimates.
double contrast(const EstimandReport& report, VersionPair a, VersionPair b);

/// All psi_{t,v}, psi_t and the requested contrasts.
EstimandReport estimate(const Dataset& data, const FittedModel& fit,
                        const EstimateOptions& options = {});

/// Linear-interpolation percentile (R type 7) of unsorted values, q in [0,1].
double percentile(std::vector<double> values, double q);

struct BootstrapConfig {
  VersionStructure versions;
  EmConfig em;
  int resamples = 100;
  double level = 0.95;
  std::uint64_t seed = 0;
  EstimateOptions estimate;
  unsigned threads = 0;
};

struct BootstrapResult {
  int resamples = 0;
  double level = 0.0;
  std::map<EstimandKey, std::vector<double>> replicates;  // indexed by b
  std::map<EstimandKey, Interval> ci;
  int redraws = 0;   // resamples redrawn for missing a treatment
  int failures = 0;  // resamples redrawn because the fit failed
  // Canonical expert parameters of every replicate fit, by b.
  std::vector<ModelParams> replicate_params;
};

/// Nonparametric bootstrap of the full pipeline.
BootstrapResult bootstrap(const Dataset& data, const BootstrapConfig& config);

}  // namespace lvmoe

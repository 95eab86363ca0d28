#include "lvmoe/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lvmoe/errors.hpp"
#include "lvmoe/parallel.hpp"
#include "lvmoe/random.hpp"

namespace lvmoe {

namespace {

constexpr double kPositivityLimit = 1e-300;
constexpr int kMaxLabelRedraws = 1000;

void check_fit(const Dataset& data, const FittedModel& fit, int t) {
  if (t < 0 || t >= fit.params.num_treatments())
    throw LookupError("no fitted model for treatment " + std::to_string(t));
  if (fit.resp.size() != fit.params.treatments.size())
    throw InputError("fitted model lacks responsibilities");
  if (data.num_treatments != fit.params.num_treatments())
    throw InputError("dataset and fit disagree on the number of treatments");
}

std::vector<VersionPair> all_pairs(const VersionStructure& s) {
  std::vector<VersionPair> out;
  for (int t = 0; t < s.num_treatments(); ++t)
    for (int v = 0; v < s.versions(t); ++v) out.push_back({t, v});
  return out;
}

}  // namespace

FittedModel fit_model(const Dataset& data, const VersionStructure& versions,
                      const EmConfig& config) {
  data.validate();
  if (versions.num_treatments() != data.num_treatments)
    throw InputError("version structure lists " +
                     std::to_string(versions.num_treatments()) +
                     " treatments but the data has " +
                     std::to_string(data.num_treatments));
  FittedModel fit;
  const Matrix design = design_matrix(data.covariates);
  fit.treatment_fit = fit_multinomial_logit(
      hard_label_problem(design, data.treatments, data.num_treatments));
  fit.params.zeta = fit.treatment_fit.coefficients;

  for (int t = 0; t < data.num_treatments; ++t) {
    const TreatmentSlice slice = make_slice(data, t);
    EmConfig cfg = config;
    cfg.seed = derive_seed({config.seed, static_cast<std::uint64_t>(t)});
    EmResult em;
    try {
      em = em_fit(slice, versions.versions(t), cfg);
    } catch (const Error& e) {
      throw FitFailure("treatment " + std::to_string(t) + ": " + e.what());
    }
    TreatmentParams canon = canonicalize(em.params);
    fit.resp.push_back(e_step(slice, canon));
    fit.params.treatments.push_back(std::move(canon));
    fit.traces.push_back(std::move(em.trace));
  }
  return fit;
}

FittedModel plug_in_model(const Dataset& data, const ModelParams& params) {
  params.validate();
  if (params.num_treatments() != data.num_treatments)
    throw InputError("parameters and data disagree on treatment count");
  FittedModel fit;
  fit.params = params;
  fit.treatment_fit.coefficients = params.zeta;
  fit.treatment_fit.converged = true;
  for (int t = 0; t < data.num_treatments; ++t)
    fit.resp.push_back(e_step(make_slice(data, t),
                              params.treatments[static_cast<std::size_t>(t)]));
  return fit;
}

std::string to_string(EstimandKind kind) {
  switch (kind) {
    case EstimandKind::Psi:
      return "psi";
    case EstimandKind::PsiTreatment:
      return "psi_t";
    case EstimandKind::Contrast:
      return "contrast";
  }
  return "unknown";
}

EstimandKind estimand_kind_from_string(const std::string& name) {
  if (name == "psi") return EstimandKind::Psi;
  if (name == "psi_t") return EstimandKind::PsiTreatment;
  if (name == "contrast") return EstimandKind::Contrast;
  throw ParseError("unknown estimand kind '" + name + "'");
}

double EstimandReport::psi(int t, int v) const {
  const auto it = estimates.find(EstimandKey::psi(t, v));
  if (it == estimates.end())
    throw LookupError("no estimate for psi(" + std::to_string(t) + "," +
                      std::to_string(v) + ")");
  return it->second;
}

double EstimandReport::psi_treatment(int t) const {
  const auto it = estimates.find(EstimandKey::psi_treatment(t));
  if (it == estimates.end())
    throw LookupError("no estimate for psi_t(" + std::to_string(t) + ")");
  return it->second;
}

double ht_psi(const Dataset& data, const FittedModel& fit, int t, int v,
              std::optional<double> floor) {
  check_fit(data, fit, t);
  const auto& tp = fit.params.treatments[static_cast<std::size_t>(t)];
  if (v < 0 || v >= tp.versions())
    throw LookupError("no version " + std::to_string(v) + " for treatment " +
                      std::to_string(t));
  if (floor && !(*floor >= 0.0 && *floor < 0.1))
    throw InputError("propensity floor must lie in [0, 0.1)");

  const TreatmentSlice slice = make_slice(data, t);
  const Responsibilities& resp = fit.resp[static_cast<std::size_t>(t)];
  if (resp.rows() != static_cast<Eigen::Index>(slice.size()) ||
      resp.cols() != tp.versions())
    throw InputError("responsibilities do not match treatment slice");
  const Matrix e = softmax_rows(slice.design, fit.params.zeta);
  const Matrix pi = softmax_rows(slice.design, tp.eta);

  double sum = 0.0;
  for (Eigen::Index k = 0; k < resp.rows(); ++k) {
    double denom = e(k, t) * pi(k, v);
    if (floor) {
      denom = std::max(denom, *floor);
    } else if (!(denom >= kPositivityLimit)) {
      throw PositivityError(slice.indices[static_cast<std::size_t>(k)], denom);
    }
    sum += resp(k, v) * slice.outcomes[k] / denom;
  }
  return sum / static_cast<double>(data.n());
}

Vector version_shares(const Dataset& data, const FittedModel& fit, int t) {
  check_fit(data, fit, t);
  const Matrix pi =
      softmax_rows(design_matrix(data.covariates),
                   fit.params.treatments[static_cast<std::size_t>(t)].eta);
  return pi.colwise().mean().transpose();
}

double psi_treatment(const Dataset& data, const FittedModel& fit, int t,
                     std::optional<double> floor) {
  const Vector shares = version_shares(data, fit, t);
  double out = 0.0;
  for (Eigen::Index v = 0; v < shares.size(); ++v)
    out += shares[v] * ht_psi(data, fit, t, static_cast<int>(v), floor);
  return out;
}

double contrast(const EstimandReport& report, VersionPair a, VersionPair b) {
  return report.psi(b.t, b.v) - report.psi(a.t, a.v);
}

EstimandReport estimate(const Dataset& data, const FittedModel& fit,
                        const EstimateOptions& options) {
  EstimandReport report;
  report.n_used = data.n();
  report.floor = options.floor;
  const VersionStructure structure = fit.params.structure();
  for (int t = 0; t < structure.num_treatments(); ++t) {
    const Vector shares = version_shares(data, fit, t);
    double avg = 0.0;
    for (int v = 0; v < structure.versions(t); ++v) {
      const double psi = ht_psi(data, fit, t, v, options.floor);
      report.estimates[EstimandKey::psi(t, v)] = psi;
      avg += shares[v] * psi;
    }
    report.estimates[EstimandKey::psi_treatment(t)] = avg;
  }
  if (options.contrasts != ContrastSet::None) {
    const auto pairs = all_pairs(structure);
    for (std::size_t a = 0; a < pairs.size(); ++a)
      for (std::size_t b = a + 1; b < pairs.size(); ++b) {
        if (options.contrasts == ContrastSet::WithinTreatment &&
            pairs[a].t != pairs[b].t)
          continue;
        report.estimates[EstimandKey::contrast(pairs[a], pairs[b])] =
            contrast(report, pairs[a], pairs[b]);
      }
  }
  return report;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw InputError("percentile level outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

BootstrapResult bootstrap(const Dataset& data, const BootstrapConfig& config) {
  if (config.resamples < 2) throw InputError("bootstrap needs B >= 2");
  if (!(config.level > 0.0 && config.level < 1.0))
    throw InputError("bootstrap level must lie in (0, 1)");
  data.validate();

  const auto B = static_cast<std::size_t>(config.resamples);
  const int failure_budget = config.resamples / 5;
  std::vector<EstimandReport> reports(B);
  std::vector<ModelParams> params(B);
  std::vector<int> redraws(B, 0);
  std::vector<int> failures(B, 0);
  std::vector<std::string> last_error(B);
  const auto n = data.n();

  parallel_for(B, config.threads, [&](std::size_t b) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng = make_rng({config.seed, b, attempt});
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<std::size_t> rows(n);
      for (auto& r : rows) r = pick(rng);
      Dataset resample = data.subset(rows);

      std::vector<char> seen(static_cast<std::size_t>(data.num_treatments), 0);
      for (int t : resample.treatments) seen[static_cast<std::size_t>(t)] = 1;
      if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        if (++redraws[b] > kMaxLabelRedraws)
          throw BootstrapFailure("resample " + std::to_string(b) +
                                 " never contained every treatment");
        continue;
      }
      EmConfig em = config.em;
      em.seed = derive_seed({config.seed, b, attempt, 1});
      try {
        FittedModel fit = fit_model(resample, config.versions, em);
        reports[b] = estimate(resample, fit, config.estimate);
        params[b] = std::move(fit.params);
        return;
      } catch (const Error& e) {
        last_error[b] = e.what();
        if (++failures[b] > failure_budget) return;
      }
    }
  });

  BootstrapResult result;
  result.resamples = config.resamples;
  result.level = config.level;
  for (std::size_t b = 0; b < B; ++b) {
    result.redraws += redraws[b];
    result.failures += failures[b];
  }
  if (result.failures > failure_budget) {
    std::string example;
    for (const auto& msg : last_error)
      if (!msg.empty()) {
        example = msg;
        break;
      }
    throw BootstrapFailure(std::to_string(result.failures) + " of " +
                           std::to_string(B) +
                           " bootstrap fits failed; last error: " + example);
  }
  for (std::size_t b = 0; b < B; ++b)
    for (const auto& [key, value] : reports[b].estimates)
      result.replicates[key].push_back(value);
  const double alpha = 1.0 - config.level;
  for (const auto& [key, reps] : result.replicates)
    result.ci[key] = {percentile(reps, alpha / 2.0),
                      percentile(reps, 1.0 - alpha / 2.0)};
  result.replicate_params = std::move(params);
  return result;
}

}  // namespace lvmoe

#include "lvmoe/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <set>
#include <string>

#include "lvmoe/diagnostics.hpp"
#include "lvmoe/errors.hpp"
#include "lvmoe/parallel.hpp"
#include "lvmoe/random.hpp"

namespace lvmoe {

namespace {

// 0-based position of the 1-based cyclic index 1 + (k mod p).
int cyclic(int k, int p) { return ((k % p) + p) % p; }

int sample_categorical(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size() - 1);
}

Vector softmax_raw(const std::vector<Vector>& coef, const Vector& x) {
  Vector logits(static_cast<Eigen::Index>(coef.size()));
  for (std::size_t k = 0; k < coef.size(); ++k)
    logits[static_cast<Eigen::Index>(k)] = coef[k].dot(x);
  return softmax(logits);
}

void validate(const SimConfig& c) {
  if (c.n < 1) throw InputError("simulation needs n >= 1");
  if (c.p < 1) throw InputError("simulation needs p >= 1");
  if (c.treatments < 1) throw InputError("simulation needs J >= 1");
  if (c.versions.num_treatments() != c.treatments)
    throw InputError("version structure length differs from J");
  if (!(c.snr > 0.0)) throw InputError("snr must be positive");
  if (c.reps < 1) throw InputError("reps must be >= 1");
  int max_versions = 1;
  for (int k : c.versions.counts()) max_versions = std::max(max_versions, k);
  if (c.p < 2 * (c.treatments - 1) + 2 * (max_versions - 1))
    warn("p = " + std::to_string(c.p) +
         " is too small for disjoint treatment and version coordinates");
}

}  // namespace

VersionStructure SimTruth::structure() const {
  std::vector<int> counts;
  for (const auto& b : beta_star) counts.push_back(static_cast<int>(b.size()));
  return VersionStructure(std::move(counts));
}

SimTruth build_truth(const SimConfig& config) {
  validate(config);
  const int p = config.p;
  const int J = config.treatments;
  SimTruth truth;

  std::set<int> treatment_coords;
  truth.zeta_star.assign(static_cast<std::size_t>(J), Vector::Zero(p));
  for (int t = 1; t < J; ++t) {
    const int j1 = cyclic(2 * t - 2, p);
    const int j2 = cyclic(2 * t - 1, p);
    truth.zeta_star[static_cast<std::size_t>(t)][j1] = 2.0;
    truth.zeta_star[static_cast<std::size_t>(t)][j2] = -2.0;
    treatment_coords.insert({j1, j2});
  }

  const int offset = 2 * (J - 1);
  Vector beta_common = Vector::Constant(p, 1.0 / std::sqrt(static_cast<double>(p)));
  double psi = 1.0;
  bool collision = false;
  for (int t = 0; t < J; ++t) {
    const int versions = config.versions.versions(t);
    std::vector<Vector> eta(static_cast<std::size_t>(versions), Vector::Zero(p));
    std::vector<Vector> beta;
    std::vector<double> psis;
    for (int v = 0; v < versions; ++v) {
      if (v > 0) {
        const int j1 = cyclic(offset + 2 * v - 2, p);
        const int j2 = cyclic(offset + 2 * v - 1, p);
        eta[static_cast<std::size_t>(v)][j1] = 2.0;
        eta[static_cast<std::size_t>(v)][j2] = 2.0;
        if (offset + 2 * v - 1 >= p || treatment_coords.count(j1) ||
            treatment_coords.count(j2))
          collision = true;
      }
      Vector b = beta_common;
      b[cyclic(v, p)] += 0.2;
      beta.push_back(std::move(b));
      psis.push_back(psi);
      psi += 1.0;
    }
    truth.eta_star.push_back(std::move(eta));
    truth.beta_star.push_back(std::move(beta));
    truth.psi_star.push_back(std::move(psis));
  }
  if (collision)
    warn("version coordinates wrap or overlap treatment coordinates at p = " +
         std::to_string(p));
  return truth;
}

int potential_column(const VersionStructure& s, int t, int v) {
  int col = 0;
  for (int u = 0; u < t; ++u) col += s.versions(u);
  return col + v;
}

SimDraw simulate_dataset(const SimTruth& truth, const SimConfig& config,
                         std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(config.n);
  const int p = config.p;
  const VersionStructure s = truth.structure();
  const int J = s.num_treatments();
  Rng rng = make_rng({seed});
  std::normal_distribution<double> normal(0.0, 1.0);

  SimDraw draw;
  draw.data.num_treatments = J;
  draw.data.covariates.resize(n, p);
  draw.data.outcomes.resize(n);
  draw.data.treatments.resize(config.n);
  draw.versions.resize(config.n);
  draw.potentials.resize(n, s.total());
  draw.noiseless.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    Vector x(p);
    for (int j = 0; j < p; ++j) x[j] = normal(rng);
    draw.data.covariates.row(i) = x.transpose();
    const int t = sample_categorical(softmax_raw(truth.zeta_star, x), rng);
    const int v = sample_categorical(
        softmax_raw(truth.eta_star[static_cast<std::size_t>(t)], x), rng);
    draw.data.treatments[static_cast<std::size_t>(i)] = t;
    draw.versions[static_cast<std::size_t>(i)] = v;
    for (int u = 0; u < J; ++u)
      for (int w = 0; w < s.versions(u); ++w)
        draw.potentials(i, potential_column(s, u, w)) =
            x.dot(truth.beta_star[static_cast<std::size_t>(u)][static_cast<std::size_t>(w)]) +
            truth.psi_star[static_cast<std::size_t>(u)][static_cast<std::size_t>(w)];
    draw.noiseless[i] = draw.potentials(i, potential_column(s, t, v));
  }

  const double mean = draw.noiseless.mean();
  const double sd =
      n > 1 ? std::sqrt((draw.noiseless.array() - mean).square().sum() /
                        static_cast<double>(n - 1))
            : 0.0;
  draw.sigma_noise = sd / config.snr;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    draw.data.outcomes[i] = draw.noiseless[i] + draw.sigma_noise * noise(rng);
  return draw;
}

ModelParams truth_params(const SimTruth& truth, double sigma_noise) {
  ModelParams params;
  for (const auto& z : truth.zeta_star) {
    Vector zeta = augment(z);
    zeta[0] = 0.0;
    params.zeta.push_back(std::move(zeta));
  }
  for (std::size_t t = 0; t < truth.beta_star.size(); ++t) {
    TreatmentParams tp;
    for (std::size_t v = 0; v < truth.beta_star[t].size(); ++v) {
      Vector eta = augment(truth.eta_star[t][v]);
      eta[0] = 0.0;
      tp.eta.push_back(std::move(eta));
      Vector beta = augment(truth.beta_star[t][v]);
      beta[0] = truth.psi_star[t][v];
      tp.beta.push_back(std::move(beta));
      tp.sigma.push_back(sigma_noise);
    }
    params.treatments.push_back(std::move(tp));
  }
  return params;
}

const MetricsRow& MonteCarloResult::row(VersionPair a, VersionPair b) const {
  for (const auto& r : rows)
    if (r.a == a && r.b == b) return r;
  throw LookupError("no metrics row for the requested contrast");
}

std::pair<double, double> bias_and_sd(const std::vector<double>& values,
                                      double truth) {
  if (values.empty()) throw InputError("no replicates to summarize");
  const auto m = static_cast<double>(values.size());
  double mean = 0.0;
  for (double x : values) mean += x;
  mean /= m;
  double ss = 0.0;
  for (double x : values) ss += (x - mean) * (x - mean);
  return {mean - truth, std::sqrt(ss / m)};
}

MonteCarloResult monte_carlo(const SimConfig& config,
                             const MonteCarloOptions& options) {
  const SimTruth truth = build_truth(config);
  const VersionStructure s = truth.structure();

  // Truth in canonical order: position k of treatment t holds true version
  // truth_order[t][k]. The noise scale does not affect the ordering unless
  // expert means tie, so any positive value works here.
  const ModelParams truth_ref = truth_params(truth, 1.0);
  std::vector<std::vector<int>> truth_order;
  for (const auto& tp : truth_ref.treatments)
    truth_order.push_back(canonical_order(tp));

  std::vector<VersionPair> pairs;
  for (int t = 0; t < s.num_treatments(); ++t)
    for (int v = 0; v < s.versions(t); ++v) pairs.push_back({t, v});
  std::vector<std::pair<VersionPair, VersionPair>> contrasts;
  for (std::size_t a = 0; a < pairs.size(); ++a)
    for (std::size_t b = a + 1; b < pairs.size(); ++b)
      contrasts.emplace_back(pairs[a], pairs[b]);

  auto true_psi = [&](VersionPair k) {
    const int v = truth_order[static_cast<std::size_t>(k.t)][static_cast<std::size_t>(k.v)];
    return truth.psi_star[static_cast<std::size_t>(k.t)][static_cast<std::size_t>(v)];
  };

  const auto M = static_cast<std::size_t>(config.reps);
  std::vector<std::vector<double>> per_rep(M);
  std::vector<std::string> errors(M);

  parallel_for(M, options.threads, [&](std::size_t m) {
    try {
      const SimDraw draw =
          simulate_dataset(truth, config, derive_seed({config.seed, m, 0}));
      FittedModel fit;
      if (options.oracle) {
        ModelParams params = truth_params(truth, draw.sigma_noise);
        for (auto& tp : params.treatments) tp = canonicalize(tp);
        draw.data.validate();
        fit = plug_in_model(draw.data, params);
      } else {
        EmConfig em = options.em;
        em.seed = derive_seed({config.seed, m, 1});
        fit = fit_model(draw.data, s, em);
      }
      EstimateOptions est;
      est.contrasts = ContrastSet::None;
      const EstimandReport report = estimate(draw.data, fit, est);
      std::vector<double> deltas;
      deltas.reserve(contrasts.size());
      for (const auto& [a, b] : contrasts) deltas.push_back(contrast(report, a, b));
      per_rep[m] = std::move(deltas);
    } catch (const Error& e) {
      errors[m] = e.what();
    }
  });

  MonteCarloResult result;
  for (std::size_t m = 0; m < M; ++m) {
    if (!errors[m].empty()) {
      ++result.failures;
      result.failure_messages.push_back("replicate " + std::to_string(m) +
                                        ": " + errors[m]);
      continue;
    }
    result.estimates.push_back(per_rep[m]);
    result.replicate_ids.push_back(static_cast<int>(m));
  }
  if (static_cast<double>(result.failures) >
      options.max_failure_rate * static_cast<double>(M)) {
    std::string msg = std::to_string(result.failures) + " of " +
                      std::to_string(M) + " replicates failed";
    if (!result.failure_messages.empty())
      msg += "; first: " + result.failure_messages.front();
    throw FitFailure(msg);
  }

  for (std::size_t c = 0; c < contrasts.size(); ++c) {
    MetricsRow row;
    row.p = config.p;
    row.snr = config.snr;
    row.n = config.n;
    row.a = contrasts[c].first;
    row.b = contrasts[c].second;
    row.truth = true_psi(row.b) - true_psi(row.a);
    row.failures = result.failures;
    std::vector<double> values;
    values.reserve(result.estimates.size());
    for (const auto& rep : result.estimates) values.push_back(rep[c]);
    std::tie(row.bias, row.sd) = bias_and_sd(values, row.truth);
    result.rows.push_back(row);
  }
  return result;
}

}  // namespace lvmoe

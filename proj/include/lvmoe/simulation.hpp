#pragma once

// Data-generating process with latent treatment versions and the Monte
// Carlo driver that scores version contrasts by bias and spread.

#include <cstdint>
#include <string>
#include <vector>

#include "lvmoe/core_model.hpp"
#include "lvmoe/em_engine.hpp"
#include "lvmoe/estimators.hpp"

namespace lvmoe {

struct SimConfig {
  std::size_t n = 1000;
  int p = 10;
  int treatments = 2;
  VersionStructure versions{std::vector<int>{2, 2}};
  double snr = 10.0;
  int reps = 100;
  std::uint64_t seed = 0;
};

/// True parameters of the DGP. Logits and outcome means act on the raw
/// covariates, without an intercept.
struct SimTruth {
  std::vector<Vector> zeta_star;               // J vectors of length p
  std::vector<std::vector<Vector>> eta_star;   // [t][v], length p
  std::vector<std::vector<Vector>> beta_star;  // [t][v], length p
  std::vector<std::vector<double>> psi_star;   // [t][v]

  VersionStructure structure() const;
};

/// One simulated sample, with the latent pieces kept for oracle checks.
struct SimDraw {
  Dataset data;
  std::vector<int> versions;  // latent V_i
  Matrix potentials;          // n x sum_t J_t, columns in (t, v) order
  Vector noiseless;           // realized potential outcome per unit
  double sigma_noise = 0.0;
};

SimTruth build_truth(const SimConfig& config);

SimDraw simulate_dataset(const SimTruth& truth, const SimConfig& config,
                         std::uint64_t seed);

/// The truth written in the estimation model's augmented parameterization:
/// zero intercepts on the logits, psi* as the expert intercept.
ModelParams truth_params(const SimTruth& truth, double sigma_noise);

/// Column of `SimDraw::potentials` holding Y^{(t,v)}.
int potential_column(const VersionStructure& s, int t, int v);

struct MonteCarloOptions {
  EmConfig em;
  bool oracle = false;  // plug in the truth instead of running EM
  unsigned threads = 0;
  double max_failure_rate = 0.10;
};

struct MetricsRow {
  int p = 0;
  double snr = 0.0;
  std::size_t n = 0;
  VersionPair a;
  VersionPair b;
  double truth = 0.0;  // Delta* = psi*_b - psi*_a
  double bias = 0.0;
  double sd = 0.0;
  int failures = 0;
};

struct MonteCarloResult {
  std::vector<MetricsRow> rows;  // every pair a < b in (t, v) order
  // Per-replicate contrast estimates, [replicate][row]; failed replicates
  // are absent.
  std::vector<std::vector<double>> estimates;
  std::vector<int> replicate_ids;
  int failures = 0;
  std::vector<std::string> failure_messages;

  const MetricsRow& row(VersionPair a, VersionPair b) const;
};

MonteCarloResult monte_carlo(const SimConfig& config,
                             const MonteCarloOptions& options = {});

/// mean(x - truth) and the 1/M root-mean-square deviation about mean(x).
std::pair<double, double> bias_and_sd(const std::vector<double>& values,
                                      double truth);

}  // namespace lvmoe

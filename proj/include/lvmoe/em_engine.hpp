#pragma once

// EM fitting of one treatment's mixture of Gaussian linear experts with a
// softmax gate, plus the ordering/re-fixing steps that give fitted
// parameters a canonical labelling.

#include <cstdint>
#include <optional>
#include <vector>

#include "lvmoe/core_model.hpp"
#include "lvmoe/glm_solver.hpp"
#include "lvmoe/random.hpp"

namespace lvmoe {

/// Units of one treatment arm, with their outcomes and augmented design.
struct TreatmentSlice {
  std::vector<std::size_t> indices;  // rows in the parent dataset
  Vector outcomes;                   // n_t
  Matrix design;                     // n_t x (p+1)

  std::size_t size() const { return indices.size(); }
};

TreatmentSlice make_slice(const Dataset& data, int t);

/// n_t x J_t posterior version weights; rows sum to one.
using Responsibilities = Matrix;

struct EmTrace {
  std::vector<double> loglik;     // observed-data log-likelihood, entry 0 = init
  // loglik minus the gating ridge penalty; this is what EM ascends.
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
  int restart = -1;         // winning restart slot
  int collapsed_runs = 0;   // runs abandoned for a collapsed component
};

struct EmConfig {
  double tol = 1e-6;  // absolute change in the EM objective
  int max_iter = 500;
  int restarts = 10;
  int collapse_retries = 3;  // extra attempts per restart slot
  std::uint64_t seed = 0;
  // Gating M-step; the ridge keeps the gate finite when responsibilities
  // separate the covariate space.
  LogitOptions gating{.tol = 1e-8, .max_iter = 100, .ridge = 1.0};
};

struct EmResult {
  TreatmentParams params;
  Responsibilities resp;
  EmTrace trace;
};

struct ExpertUpdate {
  Vector beta;
  double sigma2 = 0.0;
};

/// Row-wise normalized pi_{t,v}(x_i) f_{t,v}(y_i | x_i), evaluated in log
/// space.
Responsibilities e_step(const TreatmentSlice& slice,
                        const TreatmentParams& params);

/// sum_i log sum_v pi_{t,v}(x_i) f_{t,v}(y_i | x_i) over the slice.
double observed_loglik(const TreatmentSlice& slice,
                       const TreatmentParams& params);

/// Weighted least squares for one expert, with 1e-10 ridge damping on the
/// normal equations and the variance floored at 1e-8.
ExpertUpdate m_step_expert(const TreatmentSlice& slice,
                           const Eigen::Ref<const Vector>& weights);

/// Soft-label multinomial logit for the gate; version 0 is the reference.
std::vector<Vector> m_step_gating(
    const TreatmentSlice& slice, const Responsibilities& resp,
    const LogitOptions& options = {},
    const std::optional<std::vector<Vector>>& start = std::nullopt);

/// Random start centred on the single-expert least-squares fit.
TreatmentParams initialize(const TreatmentSlice& slice, int versions, Rng& rng);

/// One EM run from `init`. Throws CollapsedComponentError when a component
/// loses its responsibility mass.
EmResult em_run(const TreatmentSlice& slice, TreatmentParams init,
                const EmConfig& config);

/// Best of `config.restarts` EM runs by final EM objective.
EmResult em_fit(const TreatmentSlice& slice, int versions,
                const EmConfig& config);

/// Ascending lexicographic order of (beta_0, ..., beta_p, sigma); entry k is
/// the original index of the component placed at position k.
std::vector<int> canonical_order(const TreatmentParams& params);

/// Sorts the components into canonical order and shifts every gating vector
/// so that the new reference component has zero coefficients.
TreatmentParams canonicalize(const TreatmentParams& params);

}  // namespace lvmoe

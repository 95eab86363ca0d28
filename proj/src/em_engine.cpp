#include "lvmoe/em_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "lvmoe/diagnostics.hpp"
#include "lvmoe/errors.hpp"

namespace lvmoe {

namespace {

constexpr double kWlsDamping = 1e-10;
constexpr double kVarianceFloor = 1e-8;
constexpr double kCollapseMass = 1e-10;
constexpr double kAscentGuard = 1e-6;

// log pi_{t,v}(x_i) + log f_{t,v}(y_i | x_i), n_t x J_t.
Matrix log_joint(const TreatmentSlice& slice, const TreatmentParams& params) {
  const int versions = params.versions();
  Matrix out = versions > 1 ? log_softmax_rows(slice.design, params.eta)
                            : Matrix::Zero(slice.design.rows(), 1);
  for (int v = 0; v < versions; ++v) {
    const double sigma = params.sigma[static_cast<std::size_t>(v)];
    if (!(sigma > 0.0))
      throw ParameterError("expert sigma must be positive (version " +
                           std::to_string(v) + ")");
    const Vector resid =
        slice.outcomes - slice.design * params.beta[static_cast<std::size_t>(v)];
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
    out.col(v).array() +=
        norm - resid.array().square() / (2.0 * sigma * sigma);
  }
  return out;
}

// Normalizes `joint` in place into responsibilities and returns the
// observed-data log-likelihood.
double normalize_rows(Matrix& joint, const TreatmentSlice& slice) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    const double m = joint.row(i).maxCoeff();
    if (!std::isfinite(m))
      throw NumericalError("all components underflow at unit " +
                           std::to_string(slice.indices[static_cast<std::size_t>(i)]));
    joint.row(i) = (joint.row(i).array() - m).exp();
    const double s = joint.row(i).sum();
    joint.row(i) /= s;
    total += m + std::log(s);
  }
  return total;
}

Vector least_squares(const Matrix& design, const Vector& y) {
  Matrix gram = design.transpose() * design;
  gram.diagonal().array() += kWlsDamping;
  return gram.ldlt().solve(design.transpose() * y);
}

double gating_penalty(const TreatmentParams& params, double ridge) {
  return 0.5 * ridge * ridge_norm(params.eta);
}

}  // namespace

TreatmentSlice make_slice(const Dataset& data, int t) {
  TreatmentSlice slice;
  for (std::size_t i = 0; i < data.treatments.size(); ++i)
    if (data.treatments[i] == t) slice.indices.push_back(i);
  if (slice.indices.empty())
    throw InputError("treatment " + std::to_string(t) + " has no units");
  const auto n_t = static_cast<Eigen::Index>(slice.indices.size());
  slice.outcomes.resize(n_t);
  slice.design.resize(n_t, data.covariates.cols() + 1);
  slice.design.col(0).setOnes();
  for (Eigen::Index k = 0; k < n_t; ++k) {
    const auto i = static_cast<Eigen::Index>(slice.indices[static_cast<std::size_t>(k)]);
    slice.outcomes[k] = data.outcomes[i];
    slice.design.row(k).tail(data.covariates.cols()) = data.covariates.row(i);
  }
  return slice;
}

Responsibilities e_step(const TreatmentSlice& slice,
                        const TreatmentParams& params) {
  Matrix joint = log_joint(slice, params);
  normalize_rows(joint, slice);
  return joint;
}

double observed_loglik(const TreatmentSlice& slice,
                       const TreatmentParams& params) {
  Matrix joint = log_joint(slice, params);
  const double value = normalize_rows(joint, slice);
  if (!std::isfinite(value))
    throw NumericalError("non-finite observed log-likelihood");
  return value;
}

ExpertUpdate m_step_expert(const TreatmentSlice& slice,
                           const Eigen::Ref<const Vector>& weights) {
  if (weights.size() != slice.outcomes.size())
    throw InputError("responsibility column length does not match slice");
  const double mass = weights.sum();
  const auto n_t = static_cast<double>(slice.size());
  if (!(mass >= kCollapseMass * n_t))
    throw CollapsedComponentError(0, mass);

  const Matrix& phi = slice.design;
  Matrix gram = phi.transpose() * weights.asDiagonal() * phi;
  gram.diagonal().array() += kWlsDamping;
  const Vector rhs = phi.transpose() * weights.cwiseProduct(slice.outcomes);
  ExpertUpdate out;
  out.beta = gram.ldlt().solve(rhs);
  if (!out.beta.allFinite())
    throw NumericalError("weighted least squares produced non-finite beta");
  const Vector resid = slice.outcomes - phi * out.beta;
  out.sigma2 = std::max(
      weights.dot(resid.cwiseProduct(resid)) / mass, kVarianceFloor);
  return out;
}

std::vector<Vector> m_step_gating(const TreatmentSlice& slice,
                                  const Responsibilities& resp,
                                  const LogitOptions& options,
                                  const std::optional<std::vector<Vector>>& start) {
  if (resp.rows() != slice.design.rows())
    throw InputError("responsibilities do not match slice");
  if (resp.cols() == 1) return {Vector::Zero(slice.design.cols())};
  SoftLabelProblem problem{slice.design, resp};
  // Rows are renormalized so that rounding in the E-step never trips the
  // solver's row-sum check.
  for (Eigen::Index i = 0; i < problem.weights.rows(); ++i)
    problem.weights.row(i) /= problem.weights.row(i).sum();
  return fit_multinomial_logit(problem, options, start).coefficients;
}

TreatmentParams initialize(const TreatmentSlice& slice, int versions, Rng& rng) {
  if (versions < 1) throw InputError("version count must be >= 1");
  const Vector ols = least_squares(slice.design, slice.outcomes);
  const Vector resid = slice.outcomes - slice.design * ols;
  const double sd = std::max(
      std::sqrt(resid.squaredNorm() / static_cast<double>(slice.size())),
      std::sqrt(kVarianceFloor));
  const auto dim = slice.design.cols();
  std::normal_distribution<double> jitter(
      0.0, 0.5 * sd / std::sqrt(static_cast<double>(dim)));

  TreatmentParams params;
  for (int v = 0; v < versions; ++v) {
    Vector beta = ols;
    for (Eigen::Index j = 0; j < dim; ++j) beta[j] += jitter(rng);
    params.beta.push_back(std::move(beta));
    params.sigma.push_back(sd);
    params.eta.push_back(Vector::Zero(dim));
  }
  // A single expert is the least-squares fit itself.
  if (versions == 1) params.beta[0] = ols;
  return params;
}

EmResult em_run(const TreatmentSlice& slice, TreatmentParams init,
                const EmConfig& config) {
  const int versions = init.versions();
  if (versions < 1) throw InputError("empty initialization");
  const auto n_t = static_cast<double>(slice.size());
  // A component carrying fewer effective units than its expert has
  // parameters can interpolate them exactly and drive sigma to the floor.
  const double min_mass =
      versions > 1
          ? std::max(kCollapseMass * n_t, static_cast<double>(slice.design.cols() + 1))
          : kCollapseMass * n_t;

  EmResult result;
  result.params = std::move(init);
  const Vector ref = result.params.eta.front();
  for (auto& e : result.params.eta) e -= ref;
  const double ridge = config.gating.ridge;
  Matrix joint = log_joint(slice, result.params);
  double loglik = normalize_rows(joint, slice);
  double current = loglik - gating_penalty(result.params, ridge);
  result.trace.loglik.push_back(loglik);
  result.trace.objective.push_back(current);

  for (int iter = 1; iter <= config.max_iter; ++iter) {
    // `joint` holds the responsibilities at the current parameters.
    for (int v = 0; v < versions; ++v) {
      const double mass = joint.col(v).sum();
      if (!(mass >= min_mass))
        throw CollapsedComponentError(static_cast<std::size_t>(v), mass);
    }
    for (int v = 0; v < versions; ++v) {
      const ExpertUpdate upd = m_step_expert(slice, joint.col(v));
      result.params.beta[static_cast<std::size_t>(v)] = upd.beta;
      result.params.sigma[static_cast<std::size_t>(v)] = std::sqrt(upd.sigma2);
    }
    if (versions > 1)
      result.params.eta =
          m_step_gating(slice, joint, config.gating, result.params.eta);

    joint = log_joint(slice, result.params);
    loglik = normalize_rows(joint, slice);
    const double next = loglik - gating_penalty(result.params, ridge);
    if (!std::isfinite(next))
      throw NumericalError("non-finite log-likelihood at EM iteration " +
                           std::to_string(iter));
    if (next < current - kAscentGuard)
      throw Error("internal: EM objective decreased from " +
                  std::to_string(current) + " to " + std::to_string(next) +
                  " at iteration " + std::to_string(iter));
    result.trace.loglik.push_back(loglik);
    result.trace.objective.push_back(next);
    result.trace.iterations = iter;
    const double change = std::abs(next - current);
    current = next;
    if (change < config.tol) {
      result.trace.converged = true;
      break;
    }
  }
  result.resp = std::move(joint);
  return result;
}

EmResult em_fit(const TreatmentSlice& slice, int versions,
                const EmConfig& config) {
  if (versions < 1) throw InputError("version count must be >= 1");
  if (config.restarts < 1) throw InputError("restarts must be >= 1");
  const auto dim = static_cast<std::size_t>(slice.design.cols());
  if (slice.size() <= dim * static_cast<std::size_t>(versions))
    warn("treatment slice has " + std::to_string(slice.size()) +
         " units for " + std::to_string(versions) + " experts of dimension " +
         std::to_string(dim));

  std::optional<EmResult> best;
  int collapsed = 0;
  const int restarts = versions == 1 ? 1 : config.restarts;
  for (int r = 0; r < restarts; ++r) {
    for (int attempt = 0; attempt <= config.collapse_retries; ++attempt) {
      Rng rng = make_rng({config.seed, static_cast<std::uint64_t>(r),
                          static_cast<std::uint64_t>(attempt)});
      try {
        EmResult run = em_run(slice, initialize(slice, versions, rng), config);
        run.trace.restart = r;
        const double score = run.trace.objective.back();
        if (!best || score > best->trace.objective.back()) best = std::move(run);
        break;
      } catch (const CollapsedComponentError&) {
        ++collapsed;
      } catch (const DegenerateClassError&) {
        ++collapsed;
      }
    }
  }
  if (!best)
    throw FitFailure("all " + std::to_string(restarts) +
                     " EM restarts collapsed");
  best->trace.collapsed_runs = collapsed;
  return std::move(*best);
}

std::vector<int> canonical_order(const TreatmentParams& params) {
  const int versions = params.versions();
  std::vector<std::vector<double>> keys(static_cast<std::size_t>(versions));
  for (int v = 0; v < versions; ++v) {
    const auto& b = params.beta[static_cast<std::size_t>(v)];
    auto& key = keys[static_cast<std::size_t>(v)];
    key.assign(b.data(), b.data() + b.size());
    key.push_back(params.sigma[static_cast<std::size_t>(v)]);
  }
  std::vector<int> order(static_cast<std::size_t>(versions));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::lexicographical_compare(
        keys[static_cast<std::size_t>(a)].begin(),
        keys[static_cast<std::size_t>(a)].end(),
        keys[static_cast<std::size_t>(b)].begin(),
        keys[static_cast<std::size_t>(b)].end());
  });
  for (std::size_t k = 1; k < order.size(); ++k)
    if (keys[static_cast<std::size_t>(order[k - 1])] ==
        keys[static_cast<std::size_t>(order[k])])
      warn("identical expert parameters for components " +
           std::to_string(order[k - 1]) + " and " + std::to_string(order[k]) +
           "; keeping fitted order");
  return order;
}

TreatmentParams canonicalize(const TreatmentParams& params) {
  const std::vector<int> order = canonical_order(params);
  TreatmentParams out;
  for (int src : order) {
    const auto s = static_cast<std::size_t>(src);
    out.beta.push_back(params.beta[s]);
    out.sigma.push_back(params.sigma[s]);
    out.eta.push_back(params.eta[s]);
  }
  const Vector ref = out.eta.front();
  for (auto& e : out.eta) e -= ref;
  return out;
}

}  // namespace lvmoe

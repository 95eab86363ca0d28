#include "lvmoe/core_model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "lvmoe/errors.hpp"

namespace lvmoe {

namespace {

void require_finite(const Eigen::Ref<const Vector>& x) {
  if (!x.allFinite()) throw InputError("non-finite covariate value");
}

Vector logits_of(const Eigen::Ref<const Vector>& x,
                 const std::vector<Vector>& coefficients) {
  require_finite(x);
  Vector logits(static_cast<Eigen::Index>(coefficients.size()));
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    const Vector& c = coefficients[k];
    if (c.size() != x.size() + 1)
      throw InputError("coefficient length " + std::to_string(c.size()) +
                       " does not match covariate length " +
                       std::to_string(x.size()) + " + 1");
    logits[static_cast<Eigen::Index>(k)] = c[0] + c.tail(x.size()).dot(x);
  }
  return logits;
}

Matrix logit_matrix(const Eigen::Ref<const Matrix>& design,
                    const std::vector<Vector>& coefficients) {
  Matrix coef(design.cols(), static_cast<Eigen::Index>(coefficients.size()));
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    if (coefficients[k].size() != design.cols())
      throw InputError("coefficient length does not match design width");
    coef.col(static_cast<Eigen::Index>(k)) = coefficients[k];
  }
  return design * coef;
}

}  // namespace

void Dataset::validate() const {
  const auto rows = outcomes.size();
  if (static_cast<Eigen::Index>(treatments.size()) != rows ||
      covariates.rows() != rows)
    throw InputError("outcomes, treatments and covariates differ in length");
  if (rows == 0) throw InputError("empty dataset");
  if (num_treatments < 1) throw InputError("need at least one treatment");
  if (!outcomes.allFinite()) throw InputError("non-finite outcome");
  if (!covariates.allFinite()) throw InputError("non-finite covariate");
  std::vector<std::size_t> seen(static_cast<std::size_t>(num_treatments), 0);
  for (std::size_t i = 0; i < treatments.size(); ++i) {
    const int t = treatments[i];
    if (t < 0 || t >= num_treatments)
      throw InputError("treatment label " + std::to_string(t) + " at unit " +
                       std::to_string(i) + " out of range");
    ++seen[static_cast<std::size_t>(t)];
  }
  for (std::size_t t = 0; t < seen.size(); ++t)
    if (seen[t] == 0)
      throw InputError("treatment " + std::to_string(t) + " never observed");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.num_treatments = num_treatments;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.outcomes.resize(m);
  out.covariates.resize(m, covariates.cols());
  out.treatments.resize(rows.size());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    out.outcomes[k] = outcomes[i];
    out.covariates.row(k) = covariates.row(i);
    out.treatments[static_cast<std::size_t>(k)] =
        treatments[static_cast<std::size_t>(i)];
  }
  return out;
}

VersionStructure::VersionStructure(std::vector<int> counts)
    : counts_(std::move(counts)) {
  if (counts_.empty()) throw InputError("version structure is empty");
  for (int c : counts_)
    if (c < 1) throw InputError("version count must be >= 1");
}

int VersionStructure::total() const {
  int sum = 0;
  for (int c : counts_) sum += c;
  return sum;
}

VersionStructure ModelParams::structure() const {
  std::vector<int> counts;
  counts.reserve(treatments.size());
  for (const auto& tp : treatments) counts.push_back(tp.versions());
  return VersionStructure(std::move(counts));
}

void ModelParams::validate() const {
  if (zeta.size() != treatments.size())
    throw ParameterError("zeta and treatment blocks differ in count");
  if (zeta.empty()) throw ParameterError("no treatments");
  if (!zeta[0].isZero(0.0)) throw ParameterError("zeta_0 must be zero");
  for (std::size_t t = 0; t < treatments.size(); ++t) {
    const auto& tp = treatments[t];
    if (tp.eta.size() != tp.beta.size() || tp.sigma.size() != tp.beta.size() ||
        tp.beta.empty())
      throw ParameterError("inconsistent version count for treatment " +
                           std::to_string(t));
    if (!tp.eta[0].isZero(0.0))
      throw ParameterError("eta_{" + std::to_string(t) + ",0} must be zero");
    for (double s : tp.sigma)
      if (!(s > 0.0))
        throw ParameterError("non-positive sigma for treatment " +
                             std::to_string(t));
  }
}

Vector augment(const Eigen::Ref<const Vector>& x) {
  Vector out(x.size() + 1);
  out[0] = 1.0;
  out.tail(x.size()) = x;
  return out;
}

Matrix design_matrix(const Eigen::Ref<const Matrix>& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

Vector softmax(const Eigen::Ref<const Vector>& logits) {
  const double m = logits.maxCoeff();
  Vector out = (logits.array() - m).exp().matrix();
  out /= out.sum();
  return out;
}

double log_sum_exp(const Eigen::Ref<const Vector>& values) {
  const double m = values.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((values.array() - m).exp().sum());
}

Vector treatment_probs(const Eigen::Ref<const Vector>& x,
                       const std::vector<Vector>& zeta) {
  return softmax(logits_of(x, zeta));
}

Vector gating_probs(const Eigen::Ref<const Vector>& x,
                    const std::vector<Vector>& eta_t) {
  return softmax(logits_of(x, eta_t));
}

Matrix softmax_rows(const Eigen::Ref<const Matrix>& design,
                    const std::vector<Vector>& coefficients) {
  Matrix z = logit_matrix(design, coefficients);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

Matrix log_softmax_rows(const Eigen::Ref<const Matrix>& design,
                        const std::vector<Vector>& coefficients) {
  Matrix z = logit_matrix(design, coefficients);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    z.row(i).array() -= lse;
  }
  return z;
}

double expert_logdensity(double y, const Eigen::Ref<const Vector>& x,
                         const Eigen::Ref<const Vector>& beta, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("expert sigma must be positive");
  if (beta.size() != x.size() + 1)
    throw InputError("beta length does not match covariate length + 1");
  const double resid = y - beta[0] - beta.tail(x.size()).dot(x);
  return -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) -
         resid * resid / (2.0 * sigma * sigma);
}

PropensityPair propensity(const Eigen::Ref<const Vector>& x,
                          const ModelParams& params, int t, int v) {
  const Vector e = treatment_probs(x, params.zeta);
  const Vector pi =
      gating_probs(x, params.treatments.at(static_cast<std::size_t>(t)).eta);
  PropensityPair out;
  out.e = e[t];
  out.pi = pi[v];
  out.p_joint = out.e * out.pi;
  return out;
}

}  // namespace lvmoe

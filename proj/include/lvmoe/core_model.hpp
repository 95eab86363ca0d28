#pragma once

// Domain types and pure evaluators for the treatment model, the gating
// model, and the Gaussian linear experts. Every model acts on the augmented
// covariate row (1, x), so coefficient vectors have length p + 1.

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace lvmoe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Observed triples (Y_i, T_i, X_i) for n units.
struct Dataset {
  Vector outcomes;              // n
  std::vector<int> treatments;  // n, labels in [0, num_treatments)
  Matrix covariates;            // n x p
  int num_treatments = 0;

  std::size_t n() const { return static_cast<std::size_t>(outcomes.size()); }
  std::size_t p() const { return static_cast<std::size_t>(covariates.cols()); }

  /// Throws InputError unless shapes agree, labels are in range, every label
  /// occurs at least once and all values are finite.
  void validate() const;

  /// Units whose rows are listed in `rows`, in that order (with repeats).
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

/// Number of latent versions for each treatment.
class VersionStructure {
 public:
  VersionStructure() = default;
  explicit VersionStructure(std::vector<int> counts);

  int num_treatments() const { return static_cast<int>(counts_.size()); }
  int versions(int t) const { return counts_.at(static_cast<std::size_t>(t)); }
  int total() const;
  const std::vector<int>& counts() const { return counts_; }

  bool operator==(const VersionStructure&) const = default;

 private:
  std::vector<int> counts_;
};

/// Gating and expert parameters of a single treatment's mixture.
struct TreatmentParams {
  std::vector<Vector> eta;    // gating coefficients, eta[0] == 0
  std::vector<Vector> beta;   // expert means
  std::vector<double> sigma;  // expert scales, > 0

  int versions() const { return static_cast<int>(beta.size()); }
};

/// Full parameter set across treatments and versions.
struct ModelParams {
  std::vector<Vector> zeta;  // treatment coefficients, zeta[0] == 0
  std::vector<TreatmentParams> treatments;

  int num_treatments() const { return static_cast<int>(zeta.size()); }
  VersionStructure structure() const;
  /// Throws ParameterError when a reference vector is nonzero or a scale is
  /// not positive.
  void validate() const;
};

/// Treatment and version probabilities of one unit for one (t, v) pair.
struct PropensityPair {
  double e = 0.0;
  double pi = 0.0;
  double p_joint = 0.0;
};

/// (1, x^T)^T for a covariate vector.
Vector augment(const Eigen::Ref<const Vector>& x);
/// The n x (p+1) design with a leading column of ones.
Matrix design_matrix(const Eigen::Ref<const Matrix>& x);

/// Max-shifted softmax of a logit vector.
Vector softmax(const Eigen::Ref<const Vector>& logits);
/// log-sum-exp with max shift.
double log_sum_exp(const Eigen::Ref<const Vector>& values);

/// (e_0, ..., e_{J-1}) at covariates x.
Vector treatment_probs(const Eigen::Ref<const Vector>& x,
                       const std::vector<Vector>& zeta);
/// (pi_{t,0}, ..., pi_{t,J_t-1}) at covariates x.
Vector gating_probs(const Eigen::Ref<const Vector>& x,
                    const std::vector<Vector>& eta_t);

/// Row-wise softmax of design * [coef_0 ... coef_{K-1}]; design is augmented.
Matrix softmax_rows(const Eigen::Ref<const Matrix>& design,
                    const std::vector<Vector>& coefficients);
/// Row-wise log-softmax of the same logits.
Matrix log_softmax_rows(const Eigen::Ref<const Matrix>& design,
                        const std::vector<Vector>& coefficients);

/// log N(y; beta^T (1, x), sigma^2).
double expert_logdensity(double y, const Eigen::Ref<const Vector>& x,
                         const Eigen::Ref<const Vector>& beta, double sigma);

/// e_t(x), pi_{t,v}(x) and their product under `params`.
PropensityPair propensity(const Eigen::Ref<const Vector>& x,
                          const ModelParams& params, int t, int v);

}  // namespace lvmoe

#pragma once

// Maximum-likelihood multinomial logit with hard or fractional targets,
// solved by damped Newton iterations. Class 0 is the reference class and its
// coefficient vector is pinned to zero.

#include <optional>
#include <span>
#include <vector>

#include "lvmoe/core_model.hpp"

namespace lvmoe {

/// Rows of `design` are augmented covariates; row i of `weights` holds the
/// (possibly fractional) class targets of unit i and sums to one.
struct SoftLabelProblem {
  Matrix design;   // m x d
  Matrix weights;  // m x K

  int classes() const { return static_cast<int>(weights.cols()); }
  int dim() const { return static_cast<int>(design.cols()); }
  /// Throws InputError on shape mismatch, negative or non-finite weights,
  /// or rows whose targets do not sum to one within 1e-9.
  void validate() const;
};

/// One-hot targets for integer labels in [0, classes).
SoftLabelProblem hard_label_problem(Matrix design, std::span<const int> labels,
                                    int classes);

struct LogitOptions {
  double tol = 1e-8;  // relative objective change
  int max_iter = 100;
  double ridge = 1e-8;
};

struct LogitFit {
  std::vector<Vector> coefficients;  // K vectors, coefficients[0] == 0
  double loglik = 0.0;               // penalized objective at the fit
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // objective after each accepted step
};

struct GradHess {
  Vector gradient;  // (K-1)*d, class-major
  Matrix hessian;   // (K-1)*d square, negative definite for ridge > 0
};

/// sum_k ||coef_k - mean_j coef_j||^2. Unlike ||coef||^2 this does not
/// depend on which class is the reference.
double ridge_norm(const std::vector<Vector>& coefficients);

/// sum_i sum_k w_ik log softmax_k(x_i) - ridge/2 * ridge_norm(coef).
double logit_objective(const SoftLabelProblem& problem,
                       const std::vector<Vector>& coefficients, double ridge);

/// Gradient and Hessian of logit_objective with respect to the non-reference
/// coefficients.
GradHess logit_grad_hess(const SoftLabelProblem& problem,
                         const std::vector<Vector>& coefficients,
                         double ridge);

/// Newton ascent with step halving. `start` warm-starts the iteration; its
/// reference vector must be zero.
LogitFit fit_multinomial_logit(
    const SoftLabelProblem& problem, const LogitOptions& options = {},
    const std::optional<std::vector<Vector>>& start = std::nullopt);

}  // namespace lvmoe

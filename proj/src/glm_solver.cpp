#include "lvmoe/glm_solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lvmoe/errors.hpp"

namespace lvmoe {

namespace {

std::vector<Vector> unpack(const Vector& theta, int classes, int dim) {
  std::vector<Vector> coef(static_cast<std::size_t>(classes),
                           Vector::Zero(dim));
  for (int k = 1; k < classes; ++k)
    coef[static_cast<std::size_t>(k)] = theta.segment((k - 1) * dim, dim);
  return coef;
}

Vector pack(const std::vector<Vector>& coef, int dim) {
  const int classes = static_cast<int>(coef.size());
  Vector theta((classes - 1) * dim);
  for (int k = 1; k < classes; ++k)
    theta.segment((k - 1) * dim, dim) = coef[static_cast<std::size_t>(k)];
  return theta;
}

void check_coefficients(const SoftLabelProblem& problem,
                        const std::vector<Vector>& coef) {
  if (static_cast<int>(coef.size()) != problem.classes())
    throw InputError("coefficient count does not match class count");
  for (const auto& c : coef)
    if (c.size() != problem.design.cols())
      throw InputError("coefficient length does not match design width");
}

// Full Newton steps from a converged point, kept while the gradient keeps
// shrinking. Removes the dependence of the end point on the path taken.
void polish(const SoftLabelProblem& problem, double ridge, LogitFit& fit,
            double grad_norm) {
  const int classes = problem.classes();
  const int dim = problem.dim();
  for (int k = 0; k < 3; ++k) {
    const GradHess gh = logit_grad_hess(problem, fit.coefficients, ridge);
    Eigen::LLT<Matrix> llt(-gh.hessian);
    if (llt.info() != Eigen::Success) return;
    const Vector step = llt.solve(gh.gradient);
    if (!step.allFinite()) return;
    auto next = unpack(pack(fit.coefficients, dim) + step, classes, dim);
    const double next_obj = logit_objective(problem, next, ridge);
    const double next_grad =
        logit_grad_hess(problem, next, ridge).gradient.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(next_obj) || !(next_grad < grad_norm) ||
        next_obj < fit.loglik - 1e-12 * std::abs(fit.loglik))
      return;
    fit.coefficients = std::move(next);
    fit.loglik = next_obj;
    grad_norm = next_grad;
  }
}

}  // namespace

void SoftLabelProblem::validate() const {
  if (design.rows() != weights.rows())
    throw InputError("design and weights differ in row count");
  if (design.rows() == 0) throw InputError("empty problem");
  if (weights.cols() < 1) throw InputError("need at least one class");
  if (!design.allFinite()) throw InputError("non-finite design entry");
  if (!weights.allFinite() || (weights.array() < 0.0).any())
    throw InputError("weights must be finite and nonnegative");
  for (Eigen::Index i = 0; i < weights.rows(); ++i)
    if (std::abs(weights.row(i).sum() - 1.0) > 1e-9)
      throw InputError("weight row " + std::to_string(i) +
                       " does not sum to one");
}

SoftLabelProblem hard_label_problem(Matrix design, std::span<const int> labels,
                                    int classes) {
  if (static_cast<Eigen::Index>(labels.size()) != design.rows())
    throw InputError("label count does not match design rows");
  SoftLabelProblem problem;
  problem.design = std::move(design);
  problem.weights = Matrix::Zero(problem.design.rows(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw InputError("label out of range at row " + std::to_string(i));
    problem.weights(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return problem;
}

double ridge_norm(const std::vector<Vector>& coefficients) {
  if (coefficients.empty()) return 0.0;
  Vector mean = Vector::Zero(coefficients.front().size());
  for (const auto& c : coefficients) mean += c;
  mean /= static_cast<double>(coefficients.size());
  double sq = 0.0;
  for (const auto& c : coefficients) sq += (c - mean).squaredNorm();
  return sq;
}

double logit_objective(const SoftLabelProblem& problem,
                       const std::vector<Vector>& coefficients, double ridge) {
  check_coefficients(problem, coefficients);
  const Matrix logp = log_softmax_rows(problem.design, coefficients);
  double value = 0.0;
  for (Eigen::Index i = 0; i < logp.rows(); ++i)
    for (Eigen::Index k = 0; k < logp.cols(); ++k) {
      const double w = problem.weights(i, k);
      if (w != 0.0) value += w * logp(i, k);
    }
  return value - 0.5 * ridge * ridge_norm(coefficients);
}

GradHess logit_grad_hess(const SoftLabelProblem& problem,
                         const std::vector<Vector>& coefficients,
                         double ridge) {
  check_coefficients(problem, coefficients);
  const int classes = problem.classes();
  const int dim = problem.dim();
  const int free = (classes - 1) * dim;
  const Matrix& x = problem.design;
  const Matrix prob = softmax_rows(x, coefficients);
  const Vector row_mass = problem.weights.rowwise().sum();

  GradHess out;
  out.gradient = Vector::Zero(free);
  out.hessian = Matrix::Zero(free, free);
  for (int k = 1; k < classes; ++k) {
    const Vector resid = problem.weights.col(k) -
                         row_mass.cwiseProduct(prob.col(k));
    out.gradient.segment((k - 1) * dim, dim) = x.transpose() * resid;
    for (int l = k; l < classes; ++l) {
      Vector w = -row_mass.cwiseProduct(prob.col(k)).cwiseProduct(prob.col(l));
      if (l == k) w += row_mass.cwiseProduct(prob.col(k));
      const Matrix block = x.transpose() * w.asDiagonal() * x;
      out.hessian.block((k - 1) * dim, (l - 1) * dim, dim, dim) = -block;
      if (l != k)
        out.hessian.block((l - 1) * dim, (k - 1) * dim, dim, dim) =
            -block.transpose();
    }
  }
  if (free > 0 && ridge != 0.0) {
    Vector mean = Vector::Zero(dim);
    for (const auto& c : coefficients) mean += c;
    mean /= classes;
    for (int k = 1; k < classes; ++k) {
      out.gradient.segment((k - 1) * dim, dim) -=
          ridge * (coefficients[static_cast<std::size_t>(k)] - mean);
      for (int l = 1; l < classes; ++l)
        out.hessian.block((k - 1) * dim, (l - 1) * dim, dim, dim).diagonal().array() -=
            ridge * ((k == l ? 1.0 : 0.0) - 1.0 / classes);
    }
  }
  return out;
}

LogitFit fit_multinomial_logit(const SoftLabelProblem& problem,
                               const LogitOptions& options,
                               const std::optional<std::vector<Vector>>& start) {
  if (!(options.tol > 0.0)) throw InputError("tol must be positive");
  if (!(options.ridge >= 0.0)) throw InputError("ridge must be nonnegative");
  problem.validate();
  const int classes = problem.classes();
  const int dim = problem.dim();
  const auto m = static_cast<double>(problem.design.rows());

  const Vector mass = problem.weights.colwise().sum().transpose();
  for (int k = 0; k < classes; ++k)
    if (mass[k] < 1e-10 * m)
      throw DegenerateClassError(static_cast<std::size_t>(k), mass[k]);

  LogitFit fit;
  if (start) {
    check_coefficients(problem, *start);
    if (!(*start)[0].isZero(0.0))
      throw InputError("warm start must pin the reference class to zero");
    fit.coefficients = *start;
  } else {
    fit.coefficients.assign(static_cast<std::size_t>(classes),
                            Vector::Zero(dim));
  }
  fit.loglik = logit_objective(problem, fit.coefficients, options.ridge);
  if (classes == 1) {
    fit.converged = true;
    return fit;
  }

  const double grad_tol = 1e-6 * m;
  Vector theta = pack(fit.coefficients, dim);
  bool small_change = false;
  for (int iter = 1; iter <= options.max_iter + 1; ++iter) {
    const GradHess gh = logit_grad_hess(problem, fit.coefficients,
                                        options.ridge);
    const double grad_norm = gh.gradient.lpNorm<Eigen::Infinity>();
    if (small_change && grad_norm <= grad_tol) {
      fit.converged = true;
      polish(problem, options.ridge, fit, grad_norm);
      return fit;
    }
    if (iter > options.max_iter) break;
    fit.iterations = iter;
    Matrix info = -gh.hessian;
    Eigen::LLT<Matrix> llt(info);
    // Saturated probabilities can leave the information numerically
    // singular; retry with growing diagonal damping before giving up.
    const double diag_scale = std::max(1.0, info.diagonal().maxCoeff());
    for (double damp = 1e-12 * diag_scale;
         llt.info() != Eigen::Success && damp < 1e-2 * diag_scale;
         damp *= 100.0) {
      Matrix damped = info;
      damped.diagonal().array() += damp;
      llt.compute(damped);
    }
    if (llt.info() != Eigen::Success)
      throw NumericalError("logit Hessian not positive definite at iteration " +
                           std::to_string(iter));
    const Vector step = llt.solve(gh.gradient);
    if (!step.allFinite())
      throw NumericalError("non-finite Newton step at iteration " +
                           std::to_string(iter));

    double scale = 1.0;
    bool accepted = false;
    double next_obj = fit.loglik;
    Vector next_theta;
    std::vector<Vector> next_coef;
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      next_theta = theta + scale * step;
      next_coef = unpack(next_theta, classes, dim);
      next_obj = logit_objective(problem, next_coef, options.ridge);
      if (std::isfinite(next_obj) && next_obj >= fit.loglik) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No ascent possible at working precision.
      fit.converged = grad_norm <= grad_tol;
      return fit;
    }
    const double change = next_obj - fit.loglik;
    theta = next_theta;
    fit.coefficients = std::move(next_coef);
    fit.loglik = next_obj;
    fit.objective_trace.push_back(next_obj);
    small_change = change <= options.tol * std::abs(next_obj);
  }
  fit.converged = false;
  return fit;
}

}  // namespace lvmoe

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lvmoe/errors.hpp"
#include "lvmoe/glm_solver.hpp"
#include "support.hpp"

using namespace lvmoe;

namespace {

// Stacks non-reference coefficients class-major.
Vector stack(const std::vector<Vector>& coef) {
  const auto d = coef[0].size();
  Vector theta(static_cast<Eigen::Index>(coef.size() - 1) * d);
  for (std::size_t k = 1; k < coef.size(); ++k)
    theta.segment(static_cast<Eigen::Index>(k - 1) * d, d) = coef[k];
  return theta;
}

std::vector<Vector> unstack(const Vector& theta, int classes, int d) {
  std::vector<Vector> coef{Vector::Zero(d)};
  for (int k = 1; k < classes; ++k) coef.push_back(theta.segment((k - 1) * d, d));
  return coef;
}

SoftLabelProblem random_soft_problem(std::mt19937_64& rng, int m, int p, int K) {
  SoftLabelProblem prob;
  prob.design = oracle::with_intercept(oracle::random_matrix(rng, m, p));
  std::uniform_real_distribution<double> u(0.05, 1.0);
  prob.weights.resize(m, K);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < K; ++k) prob.weights(i, k) = u(rng);
    prob.weights.row(i) /= prob.weights.row(i).sum();
  }
  return prob;
}

// sum_i sum_k w_ik log p_ik - ridge/2 sum_k |c_k - cbar|^2, looped.
double loop_objective(const SoftLabelProblem& prob, const std::vector<Vector>& coef,
                      double ridge) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < prob.design.rows(); ++i) {
    std::vector<double> z;
    for (const auto& c : coef) z.push_back(prob.design.row(i).dot(c));
    const auto p = oracle::softmax(z);
    for (std::size_t k = 0; k < p.size(); ++k)
      total += prob.weights(i, static_cast<Eigen::Index>(k)) * std::log(p[k]);
  }
  double pen = 0.0;
  for (std::size_t j = 0; j < static_cast<std::size_t>(coef[0].size()); ++j) {
    double mean = 0.0;
    for (const auto& c : coef) mean += c[static_cast<Eigen::Index>(j)];
    mean /= static_cast<double>(coef.size());
    for (const auto& c : coef) {
      const double d = c[static_cast<Eigen::Index>(j)] - mean;
      pen += d * d;
    }
  }
  return total - 0.5 * ridge * pen;
}

}  // namespace

TEST_CASE("logit_objective matches a looped evaluation") {
  std::mt19937_64 rng(3);
  const auto prob = random_soft_problem(rng, 40, 3, 3);
  std::vector<Vector> coef{Vector::Zero(4), Vector::Random(4), Vector::Random(4)};
  CHECK(logit_objective(prob, coef, 0.3) ==
        doctest::Approx(loop_objective(prob, coef, 0.3)).epsilon(1e-12));
}

TEST_CASE("balanced intercept-only problem fits to zero with gradient zero at the origin") {
  SoftLabelProblem prob = hard_label_problem(Matrix::Ones(6, 1),
                                             std::vector<int>{0, 1, 0, 1, 0, 1}, 2);
  const GradHess gh = logit_grad_hess(prob, {Vector::Zero(1), Vector::Zero(1)}, 1e-8);
  CHECK(gh.gradient.norm() == 0.0);
  const LogitFit fit = fit_multinomial_logit(prob);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[1][0]) < 1e-10);
  const Matrix p = softmax_rows(prob.design, fit.coefficients);
  CHECK(p(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("hard labels and their one-hot soft form give the same fit") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> lab(0, 2);
  const Matrix design = oracle::with_intercept(oracle::random_matrix(rng, 60, 2));
  std::vector<int> labels(60);
  for (auto& l : labels) l = lab(rng);
  const SoftLabelProblem hard = hard_label_problem(design, labels, 3);
  SoftLabelProblem soft;
  soft.design = design;
  soft.weights = Matrix::Zero(60, 3);
  for (int i = 0; i < 60; ++i) soft.weights(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  const LogitFit a = fit_multinomial_logit(hard);
  const LogitFit b = fit_multinomial_logit(soft);
  for (int k = 0; k < 3; ++k)
    CHECK((a.coefficients[static_cast<std::size_t>(k)] -
           b.coefficients[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("four-point logistic problem agrees with a scalar Newton solve") {
  Matrix design(4, 2);
  design << 1, -1, 1, -1, 1, 1, 1, 1;
  const std::vector<int> labels{0, 0, 1, 1};
  LogitOptions opt;
  opt.ridge = 1e-4;
  opt.max_iter = 200;
  const LogitFit fit = fit_multinomial_logit(hard_label_problem(design, labels, 2), opt);
  // With two classes the centred penalty is |c_1|^2 / 2.
  const auto [a, b] = oracle::logistic_newton({-1, -1, 1, 1}, {0, 0, 1, 1}, 0.5e-4);
  CHECK(fit.coefficients[1][0] == doctest::Approx(a).epsilon(1e-6));
  CHECK(fit.coefficients[1][1] == doctest::Approx(b).epsilon(1e-6));
  const Matrix p = softmax_rows(design, fit.coefficients);
  CHECK(p(0, 1) < 0.05);
  CHECK(p(2, 1) > 0.95);
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const auto prob = random_soft_problem(rng, 30, 2, 3);
    const Vector theta = 0.5 * Vector::Random(6);
    const double ridge = 0.1;
    const GradHess gh = logit_grad_hess(prob, unstack(theta, 3, 3), ridge);
    const Vector num = oracle::numeric_gradient(
        [&](const Vector& th) { return loop_objective(prob, unstack(th, 3, 3), ridge); },
        theta);
    for (Eigen::Index k = 0; k < num.size(); ++k)
      CHECK(std::abs(gh.gradient[k] - num[k]) <= 1e-6 * std::max(1.0, std::abs(num[k])));
    // Hessian columns are differences of gradients.
    const Vector h0 = oracle::numeric_gradient(
        [&](const Vector& th) {
          return logit_grad_hess(prob, unstack(th, 3, 3), ridge).gradient[0];
        },
        theta);
    for (Eigen::Index k = 0; k < h0.size(); ++k)
      CHECK(std::abs(gh.hessian(0, k) - h0[k]) <= 1e-5 * std::max(1.0, std::abs(h0[k])));
  }
}

TEST_CASE("converged fits are stationary and objective traces are monotone") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const auto prob = random_soft_problem(rng, 80, 3, 3);
    const LogitFit fit = fit_multinomial_logit(prob);
    REQUIRE(fit.converged);
    const GradHess gh = logit_grad_hess(prob, fit.coefficients, 1e-8);
    CHECK(gh.gradient.cwiseAbs().maxCoeff() < 1e-6 * 80);
    for (std::size_t k = 1; k < fit.objective_trace.size(); ++k)
      CHECK(fit.objective_trace[k] >= fit.objective_trace[k - 1] - 1e-10);
  }
}

TEST_CASE("row permutation leaves the fit unchanged") {
  std::mt19937_64 rng(17);
  const auto prob = random_soft_problem(rng, 50, 2, 3);
  std::vector<int> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  SoftLabelProblem permuted = prob;
  for (int i = 0; i < 50; ++i) {
    permuted.design.row(i) = prob.design.row(perm[static_cast<std::size_t>(i)]);
    permuted.weights.row(i) = prob.weights.row(perm[static_cast<std::size_t>(i)]);
  }
  const LogitFit a = fit_multinomial_logit(prob);
  const LogitFit b = fit_multinomial_logit(permuted);
  CHECK((stack(a.coefficients) - stack(b.coefficients)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("separable data without a ridge stops at max_iter, unconverged") {
  Matrix design(6, 2);
  design << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  LogitOptions opt;
  opt.ridge = 0.0;
  opt.max_iter = 25;
  const LogitFit fit =
      fit_multinomial_logit(hard_label_problem(design, std::vector<int>{0, 0, 0, 1, 1, 1}, 2), opt);
  CHECK_FALSE(fit.converged);
  CHECK(fit.coefficients[1].allFinite());
}

TEST_CASE("a class without mass is reported as degenerate") {
  const Matrix design = Matrix::Ones(4, 1);
  CHECK_THROWS_AS(
      fit_multinomial_logit(hard_label_problem(design, std::vector<int>{0, 0, 1, 1}, 3)),
      DegenerateClassError);
}

TEST_CASE("SoftLabelProblem validation") {
  SoftLabelProblem prob;
  prob.design = Matrix::Ones(2, 1);
  prob.weights = Matrix::Constant(2, 2, 0.6);
  CHECK_THROWS_AS(prob.validate(), InputError);
  prob.weights = Matrix::Constant(2, 2, 0.5);
  CHECK_NOTHROW(prob.validate());
  prob.weights(0, 0) = -0.5;
  prob.weights(0, 1) = 1.5;
  CHECK_THROWS_AS(prob.validate(), InputError);
  CHECK_THROWS_AS(hard_label_problem(Matrix::Ones(2, 1), std::vector<int>{0, 2}, 2),
                  InputError);
}

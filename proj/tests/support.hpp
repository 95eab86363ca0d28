#pragma once

// Test-side oracles. These deliberately avoid the library's own evaluators:
// plain loops, a QR solve instead of Cholesky, finite differences.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lvmoe/core_model.hpp"
#include "lvmoe/em_engine.hpp"

namespace oracle {

using lvmoe::Matrix;
using lvmoe::Vector;

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) s += (out[k] = std::exp(z[k] - m));
  for (double& v : out) v /= s;
  return out;
}

inline double dot_aug(const Vector& coef, const Vector& x) {
  double s = coef[0];
  for (Eigen::Index j = 0; j < x.size(); ++j) s += coef[j + 1] * x[j];
  return s;
}

inline double normal_pdf(double y, double mean, double sigma) {
  const double z = (y - mean) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

// Weighted least squares via QR of sqrt(W) Phi.
inline Vector wls(const Matrix& phi, const Vector& y, const Vector& w) {
  const Vector sw = w.array().sqrt().matrix();
  const Matrix a = sw.asDiagonal() * phi;
  const Vector b = sw.cwiseProduct(y);
  return a.colPivHouseholderQr().solve(b);
}

// sum_i w_i (y_i - phi_i beta)^2 / sum_i w_i, looped.
inline double weighted_mse(const Matrix& phi, const Vector& y, const Vector& w,
                           const Vector& beta) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double fit = 0.0;
    for (Eigen::Index j = 0; j < phi.cols(); ++j) fit += phi(i, j) * beta[j];
    num += w[i] * (y[i] - fit) * (y[i] - fit);
    den += w[i];
  }
  return num / den;
}

// Central differences of f at x.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f,
                               const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vector a = x, b = x;
    a[k] += h;
    b[k] -= h;
    g[k] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// Two-parameter logistic MLE with ridge by scalar Newton on (a, b).
inline std::pair<double, double> logistic_newton(const std::vector<double>& x,
                                                 const std::vector<int>& y,
                                                 double ridge) {
  double a = 0.0, b = 0.0;
  for (int it = 0; it < 200; ++it) {
    double ga = -ridge * a, gb = -ridge * b;
    double haa = -ridge, hab = 0.0, hbb = -ridge;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(a + b * x[i])));
      ga += y[i] - p;
      gb += (y[i] - p) * x[i];
      const double w = p * (1.0 - p);
      haa -= w;
      hab -= w * x[i];
      hbb -= w * x[i] * x[i];
    }
    const double det = haa * hbb - hab * hab;
    const double da = (hbb * ga - hab * gb) / det;
    const double db = (haa * gb - hab * ga) / det;
    a -= da;
    b -= db;
    if (std::abs(da) + std::abs(db) < 1e-14) break;
  }
  return {a, b};
}

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Matrix with_intercept(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

// Units of a J_t-component mixture of experts drawn from known parameters.
struct MixtureSample {
  lvmoe::TreatmentSlice slice;
  std::vector<int> labels;
};

inline MixtureSample draw_mixture(std::mt19937_64& rng, int n, int p,
                                  const lvmoe::TreatmentParams& truth) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MixtureSample s;
  const Matrix x = random_matrix(rng, n, p);
  s.slice.design = with_intercept(x);
  s.slice.outcomes.resize(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits;
    for (const auto& e : truth.eta) logits.push_back(dot_aug(e, x.row(i).transpose()));
    const auto pi = softmax(logits);
    double u = unif(rng), acc = 0.0;
    int v = static_cast<int>(pi.size()) - 1;
    for (std::size_t k = 0; k < pi.size(); ++k)
      if (u < (acc += pi[k])) {
        v = static_cast<int>(k);
        break;
      }
    s.labels.push_back(v);
    s.slice.outcomes[i] = dot_aug(truth.beta[static_cast<std::size_t>(v)], x.row(i).transpose()) +
                          truth.sigma[static_cast<std::size_t>(v)] * normal(rng);
    s.slice.indices.push_back(static_cast<std::size_t>(i));
  }
  return s;
}

}  // namespace oracle

#pragma once

#include <random>

#include "pnode/pnode.hpp"

namespace testing_helpers {

using pnode::Matrix;
using pnode::Vector;

/// Independent Van der Pol copies (mu_k = mu * (k+1)) filling d dimensions;
/// an odd leftover dimension follows y' = y_0 - y_last.
inline pnode::OdeProblem vanderpol_copies(std::size_t d, double mu = 1.0) {
  pnode::OdeProblem p;
  p.dim = d;
  p.name = "vanderpol-copies";
  const auto n = static_cast<Eigen::Index>(d);
  p.f = [n, mu](double, const Vector& y, Vector& out) {
    Eigen::Index i = 0;
    for (; i + 1 < n; i += 2) {
      const double m = mu * static_cast<double>(i / 2 + 1);
      out(i) = y(i + 1);
      out(i + 1) = m * ((1.0 - y(i) * y(i)) * y(i + 1) - y(i));
    }
    if (i < n) out(i) = y(0) - y(i);
  };
  p.jac_dense = [n, mu](double, const Vector& y, Matrix& out) {
    out.setZero(n, n);
    Eigen::Index i = 0;
    for (; i + 1 < n; i += 2) {
      const double m = mu * static_cast<double>(i / 2 + 1);
      out(i, i + 1) = 1.0;
      out(i + 1, i) = m * (-2.0 * y(i) * y(i + 1) - 1.0);
      out(i + 1, i + 1) = m * (1.0 - y(i) * y(i));
    }
    if (i < n) {
      out(i, 0) += 1.0;
      out(i, i) -= 1.0;
    }
  };
  p.jac_diag = [n, mu](double, const Vector& y, Vector& out) {
    Eigen::Index i = 0;
    for (; i + 1 < n; i += 2) {
      out(i) = 0.0;
      out(i + 1) = mu * static_cast<double>(i / 2 + 1) * (1.0 - y(i) * y(i));
    }
    if (i < n) out(i) = n == 1 ? 0.0 : -1.0;
  };
  p.y0 = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) p.y0(i) = i % 2 == 0 ? 2.0 : 0.0;
  p.t0 = 0.0;
  p.tmax = 1.0;
  return p;
}

/// Linear test problem y' = lambda * y.
inline pnode::OdeProblem linear(double lambda, std::size_t d = 1, double tmax = 1.0) {
  pnode::OdeProblem p;
  p.dim = d;
  p.name = "linear";
  p.f = [lambda](double, const Vector& y, Vector& out) { out = lambda * y; };
  p.jac_diag = [lambda](double, const Vector&, Vector& out) { out.setConstant(lambda); };
  p.jac_dense = [lambda, d](double, const Vector&, Matrix& out) {
    out = lambda * Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  };
  p.y0 = Vector::Ones(static_cast<Eigen::Index>(d));
  p.tmax = tmax;
  return p;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n) { return random_matrix(rng, n, 1); }

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testing_helpers

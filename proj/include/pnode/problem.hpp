#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>

#include "pnode/structmat.hpp"

namespace pnode {

/// out = f(t, y)
using VectorField = std::function<void(double t, const Vector& y, Vector& out)>;
/// out = df/dy (d x d)
using DenseJacobian = std::function<void(double t, const Vector& y, Matrix& out)>;
/// out = diag(df/dy)
using DiagonalJacobian = std::function<void(double t, const Vector& y, Vector& out)>;

/// Initial value problem y' = f(y, t), y(t0) = y0 on [t0, tmax].
struct OdeProblem {
  std::size_t dim = 0;
  VectorField f;
  DenseJacobian jac_dense;
  DiagonalJacobian jac_diag;
  Vector y0;
  double t0 = 0.0;
  double tmax = 1.0;
  std::string name;
  std::map<std::string, double> params;
  /// Free-form facts worth recording next to results (grid ordering, boundary handling).
  std::map<std::string, std::string> notes;

  [[nodiscard]] Vector eval(double t, const Vector& y) const {
    Vector out(static_cast<Eigen::Index>(dim));
    f(t, y, out);
    return out;
  }

  [[nodiscard]] bool has_dense_jacobian() const noexcept { return static_cast<bool>(jac_dense); }
  [[nodiscard]] bool has_diagonal_jacobian() const noexcept { return static_cast<bool>(jac_diag); }
};

}  // namespace pnode

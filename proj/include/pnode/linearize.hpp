#pragma once

#include <atomic>
#include <iostream>
#include <optional>
#include <string>

#include "pnode/problem.hpp"

namespace pnode {

enum class Strategy { kEK0, kDiagonalEK1, kDenseEK1 };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kEK0: return "ek0";
    case Strategy::kDiagonalEK1: return "ek1-diag";
    case Strategy::kDenseEK1: return "ek1-dense";
  }
  return "?";
}

/// Linearized information operator H Y + b at xi = E0 eta with
/// H = E1 - F_y E0 and b = F_y xi - f(xi, t). H and b are never formed;
/// the Jacobian approximation, f(xi) and xi are kept instead.
struct Linearization {
  Strategy kind = Strategy::kEK0;
  std::optional<Vector> jac_diag;
  std::optional<Matrix> jac_dense;
  Vector fval;
  Vector point;
  double t = 0.0;

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(fval.size()); }

  /// F_y * x for the active Jacobian approximation (zero for EK0).
  [[nodiscard]] Vector jacobian_times(const Vector& x) const {
    if (jac_dense) return (*jac_dense) * x;
    if (jac_diag) return jac_diag->cwiseProduct(x);
    return Vector::Zero(x.size());
  }

  /// b = F_y xi - f(xi, t).
  [[nodiscard]] Vector offset() const { return jacobian_times(point) - fval; }

  /// z = row1 - f(xi, t) - F_y (row0 - xi), i.e. H m + b for a mean with
  /// zeroth-derivative column row0 and first-derivative column row1.
  [[nodiscard]] Vector residual(const Vector& row0, const Vector& row1) const {
    if (jac_dense || jac_diag) {
      return row1 - fval - jacobian_times(row0 - point);
    }
    return row1 - fval;
  }

  /// Jacobian diagonal entry used in block i (0 for EK0).
  [[nodiscard]] double diag_entry(std::size_t i) const {
    const auto k = static_cast<Eigen::Index>(i);
    if (jac_diag) return (*jac_diag)(k);
    if (jac_dense) return (*jac_dense)(k, k);
    return 0.0;
  }
};

namespace detail {

inline void warn_diagonal_extraction_once() {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true)) {
    std::clog << "pnode: diagonal EK1 is extracting the diagonal from a dense Jacobian (O(d^2) per step)\n";
  }
}

}  // namespace detail

[[nodiscard]] inline Linearization linearize_at(Strategy strategy, const OdeProblem& problem, const Vector& xi,
                                                double t) {
  if (static_cast<std::size_t>(xi.size()) != problem.dim) {
    throw Error(ErrorKind::kDimension, "linearize_at: point has length " + std::to_string(xi.size()) +
                                           ", problem dimension is " + std::to_string(problem.dim));
  }
  Linearization lin;
  lin.kind = strategy;
  lin.point = xi;
  lin.t = t;
  lin.fval.resize(xi.size());
  problem.f(t, xi, lin.fval);
  if (!lin.fval.allFinite()) {
    throw Error(ErrorKind::kNonFinite, "vector field returned a non-finite value", t);
  }
  switch (strategy) {
    case Strategy::kEK0:
      break;
    case Strategy::kDiagonalEK1: {
      Vector diag(xi.size());
      if (problem.has_diagonal_jacobian()) {
        problem.jac_diag(t, xi, diag);
      } else if (problem.has_dense_jacobian()) {
        detail::warn_diagonal_extraction_once();
        Matrix jac(xi.size(), xi.size());
        problem.jac_dense(t, xi, jac);
        diag = jac.diagonal();
      } else {
        throw Error(ErrorKind::kMissingJacobian,
                    "diagonal EK1 needs a diagonal or dense Jacobian; wrap the problem with fd_jacobian_wrapper "
                    "to use finite differences",
                    t);
      }
      if (!diag.allFinite()) {
        throw Error(ErrorKind::kNonFinite, "diagonal Jacobian returned a non-finite value", t);
      }
      lin.jac_diag = std::move(diag);
      break;
    }
    case Strategy::kDenseEK1: {
      if (!problem.has_dense_jacobian()) {
        throw Error(ErrorKind::kMissingJacobian, "dense EK1 needs a dense Jacobian", t);
      }
      Matrix jac(xi.size(), xi.size());
      problem.jac_dense(t, xi, jac);
      if (!jac.allFinite()) {
        throw Error(ErrorKind::kNonFinite, "Jacobian returned a non-finite value", t);
      }
      lin.jac_dense = std::move(jac);
      break;
    }
  }
  return lin;
}

}  // namespace pnode

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pnode/diffusion.hpp"
#include "pnode/state.hpp"

namespace pnode {

/// Lower bound applied to local diffusion estimates before they scale the
/// process noise. An exactly zero residual would otherwise zero out the
/// process noise and, a few steps later, the innovation.
inline constexpr double kGammaSqFloor = 1e-14;

[[nodiscard]] inline double floor_gamma_sq(double g) { return std::max(g, kGammaSqFloor); }

namespace detail {

inline void check_sigma_meas(const Vector& z, const Vector& sigma_meas) {
  if (z.size() != sigma_meas.size()) {
    throw Error(ErrorKind::kDimension, "calibration: residual has length " + std::to_string(z.size()) +
                                           ", noise has length " + std::to_string(sigma_meas.size()));
  }
  for (Eigen::Index i = 0; i < sigma_meas.size(); ++i) {
    if (!(sigma_meas(i) > 0.0) || !std::isfinite(sigma_meas(i))) {
      throw Error(ErrorKind::kInvalidArgument,
                  "calibration: measurement noise entry " + std::to_string(i) + " is not positive");
    }
  }
}

}  // namespace detail

/// Local scalar quasi-MLE (1/d) z^T [H Sigma(h) H^T]^-1 z.
///
/// sigma_meas holds the diagonal of H Sigma(h) H^T under unit gamma. With a
/// non-diagonal gamma_breve (Kronecker EK0) the matrix is
/// gamma_breve * sigma_11 and the estimate is computed from
/// z^T gamma_breve^-1 z / sigma_11, which costs one inverse-quadratic.
[[nodiscard]] inline double calibrate_local_scalar(const Vector& z, const Vector& sigma_meas,
                                                   const DiffusionSpec& spec = {}) {
  detail::check_sigma_meas(z, sigma_meas);
  const double d = static_cast<double>(z.size());
  if (!spec.gamma_breve.is_diagonal()) {
    const double right = sigma_meas(0) / spec.gamma_breve.diag(0);
    return spec.gamma_breve.inv_quad(z) / (d * right);
  }
  return (z.array().square() / sigma_meas.array()).sum() / d;
}

/// Same estimator for a dense H Sigma(h) H^T (dense EK1 reference).
[[nodiscard]] inline double calibrate_local_scalar_dense(const Vector& z, const Matrix& sigma_full) {
  Eigen::LDLT<Matrix> ldlt(sigma_full);
  if (ldlt.info() != Eigen::Success) {
    throw Error(ErrorKind::kInvalidArgument, "calibration: H Sigma H^T is not positive definite");
  }
  return z.dot(ldlt.solve(z)) / static_cast<double>(z.size());
}

/// Per-dimension local quasi-MLEs z_i^2 / [H Sigma(h) H^T]_ii.
[[nodiscard]] inline Vector calibrate_local_vector(const Vector& z, const Vector& sigma_meas) {
  detail::check_sigma_meas(z, sigma_meas);
  return z.array().square() / sigma_meas.array();
}

/// Running sums for the time-constant estimators. The vector form keeps one
/// sum per dimension; the scalar form keeps a single sum of
/// (1/d) z^T S^-1 z.
struct CalibrationAccumulator {
  std::size_t count = 0;
  Vector sums;

  static CalibrationAccumulator scalar() { return {0, Vector::Zero(1)}; }
  static CalibrationAccumulator vector(std::size_t d) { return {0, Vector::Zero(static_cast<Eigen::Index>(d))}; }

  [[nodiscard]] bool is_scalar() const noexcept { return sums.size() == 1; }

  /// gamma_hat^2 = sums / count.
  [[nodiscard]] Vector finalize() const {
    if (count == 0) {
      throw Error(ErrorKind::kInvalidArgument, "calibration: no measurements accumulated");
    }
    return sums / static_cast<double>(count);
  }
};

/// One measurement into the time-constant estimate. s_unit is the diagonal of
/// the innovation covariance computed under unit diffusion.
[[nodiscard]] inline CalibrationAccumulator accumulate_time_constant(CalibrationAccumulator acc, const Vector& z,
                                                                     const Vector& s_unit) {
  detail::check_sigma_meas(z, s_unit);
  const Vector ratios = z.array().square() / s_unit.array();
  if (acc.is_scalar() && z.size() != 1) {
    acc.sums(0) += ratios.sum() / static_cast<double>(z.size());
  } else {
    if (acc.sums.size() != z.size()) {
      throw Error(ErrorKind::kDimension, "calibration: accumulator has " + std::to_string(acc.sums.size()) +
                                             " entries, residual has " + std::to_string(z.size()));
    }
    acc.sums += ratios;
  }
  ++acc.count;
  return acc;
}

/// Scalar accumulation from an already normalized (1/d) z^T S^-1 z.
[[nodiscard]] inline CalibrationAccumulator accumulate_time_constant(CalibrationAccumulator acc,
                                                                     double normalized_quadratic) {
  if (!acc.is_scalar()) {
    throw Error(ErrorKind::kDimension, "calibration: scalar accumulation into a vector accumulator");
  }
  if (!(normalized_quadratic >= 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "calibration: negative quadratic form");
  }
  acc.sums(0) += normalized_quadratic;
  ++acc.count;
  return acc;
}

/// Multiplies the covariance of state by gamma_sq (length 1 or d); the mean
/// is untouched. Kronecker states only accept a scalar, applied to the right
/// factor.
[[nodiscard]] inline GaussianState rescale_posthoc(GaussianState state, const Vector& gamma_sq) {
  const auto d = static_cast<Eigen::Index>(state.dim());
  const auto r = static_cast<Eigen::Index>(state.block_size());
  if (gamma_sq.size() != 1 && gamma_sq.size() != d) {
    throw Error(ErrorKind::kDimension, "rescale_posthoc: gamma_sq has length " + std::to_string(gamma_sq.size()) +
                                           ", expected 1 or " + std::to_string(d));
  }
  if ((gamma_sq.array() < 0.0).any()) {
    throw Error(ErrorKind::kInvalidArgument, "rescale_posthoc: negative gamma_sq");
  }
  const Vector root = gamma_sq.cwiseSqrt();
  auto factor = [&](Eigen::Index i) { return root.size() == 1 ? root(0) : root(i); };
  if (state.cov_sqrt.holds<Kronecker>()) {
    if (root.size() != 1) {
      throw Error(ErrorKind::kDimension, "rescale_posthoc: kronecker covariances take a scalar gamma_sq");
    }
    state.cov_sqrt.as<Kronecker>().right *= root(0);
  } else if (state.cov_sqrt.holds<BlockDiagonal>()) {
    auto& b = state.cov_sqrt.as<BlockDiagonal>();
    for (Eigen::Index i = 0; i < d; ++i) b.block(static_cast<std::size_t>(i)) *= factor(i);
  } else {
    auto& m = state.cov_sqrt.as<Dense>().entries;
    for (Eigen::Index i = 0; i < d; ++i) m.middleRows(i * r, r) *= factor(i);
  }
  return state;
}

[[nodiscard]] inline std::vector<GaussianState> rescale_posthoc(std::vector<GaussianState> states,
                                                                const Vector& gamma_sq) {
  for (auto& s : states) s = rescale_posthoc(std::move(s), gamma_sq);
  return states;
}

}  // namespace pnode

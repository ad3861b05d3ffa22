#pragma once

#include <cmath>
#include <cstddef>

#include "pnode/config.hpp"
#include "pnode/structmat.hpp"

namespace pnode {

/// Filter state at one time point: mean grid (d x (nu+1)) and a square root
/// of the d(nu+1) x d(nu+1) covariance in the solver's structure.
struct GaussianState {
  double t = 0.0;
  MeanGrid mean;
  StructuredMatrix cov_sqrt;

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.rows()); }
  [[nodiscard]] std::size_t block_size() const noexcept { return static_cast<std::size_t>(mean.cols()); }

  [[nodiscard]] Structure structure() const {
    if (cov_sqrt.holds<Kronecker>()) return Structure::kKronecker;
    if (cov_sqrt.holds<BlockDiagonal>()) return Structure::kBlockDiagonal;
    return Structure::kDense;
  }

  /// Mean flattened dimension-major: (y_1, y_1', ..., y_2, y_2', ...).
  [[nodiscard]] Vector mean_vector() const {
    return Eigen::Map<const Vector>(mean.data(), mean.size());
  }

  [[nodiscard]] Matrix covariance() const {
    const Matrix s = cov_sqrt.to_dense();
    return s * s.transpose();
  }

  /// Marginal standard deviations of derivative q, one per dimension.
  [[nodiscard]] Vector marginal_std(std::size_t q = 0) const {
    const auto d = static_cast<Eigen::Index>(dim());
    const auto r = static_cast<Eigen::Index>(block_size());
    const auto k = static_cast<Eigen::Index>(q);
    Vector out(d);
    if (cov_sqrt.holds<BlockDiagonal>()) {
      const auto& b = cov_sqrt.as<BlockDiagonal>();
      for (Eigen::Index i = 0; i < d; ++i) out(i) = b.block(static_cast<std::size_t>(i)).row(k).norm();
    } else if (cov_sqrt.holds<Kronecker>()) {
      const auto& kr = cov_sqrt.as<Kronecker>();
      const double right = kr.right.row(k).norm();
      if (kr.left_is_identity()) {
        out.setConstant(right);
      } else {
        out = kr.left->rowwise().norm() * right;
      }
    } else {
      const auto& dn = cov_sqrt.as<Dense>();
      for (Eigen::Index i = 0; i < d; ++i) out(i) = dn.entries.row(i * r + k).norm();
    }
    return out;
  }
};

/// Packs a per-dimension square root (identical across dimensions) into the
/// requested structure, scaled by sqrt(scale * gamma_breve_ii), i.e. the
/// covariance scale * (gamma_breve (x) right_sqrt right_sqrt^T).
[[nodiscard]] inline StructuredMatrix pack_covariance_sqrt(Structure structure, std::size_t d,
                                                           const Matrix& right_sqrt, const GammaBreve& gamma_breve,
                                                           double scale = 1.0) {
  const auto r = right_sqrt.rows();
  const double root = std::sqrt(scale);
  switch (structure) {
    case Structure::kKronecker: {
      if (gamma_breve.is_identity()) {
        return StructuredMatrix::kronecker_identity(d, root * right_sqrt);
      }
      return StructuredMatrix::kronecker(gamma_breve.sqrt_factor(), root * right_sqrt);
    }
    case Structure::kBlockDiagonal: {
      Matrix packed(r, r * static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) {
        packed.middleCols(static_cast<Eigen::Index>(i) * r, r) = root * std::sqrt(gamma_breve.diag(i)) * right_sqrt;
      }
      return StructuredMatrix::block_diagonal_packed(std::move(packed));
    }
    case Structure::kDense: {
      const auto n = r * static_cast<Eigen::Index>(d);
      Matrix full = Matrix::Zero(n, n);
      if (gamma_breve.is_diagonal()) {
        for (std::size_t i = 0; i < d; ++i) {
          const auto off = static_cast<Eigen::Index>(i) * r;
          full.block(off, off, r, r) = root * std::sqrt(gamma_breve.diag(i)) * right_sqrt;
        }
      } else {
        const Matrix& left = *gamma_breve.sqrt_factor();
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d); ++i) {
          for (Eigen::Index j = 0; j <= i; ++j) {
            full.block(i * r, j * r, r, r) = root * left(i, j) * right_sqrt;
          }
        }
      }
      return StructuredMatrix::dense(std::move(full));
    }
  }
  throw Error(ErrorKind::kConfig, "unknown structure");
}

/// Same state in the dense representation.
[[nodiscard]] inline GaussianState to_dense(const GaussianState& state) {
  return GaussianState{state.t, state.mean, StructuredMatrix::dense(state.cov_sqrt.to_dense())};
}

}  // namespace pnode

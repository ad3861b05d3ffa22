#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "pnode/structmat.hpp"

namespace pnode {

enum class Variability { kTimeVarying, kTimeConstant };
enum class DiffusionShape { kScalar, kVector };

/// The fixed left factor of the diffusion, Gamma = gamma^2 * breve(Gamma).
/// Identity by default; diagonal for the independence-based solvers; dense
/// (with a cheap x^T Gamma^-1 x) for Kronecker solvers.
class GammaBreve {
 public:
  using InverseQuadratic = std::function<double(const Vector&)>;

  GammaBreve() = default;

  static GammaBreve identity() { return GammaBreve(); }

  static GammaBreve diagonal(Vector entries) {
    if ((entries.array() <= 0.0).any() || !entries.allFinite()) {
      throw Error(ErrorKind::kInvalidArgument, "diagonal gamma_breve must be positive and finite");
    }
    GammaBreve g;
    g.diag_ = std::move(entries);
    return g;
  }

  /// Dense SPD left factor. Without an explicit inverse-quadratic callback a
  /// Cholesky solve is used (O(d^2) per call).
  static GammaBreve dense(Matrix gamma, InverseQuadratic inv_quad = {}) {
    if (gamma.rows() != gamma.cols()) {
      throw Error(ErrorKind::kDimension, "gamma_breve must be square");
    }
    Eigen::LLT<Matrix> llt(gamma);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::kInvalidArgument, "gamma_breve must be symmetric positive definite");
    }
    GammaBreve g;
    g.sqrt_ = std::make_shared<const Matrix>(llt.matrixL());
    g.dense_ = std::make_shared<const Matrix>(std::move(gamma));
    if (inv_quad) {
      g.inv_quad_ = std::move(inv_quad);
    } else {
      auto factor = std::make_shared<const Eigen::LLT<Matrix>>(llt);
      g.inv_quad_ = [factor](const Vector& x) { return x.dot(factor->solve(x)); };
    }
    return g;
  }

  [[nodiscard]] bool is_identity() const noexcept { return !diag_ && !dense_; }
  [[nodiscard]] bool is_diagonal() const noexcept { return !dense_; }

  /// Entry (i, i).
  [[nodiscard]] double diag(std::size_t i) const {
    if (diag_) return (*diag_)(static_cast<Eigen::Index>(i));
    if (dense_) return (*dense_)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    return 1.0;
  }

  /// x^T breve(Gamma)^-1 x.
  [[nodiscard]] double inv_quad(const Vector& x) const {
    if (diag_) return (x.array().square() / diag_->array()).sum();
    if (dense_) return inv_quad_(x);
    return x.squaredNorm();
  }

  /// Lower-triangular square root; null for identity.
  [[nodiscard]] std::shared_ptr<const Matrix> sqrt_factor() const {
    if (sqrt_) return sqrt_;
    if (diag_) {
      return std::make_shared<const Matrix>(diag_->cwiseSqrt().asDiagonal().toDenseMatrix());
    }
    return nullptr;
  }

  [[nodiscard]] Matrix to_dense(std::size_t d) const {
    if (dense_) return *dense_;
    if (diag_) return diag_->asDiagonal().toDenseMatrix();
    return Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  }

  [[nodiscard]] std::optional<std::size_t> dim() const {
    if (diag_) return static_cast<std::size_t>(diag_->size());
    if (dense_) return static_cast<std::size_t>(dense_->rows());
    return std::nullopt;
  }

 private:
  std::optional<Vector> diag_;
  std::shared_ptr<const Matrix> dense_;
  std::shared_ptr<const Matrix> sqrt_;
  InverseQuadratic inv_quad_;
};

struct DiffusionSpec {
  Variability variability = Variability::kTimeVarying;
  DiffusionShape shape = DiffusionShape::kScalar;
  GammaBreve gamma_breve;
  /// Fixed gamma^2 used while solving in time-constant modes. The mean
  /// trajectory does not depend on it; the returned covariances scale with it.
  double fixed_gamma_sq = 1.0;

  [[nodiscard]] bool time_varying() const noexcept { return variability == Variability::kTimeVarying; }
  [[nodiscard]] bool vector_valued() const noexcept { return shape == DiffusionShape::kVector; }
};

inline std::string to_string(const DiffusionSpec& spec) {
  std::string out = spec.time_varying() ? "tv-" : "tc-";
  out += spec.vector_valued() ? "vector" : "scalar";
  return out;
}

}  // namespace pnode

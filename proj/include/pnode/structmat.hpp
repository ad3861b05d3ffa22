#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pnode/error.hpp"

namespace pnode {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// d x (nu+1) grid, one row per ODE dimension. Row-major so that each
/// dimension's derivative stack is contiguous, which matches the I_d (x) .
/// state ordering used by every structured operator.
using MeanGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

[[nodiscard]] inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

[[nodiscard]] inline std::string dims(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace detail

/// left (x) right. A null left factor stands for the identity of size
/// left_dim, so that I_d (x) R never materializes a d x d matrix.
struct Kronecker {
  std::size_t left_dim = 0;
  std::shared_ptr<const Matrix> left;
  Matrix right;

  [[nodiscard]] bool left_is_identity() const noexcept { return left == nullptr; }
};

/// d equally sized r x r blocks, packed side by side into one r x (d*r)
/// buffer (block i occupies columns [i*r, (i+1)*r)).
struct BlockDiagonal {
  Matrix packed;

  [[nodiscard]] std::size_t block_size() const noexcept {
    return static_cast<std::size_t>(packed.rows());
  }
  [[nodiscard]] std::size_t count() const noexcept {
    return packed.rows() == 0 ? 0 : static_cast<std::size_t>(packed.cols() / packed.rows());
  }
  [[nodiscard]] auto block(std::size_t i) {
    const auto r = packed.rows();
    return packed.middleCols(static_cast<Eigen::Index>(i) * r, r);
  }
  [[nodiscard]] auto block(std::size_t i) const {
    const auto r = packed.rows();
    return packed.middleCols(static_cast<Eigen::Index>(i) * r, r);
  }
};

struct Dense {
  Matrix entries;
};

/// Square matrix in Kronecker, block-diagonal or dense representation.
/// Covariance square roots live in this type; only sqrt * sqrt^T is
/// meaningful, the factor itself need not be triangular.
class StructuredMatrix {
 public:
  using Variant = std::variant<Kronecker, BlockDiagonal, Dense>;

  StructuredMatrix() = default;

  static StructuredMatrix kronecker(std::shared_ptr<const Matrix> left, Matrix right) {
    if (!left) {
      throw Error(ErrorKind::kInvalidArgument, "kronecker: null left factor without a dimension");
    }
    if (left->rows() != left->cols() || right.rows() != right.cols()) {
      throw Error(ErrorKind::kDimension, "kronecker factors must be square, got " +
                                             detail::dims(left->rows(), left->cols()) + " and " +
                                             detail::dims(right.rows(), right.cols()));
    }
    const auto d = static_cast<std::size_t>(left->rows());
    return StructuredMatrix(Kronecker{d, std::move(left), std::move(right)});
  }

  static StructuredMatrix kronecker_identity(std::size_t d, Matrix right) {
    if (right.rows() != right.cols()) {
      throw Error(ErrorKind::kDimension,
                  "kronecker right factor must be square, got " + detail::dims(right.rows(), right.cols()));
    }
    return StructuredMatrix(Kronecker{d, nullptr, std::move(right)});
  }

  static StructuredMatrix block_diagonal(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) {
      return StructuredMatrix(BlockDiagonal{});
    }
    const auto r = blocks.front().rows();
    Matrix packed(r, r * static_cast<Eigen::Index>(blocks.size()));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i].rows() != r || blocks[i].cols() != r) {
        throw Error(ErrorKind::kDimension, "block " + std::to_string(i) + " is " +
                                               detail::dims(blocks[i].rows(), blocks[i].cols()) +
                                               ", expected " + detail::dims(r, r));
      }
      packed.middleCols(static_cast<Eigen::Index>(i) * r, r) = blocks[i];
    }
    return StructuredMatrix(BlockDiagonal{std::move(packed)});
  }

  static StructuredMatrix block_diagonal_packed(Matrix packed) {
    if (packed.rows() != 0 && packed.cols() % packed.rows() != 0) {
      throw Error(ErrorKind::kDimension,
                  "packed blocks " + detail::dims(packed.rows(), packed.cols()) + " are ragged");
    }
    return StructuredMatrix(BlockDiagonal{std::move(packed)});
  }

  static StructuredMatrix dense(Matrix entries) {
    if (entries.rows() != entries.cols()) {
      throw Error(ErrorKind::kDimension,
                  "dense matrix must be square, got " + detail::dims(entries.rows(), entries.cols()));
    }
    return StructuredMatrix(Dense{std::move(entries)});
  }

  [[nodiscard]] std::size_t size() const {
    return std::visit(
        [](const auto& m) -> std::size_t {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, Kronecker>) {
            return m.left_dim * static_cast<std::size_t>(m.right.rows());
          } else if constexpr (std::is_same_v<T, BlockDiagonal>) {
            return static_cast<std::size_t>(m.packed.cols());
          } else {
            return static_cast<std::size_t>(m.entries.rows());
          }
        },
        repr_);
  }

  template <class T>
  [[nodiscard]] bool holds() const noexcept {
    return std::holds_alternative<T>(repr_);
  }
  template <class T>
  [[nodiscard]] const T& as() const {
    return std::get<T>(repr_);
  }
  template <class T>
  [[nodiscard]] T& as() {
    return std::get<T>(repr_);
  }
  [[nodiscard]] const Variant& variant() const noexcept { return repr_; }

  [[nodiscard]] const char* kind_name() const {
    if (holds<Kronecker>()) return "kronecker";
    if (holds<BlockDiagonal>()) return "block-diagonal";
    return "dense";
  }

  /// M * v without materializing structured variants.
  [[nodiscard]] Vector apply(const Vector& v) const {
    const std::size_t n = size();
    if (static_cast<std::size_t>(v.size()) != n) {
      throw Error(ErrorKind::kDimension, "apply: matrix is " + std::to_string(n) + "x" +
                                             std::to_string(n) + " but vector has length " +
                                             std::to_string(v.size()));
    }
    Vector out(v.size());
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, Kronecker>) {
            // (L (x) R) vec_r(V) = vec_r(L V R^T) for the row-major d x r grid V.
            const auto d = static_cast<Eigen::Index>(m.left_dim);
            const auto r = m.right.rows();
            Eigen::Map<const MeanGrid> grid(v.data(), d, r);
            Eigen::Map<MeanGrid> result(out.data(), d, r);
            if (m.left_is_identity()) {
              result.noalias() = grid * m.right.transpose();
            } else {
              result.noalias() = (*m.left) * (grid * m.right.transpose());
            }
          } else if constexpr (std::is_same_v<T, BlockDiagonal>) {
            const auto r = static_cast<Eigen::Index>(m.block_size());
            for (std::size_t i = 0; i < m.count(); ++i) {
              const auto off = static_cast<Eigen::Index>(i) * r;
              out.segment(off, r).noalias() = m.block(i) * v.segment(off, r);
            }
          } else {
            out.noalias() = m.entries * v;
          }
        },
        repr_);
    return out;
  }

  [[nodiscard]] Matrix to_dense() const {
    const auto n = static_cast<Eigen::Index>(size());
    Matrix out = Matrix::Zero(n, n);
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, Kronecker>) {
            const auto d = static_cast<Eigen::Index>(m.left_dim);
            const auto r = m.right.rows();
            for (Eigen::Index i = 0; i < d; ++i) {
              for (Eigen::Index j = 0; j < d; ++j) {
                const double lij = m.left_is_identity() ? (i == j ? 1.0 : 0.0) : (*m.left)(i, j);
                if (lij != 0.0) {
                  out.block(i * r, j * r, r, r) = lij * m.right;
                }
              }
            }
          } else if constexpr (std::is_same_v<T, BlockDiagonal>) {
            const auto r = static_cast<Eigen::Index>(m.block_size());
            for (std::size_t i = 0; i < m.count(); ++i) {
              const auto off = static_cast<Eigen::Index>(i) * r;
              out.block(off, off, r, r) = m.block(i);
            }
          } else {
            out = m.entries;
          }
        },
        repr_);
    return out;
  }

 private:
  explicit StructuredMatrix(Variant repr) : repr_(std::move(repr)) {}

  Variant repr_;
};

/// Reusable buffers for repeated triangularizations of equal-shaped stacks.
class GramSqrtWorkspace {
 public:
  /// Upper-triangular R with R^T R = top^T top + bottom^T bottom.
  template <class Top, class Bottom, class Out>
  void compute(const Eigen::MatrixBase<Top>& top, const Eigen::MatrixBase<Bottom>& bottom,
               Eigen::MatrixBase<Out>& out) {
    const auto n = top.cols();
    const auto m = top.rows() + bottom.rows();
    stack_.resize(m, n);
    stack_.topRows(top.rows()) = top;
    stack_.bottomRows(bottom.rows()) = bottom;
    qr_.compute(stack_);
    out.derived().resize(n, n);
    out.derived() = qr_.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
  }

 private:
  Matrix stack_;
  Eigen::HouseholderQR<Matrix> qr_;
};

/// R from the orthogonal-triangular factorization of [top; bottom]. R is
/// unique up to row signs; callers only rely on R^T R.
[[nodiscard]] inline Matrix gram_sqrt_of_stack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw Error(ErrorKind::kDimension, "gram_sqrt_of_stack: top is " + detail::dims(top.rows(), top.cols()) +
                                           ", bottom is " + detail::dims(bottom.rows(), bottom.cols()));
  }
  if (top.rows() + bottom.rows() < top.cols()) {
    throw Error(ErrorKind::kDimension, "gram_sqrt_of_stack: stack has " +
                                           std::to_string(top.rows() + bottom.rows()) + " rows, needs at least " +
                                           std::to_string(top.cols()));
  }
  if (!detail::all_finite(top) || !detail::all_finite(bottom)) {
    throw Error(ErrorKind::kNonFinite, "gram_sqrt_of_stack: non-finite input");
  }
  GramSqrtWorkspace ws;
  Matrix r;
  ws.compute(top, bottom, r);
  return r;
}

/// Independent gram_sqrt_of_stack per block. Blocks share no state, so the
/// loop may be split across workers without changing any result bit.
[[nodiscard]] inline std::vector<Matrix> blockwise_gram_sqrt(const std::vector<Matrix>& tops,
                                                             const std::vector<Matrix>& bottoms) {
  if (tops.size() != bottoms.size()) {
    throw Error(ErrorKind::kDimension, "blockwise_gram_sqrt: " + std::to_string(tops.size()) + " tops vs " +
                                           std::to_string(bottoms.size()) + " bottoms");
  }
  std::vector<Matrix> out(tops.size());
  if (tops.empty()) {
    return out;
  }
  const auto n = tops.front().cols();
  const auto m1 = tops.front().rows();
  const auto m2 = bottoms.front().rows();
  if (m1 + m2 < n) {
    throw Error(ErrorKind::kDimension, "blockwise_gram_sqrt: stacks have fewer rows than columns");
  }
  GramSqrtWorkspace ws;
  for (std::size_t i = 0; i < tops.size(); ++i) {
    if (tops[i].cols() != n || bottoms[i].cols() != n || tops[i].rows() != m1 || bottoms[i].rows() != m2) {
      throw Error(ErrorKind::kDimension, "blockwise_gram_sqrt: ragged block at index " + std::to_string(i));
    }
    if (!detail::all_finite(tops[i]) || !detail::all_finite(bottoms[i])) {
      throw Error(ErrorKind::kNonFinite, "blockwise_gram_sqrt: non-finite block at index " + std::to_string(i));
    }
    ws.compute(tops[i], bottoms[i], out[i]);
  }
  return out;
}

}  // namespace pnode

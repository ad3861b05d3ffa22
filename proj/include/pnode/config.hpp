#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pnode/diffusion.hpp"
#include "pnode/linearize.hpp"

namespace pnode {

enum class Structure { kDense, kBlockDiagonal, kKronecker };

inline const char* to_string(Structure s) {
  switch (s) {
    case Structure::kDense: return "dense";
    case Structure::kBlockDiagonal: return "block-diagonal";
    case Structure::kKronecker: return "kronecker";
  }
  return "?";
}

/// Step-size controller parameters. Zero pi gains mean "use the defaults
/// 0.7/nu and 0.4/nu".
struct ControllerOptions {
  double safety = 0.9;
  double factor_min = 0.2;
  double factor_max = 10.0;
  double h_min = 0.0;  // 0: 1e-14 * |tmax - t0|
  double h_max = 0.0;  // 0: |tmax - t0|
  double pi_alpha = 0.0;
  double pi_beta = 0.0;
  std::size_t max_steps = 10'000'000;
};

struct SolverConfig {
  std::size_t order = 3;
  Strategy strategy = Strategy::kEK0;
  Structure structure = Structure::kBlockDiagonal;
  DiffusionSpec diffusion;
  double rtol = 1e-6;
  double atol = 1e-6;
  /// Fixed time grid (t0 ... tN). Empty means adaptive steps.
  std::vector<double> grid;
  ControllerOptions controller;

  [[nodiscard]] bool adaptive() const noexcept { return grid.empty(); }

  /// Throws kConfig on combinations that would break the structure of the
  /// covariances (dense Jacobians with structured covariances, vector
  /// diffusion with Kronecker factors, non-diagonal Gamma for vector
  /// diffusion).
  void validate(std::size_t dim) const {
    if (order < 1) {
      throw Error(ErrorKind::kConfig, "order must be >= 1");
    }
    if (structure == Structure::kKronecker) {
      if (strategy != Strategy::kEK0) {
        throw Error(ErrorKind::kConfig, "kronecker structure requires the EK0 linearization");
      }
      if (diffusion.vector_valued()) {
        throw Error(ErrorKind::kConfig, "kronecker structure requires a scalar diffusion");
      }
    }
    if (structure == Structure::kBlockDiagonal && strategy == Strategy::kDenseEK1) {
      throw Error(ErrorKind::kConfig, "block-diagonal structure supports EK0 and diagonal EK1 only");
    }
    if (structure == Structure::kBlockDiagonal && !diffusion.gamma_breve.is_diagonal()) {
      throw Error(ErrorKind::kConfig, "block-diagonal structure requires a diagonal gamma_breve");
    }
    if (diffusion.vector_valued() && !diffusion.gamma_breve.is_diagonal()) {
      throw Error(ErrorKind::kConfig, "vector-valued diffusion requires a diagonal gamma_breve");
    }
    if (auto gd = diffusion.gamma_breve.dim(); gd && *gd != dim) {
      throw Error(ErrorKind::kConfig, "gamma_breve has dimension " + std::to_string(*gd) + ", problem has " +
                                          std::to_string(dim));
    }
    if (!(diffusion.fixed_gamma_sq > 0.0)) {
      throw Error(ErrorKind::kConfig, "fixed_gamma_sq must be positive");
    }
    if (!(rtol >= 0.0) || !(atol >= 0.0) || rtol + atol <= 0.0) {
      throw Error(ErrorKind::kConfig, "tolerances must be non-negative and not both zero");
    }
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) {
        throw Error(ErrorKind::kConfig, "fixed grid must be strictly increasing");
      }
    }
    if (grid.size() == 1) {
      throw Error(ErrorKind::kConfig, "fixed grid needs at least two points");
    }
  }
};

}  // namespace pnode

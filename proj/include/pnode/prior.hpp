#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>

#include "pnode/diffusion.hpp"
#include "pnode/structmat.hpp"

namespace pnode {

/// nu-times integrated Wiener process prior over d independent-in-structure
/// dimensions. The state of dimension i stacks y_i and its first nu
/// derivatives.
struct IwpPrior {
  std::size_t nu = 1;
  std::size_t dim = 1;
  DiffusionSpec diffusion;

  IwpPrior() = default;
  IwpPrior(std::size_t order, std::size_t d, DiffusionSpec spec = {})
      : nu(order), dim(d), diffusion(std::move(spec)) {
    validate();
  }

  void validate() const {
    if (nu < 1) {
      throw Error(ErrorKind::kInvalidArgument, "prior order nu must be >= 1");
    }
    if (dim < 1) {
      throw Error(ErrorKind::kInvalidArgument, "prior dimension must be >= 1");
    }
  }

  [[nodiscard]] std::size_t block_size() const noexcept { return nu + 1; }
};

/// One-dimensional transition over a step h (unit diffusion):
///   phi = exp(A h),  sigma_sqrt * sigma_sqrt^T = int_0^h exp(A s) e_nu e_nu^T exp(A s)^T ds.
/// Both are also given in preconditioned coordinates x = T^-1 y, where they
/// do not depend on h: phi = T phi_precond T^-1, sigma_sqrt = T sigma_sqrt_precond.
struct TransitionModel {
  Matrix phi;
  Matrix sigma_sqrt;
  double step = 0.0;
  Vector precond;
  Matrix phi_precond;
  Matrix sigma_sqrt_precond;

  [[nodiscard]] Matrix sigma() const { return sigma_sqrt * sigma_sqrt.transpose(); }
  [[nodiscard]] std::size_t block_size() const noexcept { return static_cast<std::size_t>(phi.rows()); }
};

namespace detail {

[[nodiscard]] inline double factorial(std::size_t n) {
  double out = 1.0;
  for (std::size_t k = 2; k <= n; ++k) out *= static_cast<double>(k);
  return out;
}

inline void check_step(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorKind::kInvalidArgument, "step size must be positive and finite, got " + std::to_string(h));
  }
}

/// h-independent parts of the transition in preconditioned coordinates:
/// binomial transition matrix and the Cholesky factor of the process-noise
/// covariance with entries 1 / (2 nu + 1 - i - j).
struct UnitTransition {
  Matrix phi;
  Matrix sigma_sqrt;
};

[[nodiscard]] inline const UnitTransition& unit_transition(std::size_t nu) {
  static std::mutex mutex;
  static std::map<std::size_t, UnitTransition> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(nu);
  if (it == cache.end()) {
    const auto r = static_cast<Eigen::Index>(nu + 1);
    UnitTransition u;
    u.phi = Matrix::Zero(r, r);
    Matrix s(r, r);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < r; ++j) {
        s(i, j) = 1.0 / static_cast<double>(2 * static_cast<Eigen::Index>(nu) + 1 - i - j);
        if (j >= i) {
          // binom(nu - i, j - i)
          const auto top = nu - static_cast<std::size_t>(i);
          const auto k = static_cast<std::size_t>(j - i);
          u.phi(i, j) = factorial(top) / (factorial(k) * factorial(top - k));
        }
      }
    }
    Eigen::LLT<Matrix> llt(s);
    u.sigma_sqrt = llt.matrixL();
    it = cache.emplace(nu, std::move(u)).first;
  }
  return it->second;
}

[[nodiscard]] inline const Matrix& unit_sigma_sqrt(std::size_t nu) { return unit_transition(nu).sigma_sqrt; }

}  // namespace detail

/// T with T[q] = sqrt(h) h^(nu-q) / (nu-q)!. In x = T^-1 y coordinates the
/// transition matrix has binomial entries and the process noise covariance
/// has entries 1 / (2 nu + 1 - i - j), both independent of h.
[[nodiscard]] inline Vector preconditioner(std::size_t nu, double h) {
  detail::check_step(h);
  const auto r = static_cast<Eigen::Index>(nu + 1);
  Vector t(r);
  const double sqrt_h = std::sqrt(h);
  for (Eigen::Index q = 0; q < r; ++q) {
    const auto k = nu - static_cast<std::size_t>(q);
    t(q) = sqrt_h * std::pow(h, static_cast<double>(k)) / detail::factorial(k);
  }
  return t;
}

/// Closed-form process-noise covariance (unit diffusion).
[[nodiscard]] inline Matrix iwp_sigma(std::size_t nu, double h) {
  detail::check_step(h);
  const auto r = static_cast<Eigen::Index>(nu + 1);
  const auto n = static_cast<Eigen::Index>(nu);
  Matrix s(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) {
      const auto p = 2 * n + 1 - i - j;
      s(i, j) = std::pow(h, static_cast<double>(p)) /
                (static_cast<double>(p) * detail::factorial(static_cast<std::size_t>(n - i)) *
                 detail::factorial(static_cast<std::size_t>(n - j)));
    }
  }
  return s;
}

[[nodiscard]] inline TransitionModel discretize(std::size_t nu, double h) {
  detail::check_step(h);
  if (nu < 1) {
    throw Error(ErrorKind::kInvalidArgument, "prior order nu must be >= 1");
  }
  const auto r = static_cast<Eigen::Index>(nu + 1);
  TransitionModel tm;
  tm.step = h;
  tm.phi = Matrix::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = i; j < r; ++j) {
      const auto k = static_cast<std::size_t>(j - i);
      tm.phi(i, j) = std::pow(h, static_cast<double>(k)) / detail::factorial(k);
    }
  }
  const detail::UnitTransition& unit = detail::unit_transition(nu);
  tm.phi_precond = unit.phi;
  tm.precond = preconditioner(nu, h);
  tm.sigma_sqrt_precond = unit.sigma_sqrt;
  tm.sigma_sqrt = tm.precond.asDiagonal() * tm.sigma_sqrt_precond;
  return tm;
}

[[nodiscard]] inline TransitionModel discretize(const IwpPrior& prior, double h) {
  prior.validate();
  return discretize(prior.nu, h);
}

}  // namespace pnode

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pnode/config.hpp"
#include "pnode/prior.hpp"
#include "pnode/problem.hpp"
#include "pnode/state.hpp"

namespace pnode {

/// Bootstrap plan for the derivative stack at t0. The solver is started
/// from the posterior at t0 given nu+1 classical-integrator samples.
struct InitPlan {
  std::size_t n_points = 0;  // nu + 1
  double dt = 1e-4;
  int rk_order = 4;
  /// Integrator steps per dt.
  std::size_t substeps = 1;
  /// Prior variance of the unobserved coordinates; infinity drops the prior.
  double c0_scale = 1e6;

  static InitPlan defaults(const OdeProblem& problem, std::size_t nu);
};

/// Cheap estimate of the local rate |df/dy| at y0: the largest diagonal
/// Jacobian entry if available, and a directional difference along f(y0).
[[nodiscard]] inline double local_rate(const OdeProblem& problem) {
  const Vector f0 = problem.eval(problem.t0, problem.y0);
  double rate = 0.0;
  if (problem.has_diagonal_jacobian()) {
    Vector diag(static_cast<Eigen::Index>(problem.dim));
    problem.jac_diag(problem.t0, problem.y0, diag);
    if (diag.allFinite()) rate = diag.cwiseAbs().maxCoeff();
  }
  const double norm_f = f0.norm();
  if (norm_f > 0.0 && std::isfinite(norm_f)) {
    const double delta = 1e-7 * std::max(1.0, problem.y0.norm());
    const Vector f1 = problem.eval(problem.t0, problem.y0 + (delta / norm_f) * f0);
    const double directional = (f1 - f0).norm() / delta;
    if (std::isfinite(directional)) rate = std::max(rate, directional);
  }
  return rate;
}

inline InitPlan InitPlan::defaults(const OdeProblem& problem, std::size_t nu) {
  InitPlan plan;
  plan.n_points = nu + 1;
  const double span = std::abs(problem.tmax - problem.t0);
  const double rate = std::max(local_rate(problem), span > 0.0 ? 1.0 / span : 1.0);
  plan.dt = std::max(std::min(0.025 * static_cast<double>(nu), 0.1) / rate, 1e-8);
  const double fine = std::ceil(plan.dt * rate / 1e-3);
  plan.substeps = static_cast<std::size_t>(std::clamp(fine, 1.0, 1000.0));
  return plan;
}

/// Explicit Runge-Kutta with fixed steps (order 1 to 4). Returns steps+1
/// states including y0.
[[nodiscard]] inline std::vector<Vector> rk_fixed_steps(const OdeProblem& problem, double t0, const Vector& y0,
                                                        double dt, std::size_t steps, int order = 4) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw Error(ErrorKind::kInvalidArgument, "bootstrap step must be positive, got " + std::to_string(dt));
  }
  std::vector<Vector> out;
  out.reserve(steps + 1);
  out.push_back(y0);
  const auto d = y0.size();
  Vector k1(d), k2(d), k3(d), k4(d), tmp(d);
  double t = t0;
  for (std::size_t n = 0; n < steps; ++n) {
    const Vector& y = out.back();
    Vector next(d);
    problem.f(t, y, k1);
    switch (order) {
      case 1:
        next = y + dt * k1;
        break;
      case 2:
        tmp = y + dt * k1;
        problem.f(t + dt, tmp, k2);
        next = y + 0.5 * dt * (k1 + k2);
        break;
      case 3:
        tmp = y + 0.5 * dt * k1;
        problem.f(t + 0.5 * dt, tmp, k2);
        tmp = y - dt * k1 + 2.0 * dt * k2;
        problem.f(t + dt, tmp, k3);
        next = y + dt / 6.0 * (k1 + 4.0 * k2 + k3);
        break;
      case 4:
        tmp = y + 0.5 * dt * k1;
        problem.f(t + 0.5 * dt, tmp, k2);
        tmp = y + 0.5 * dt * k2;
        problem.f(t + 0.5 * dt, tmp, k3);
        tmp = y + dt * k3;
        problem.f(t + dt, tmp, k4);
        next = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        break;
      default:
        throw Error(ErrorKind::kInvalidArgument, "bootstrap order must be 1, 2, 3 or 4");
    }
    if (!next.allFinite()) {
      throw Error(ErrorKind::kNonFinite, "bootstrap trajectory is not finite", t + dt);
    }
    out.push_back(std::move(next));
    t += dt;
  }
  return out;
}

/// Posterior at t0 shared across dimensions: mean per dimension and one
/// (nu+1) x (nu+1) covariance square root (unit diffusion, before
/// gamma_breve).
struct InitResult {
  MeanGrid mean;
  Matrix block_sqrt;
};

/// Scaled Taylor coefficients a_k = y^(k)(t0) H^k / k!, k = 2..2nu+1, of the
/// polynomial through exact values and derivatives at s_m = m / nu,
/// H = nu dt. Rows of the result are k - 2, columns are dimensions.
[[nodiscard]] inline Matrix hermite_coefficients(const std::vector<Vector>& values, const std::vector<Vector>& derivs,
                                                 std::size_t nu, double dt) {
  const auto n = static_cast<Eigen::Index>(2 * nu);
  const auto degree = static_cast<Eigen::Index>(2 * nu + 1);
  const double span = static_cast<double>(nu) * dt;
  const auto d = values.front().size();
  Matrix design(n, n);
  Matrix rhs(n, d);
  for (Eigen::Index m = 1; m <= static_cast<Eigen::Index>(nu); ++m) {
    const double s = static_cast<double>(m) / static_cast<double>(nu);
    const Eigen::Index rv = 2 * (m - 1);
    for (Eigen::Index k = 2; k <= degree; ++k) {
      design(rv, k - 2) = std::pow(s, static_cast<double>(k));
      design(rv + 1, k - 2) = static_cast<double>(k) * std::pow(s, static_cast<double>(k - 1));
    }
    const Vector& y = values[static_cast<std::size_t>(m)];
    const Vector& f = derivs[static_cast<std::size_t>(m)];
    rhs.row(rv) = (y - values.front() - s * span * derivs.front()).transpose();
    rhs.row(rv + 1) = (span * (f - derivs.front())).transpose();
  }
  return Eigen::ColPivHouseholderQR<Matrix>(design).solve(rhs);
}

/// Conditions the nu+1 derivatives at t0 on exact values and exact ODE
/// derivatives at tau_m = t0 + m dt, m = 0..nu.
///
/// The mean is the posterior mean under a diffuse prior on the 2nu+2 Taylor
/// coefficients at t0, i.e. the Hermite interpolant of the samples. The
/// covariance is the integrated Wiener process posterior given the same
/// samples: a least-squares problem over the unknown higher derivatives at
/// all tau_m in preconditioned coordinates. Neither design matrix depends
/// on the data, so one factorization serves every dimension.
[[nodiscard]] inline InitResult initialize_blocks(const OdeProblem& problem, std::size_t nu, const InitPlan& plan) {
  if (nu < 1) {
    throw Error(ErrorKind::kInvalidArgument, "prior order nu must be >= 1");
  }
  if (!(plan.dt > 0.0) || !std::isfinite(plan.dt)) {
    throw Error(ErrorKind::kInvalidArgument, "init: dt must be positive, got " + std::to_string(plan.dt));
  }
  if (plan.n_points != 0 && plan.n_points != nu + 1) {
    throw Error(ErrorKind::kInvalidArgument, "init: n_points must equal nu + 1");
  }
  if (!(plan.c0_scale > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "init: c0_scale must be positive");
  }
  if (plan.substeps < 1) {
    throw Error(ErrorKind::kInvalidArgument, "init: substeps must be >= 1");
  }
  const auto d = static_cast<Eigen::Index>(problem.dim);
  const auto r = static_cast<Eigen::Index>(nu + 1);
  const auto points = r;  // tau_0 .. tau_nu

  const auto fine = rk_fixed_steps(problem, problem.t0, problem.y0, plan.dt / static_cast<double>(plan.substeps),
                                   nu * plan.substeps, plan.rk_order);
  std::vector<Vector> traj;
  std::vector<Vector> derivs;
  traj.reserve(static_cast<std::size_t>(points));
  derivs.reserve(static_cast<std::size_t>(points));
  for (Eigen::Index m = 0; m < points; ++m) {
    traj.push_back(fine[static_cast<std::size_t>(m) * plan.substeps]);
    Vector fm = problem.eval(problem.t0 + static_cast<double>(m) * plan.dt, traj.back());
    if (!fm.allFinite()) {
      throw Error(ErrorKind::kNonFinite, "init: vector field is not finite on the bootstrap trajectory",
                  problem.t0 + static_cast<double>(m) * plan.dt);
    }
    derivs.push_back(std::move(fm));
  }

  InitResult out;
  out.mean = MeanGrid::Zero(d, r);
  out.mean.col(0) = problem.y0;
  out.mean.col(1) = derivs.front();
  out.block_sqrt = Matrix::Zero(r, r);
  if (nu == 1) {
    return out;  // every coordinate is observed exactly
  }

  const Matrix coeffs = hermite_coefficients(traj, derivs, nu, plan.dt);
  if (!coeffs.allFinite()) {
    throw Error(ErrorKind::kNonFinite, "init: derivative conditioning produced non-finite values", problem.t0);
  }
  const double span = static_cast<double>(nu) * plan.dt;
  double factorial = 1.0;
  for (Eigen::Index q = 2; q < r; ++q) {
    factorial *= static_cast<double>(q);
    out.mean.col(q) = (factorial / std::pow(span, static_cast<double>(q))) * coeffs.row(q - 2).transpose();
  }

  const TransitionModel tm = discretize(nu, plan.dt);
  const Vector& t = tm.precond;
  const Matrix lp_inv = tm.sigma_sqrt_precond.triangularView<Eigen::Lower>().solve(Matrix::Identity(r, r));
  const Eigen::Index per_point = r - 2;
  const Eigen::Index unknowns = points * per_point;
  const bool with_prior = std::isfinite(plan.c0_scale);
  const Eigen::Index rows = (points - 1) * r + (with_prior ? per_point : 0);

  // Rows of Lp^-1 (U_{m+1} - Phi_p U_m) in the unknown entries (q >= 2) of
  // U = T^-1 Y; the known entries only shift the mean.
  Matrix design = Matrix::Zero(rows, unknowns);
  for (Eigen::Index m = 0; m + 1 < points; ++m) {
    const Eigen::Index row0 = m * r;
    design.block(row0, (m + 1) * per_point, r, per_point) = lp_inv.rightCols(per_point);
    design.block(row0, m * per_point, r, per_point) = -(lp_inv * tm.phi_precond).rightCols(per_point);
  }
  if (with_prior) {
    // Y_0[q] / sqrt(c0) = T_q U_0[q] / sqrt(c0) against a zero prior mean.
    const double w = 1.0 / std::sqrt(plan.c0_scale);
    for (Eigen::Index q = 2; q < r; ++q) design((points - 1) * r + q - 2, q - 2) = w * t(q);
  }

  // Covariance of the unknowns is R^-1 R^-T; the rows of R^-1 belonging to
  // U_0 give a square root of the t0 marginal.
  Eigen::HouseholderQR<Matrix> qr(design);
  const Matrix tri = qr.matrixQR().topRows(unknowns).triangularView<Eigen::Upper>();
  const Matrix tri_inv = tri.triangularView<Eigen::Upper>().solve(Matrix::Identity(unknowns, unknowns));
  Matrix factor = Matrix::Zero(r, unknowns);
  for (Eigen::Index q = 2; q < r; ++q) factor.row(q) = t(q) * tri_inv.row(q - 2);
  const Matrix root = gram_sqrt_of_stack(factor.transpose(), Matrix::Zero(r, r));
  out.block_sqrt = root.transpose();
  return out;
}

/// Initial filter state in the requested covariance structure. The
/// covariance is scale * gamma_breve (x) C0.
[[nodiscard]] inline GaussianState initialize(const OdeProblem& problem, const IwpPrior& prior, const InitPlan& plan,
                                              Structure structure = Structure::kBlockDiagonal, double scale = 1.0) {
  prior.validate();
  if (prior.dim != problem.dim) {
    throw Error(ErrorKind::kDimension, "prior has dimension " + std::to_string(prior.dim) + ", problem has " +
                                           std::to_string(problem.dim));
  }
  const Vector f0 = problem.eval(problem.t0, problem.y0);
  if (!f0.allFinite() || !problem.y0.allFinite()) {
    throw Error(ErrorKind::kNonFinite, "init: f(t0, y0) is not finite", problem.t0);
  }
  InitResult blocks = initialize_blocks(problem, prior.nu, plan);
  GaussianState state;
  state.t = problem.t0;
  state.mean = std::move(blocks.mean);
  state.cov_sqrt = pack_covariance_sqrt(structure, problem.dim, blocks.block_sqrt, prior.diffusion.gamma_breve, scale);
  return state;
}

}  // namespace pnode

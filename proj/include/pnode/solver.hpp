#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>

#include "pnode/adapt.hpp"
#include "pnode/calibrate.hpp"
#include "pnode/init.hpp"
#include "pnode/stepper.hpp"

namespace pnode {

/// What an observer sees for every accepted step (and for the initial
/// state, with h = 0).
struct StepRecord {
  const GaussianState& state;
  /// Local gamma^2 estimate of the step (empty for the initial state).
  const Vector& gamma_hat_sq;
  double h = 0.0;
  bool accepted = true;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct SolveStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t failed_steps = 0;  // steps that threw and were retried smaller
};

struct Solution {
  GaussianState final_state;
  /// Final diffusion: the time-constant estimate in tc modes (states passed
  /// to the observer still carry unit diffusion and should be rescaled with
  /// it), the last local estimate in tv modes.
  Vector gamma_sq;
  /// True when observed covariances must be multiplied by gamma_sq.
  bool posthoc_scaling = false;
  SolveStats stats;
};

namespace detail {

[[nodiscard]] inline bool recoverable(const Error& e) {
  return e.kind() == ErrorKind::kSingularInnovation || e.kind() == ErrorKind::kNonFinite;
}

}  // namespace detail

/// Runs the filter over [t0, tmax] (or the configured fixed grid). The
/// observer is called with the initial state and after every accepted step.
/// If progress is given, step counts are kept there as well, so they survive a
/// failing solve.
inline Solution solve(const OdeProblem& problem, const SolverConfig& cfg, const StepObserver& observer = {},
                      std::optional<InitPlan> plan = std::nullopt, SolveStats* progress = nullptr) {
  cfg.validate(problem.dim);
  const IwpPrior prior(cfg.order, problem.dim, cfg.diffusion);
  const InitPlan init_plan = plan ? *plan : InitPlan::defaults(problem, cfg.order);
  const bool time_constant = !cfg.diffusion.time_varying();
  // Time-constant modes step at unit diffusion; fixed_gamma_sq only scales
  // what observers see, so it cannot perturb the means.
  SolverConfig run_cfg = cfg;
  run_cfg.diffusion.fixed_gamma_sq = 1.0;
  const double fixed = time_constant ? cfg.diffusion.fixed_gamma_sq : 1.0;

  GaussianState state = initialize(problem, prior, init_plan, cfg.structure);
  Solution sol;
  sol.posthoc_scaling = time_constant;
  SolveStats local;
  SolveStats& stats = progress ? *progress : local;
  CalibrationAccumulator acc = cfg.diffusion.vector_valued() ? CalibrationAccumulator::vector(problem.dim)
                                                             : CalibrationAccumulator::scalar();
  Vector last_gamma = Vector::Ones(1);
  const Vector empty;
  auto notify = [&](const Vector& gamma_hat_sq, double h) {
    if (!observer) return;
    if (fixed == 1.0) {
      observer(StepRecord{state, gamma_hat_sq, h, true});
    } else {
      const GaussianState scaled = rescale_posthoc(state, Vector::Constant(1, fixed));
      observer(StepRecord{scaled, gamma_hat_sq, h, true});
    }
  };
  notify(empty, 0.0);

  auto accept = [&](StepResult& res, double h) {
    if (time_constant) {
      const Measurement& m = res.measurement;
      if (acc.is_scalar()) {
        acc = accumulate_time_constant(std::move(acc), m.normalized_quadratic(cfg.diffusion.gamma_breve));
      } else {
        acc = accumulate_time_constant(std::move(acc), m.z, m.innovation_diag(cfg.diffusion.gamma_breve));
      }
    }
    last_gamma = res.gamma_hat_sq;
    state = std::move(res.state);
    ++stats.accepted;
    notify(last_gamma, h);
  };

  if (!cfg.adaptive()) {
    if (std::abs(cfg.grid.front() - problem.t0) > 0.0) {
      throw Error(ErrorKind::kConfig, "fixed grid must start at t0");
    }
    for (std::size_t n = 1; n < cfg.grid.size(); ++n) {
      const double h = cfg.grid[n] - state.t;
      StepResult res = step(state, h, run_cfg, problem);
      res.state.t = cfg.grid[n];
      accept(res, h);
    }
  } else {
    const double span = problem.tmax - problem.t0;
    if (!(span > 0.0)) {
      throw Error(ErrorKind::kConfig, "tmax must exceed t0");
    }
    const StepController ctrl = StepController::from(cfg, span);
    double h = std::min(0.01 * span, ctrl.h_max);
    double prev_norm = 1.0;
    while (state.t < problem.tmax) {
      if (stats.accepted >= cfg.controller.max_steps) {
        throw Error(ErrorKind::kStepLimit, "exceeded " + std::to_string(cfg.controller.max_steps) + " steps",
                    state.t);
      }
      const double remaining = problem.tmax - state.t;
      const bool last = h >= remaining * (1.0 - 1e-12);
      const double h_try = last ? remaining : h;
      std::optional<StepResult> res;
      double norm = std::numeric_limits<double>::infinity();
      try {
        res = step(state, h_try, run_cfg, problem);
        // The defect lives in derivative space; h * defect is its size in y.
        norm = error_norm(h_try * res->error_estimate, state.mean.col(0), res->state.mean.col(0), ctrl);
      } catch (const Error& e) {
        if (!detail::recoverable(e)) throw;
        ++stats.failed_steps;
      }
      if (!std::isfinite(norm)) norm = std::numeric_limits<double>::infinity();
      const Proposal p = propose(h_try, norm, prev_norm, ctrl, state.t);
      if (p.accept) {
        if (last) res->state.t = problem.tmax;
        accept(*res, h_try);
        prev_norm = std::max(norm, 1e-4);
      } else {
        ++stats.rejected;
      }
      h = p.h_next;
    }
  }

  if (time_constant) {
    sol.gamma_sq = acc.count > 0 ? acc.finalize() : Vector::Ones(acc.sums.size());
    sol.final_state = rescale_posthoc(state, sol.gamma_sq);
  } else {
    sol.gamma_sq = last_gamma;
    sol.final_state = std::move(state);
  }
  sol.stats = stats;
  return sol;
}

}  // namespace pnode

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "pnode/config.hpp"
#include "pnode/structmat.hpp"

namespace pnode {

/// Proportional-integral step-size controller on the calibrated local
/// defect.
struct StepController {
  double rtol = 1e-6;
  double atol = 1e-6;
  double safety = 0.9;
  double factor_min = 0.2;
  double factor_max = 10.0;
  std::size_t order_for_control = 3;
  double h_min = 1e-14;
  double h_max = std::numeric_limits<double>::infinity();
  double pi_alpha = 0.7 / 3.0;
  double pi_beta = 0.4 / 3.0;

  static StepController from(const SolverConfig& cfg, double span) {
    StepController c;
    c.rtol = cfg.rtol;
    c.atol = cfg.atol;
    c.safety = cfg.controller.safety;
    c.factor_min = cfg.controller.factor_min;
    c.factor_max = cfg.controller.factor_max;
    c.order_for_control = cfg.order;
    const double nu = static_cast<double>(cfg.order);
    c.pi_alpha = cfg.controller.pi_alpha > 0.0 ? cfg.controller.pi_alpha : 0.7 / nu;
    c.pi_beta = cfg.controller.pi_beta > 0.0 ? cfg.controller.pi_beta : 0.4 / nu;
    c.h_min = cfg.controller.h_min > 0.0 ? cfg.controller.h_min : 1e-14 * std::abs(span);
    c.h_max = cfg.controller.h_max > 0.0 ? cfg.controller.h_max : std::abs(span);
    return c;
  }
};

/// RMS of err_i / (atol + rtol * max(|y_prev_i|, |y_new_i|)).
[[nodiscard]] inline double error_norm(const Vector& err, const Vector& y_prev, const Vector& y_new,
                                       const StepController& ctrl) {
  if (err.size() == 0) return 0.0;
  const Eigen::ArrayXd scale = ctrl.atol + ctrl.rtol * y_prev.array().abs().max(y_new.array().abs());
  return std::sqrt((err.array() / scale).square().mean());
}

struct Proposal {
  bool accept = false;
  double h_next = 0.0;
};

/// Accept iff norm <= 1; the next step is
/// h * clip(safety * norm^-alpha * prev_norm^beta, factor_min, factor_max),
/// clipped to [h_min, h_max]. Throws kStepSizeUnderflow when a rejected
/// step would have to shrink below h_min.
[[nodiscard]] inline Proposal propose(double h, double norm, double prev_norm, const StepController& ctrl,
                                      double t = std::numeric_limits<double>::quiet_NaN()) {
  Proposal p;
  p.accept = norm <= 1.0;
  double factor;
  if (norm == 0.0) {
    factor = ctrl.factor_max;
  } else if (!std::isfinite(norm)) {
    factor = ctrl.factor_min;
  } else {
    factor = ctrl.safety * std::pow(norm, -ctrl.pi_alpha) * std::pow(prev_norm, ctrl.pi_beta);
  }
  if (!p.accept) {
    factor = std::min(factor, 1.0);
  }
  factor = std::clamp(factor, ctrl.factor_min, ctrl.factor_max);
  p.h_next = std::min(h * factor, ctrl.h_max);
  if (p.h_next < ctrl.h_min) {
    if (!p.accept) {
      throw Error(ErrorKind::kStepSizeUnderflow,
                  "step size " + std::to_string(p.h_next) + " fell below h_min " + std::to_string(ctrl.h_min),
                  std::isnan(t) ? std::nullopt : std::optional<double>(t));
    }
    p.h_next = ctrl.h_min;
  }
  return p;
}

}  // namespace pnode

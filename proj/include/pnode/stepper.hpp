#pragma once

#include <cassert>
#include <cmath>
#include <optional>
#include <string>
#include <variant>

#include "pnode/calibrate.hpp"
#include "pnode/config.hpp"
#include "pnode/linearize.hpp"
#include "pnode/prior.hpp"
#include "pnode/state.hpp"

namespace pnode {

/// Innovation covariance in Kronecker mode: S = gamma_breve (x) right.
struct KroneckerInnovation {
  double right = 0.0;
};

struct Measurement {
  Vector z;
  /// d diagonal entries (block-diagonal), one scalar right factor
  /// (Kronecker), or the full d x d matrix (dense).
  std::variant<Vector, KroneckerInnovation, Matrix> innovation;
  /// diag(H Sigma(h) H^T) under unit gamma.
  Vector sigma_meas;
  /// Full H Sigma(h) H^T, dense mode only.
  std::optional<Matrix> sigma_full;

  /// diag(S).
  [[nodiscard]] Vector innovation_diag(const GammaBreve& gamma_breve = {}) const {
    if (const auto* v = std::get_if<Vector>(&innovation)) return *v;
    if (const auto* m = std::get_if<Matrix>(&innovation)) return m->diagonal();
    const double right = std::get<KroneckerInnovation>(innovation).right;
    Vector out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) out(i) = right * gamma_breve.diag(static_cast<std::size_t>(i));
    return out;
  }

  /// (1/d) z^T S^-1 z.
  [[nodiscard]] double normalized_quadratic(const GammaBreve& gamma_breve = {}) const {
    const double d = static_cast<double>(z.size());
    if (const auto* v = std::get_if<Vector>(&innovation)) return (z.array().square() / v->array()).sum() / d;
    if (const auto* m = std::get_if<Matrix>(&innovation)) return z.dot(m->llt().solve(z)) / d;
    const double right = std::get<KroneckerInnovation>(innovation).right;
    return gamma_breve.inv_quad(z) / (d * right);
  }
};

namespace detail {

[[nodiscard]] inline double scale_at(const Vector& scale, Eigen::Index i) {
  return scale.size() == 1 ? scale(0) : scale(i);
}

/// H as a dense d x d(nu+1) matrix: H = E1 - F_y E0.
[[nodiscard]] inline Matrix dense_observation_matrix(const Linearization& lin, Eigen::Index r) {
  const auto d = static_cast<Eigen::Index>(lin.dim());
  Matrix h = Matrix::Zero(d, d * r);
  for (Eigen::Index i = 0; i < d; ++i) h(i, i * r + 1) = 1.0;
  if (lin.jac_dense) {
    for (Eigen::Index j = 0; j < d; ++j) h.col(j * r) -= lin.jac_dense->col(j);
  } else if (lin.jac_diag) {
    for (Eigen::Index i = 0; i < d; ++i) h(i, i * r) -= (*lin.jac_diag)(i);
  }
  return h;
}

[[nodiscard]] inline Matrix kron_identity(Eigen::Index d, const Matrix& block) {
  const auto r = block.rows();
  Matrix out = Matrix::Zero(d * r, d * r);
  for (Eigen::Index i = 0; i < d; ++i) out.block(i * r, i * r, r, r) = block;
  return out;
}

[[nodiscard]] inline Matrix dense_noise_sqrt(const TransitionModel& tm, const Vector& scale, const GammaBreve& gb,
                                             Eigen::Index d) {
  const auto r = static_cast<Eigen::Index>(tm.block_size());
  Matrix out = Matrix::Zero(d * r, d * r);
  if (gb.is_diagonal()) {
    for (Eigen::Index i = 0; i < d; ++i) {
      out.block(i * r, i * r, r, r) =
          std::sqrt(scale_at(scale, i) * gb.diag(static_cast<std::size_t>(i))) * tm.sigma_sqrt;
    }
  } else {
    if (scale.size() != 1) {
      throw Error(ErrorKind::kConfig, "vector diffusion with a dense gamma_breve");
    }
    const Matrix& left = *gb.sqrt_factor();
    const double root = std::sqrt(scale(0));
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) out.block(i * r, j * r, r, r) = root * left(i, j) * tm.sigma_sqrt;
    }
  }
  return out;
}

/// One covariance-square-root prediction in preconditioned coordinates:
/// returns L- with L- L-^T = phi L L^T phi^T + noise * sigma.
class BlockPredictor {
 public:
  explicit BlockPredictor(const TransitionModel& tm)
      : tm_(tm), tinv_(tm.precond.cwiseInverse()), r_(static_cast<Eigen::Index>(tm.block_size())) {
    x_.resize(r_, r_);
    a_.resize(r_, r_);
    bottom_.resize(r_, r_);
    tri_.resize(r_, r_);
  }

  template <class Block>
  void operator()(Block&& l, double noise) {
    x_.noalias() = tinv_.asDiagonal() * l;
    a_.noalias() = tm_.phi_precond * x_;
    bottom_.noalias() = std::sqrt(noise) * tm_.sigma_sqrt_precond.transpose();
    ws_.compute(a_.transpose(), bottom_, tri_);
    l.noalias() = tm_.precond.asDiagonal() * tri_.transpose();
  }

 private:
  const TransitionModel& tm_;
  Vector tinv_;
  Eigen::Index r_;
  Matrix x_, a_, bottom_, tri_;
  GramSqrtWorkspace ws_;
};

inline void check_innovation(double s, std::size_t i) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw Error(ErrorKind::kSingularInnovation,
                "innovation variance " + std::to_string(s) + " in block " + std::to_string(i));
  }
}

}  // namespace detail

/// m- = Phi m, row-wise: each dimension's derivative stack times phi^T.
[[nodiscard]] inline MeanGrid predict_mean(const MeanGrid& mean, const TransitionModel& tm) {
  if (static_cast<std::size_t>(mean.cols()) != tm.block_size()) {
    throw Error(ErrorKind::kDimension, "predict: mean has " + std::to_string(mean.cols()) +
                                           " columns, transition has block size " +
                                           std::to_string(tm.block_size()));
  }
  MeanGrid out(mean.rows(), mean.cols());
  out.noalias() = mean * tm.phi.transpose();
  return out;
}

/// sqrt(Phi C Phi^T + Sigma) with Sigma = diag(noise_scale) gamma_breve (x) Sigma(h).
/// noise_scale has length 1 (scalar diffusion) or d (vector diffusion).
[[nodiscard]] inline StructuredMatrix predict_cov_sqrt(const StructuredMatrix& cov_sqrt, const TransitionModel& tm,
                                                       const Vector& noise_scale, const GammaBreve& gamma_breve = {}) {
  StructuredMatrix out = cov_sqrt;
  const auto r = static_cast<Eigen::Index>(tm.block_size());
  if (out.holds<BlockDiagonal>()) {
    auto& b = out.as<BlockDiagonal>();
    if (static_cast<Eigen::Index>(b.block_size()) != r) {
      throw Error(ErrorKind::kDimension, "predict: covariance block size does not match the transition");
    }
    detail::BlockPredictor predictor(tm);
    for (std::size_t i = 0; i < b.count(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      predictor(b.block(i), detail::scale_at(noise_scale, k) * gamma_breve.diag(i));
    }
  } else if (out.holds<Kronecker>()) {
    if (noise_scale.size() != 1) {
      throw Error(ErrorKind::kConfig, "kronecker covariances take a scalar diffusion");
    }
    auto& k = out.as<Kronecker>();
    if (k.right.rows() != r) {
      throw Error(ErrorKind::kDimension, "predict: right factor size does not match the transition");
    }
    detail::BlockPredictor predictor(tm);
    predictor(k.right, noise_scale(0));
  } else {
    auto& l = out.as<Dense>().entries;
    const auto d = l.rows() / r;
    const Matrix phi = detail::kron_identity(d, tm.phi);
    const Matrix noise = detail::dense_noise_sqrt(tm, noise_scale, gamma_breve, d);
    const Matrix top = (phi * l).transpose();
    const Matrix tri = gram_sqrt_of_stack(top, noise.transpose());
    l = tri.transpose();
  }
  return out;
}

[[nodiscard]] inline GaussianState predict(const GaussianState& state, const TransitionModel& tm,
                                           const Vector& noise_scale = Vector::Ones(1),
                                           const GammaBreve& gamma_breve = {}) {
  return GaussianState{state.t + tm.step, predict_mean(state.mean, tm),
                       predict_cov_sqrt(state.cov_sqrt, tm, noise_scale, gamma_breve)};
}

/// z = H m- + b, computed from the first two derivative columns only.
[[nodiscard]] inline Vector residual(const MeanGrid& pred_mean, const Linearization& lin) {
  if (static_cast<std::size_t>(pred_mean.rows()) != lin.dim()) {
    throw Error(ErrorKind::kDimension, "measure: mean has " + std::to_string(pred_mean.rows()) +
                                           " rows, linearization has dimension " + std::to_string(lin.dim()));
  }
  return lin.residual(pred_mean.col(0), pred_mean.col(1));
}

/// diag(H Sigma(h) H^T) under unit gamma. Block i of H is e1 - F_i e0.
[[nodiscard]] inline Vector process_noise_measure(const TransitionModel& tm, const Linearization& lin,
                                                  const GammaBreve& gamma_breve = {}) {
  const Matrix s = tm.sigma();
  const auto d = static_cast<Eigen::Index>(lin.dim());
  Vector out(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double f = lin.diag_entry(static_cast<std::size_t>(i));
    out(i) = gamma_breve.diag(static_cast<std::size_t>(i)) * (s(1, 1) - 2.0 * f * s(0, 1) + f * f * s(0, 0));
  }
  return out;
}

/// Full H Sigma(h) H^T for a dense Jacobian (or any gamma_breve).
[[nodiscard]] inline Matrix process_noise_measure_dense(const TransitionModel& tm, const Linearization& lin,
                                                        const GammaBreve& gamma_breve = {}) {
  const Matrix s = tm.sigma();
  const auto d = static_cast<Eigen::Index>(lin.dim());
  const Matrix gb = gamma_breve.to_dense(lin.dim());
  Matrix f = Matrix::Zero(d, d);
  if (lin.jac_dense) {
    f = *lin.jac_dense;
  } else if (lin.jac_diag) {
    f = lin.jac_diag->asDiagonal();
  }
  const Matrix fg = f * gb;
  return s(1, 1) * gb - s(1, 0) * fg - s(0, 1) * fg.transpose() + s(0, 0) * fg * f.transpose();
}

[[nodiscard]] inline Measurement measure(const GaussianState& pred, const Linearization& lin,
                                         const TransitionModel& tm, const GammaBreve& gamma_breve = {}) {
  Measurement meas;
  meas.z = residual(pred.mean, lin);
  const auto d = static_cast<Eigen::Index>(pred.dim());
  const auto r = static_cast<Eigen::Index>(pred.block_size());
  if (pred.cov_sqrt.holds<BlockDiagonal>()) {
    if (lin.jac_dense) {
      throw Error(ErrorKind::kConfig, "dense Jacobian with a block-diagonal covariance");
    }
    const auto& b = pred.cov_sqrt.as<BlockDiagonal>();
    Vector s(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto l = b.block(static_cast<std::size_t>(i));
      const double f = lin.diag_entry(static_cast<std::size_t>(i));
      s(i) = (l.row(1) - f * l.row(0)).squaredNorm();
      detail::check_innovation(s(i), static_cast<std::size_t>(i));
    }
    meas.innovation = std::move(s);
    meas.sigma_meas = process_noise_measure(tm, lin, gamma_breve);
  } else if (pred.cov_sqrt.holds<Kronecker>()) {
    if (lin.jac_dense || lin.jac_diag) {
      throw Error(ErrorKind::kConfig, "kronecker covariances support the EK0 only");
    }
    const auto& k = pred.cov_sqrt.as<Kronecker>();
    const double s = k.right.row(1).squaredNorm();
    detail::check_innovation(s, 0);
    meas.innovation = KroneckerInnovation{s};
    meas.sigma_meas = process_noise_measure(tm, lin, gamma_breve);
  } else {
    const auto& l = pred.cov_sqrt.as<Dense>().entries;
    const Matrix h = detail::dense_observation_matrix(lin, r);
    const Matrix g = h * l;
    Matrix s = g * g.transpose();
    for (Eigen::Index i = 0; i < d; ++i) detail::check_innovation(s(i, i), static_cast<std::size_t>(i));
    meas.innovation = std::move(s);
    meas.sigma_full = process_noise_measure_dense(tm, lin, gamma_breve);
    meas.sigma_meas = meas.sigma_full->diagonal();
  }
  return meas;
}

/// Kalman update with the Joseph-form square root (I - K H) sqrt(C-).
[[nodiscard]] inline GaussianState correct(const GaussianState& pred, const Measurement& meas,
                                           const Linearization& lin) {
  GaussianState out = pred;
  const auto d = static_cast<Eigen::Index>(pred.dim());
  const auto r = static_cast<Eigen::Index>(pred.block_size());
  if (meas.z.size() != d) {
    throw Error(ErrorKind::kDimension, "correct: residual has length " + std::to_string(meas.z.size()) +
                                           ", state has dimension " + std::to_string(d));
  }
  if (out.cov_sqrt.holds<BlockDiagonal>()) {
    auto& b = out.cov_sqrt.as<BlockDiagonal>();
    Eigen::RowVectorXd u(r);
    Vector gain(r);
    for (Eigen::Index i = 0; i < d; ++i) {
      auto l = b.block(static_cast<std::size_t>(i));
      const double f = lin.diag_entry(static_cast<std::size_t>(i));
      u.noalias() = l.row(1) - f * l.row(0);
      const double s = u.squaredNorm();
      detail::check_innovation(s, static_cast<std::size_t>(i));
      gain.noalias() = l * u.transpose();
      gain /= s;
      out.mean.row(i).noalias() -= meas.z(i) * gain.transpose();
      l.noalias() -= gain * u;
    }
  } else if (out.cov_sqrt.holds<Kronecker>()) {
    auto& k = out.cov_sqrt.as<Kronecker>();
    const Eigen::RowVectorXd u = k.right.row(1);
    const double s = u.squaredNorm();
    detail::check_innovation(s, 0);
    const Vector gain = k.right * u.transpose() / s;
    out.mean.noalias() -= meas.z * gain.transpose();
    k.right.noalias() -= gain * u;
  } else {
    auto& l = out.cov_sqrt.as<Dense>().entries;
    const Matrix h = detail::dense_observation_matrix(lin, r);
    const Matrix g = h * l;
    const Matrix s = g * g.transpose();
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::kSingularInnovation, "dense innovation covariance is not positive definite");
    }
    const Matrix gain = llt.solve(g * l.transpose()).transpose();  // C- H^T S^-1
    Eigen::Map<Vector> flat(out.mean.data(), out.mean.size());
    flat.noalias() -= gain * meas.z;
    l.noalias() -= gain * g;
  }
  if (!out.mean.allFinite()) {
    throw Error(ErrorKind::kNonFinite, "corrected mean is not finite", out.t);
  }
  return out;
}

/// Dense-only correction through one QR of [sqrt(C-)^T H^T, sqrt(C-)^T].
/// Returns a triangular square root; used as an independent check of the
/// Joseph-form update.
[[nodiscard]] inline GaussianState correct_conventional(const GaussianState& pred, const Linearization& lin) {
  if (!pred.cov_sqrt.holds<Dense>()) {
    throw Error(ErrorKind::kConfig, "conventional correction is implemented for dense covariances only");
  }
  const auto d = static_cast<Eigen::Index>(pred.dim());
  const auto r = static_cast<Eigen::Index>(pred.block_size());
  const auto n = d * r;
  const Matrix& l = pred.cov_sqrt.as<Dense>().entries;
  const Matrix h = detail::dense_observation_matrix(lin, r);
  Matrix stack = Matrix::Zero(2 * n, d + n);
  stack.topLeftCorner(n, d) = l.transpose() * h.transpose();
  stack.topRightCorner(n, n) = l.transpose();
  Eigen::HouseholderQR<Matrix> qr(stack);
  const Matrix tri = qr.matrixQR().topRows(d + n).triangularView<Eigen::Upper>();
  const Matrix r11 = tri.topLeftCorner(d, d);
  const Matrix r12 = tri.topRightCorner(d, n);
  const Matrix r22 = tri.bottomRightCorner(n, n);
  // K = R12^T R11^-T
  const Matrix gain = r11.triangularView<Eigen::Upper>().solve(r12).transpose();
  GaussianState out = pred;
  const Vector z = residual(pred.mean, lin);
  Eigen::Map<Vector> flat(out.mean.data(), out.mean.size());
  flat.noalias() -= gain * z;
  out.cov_sqrt = StructuredMatrix::dense(r22.transpose());
  return out;
}

struct StepResult {
  GaussianState state;
  /// Calibrated standard deviation of the local defect, per dimension.
  Vector error_estimate;
  /// Local quasi-MLE of gamma^2: length 1 (scalar) or d (vector).
  Vector gamma_hat_sq;
  /// Process-noise scale actually used in the prediction.
  Vector noise_scale;
  Measurement measurement;
};

namespace detail {

template <class Fn>
auto run_phase(const char* phase, double t, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (!e.phase().empty()) throw;
    throw e.in_phase(phase, t);
  }
}

}  // namespace detail

/// One filter step of size h: discretize, predict the mean, linearize,
/// calibrate, predict the covariance, measure, correct.
[[nodiscard]] inline StepResult step(const GaussianState& state, double h, const SolverConfig& cfg,
                                     const OdeProblem& problem) {
  const double t_new = state.t + h;
  if (state.structure() != cfg.structure) {
    throw Error(ErrorKind::kConfig, std::string("state covariance is ") + state.cov_sqrt.kind_name() +
                                        ", solver expects " + to_string(cfg.structure));
  }
  const GammaBreve& gb = cfg.diffusion.gamma_breve;
  const bool dense = cfg.structure == Structure::kDense;

  const TransitionModel tm = detail::run_phase("discretize", state.t, [&] { return discretize(cfg.order, h); });
  MeanGrid pred_mean = detail::run_phase("predict-mean", t_new, [&] { return predict_mean(state.mean, tm); });
  const Linearization lin = detail::run_phase(
      "linearize", t_new, [&] { return linearize_at(cfg.strategy, problem, pred_mean.col(0), t_new); });

  StepResult result;
  detail::run_phase("calibrate", t_new, [&] {
    const Vector z = residual(pred_mean, lin);
    Vector sigma_meas;
    std::optional<Matrix> sigma_full;
    if (dense && (lin.jac_dense || !gb.is_diagonal())) {
      sigma_full = process_noise_measure_dense(tm, lin, gb);
      sigma_meas = sigma_full->diagonal();
    } else {
      sigma_meas = process_noise_measure(tm, lin, gb);
    }
    if (cfg.diffusion.vector_valued()) {
      result.gamma_hat_sq = calibrate_local_vector(z, sigma_meas);
      result.error_estimate = (result.gamma_hat_sq.array() * sigma_meas.array()).sqrt();
    } else {
      const double g = sigma_full ? calibrate_local_scalar_dense(z, *sigma_full)
                                  : calibrate_local_scalar(z, sigma_meas, cfg.diffusion);
      result.gamma_hat_sq = Vector::Constant(1, g);
      result.error_estimate = (g * sigma_meas.array()).sqrt();
    }
    if (cfg.diffusion.time_varying()) {
      result.noise_scale = result.gamma_hat_sq.unaryExpr([](double g) { return floor_gamma_sq(g); });
    } else {
      result.noise_scale = Vector::Constant(1, cfg.diffusion.fixed_gamma_sq);
    }
    return 0;
  });

  GaussianState pred{t_new, std::move(pred_mean), StructuredMatrix{}};
  pred.cov_sqrt = detail::run_phase("predict-cov", t_new,
                                    [&] { return predict_cov_sqrt(state.cov_sqrt, tm, result.noise_scale, gb); });
  result.measurement = detail::run_phase("measure", t_new, [&] { return measure(pred, lin, tm, gb); });
  result.state = detail::run_phase("correct", t_new, [&] { return correct(pred, result.measurement, lin); });
  assert(result.state.structure() == state.structure());
  return result;
}

}  // namespace pnode

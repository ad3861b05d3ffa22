#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>

#include "pnode/problem.hpp"

namespace pnode::problems {

using Params = std::map<std::string, double>;

namespace detail {

inline void check_keys(const std::string& name, const Params& params, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : params) {
    if (!allowed.count(key)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw Error(ErrorKind::kInvalidArgument, name + ": unknown parameter '" + key + "' (known: " + list + ")");
    }
  }
}

inline double get(const Params& params, const std::string& key, double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

inline std::size_t get_count(const Params& params, const std::string& key, std::size_t fallback) {
  const double v = get(params, key, static_cast<double>(fallback));
  if (!(v >= 0.0) || v != std::floor(v)) {
    throw Error(ErrorKind::kInvalidArgument, "parameter '" + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Lorenz96 with N >= 4 and forcing F. y_1(0) = F + perturbation, others F.
inline OdeProblem lorenz96(std::size_t n, double forcing = 8.0, double perturbation = 0.01) {
  if (n < 4) {
    throw Error(ErrorKind::kInvalidArgument, "lorenz96 needs n >= 4, got " + std::to_string(n));
  }
  OdeProblem p;
  p.dim = n;
  p.name = "lorenz96";
  p.params = {{"n", static_cast<double>(n)}, {"F", forcing}, {"perturbation", perturbation}};
  p.f = [n, forcing](double, const Vector& y, Vector& out) {
    const auto N = static_cast<Eigen::Index>(n);
    out(0) = (y(1) - y(N - 2)) * y(N - 1) - y(0) + forcing;
    out(1) = (y(2) - y(N - 1)) * y(0) - y(1) + forcing;
    for (Eigen::Index i = 2; i < N - 1; ++i) {
      out(i) = (y(i + 1) - y(i - 2)) * y(i - 1) - y(i) + forcing;
    }
    out(N - 1) = (y(0) - y(N - 3)) * y(N - 2) - y(N - 1) + forcing;
  };
  // No index in the brackets ever equals i for N >= 4.
  p.jac_diag = [](double, const Vector&, Vector& out) { out.setConstant(-1.0); };
  p.jac_dense = [n](double, const Vector& y, Matrix& out) {
    const auto N = static_cast<Eigen::Index>(n);
    out.setZero(N, N);
    auto wrap = [N](Eigen::Index k) { return ((k % N) + N) % N; };
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto ip1 = wrap(i + 1), im1 = wrap(i - 1), im2 = wrap(i - 2);
      out(i, ip1) += y(im1);
      out(i, im2) -= y(im1);
      out(i, im1) += y(ip1) - y(im2);
      out(i, i) -= 1.0;
    }
  };
  p.y0 = Vector::Constant(static_cast<Eigen::Index>(n), forcing);
  p.y0(0) += perturbation;
  p.t0 = 0.0;
  p.tmax = 30.0;
  return p;
}

/// Seven-body problem in the plane; state (x, y, v, w), masses m_i = i.
inline OdeProblem pleiades() {
  constexpr Eigen::Index kBodies = 7;
  OdeProblem p;
  p.dim = 4 * kBodies;
  p.name = "pleiades";
  p.f = [](double, const Vector& s, Vector& out) {
    for (Eigen::Index i = 0; i < kBodies; ++i) {
      out(i) = s(2 * kBodies + i);
      out(kBodies + i) = s(3 * kBodies + i);
      double ax = 0.0, ay = 0.0;
      for (Eigen::Index j = 0; j < kBodies; ++j) {
        if (j == i) continue;
        const double dx = s(j) - s(i);
        const double dy = s(kBodies + j) - s(kBodies + i);
        const double r2 = dx * dx + dy * dy;
        const double rij = r2 * std::sqrt(r2);
        const double mj = static_cast<double>(j + 1);
        ax += mj * dx / rij;
        ay += mj * dy / rij;
      }
      out(2 * kBodies + i) = ax;
      out(3 * kBodies + i) = ay;
    }
  };
  p.jac_dense = [](double, const Vector& s, Matrix& out) {
    out.setZero(4 * kBodies, 4 * kBodies);
    for (Eigen::Index i = 0; i < kBodies; ++i) {
      out(i, 2 * kBodies + i) = 1.0;
      out(kBodies + i, 3 * kBodies + i) = 1.0;
      for (Eigen::Index j = 0; j < kBodies; ++j) {
        if (j == i) continue;
        const double dx = s(j) - s(i);
        const double dy = s(kBodies + j) - s(kBodies + i);
        const double r2 = dx * dx + dy * dy;
        const double r3 = r2 * std::sqrt(r2);
        const double r5 = r3 * r2;
        const double mj = static_cast<double>(j + 1);
        const double axx = mj * (1.0 / r3 - 3.0 * dx * dx / r5);
        const double axy = mj * (-3.0 * dx * dy / r5);
        const double ayy = mj * (1.0 / r3 - 3.0 * dy * dy / r5);
        const Eigen::Index vi = 2 * kBodies + i, wi = 3 * kBodies + i;
        out(vi, j) += axx;
        out(vi, kBodies + j) += axy;
        out(wi, j) += axy;
        out(wi, kBodies + j) += ayy;
        out(vi, i) -= axx;
        out(vi, kBodies + i) -= axy;
        out(wi, i) -= axy;
        out(wi, kBodies + i) -= ayy;
      }
    }
  };
  // Every component's derivative is independent of that component.
  p.jac_diag = [](double, const Vector&, Vector& out) { out.setZero(); };
  p.y0.resize(4 * kBodies);
  p.y0 << 3, 3, -1, -3, 2, -2, 2,  //
      3, -3, 2, 0, 0, -4, 4,       //
      0, 0, 0, 0, 0, 1.75, -1.5,   //
      0, 0, 0, -1.25, 1, 0, 0;
  p.t0 = 0.0;
  p.tmax = 3.0;
  return p;
}

inline OdeProblem vanderpol(double mu = 1.0) {
  if (!(mu > 0.0) || !std::isfinite(mu)) {
    throw Error(ErrorKind::kInvalidArgument, "vanderpol needs mu > 0, got " + std::to_string(mu));
  }
  OdeProblem p;
  p.dim = 2;
  p.name = "vanderpol";
  p.params = {{"mu", mu}};
  p.f = [mu](double, const Vector& y, Vector& out) {
    out(0) = y(1);
    out(1) = mu * ((1.0 - y(0) * y(0)) * y(1) - y(0));
  };
  p.jac_diag = [mu](double, const Vector& y, Vector& out) {
    out(0) = 0.0;
    out(1) = mu * (1.0 - y(0) * y(0));
  };
  p.jac_dense = [mu](double, const Vector& y, Matrix& out) {
    out.resize(2, 2);
    out << 0.0, 1.0, mu * (-2.0 * y(0) * y(1) - 1.0), mu * (1.0 - y(0) * y(0));
  };
  p.y0 = Vector(2);
  p.y0 << 2.0, 0.0;
  p.t0 = 0.0;
  p.tmax = 6.3;
  return p;
}

struct FhnParams {
  std::size_t grid = 16;
  double a = 208e-4;
  double b = 5e-3;
  double k = -5e-3;
  double tau = 0.1;
  std::uint64_t seed = 0;
};

/// 2-D FitzHugh-Nagumo on a G x G grid over [0,1]^2 with zero-flux
/// boundaries (mirrored ghost points). State: u row-major, then v row-major.
inline OdeProblem fhn_pde(const FhnParams& fp) {
  if (fp.grid < 3) {
    throw Error(ErrorKind::kInvalidArgument, "fhn needs at least 3 grid points per axis, got " +
                                                 std::to_string(fp.grid));
  }
  if (!(fp.tau > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "fhn needs tau > 0");
  }
  const auto g = static_cast<Eigen::Index>(fp.grid);
  const Eigen::Index cells = g * g;
  const double dx = 1.0 / static_cast<double>(g - 1);
  const double inv_dx2 = 1.0 / (dx * dx);

  OdeProblem p;
  p.dim = static_cast<std::size_t>(2 * cells);
  p.name = "fhn";
  p.params = {{"G", static_cast<double>(fp.grid)}, {"a", fp.a},     {"b", fp.b},
              {"k", fp.k},                         {"tau", fp.tau}, {"seed", static_cast<double>(fp.seed)}};
  p.notes = {{"boundary", "neumann (mirrored ghost points)"}, {"ordering", "row-major, u block then v block"}};

  // Laplacian of a G x G row-major field with mirrored ghosts.
  auto laplace = [g, inv_dx2](const double* u, Eigen::Index i, Eigen::Index j) {
    const Eigen::Index up = i == 0 ? 1 : i - 1;
    const Eigen::Index down = i == g - 1 ? g - 2 : i + 1;
    const Eigen::Index left = j == 0 ? 1 : j - 1;
    const Eigen::Index right = j == g - 1 ? g - 2 : j + 1;
    return (u[up * g + j] + u[down * g + j] + u[i * g + left] + u[i * g + right] - 4.0 * u[i * g + j]) * inv_dx2;
  };

  p.f = [fp, g, cells, laplace](double, const Vector& y, Vector& out) {
    const double* u = y.data();
    const double* v = y.data() + cells;
    for (Eigen::Index i = 0; i < g; ++i) {
      for (Eigen::Index j = 0; j < g; ++j) {
        const Eigen::Index c = i * g + j;
        const double uc = u[c];
        out(c) = fp.a * laplace(u, i, j) + uc - uc * uc * uc - v[c] + fp.k;
        out(cells + c) = (fp.b * laplace(v, i, j) + uc - v[c]) / fp.tau;
      }
    }
  };
  p.jac_diag = [fp, cells, inv_dx2](double, const Vector& y, Vector& out) {
    const double v_diag = (-4.0 * fp.b * inv_dx2 - 1.0) / fp.tau;
    for (Eigen::Index c = 0; c < cells; ++c) {
      out(c) = -4.0 * fp.a * inv_dx2 + 1.0 - 3.0 * y(c) * y(c);
      out(cells + c) = v_diag;
    }
  };
  p.jac_dense = [fp, g, cells, inv_dx2](double, const Vector& y, Matrix& out) {
    out.setZero(2 * cells, 2 * cells);
    for (Eigen::Index i = 0; i < g; ++i) {
      for (Eigen::Index j = 0; j < g; ++j) {
        const Eigen::Index c = i * g + j;
        const Eigen::Index nb[4] = {(i == 0 ? 1 : i - 1) * g + j, (i == g - 1 ? g - 2 : i + 1) * g + j,
                                    i * g + (j == 0 ? 1 : j - 1), i * g + (j == g - 1 ? g - 2 : j + 1)};
        for (Eigen::Index n : nb) {
          out(c, n) += fp.a * inv_dx2;
          out(cells + c, cells + n) += fp.b * inv_dx2 / fp.tau;
        }
        out(c, c) += -4.0 * fp.a * inv_dx2 + 1.0 - 3.0 * y(c) * y(c);
        out(c, cells + c) = -1.0;
        out(cells + c, c) = 1.0 / fp.tau;
        out(cells + c, cells + c) += (-4.0 * fp.b * inv_dx2 - 1.0) / fp.tau;
      }
    }
  };

  std::mt19937_64 rng(fp.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  p.y0.resize(2 * cells);
  for (Eigen::Index c = 0; c < 2 * cells; ++c) p.y0(c) = unif(rng);
  p.t0 = 0.0;
  p.tmax = 20.0;
  return p;
}

/// Adds a central-difference diagonal Jacobian (2d evaluations of f per call).
inline OdeProblem fd_jacobian_wrapper(OdeProblem problem, double eps = 1e-6) {
  if (!(eps > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "fd_jacobian_wrapper needs eps > 0");
  }
  const VectorField f = problem.f;
  const auto d = static_cast<Eigen::Index>(problem.dim);
  problem.jac_diag = [f, d, eps](double t, const Vector& y, Vector& out) {
    Vector yp = y, fp(d), fm(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      yp(i) = y(i) + eps;
      f(t, yp, fp);
      yp(i) = y(i) - eps;
      f(t, yp, fm);
      yp(i) = y(i);
      out(i) = (fp(i) - fm(i)) / (2.0 * eps);
    }
  };
  problem.notes["jacobian"] = "central differences, eps=" + std::to_string(eps);
  return problem;
}

/// Builds a registered problem by name. t0 and tmax may be overridden for
/// every problem.
inline OdeProblem make_problem(const std::string& name, const Params& params = {}) {
  OdeProblem p;
  if (name == "lorenz96") {
    detail::check_keys(name, params, {"n", "F", "perturbation", "t0", "tmax"});
    p = lorenz96(detail::get_count(params, "n", 40), detail::get(params, "F", 8.0),
                 detail::get(params, "perturbation", 0.01));
  } else if (name == "pleiades") {
    detail::check_keys(name, params, {"t0", "tmax"});
    p = pleiades();
  } else if (name == "vanderpol") {
    detail::check_keys(name, params, {"mu", "t0", "tmax"});
    p = vanderpol(detail::get(params, "mu", 1.0));
  } else if (name == "fhn") {
    detail::check_keys(name, params, {"G", "a", "b", "k", "tau", "seed", "t0", "tmax"});
    FhnParams fp;
    fp.grid = detail::get_count(params, "G", fp.grid);
    fp.a = detail::get(params, "a", fp.a);
    fp.b = detail::get(params, "b", fp.b);
    fp.k = detail::get(params, "k", fp.k);
    fp.tau = detail::get(params, "tau", fp.tau);
    fp.seed = static_cast<std::uint64_t>(detail::get_count(params, "seed", 0));
    p = fhn_pde(fp);
  } else {
    throw Error(ErrorKind::kInvalidArgument,
                "unknown problem '" + name + "' (known: lorenz96, pleiades, vanderpol, fhn)");
  }
  p.t0 = detail::get(params, "t0", p.t0);
  p.tmax = detail::get(params, "tmax", p.tmax);
  if (!(p.tmax > p.t0)) {
    throw Error(ErrorKind::kInvalidArgument, name + ": tmax must exceed t0");
  }
  return p;
}

}  // namespace pnode::problems

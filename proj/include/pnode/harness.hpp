#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pnode/problems.hpp"
#include "pnode/solver.hpp"

namespace pnode::harness {

using json = nlohmann::json;
using problems::Params;

struct SolverVariant {
  std::string name;
  Strategy strategy = Strategy::kEK0;
  Structure structure = Structure::kBlockDiagonal;
};

inline SolverVariant parse_solver(const std::string& name) {
  if (name == "ek0-dense") return {name, Strategy::kEK0, Structure::kDense};
  if (name == "ek1-dense") return {name, Strategy::kDenseEK1, Structure::kDense};
  if (name == "ek0-blockdiag") return {name, Strategy::kEK0, Structure::kBlockDiagonal};
  if (name == "ek1-diag") return {name, Strategy::kDiagonalEK1, Structure::kBlockDiagonal};
  if (name == "ek0-kronecker") return {name, Strategy::kEK0, Structure::kKronecker};
  throw Error(ErrorKind::kInvalidArgument, "unknown solver '" + name +
                                               "' (known: ek0-dense, ek1-dense, ek0-blockdiag, ek1-diag, ek0-kronecker)");
}

inline DiffusionSpec parse_diffusion(const std::string& name) {
  DiffusionSpec spec;
  if (name == "tv-scalar") {
  } else if (name == "tv-vector") {
    spec.shape = DiffusionShape::kVector;
  } else if (name == "tc-scalar") {
    spec.variability = Variability::kTimeConstant;
  } else if (name == "tc-vector") {
    spec.variability = Variability::kTimeConstant;
    spec.shape = DiffusionShape::kVector;
  } else {
    throw Error(ErrorKind::kInvalidArgument,
                "unknown diffusion '" + name + "' (known: tv-scalar, tv-vector, tc-scalar, tc-vector)");
  }
  return spec;
}

inline SolverConfig make_config(const SolverVariant& variant, std::size_t order, const std::string& diffusion,
                                double rtol, double atol) {
  SolverConfig cfg;
  cfg.order = order;
  cfg.strategy = variant.strategy;
  cfg.structure = variant.structure;
  cfg.diffusion = parse_diffusion(diffusion);
  cfg.rtol = rtol;
  cfg.atol = atol;
  return cfg;
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Worker cap from PNODE_NUM_THREADS (unset or invalid: hardware concurrency).
inline std::size_t worker_cap() {
  std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PNODE_NUM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return hw;
}

/// Runs task(i) for i in [0, n) on up to `jobs` threads (capped by worker_cap).
template <class Task>
void parallel_for(std::size_t n, std::size_t jobs, Task&& task) {
  jobs = std::max<std::size_t>(1, std::min({jobs, worker_cap(), n}));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) task(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

// ---------------------------------------------------------------- solve

struct SolveRequest {
  std::string problem = "vanderpol";
  Params params;
  std::string solver = "ek1-diag";
  std::string diffusion = "tv-scalar";
  std::size_t order = 3;
  double rtol = 1e-6;
  double atol = 1e-6;
  std::size_t fixed_steps = 0;  // 0: adaptive
  std::uint64_t seed = 0;
  std::size_t save_every = 1;
  std::size_t max_steps = 0;  // 0: library default
};

/// Writes one JSON object per accepted step (plus the initial state) and a
/// final {"metadata": ...} line. Returns the exit status.
inline int run_solve(const SolveRequest& req, std::ostream& out, std::ostream& err) {
  Params params = req.params;
  if (req.problem == "fhn" && !params.count("seed")) params["seed"] = static_cast<double>(req.seed);
  OdeProblem problem;
  SolverConfig cfg;
  SolverVariant variant;
  try {
    if (req.save_every == 0) throw Error(ErrorKind::kInvalidArgument, "save-every must be positive");
    problem = problems::make_problem(req.problem, params);
    variant = parse_solver(req.solver);
    cfg = make_config(variant, req.order, req.diffusion, req.rtol, req.atol);
    if (req.max_steps > 0) cfg.controller.max_steps = req.max_steps;
    if (req.fixed_steps > 0) {
      cfg.grid.resize(req.fixed_steps + 1);
      const double span = problem.tmax - problem.t0;
      for (std::size_t n = 0; n <= req.fixed_steps; ++n) {
        cfg.grid[n] = problem.t0 + span * static_cast<double>(n) / static_cast<double>(req.fixed_steps);
      }
      cfg.grid.back() = problem.tmax;
    }
    cfg.validate(problem.dim);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  const bool buffered = !cfg.diffusion.time_varying();
  struct Row {
    double t, h;
    Vector mean, std, gamma;
  };
  std::vector<Row> rows;
  std::size_t seen = 0;
  auto emit = [&](const Row& r, const Vector* gamma_override) {
    json rec;
    rec["t"] = r.t;
    rec["y_mean"] = to_json(r.mean);
    rec["y_std"] = to_json(r.std);
    const Vector& g = gamma_override ? *gamma_override : r.gamma;
    rec["gamma"] = g.size() == 0 ? json(nullptr) : to_json(g);
    rec["h"] = r.h;
    rec["accepted"] = true;
    out << rec.dump() << "\n";
  };
  Row pending;
  bool have_pending = false;
  auto observer = [&](const StepRecord& rec) {
    Row r{rec.state.t, rec.h, rec.state.mean.col(0), rec.state.marginal_std(0), rec.gamma_hat_sq};
    const bool keep = seen % req.save_every == 0;
    ++seen;
    if (!keep) {
      pending = std::move(r);
      have_pending = true;
      return;
    }
    have_pending = false;
    if (buffered) {
      rows.push_back(std::move(r));
    } else {
      emit(r, nullptr);
    }
  };

  SolveStats stats;
  std::string status = "ok";
  std::string message;
  Vector gamma_final;
  const auto start = std::chrono::steady_clock::now();
  try {
    Solution sol = solve(problem, cfg, observer, std::nullopt, &stats);
    gamma_final = sol.gamma_sq;
  } catch (const Error& e) {
    status = "error";
    message = e.what();
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (have_pending) {
    if (buffered) {
      rows.push_back(pending);
    } else {
      emit(pending, nullptr);
    }
  }
  if (buffered) {
    const bool calibrated = gamma_final.size() > 0;
    for (auto& r : rows) {
      if (calibrated) {
        const Vector rel = gamma_final / cfg.diffusion.fixed_gamma_sq;
        for (Eigen::Index i = 0; i < r.std.size(); ++i) r.std(i) *= std::sqrt(rel.size() == 1 ? rel(0) : rel(i));
      }
      emit(r, calibrated ? &gamma_final : nullptr);
    }
  }

  json meta;
  meta["problem"] = req.problem;
  meta["params"] = problem.params;
  meta["notes"] = problem.notes;
  meta["dim"] = problem.dim;
  meta["t0"] = problem.t0;
  meta["tmax"] = problem.tmax;
  meta["solver"] = variant.name;
  meta["strategy"] = to_string(cfg.strategy);
  meta["structure"] = to_string(cfg.structure);
  meta["nu"] = cfg.order;
  meta["diffusion"] = to_string(cfg.diffusion);
  meta["error_estimate"] = "h * sqrt(local gamma_hat^2 * [H Sigma(h) H^T]_ii)";
  meta["rtol"] = cfg.rtol;
  meta["atol"] = cfg.atol;
  meta["fixed_steps"] = req.fixed_steps;
  meta["save_every"] = req.save_every;
  meta["seed"] = req.seed;
  meta["wall_seconds"] = wall;
  meta["n_accepted"] = stats.accepted;
  meta["n_rejected"] = stats.rejected;
  meta["n_failed"] = stats.failed_steps;
  meta["gamma_final"] = gamma_final.size() ? to_json(gamma_final) : json(nullptr);
  meta["y_std_calibrated"] = !buffered || gamma_final.size() > 0;
  meta["status"] = status;
  if (!message.empty()) meta["error"] = message;
  out << json{{"metadata", meta}}.dump() << "\n";
  if (status != "ok") {
    err << "error: " << message << "\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------- bench-step

struct BenchRequest {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> orders{2};
  std::vector<std::string> solvers;
  std::size_t repeats = 5;
  std::size_t dense_cutoff = 4096;
  double h = 1e-2;
};

struct BenchRow {
  std::string solver;
  std::size_t nu = 0;
  std::size_t d = 0;
  double median_seconds = 0.0;
  double min_seconds = 0.0;
  std::string status = "ok";
};

inline const char* kBenchHeader = "solver,nu,d,median_seconds,min_seconds,status";

/// Median and minimum wall time of single steps on Lorenz96(d), after one
/// warm-up step, all from the initialized state.
inline BenchRow bench_one(const SolverVariant& variant, std::size_t nu, std::size_t d, std::size_t repeats,
                          double h) {
  const OdeProblem problem = problems::lorenz96(d);
  SolverConfig cfg = make_config(variant, nu, "tv-scalar", 1e-6, 1e-6);
  cfg.validate(d);
  const IwpPrior prior(nu, d, cfg.diffusion);
  const GaussianState state = initialize(problem, prior, InitPlan::defaults(problem, nu), cfg.structure);
  { auto warm = step(state, h, cfg, problem); (void)warm; }
  std::vector<double> times;
  times.reserve(repeats);
  for (std::size_t k = 0; k < repeats; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    auto res = step(state, h, cfg, problem);
    const auto t1 = std::chrono::steady_clock::now();
    if (!res.state.mean.allFinite()) throw Error(ErrorKind::kNonFinite, "bench step produced non-finite mean");
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  BenchRow row{variant.name, nu, d, 0.0, times.front(), "ok"};
  const std::size_t m = times.size();
  row.median_seconds = m % 2 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
  return row;
}

inline void write_bench_row(std::ostream& out, const BenchRow& r) {
  out << r.solver << ',' << r.nu << ',' << r.d << ',' << format_double(r.median_seconds) << ','
      << format_double(r.min_seconds) << ',' << r.status << '\n';
}

inline int run_bench_step(const BenchRequest& req, std::ostream& out, std::ostream& err,
                          std::vector<BenchRow>* collected = nullptr) {
  try {
    if (req.repeats == 0) throw Error(ErrorKind::kInvalidArgument, "repeats must be positive");
    if (req.dims.empty() || req.solvers.empty() || req.orders.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "bench-step needs dims, orders and solvers");
    }
    if (!std::is_sorted(req.dims.begin(), req.dims.end())) {
      throw Error(ErrorKind::kInvalidArgument, "dims must be sorted ascending");
    }
    for (const auto& s : req.solvers) parse_solver(s);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  out << kBenchHeader << '\n';
  int status = 0;
  for (const auto& name : req.solvers) {
    const SolverVariant variant = parse_solver(name);
    for (std::size_t nu : req.orders) {
      for (std::size_t d : req.dims) {
        BenchRow row{name, nu, d, 0.0, 0.0, "skipped"};
        if (variant.structure == Structure::kDense && d > req.dense_cutoff) {
          row.median_seconds = row.min_seconds = std::numeric_limits<double>::quiet_NaN();
        } else {
          try {
            row = bench_one(variant, nu, d, req.repeats, req.h);
          } catch (const Error& e) {
            row.status = "failed";
            row.median_seconds = row.min_seconds = std::numeric_limits<double>::quiet_NaN();
            err << "bench " << name << " nu=" << nu << " d=" << d << ": " << e.what() << "\n";
          }
        }
        write_bench_row(out, row);
        out.flush();
        if (collected) collected->push_back(row);
      }
    }
  }
  return status;
}

// ---------------------------------------------------------------- work-precision

/// Final state of classical RK4 with n equal steps.
inline Vector rk4_final(const OdeProblem& p, std::size_t n) {
  const double dt = (p.tmax - p.t0) / static_cast<double>(n);
  const auto d = static_cast<Eigen::Index>(p.dim);
  Vector y = p.y0, k1(d), k2(d), k3(d), k4(d), tmp(d);
  double t = p.t0;
  for (std::size_t i = 0; i < n; ++i) {
    p.f(t, y, k1);
    tmp = y + 0.5 * dt * k1;
    p.f(t + 0.5 * dt, tmp, k2);
    tmp = y + 0.5 * dt * k2;
    p.f(t + 0.5 * dt, tmp, k3);
    tmp = y + dt * k3;
    p.f(t + dt, tmp, k4);
    y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t = p.t0 + static_cast<double>(i + 1) * dt;
  }
  return y;
}

struct Reference {
  Vector y;
  std::size_t steps = 0;
  double self_difference = 0.0;  // max |y(n) - y(n/2)|
};

/// Doubles the number of RK4 steps until two successive final states agree
/// to `target` (or max_steps is reached).
inline Reference rk4_reference(const OdeProblem& p, double target = 1e-12, std::size_t start = 1 << 12,
                               std::size_t max_steps = std::size_t{1} << 23) {
  Reference ref;
  Vector prev = rk4_final(p, start);
  for (std::size_t n = 2 * start; n <= max_steps; n *= 2) {
    Vector y = rk4_final(p, n);
    ref.self_difference = (y - prev).cwiseAbs().maxCoeff();
    ref.y = y;
    ref.steps = n;
    if (ref.self_difference <= target) break;
    prev = std::move(y);
  }
  return ref;
}

struct WorkPrecisionRequest {
  std::string problem = "pleiades";
  Params params;
  std::vector<double> tols;
  std::vector<std::string> solvers;
  std::size_t order = 3;
  std::string diffusion = "tv-scalar";
  /// Absolute tolerance; <= 0 means "same as rtol".
  double atol = 0.0;
  std::size_t jobs = 1;
};

struct WorkPrecisionRow {
  std::string solver;
  double rtol = 0.0;
  double rmse_final = 0.0;
  double wall_seconds = 0.0;
  std::size_t n_steps = 0;
  std::size_t n_rejected = 0;
  bool completed = false;
};

inline const char* kWorkPrecisionHeader = "solver,rtol,rmse_final,wall_seconds,n_steps,n_rejected,completed";

inline int run_work_precision(const WorkPrecisionRequest& req, std::ostream& out, json& meta, std::ostream& err,
                              std::vector<WorkPrecisionRow>* collected = nullptr) {
  OdeProblem problem;
  try {
    if (req.tols.empty()) throw Error(ErrorKind::kInvalidArgument, "work-precision needs at least one tolerance");
    if (req.solvers.empty()) throw Error(ErrorKind::kInvalidArgument, "work-precision needs at least one solver");
    for (std::size_t i = 0; i < req.tols.size(); ++i) {
      if (!(req.tols[i] > 0.0)) throw Error(ErrorKind::kInvalidArgument, "tolerances must be positive");
      if (i > 0 && !(req.tols[i] < req.tols[i - 1])) {
        throw Error(ErrorKind::kInvalidArgument, "tolerances must be strictly descending");
      }
    }
    for (const auto& s : req.solvers) parse_solver(s);
    parse_diffusion(req.diffusion);
    problem = problems::make_problem(req.problem, req.params);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  const Reference ref = rk4_reference(problem);
  meta["problem"] = req.problem;
  meta["params"] = problem.params;
  meta["nu"] = req.order;
  meta["diffusion"] = req.diffusion;
  meta["atol"] = req.atol > 0.0 ? json(req.atol) : json("rtol");
  meta["reference"] = {{"method", "rk4-fixed-step"},
                       {"steps", ref.steps},
                       {"self_difference", ref.self_difference},
                       {"y_final", to_json(ref.y)}};
  meta["rmse"] = "root mean square over all components of the zeroth coordinate at tmax";

  std::vector<std::pair<std::string, double>> jobs;
  for (const auto& s : req.solvers) {
    for (double tol : req.tols) jobs.emplace_back(s, tol);
  }
  std::vector<WorkPrecisionRow> rows(jobs.size());
  std::vector<std::string> failures(jobs.size());
  parallel_for(jobs.size(), req.jobs, [&](std::size_t i) {
    const auto& [name, tol] = jobs[i];
    WorkPrecisionRow row;
    row.solver = name;
    row.rtol = tol;
    SolverConfig cfg = make_config(parse_solver(name), req.order, req.diffusion, tol, req.atol > 0.0 ? req.atol : tol);
    SolveStats stats;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Solution sol = solve(problem, cfg, {}, std::nullopt, &stats);
      row.rmse_final = std::sqrt((sol.final_state.mean.col(0) - ref.y).squaredNorm() / static_cast<double>(problem.dim));
      row.completed = true;
    } catch (const Error& e) {
      row.rmse_final = std::numeric_limits<double>::quiet_NaN();
      failures[i] = e.what();
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.n_steps = stats.accepted;
    row.n_rejected = stats.rejected;
    rows[i] = row;
  });

  out << kWorkPrecisionHeader << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << r.solver << ',' << format_double(r.rtol) << ',' << format_double(r.rmse_final) << ','
        << format_double(r.wall_seconds) << ',' << r.n_steps << ',' << r.n_rejected << ','
        << (r.completed ? "true" : "false") << '\n';
    if (!failures[i].empty()) err << r.solver << " rtol=" << format_double(r.rtol) << ": " << failures[i] << "\n";
  }
  if (collected) *collected = rows;
  return 0;
}

// ---------------------------------------------------------------- stiffness

struct StiffnessRequest {
  std::vector<double> mus;
  std::vector<std::string> solvers;
  std::size_t order = 4;
  std::string diffusion = "tv-scalar";
  double rtol = 1e-6;
  double atol = 1e-6;
  std::size_t max_steps = 1'000'000;
  std::size_t jobs = 1;
};

struct StiffnessRow {
  std::string solver;
  double mu = 0.0;
  std::size_t n_accepted = 0;
  std::size_t n_rejected = 0;
  bool completed = false;
  std::string failure;
};

inline const char* kStiffnessHeader = "solver,mu,n_accepted,n_rejected,completed,failure";

inline int run_stiffness(const StiffnessRequest& req, std::ostream& out, std::ostream& err,
                         std::vector<StiffnessRow>* collected = nullptr) {
  std::vector<double> mus;
  try {
    if (req.mus.empty() || req.solvers.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "stiffness needs mus and solvers");
    }
    for (double mu : req.mus) {
      if (!(mu > 0.0)) throw Error(ErrorKind::kInvalidArgument, "mu must be positive");
      if (std::find(mus.begin(), mus.end(), mu) == mus.end()) mus.push_back(mu);
    }
    for (const auto& s : req.solvers) parse_solver(s);
    parse_diffusion(req.diffusion);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  std::vector<std::pair<std::string, double>> jobs;
  for (const auto& s : req.solvers) {
    for (double mu : mus) jobs.emplace_back(s, mu);
  }
  std::vector<StiffnessRow> rows(jobs.size());
  parallel_for(jobs.size(), req.jobs, [&](std::size_t i) {
    const auto& [name, mu] = jobs[i];
    StiffnessRow row;
    row.solver = name;
    row.mu = mu;
    SolverConfig cfg = make_config(parse_solver(name), req.order, req.diffusion, req.rtol, req.atol);
    cfg.controller.max_steps = req.max_steps;
    SolveStats stats;
    try {
      (void)solve(problems::vanderpol(mu), cfg, {}, std::nullopt, &stats);
      row.completed = true;
    } catch (const Error& e) {
      row.failure = to_string(e.kind());
    }
    row.n_accepted = stats.accepted;
    row.n_rejected = stats.rejected;
    rows[i] = row;
  });
  (void)err;
  out << kStiffnessHeader << '\n';
  for (const auto& r : rows) {
    out << r.solver << ',' << format_double(r.mu) << ',' << r.n_accepted << ',' << r.n_rejected << ','
        << (r.completed ? "true" : "false") << ',' << r.failure << '\n';
  }
  if (collected) *collected = rows;
  return 0;
}

}  // namespace pnode::harness

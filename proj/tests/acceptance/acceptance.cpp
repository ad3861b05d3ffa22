#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "equivalence.hpp"
#include "pnode/harness.hpp"

using namespace pnode;
using testing_helpers::max_abs;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? " ok" : " FAILED");
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

SolverConfig fixed_config(const char* solver, std::size_t nu, const char* diffusion = "tv-scalar") {
  return harness::make_config(harness::parse_solver(solver), nu, diffusion, 1e-6, 1e-6);
}

std::vector<double> uniform_grid(double t0, double t1, std::size_t n) {
  std::vector<double> g(n + 1);
  for (std::size_t i = 0; i <= n; ++i) g[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n);
  g.back() = t1;
  return g;
}

struct SmallCase {
  std::string label;
  OdeProblem problem;
};

std::vector<SmallCase> small_cases() {
  std::vector<SmallCase> out;
  for (std::size_t d : {2, 3, 4}) {
    out.push_back({"vdp-copies d=" + std::to_string(d), testing_helpers::vanderpol_copies(d, 1.0)});
  }
  out.push_back({"lorenz96 d=4", problems::lorenz96(4)});
  return out;
}

const char* kStructured[] = {"ek0-blockdiag", "ek1-diag", "ek0-kronecker"};

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  double mean_rel = 0.0, cov_abs = 0.0, cov_scale = 0.0;
  std::size_t runs = 0;
  for (const auto& c : small_cases()) {
    const double h = c.label.rfind("lorenz", 0) == 0 ? 0.01 : 0.05;
    for (std::size_t nu = 1; nu <= 3; ++nu) {
      for (const char* solver : kStructured) {
        const auto rep = testing_helpers::run_equivalence(c.problem, fixed_config(solver, nu), 20, h);
        mean_rel = std::max(mean_rel, rep.mean_rel);
        cov_abs = std::max(cov_abs, rep.cov_abs);
        cov_scale = std::max(cov_scale, rep.max_cov);
        ++runs;
      }
    }
  }
  const double wall = seconds_since(t0);
  o.check(mean_rel <= 1e-9, "max mean rel dev " + num(mean_rel) + " <= 1e-9");
  o.check(cov_abs <= 1e-8, "max cov abs dev " + num(cov_abs) + " <= 1e-8 (largest |C| entry " + num(cov_scale) + ")");
  o.check(wall < 10.0, std::to_string(runs) + " runs in " + num(wall) + " s < 10 s");
  return o;
}

double fit_slope(const std::vector<harness::BenchRow>& rows, const std::string& solver, std::size_t nu) {
  std::vector<double> d, t;
  for (const auto& r : rows) {
    if (r.solver == solver && r.nu == nu && r.status == "ok") {
      d.push_back(static_cast<double>(r.d));
      t.push_back(r.median_seconds);
    }
  }
  return d.size() >= 2 ? oracle::loglog_slope(d, t) : std::numeric_limits<double>::quiet_NaN();
}

Outcome criterion2() {
  Outcome o;
  const auto t0 = Clock::now();
  const std::vector<std::size_t> orders = {2, 4, 6};
  harness::BenchRequest structured;
  structured.dims = {64, 128, 256, 512, 1024, 2048, 4096, 8192};
  structured.orders = orders;
  structured.solvers = {"ek0-kronecker", "ek0-blockdiag", "ek1-diag"};
  harness::BenchRequest dense;
  dense.dims = {16, 32, 64, 128, 256};
  dense.orders = orders;
  dense.solvers = {"ek0-dense", "ek1-dense"};
  std::vector<harness::BenchRow> rows;
  std::ostringstream sink, err;
  const int s1 = harness::run_bench_step(structured, sink, err, &rows);
  const int s2 = harness::run_bench_step(dense, sink, err, &rows);
  o.check(s1 == 0 && s2 == 0, "bench runs");
  for (std::size_t nu : orders) {
    for (const auto& solver : structured.solvers) {
      const double k = fit_slope(rows, solver, nu);
      o.check(k >= 0.7 && k <= 1.5, solver + " nu=" + std::to_string(nu) + " slope " + num(k) + " in [0.7,1.5]");
    }
    for (const auto& solver : dense.solvers) {
      const double k = fit_slope(rows, solver, nu);
      o.check(k >= 2.2, solver + " nu=" + std::to_string(nu) + " slope " + num(k) + " >= 2.2");
    }
    double kron = 0.0, block = 0.0;
    for (const auto& r : rows) {
      if (r.nu == nu && r.d == 8192 && r.solver == "ek0-kronecker") kron = r.median_seconds;
      if (r.nu == nu && r.d == 8192 && r.solver == "ek0-blockdiag") block = r.median_seconds;
    }
    o.check(kron <= block, "nu=" + std::to_string(nu) + " kronecker " + num(kron) + " s <= blockdiag " + num(block) +
                               " s at d=8192");
  }
  const double wall = seconds_since(t0);
  o.check(wall < 600.0, "runtime " + num(wall) + " s < 600 s");
  return o;
}

Outcome criterion3() {
  Outcome o;
  double cov_rel = 0.0, min_eig = std::numeric_limits<double>::infinity(), cov_scale = 0.0;
  std::size_t steps = 0;
  for (const auto& c : small_cases()) {
    const double h = c.label.rfind("lorenz", 0) == 0 ? 0.01 : 0.05;
    for (std::size_t nu = 1; nu <= 3; ++nu) {
      for (const char* solver : {"ek0-blockdiag", "ek1-diag", "ek0-kronecker", "ek0-dense", "ek1-dense"}) {
        const auto rep = testing_helpers::run_equivalence(c.problem, fixed_config(solver, nu), 20, h, true);
        cov_rel = std::max(cov_rel, rep.oracle_cov_rel);
        min_eig = std::min(min_eig, rep.min_eig);
        cov_scale = std::max(cov_scale, rep.max_cov);
        steps += rep.steps;
      }
    }
  }
  // The bench step (one step of 1e-2 from the initialized state) at its smallest sizes.
  for (std::size_t d : {16, 32, 64}) {
    for (std::size_t nu : {2, 4, 6}) {
      for (const char* solver : {"ek0-blockdiag", "ek1-diag", "ek0-kronecker", "ek0-dense", "ek1-dense"}) {
        const auto rep =
            testing_helpers::run_equivalence(problems::lorenz96(d), fixed_config(solver, nu), 1, 1e-2, true);
        cov_rel = std::max(cov_rel, rep.oracle_cov_rel);
        min_eig = std::min(min_eig, rep.min_eig);
        cov_scale = std::max(cov_scale, rep.max_cov);
        steps += rep.steps;
      }
    }
  }
  o.check(cov_rel <= 1e-10, "max |R^T R - C_full| / max(1, |C_full|) = " + num(cov_rel) + " <= 1e-10 over " +
                                std::to_string(steps) + " steps");
  o.check(min_eig >= -1e-10, "min eigenvalue " + num(min_eig) + " >= -1e-10 (largest |C| entry " + num(cov_scale) + ")");
  return o;
}

double log_evidence(const Vector& z, const Vector& s, double g) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) out += -0.5 * std::log(2.0 * M_PI * g * s(i)) - 0.5 * z(i) * z(i) / (g * s(i));
  return out;
}

Outcome criterion4() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 3), order(1, 3);
  std::uniform_real_distribution<double> step_size(0.01, 0.3), mu(0.5, 5.0);
  int optimal = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = static_cast<std::size_t>(dim(rng));
    const auto nu = static_cast<std::size_t>(order(rng));
    const OdeProblem p = testing_helpers::vanderpol_copies(d, mu(rng));
    const char* solver = trial % 2 == 0 ? "ek0-blockdiag" : "ek1-diag";
    const SolverConfig cfg = fixed_config(solver, nu);
    GaussianState st = initialize(p, IwpPrior(nu, d), InitPlan::defaults(p, nu), cfg.structure);
    st.mean += 0.1 * testing_helpers::random_matrix(rng, st.mean.rows(), st.mean.cols());
    const StepResult r = step(st, step_size(rng), cfg, p);
    const Vector& z = r.measurement.z;
    const Vector& s = r.measurement.sigma_meas;
    const double g = r.gamma_hat_sq(0);
    const double best = log_evidence(z, s, g);
    bool ok = g > 0.0;
    for (double m : {0.5, 0.75, 1.5, 2.0}) ok = ok && log_evidence(z, s, m * g) < best;
    optimal += ok;
  }
  o.check(optimal == 50, std::to_string(optimal) + "/50 local estimates maximize the evidence grid");

  {
    const OdeProblem p = problems::vanderpol(1.0);
    SolverConfig cfg = fixed_config("ek1-diag", 3, "tc-vector");
    cfg.grid = uniform_grid(0.0, 2.0, 100);
    const Solution sol = solve(p, cfg);
    GaussianState st = initialize(p, IwpPrior(3, 2, cfg.diffusion), InitPlan::defaults(p, 3), cfg.structure);
    Vector mean = Vector::Zero(2);
    for (std::size_t n = 1; n < cfg.grid.size(); ++n) {
      StepResult r = step(st, cfg.grid[n] - st.t, cfg, p);
      mean += calibrate_local_vector(r.measurement.z, r.measurement.innovation_diag());
      st = std::move(r.state);
    }
    mean /= static_cast<double>(cfg.grid.size() - 1);
    const double dev = max_abs(sol.gamma_sq - mean) / std::max(1.0, max_abs(mean));
    o.check(dev <= 1e-12, "time-constant vector estimate vs running mean " + num(dev) + " <= 1e-12");
  }
  {
    const OdeProblem p = problems::lorenz96(8);
    SolverConfig cfg = fixed_config("ek0-kronecker", 3, "tc-scalar");
    cfg.grid = uniform_grid(0.0, 1.0, 100);
    Matrix unscaled;
    const Solution sol = solve(p, cfg, [&](const StepRecord& r) { unscaled = r.state.covariance(); });
    const double g = sol.gamma_sq(0);
    const Matrix expected = g * unscaled;
    const double dev = max_abs(sol.final_state.covariance() - expected) / max_abs(expected);
    o.check(dev <= 1e-12, "kronecker post-hoc rescaling by gamma^2=" + num(g) + ", rel dev " + num(dev) + " <= 1e-12");
  }
  const double wall = seconds_since(t0);
  o.check(wall < 30.0, "runtime " + num(wall) + " s < 30 s");
  return o;
}

Outcome criterion5() {
  Outcome o;
  const auto t0 = Clock::now();
  OdeProblem p = testing_helpers::linear(-1.0);
  for (const char* solver : {"ek0-blockdiag", "ek1-diag"}) {
    for (std::size_t nu = 1; nu <= 3; ++nu) {
      std::vector<double> hs, errs;
      for (int k = 3; k <= 8; ++k) {
        SolverConfig cfg = fixed_config(solver, nu);
        cfg.grid = uniform_grid(0.0, 1.0, std::size_t{1} << k);
        const Solution sol = solve(p, cfg);
        hs.push_back(std::ldexp(1.0, -k));
        errs.push_back(std::abs(sol.final_state.mean(0, 0) - std::exp(-1.0)));
      }
      const double slope = oracle::loglog_slope(hs, errs);
      o.check(std::abs(slope - static_cast<double>(nu)) <= 0.5,
              std::string(solver) + " nu=" + std::to_string(nu) + " slope " + num(slope));
    }
  }
  const double wall = seconds_since(t0);
  o.check(wall < 30.0, "runtime " + num(wall) + " s < 30 s");
  return o;
}

Outcome criterion6() {
  Outcome o;
  const auto t0 = Clock::now();
  harness::WorkPrecisionRequest req;
  req.problem = "pleiades";
  req.tols = {1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9};
  req.solvers = {"ek1-diag", "ek0-blockdiag"};
  req.jobs = harness::worker_cap();
  std::ostringstream sink, err;
  harness::json meta;
  std::vector<harness::WorkPrecisionRow> rows;
  o.check(harness::run_work_precision(req, sink, meta, err, &rows) == 0, "work-precision runs");
  for (const auto& solver : req.solvers) {
    std::vector<double> rmse;
    for (const auto& r : rows) {
      if (r.solver != solver) continue;
      rmse.push_back(r.completed ? r.rmse_final : std::numeric_limits<double>::infinity());
      if (r.rtol == 1e-6) o.check(r.rmse_final <= 1e-4, solver + " rmse at rtol 1e-6 " + num(r.rmse_final) + " <= 1e-4");
    }
    int inversions = 0;
    for (std::size_t i = 1; i < rmse.size(); ++i) inversions += !(rmse[i] < rmse[i - 1]);
    std::string series;
    for (double e : rmse) series += (series.empty() ? "" : " ") + num(e);
    o.check(inversions <= 1, solver + " rmse [" + series + "] inversions " + std::to_string(inversions) + " <= 1");
  }
  const double wall = seconds_since(t0);
  o.check(wall < 300.0, "runtime " + num(wall) + " s < 300 s");
  return o;
}

Outcome criterion7() {
  Outcome o;
  const auto t0 = Clock::now();
  harness::StiffnessRequest req;
  req.mus = {1e3};
  req.solvers = {"ek1-dense", "ek1-diag", "ek0-blockdiag"};
  req.order = 4;
  req.jobs = harness::worker_cap();
  std::ostringstream sink, err;
  std::vector<harness::StiffnessRow> rows;
  o.check(harness::run_stiffness(req, sink, err, &rows) == 0, "stiffness runs");
  std::map<std::string, harness::StiffnessRow> by;
  for (const auto& r : rows) by[r.solver] = r;
  const auto dense = by["ek1-dense"].n_accepted, diag = by["ek1-diag"].n_accepted, ek0 = by["ek0-blockdiag"].n_accepted;
  const bool all_done = by["ek1-dense"].completed && by["ek1-diag"].completed && by["ek0-blockdiag"].completed;
  o.check(all_done && dense <= diag && diag <= ek0, "mu=1e3 accepted steps ek1-dense " + std::to_string(dense) +
                                                        " <= ek1-diag " + std::to_string(diag) + " <= ek0 " +
                                                        std::to_string(ek0));
  req.mus = {1e5};
  req.solvers = {"ek1-diag"};
  req.max_steps = 1'000'000;
  o.check(harness::run_stiffness(req, sink, err, &rows) == 0, "stiffness runs");
  o.check(rows.size() == 1 && rows[0].completed, "ek1-diag completes mu=1e5 with " +
                                                     std::to_string(rows.empty() ? 0 : rows[0].n_accepted) +
                                                     " accepted steps" +
                                                     (rows.empty() || rows[0].completed ? "" : " (" + rows[0].failure + ")"));
  const double wall = seconds_since(t0);
  o.check(wall < 600.0, "runtime " + num(wall) + " s < 600 s");
  return o;
}

Outcome criterion8() {
  Outcome o;
  const SolverConfig cfg = harness::make_config(harness::parse_solver("ek0-kronecker"), 2, "tv-scalar", 1e-3, 1e-3);
  std::vector<double> dims, walls;
  for (std::size_t g : {16, 32, 64}) {
    const OdeProblem p = problems::make_problem("fhn", {{"G", static_cast<double>(g)}});
    bool std_ok = true;
    const auto t0 = Clock::now();
    Solution sol;
    bool done = true;
    try {
      sol = solve(p, cfg, [&](const StepRecord& r) { std_ok = std_ok && (r.state.marginal_std(0).array() >= 0.0).all(); });
    } catch (const Error& e) {
      done = false;
      o.check(false, "G=" + std::to_string(g) + " solve: " + e.what());
    }
    const double wall = seconds_since(t0);
    dims.push_back(static_cast<double>(p.dim));
    walls.push_back(wall);
    if (!done) continue;
    const Vector final_mean = sol.final_state.mean.col(0);
    const std::string tag = "G=" + std::to_string(g) + " (d=" + std::to_string(p.dim) + ", " +
                            std::to_string(sol.stats.accepted) + " steps, " + num(wall) + " s)";
    o.check(std_ok, tag + " y_std >= 0");
    o.check(final_mean.minCoeff() >= -3.0 && final_mean.maxCoeff() <= 3.0,
            tag + " final means in [" + num(final_mean.minCoeff()) + ", " + num(final_mean.maxCoeff()) + "]");
    if (g == 64) o.check(wall < 600.0, "G=64 runtime " + num(wall) + " s < 600 s");
  }
  const double slope = oracle::loglog_slope(dims, walls);
  o.check(slope <= 1.5, "runtime slope in d " + num(slope) + " <= 1.5");
  return o;
}

Outcome criterion9() {
  Outcome o;
  const OdeProblem p = testing_helpers::linear(1.0);
  const GaussianState st = initialize(p, IwpPrior(3, 1), InitPlan::defaults(p, 3));
  const double dev = (st.mean.row(0).array() - 1.0).abs().maxCoeff();
  const double var0 = st.covariance()(0, 0);
  o.check(dev <= 1e-5, "max |mean - (1,1,1,1)| = " + num(dev) + " <= 1e-5");
  o.check(var0 <= 1e-12, "coordinate-0 variance " + num(var0) + " <= 1e-12");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks, one PASS/FAIL line per criterion"};
  std::vector<int> which;
  app.add_option("--criterion", which, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::map<int, Outcome (*)()> table = {{1, criterion1}, {2, criterion2}, {3, criterion3},
                                              {4, criterion4}, {5, criterion5}, {6, criterion6},
                                              {7, criterion7}, {8, criterion8}, {9, criterion9}};
  bool all = true;
  for (int n : which) {
    Outcome o;
    try {
      o = table.at(n)();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail.str() << ")" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}

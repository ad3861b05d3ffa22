#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "pnode/harness.hpp"

namespace {

using namespace pnode;

struct Common {
  std::string problem = "vanderpol";
  std::vector<std::string> params;
  std::vector<std::size_t> orders;
  std::vector<std::string> solvers;
  std::string diffusion = "tv-scalar";
  double rtol = 0.0;
  double atol = 0.0;
  std::size_t fixed_steps = 0;
  std::uint64_t seed = 0;
  std::string output;
  std::size_t repeats = 5;
  std::vector<std::size_t> dims;
  std::vector<double> mus;
  std::vector<double> tols;
  std::size_t dense_cutoff = 4096;
  std::size_t save_every = 1;
  std::size_t max_steps = 0;
  std::size_t jobs = 1;
};

problems::Params parse_params(const std::vector<std::string>& raw) {
  problems::Params out;
  for (const auto& kv : raw) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorKind::kInvalidArgument, "--param expects key=value, got '" + kv + "'");
    }
    const std::string value = kv.substr(eq + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || value.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "--param value for '" + kv.substr(0, eq) + "' is not a number");
    }
    out[kv.substr(0, eq)] = v;
  }
  return out;
}

/// Opens --output, or stdout when empty or "-".
std::ostream& open_output(const std::string& path, std::unique_ptr<std::ofstream>& holder) {
  if (path.empty() || path == "-") return std::cout;
  holder = std::make_unique<std::ofstream>(path);
  if (!*holder) throw Error(ErrorKind::kInvalidArgument, "cannot open output file '" + path + "'");
  return *holder;
}

void add_solver_flags(CLI::App* app, Common& c, bool multi) {
  app->add_option("--order", c.orders, "prior order nu (comma-separated list for bench-step)")->delimiter(',');
  app->add_option("--solver", c.solvers,
                  std::string("ek0-dense, ek1-dense, ek0-blockdiag, ek1-diag, ek0-kronecker") +
                      (multi ? " (comma-separated or repeated)" : ""))
      ->delimiter(',');
  app->add_option("--diffusion", c.diffusion, "tv-scalar, tv-vector, tc-scalar, tc-vector");
  app->add_option("--rtol", c.rtol, "relative tolerance");
  app->add_option("--atol", c.atol, "absolute tolerance");
  app->add_option("--output", c.output, "output path (default: stdout)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic ODE filters: single solves and benchmark experiments"};
  app.require_subcommand(1);
  Common c;

  auto* solve = app.add_subcommand("solve", "solve one problem, write a JSONL trajectory");
  solve->add_option("--problem", c.problem, "lorenz96, pleiades, vanderpol, fhn");
  solve->add_option("--param", c.params, "problem parameter key=value (repeatable)");
  add_solver_flags(solve, c, false);
  solve->add_option("--fixed-steps", c.fixed_steps, "use N equal steps instead of adaptive steps");
  solve->add_option("--seed", c.seed, "seed for random initial values");
  solve->add_option("--save-every", c.save_every, "write every N-th accepted step (the last is always written)");
  solve->add_option("--max-steps", c.max_steps, "accepted-step limit (default: 10000000)");

  auto* bench = app.add_subcommand("bench-step", "time single steps on Lorenz96, write CSV");
  add_solver_flags(bench, c, true);
  bench->add_option("--dims", c.dims, "ODE dimensions, ascending")->delimiter(',')->required();
  bench->add_option("--repeats", c.repeats, "timed steps per configuration");
  bench->add_option("--dense-cutoff", c.dense_cutoff, "skip dense solvers above this dimension");

  auto* wp = app.add_subcommand("work-precision", "final-state RMSE against a reference, write CSV");
  wp->add_option("--problem", c.problem, "problem name")->default_str("pleiades");
  wp->add_option("--param", c.params, "problem parameter key=value (repeatable)");
  add_solver_flags(wp, c, true);
  wp->add_option("--tols", c.tols, "relative tolerances, descending")->delimiter(',')->required();
  wp->add_option("--jobs", c.jobs, "run configurations in parallel (capped by PNODE_NUM_THREADS)");

  auto* stiff = app.add_subcommand("stiffness", "Van der Pol step counts over mu, write CSV");
  add_solver_flags(stiff, c, true);
  stiff->add_option("--mus", c.mus, "stiffness constants")->delimiter(',')->required();
  stiff->add_option("--jobs", c.jobs, "run configurations in parallel (capped by PNODE_NUM_THREADS)");

  CLI11_PARSE(app, argc, argv);

  try {
    std::unique_ptr<std::ofstream> holder;
    if (solve->parsed()) {
      harness::SolveRequest req;
      req.problem = c.problem;
      req.params = parse_params(c.params);
      if (!c.solvers.empty()) req.solver = c.solvers.front();
      if (!c.orders.empty()) req.order = c.orders.front();
      req.diffusion = c.diffusion;
      if (c.rtol > 0.0) req.rtol = c.rtol;
      if (c.atol > 0.0) req.atol = c.atol;
      req.fixed_steps = c.fixed_steps;
      req.seed = c.seed;
      req.save_every = c.save_every;
      req.max_steps = c.max_steps;
      return harness::run_solve(req, open_output(c.output, holder), std::cerr);
    }
    if (bench->parsed()) {
      harness::BenchRequest req;
      req.dims = c.dims;
      if (!c.orders.empty()) req.orders = c.orders;
      req.solvers = c.solvers.empty() ? std::vector<std::string>{"ek0-kronecker", "ek0-blockdiag", "ek1-diag"}
                                      : c.solvers;
      req.repeats = c.repeats;
      req.dense_cutoff = c.dense_cutoff;
      return harness::run_bench_step(req, open_output(c.output, holder), std::cerr);
    }
    if (wp->parsed()) {
      harness::WorkPrecisionRequest req;
      req.problem = wp->count("--problem") ? c.problem : "pleiades";
      req.params = parse_params(c.params);
      req.tols = c.tols;
      req.solvers = c.solvers.empty() ? std::vector<std::string>{"ek0-blockdiag", "ek1-diag"} : c.solvers;
      if (!c.orders.empty()) req.order = c.orders.front();
      req.diffusion = c.diffusion;
      req.atol = c.atol;
      req.jobs = c.jobs;
      harness::json meta;
      const int status = harness::run_work_precision(req, open_output(c.output, holder), meta, std::cerr);
      if (status == 0 && !c.output.empty() && c.output != "-") {
        std::ofstream side(c.output + ".meta.json");
        side << meta.dump(2) << "\n";
      } else if (status == 0) {
        std::cerr << meta.dump() << "\n";
      }
      return status;
    }
    if (stiff->parsed()) {
      harness::StiffnessRequest req;
      req.mus = c.mus;
      req.solvers = c.solvers.empty() ? std::vector<std::string>{"ek0-blockdiag", "ek1-diag", "ek1-dense"}
                                      : c.solvers;
      if (!c.orders.empty()) req.order = c.orders.front();
      req.diffusion = c.diffusion;
      if (c.rtol > 0.0) req.rtol = c.rtol;
      if (c.atol > 0.0) req.atol = c.atol;
      req.jobs = c.jobs;
      return harness::run_stiffness(req, open_output(c.output, holder), std::cerr);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "pnode/problems.hpp"

using namespace pnode;
using testing_helpers::max_abs;

namespace {

/// y' = t^2, y(0) = 0: y = t^3 / 3, which RK4 integrates exactly.
OdeProblem cubic() {
  OdeProblem p;
  p.dim = 1;
  p.f = [](double t, const Vector&, Vector& out) { out(0) = t * t; };
  p.y0 = Vector::Zero(1);
  return p;
}

InitResult init(const OdeProblem& p, std::size_t nu, double dt = 0.0) {
  InitPlan plan = InitPlan::defaults(p, nu);
  if (dt > 0.0) plan.dt = dt;
  return initialize_blocks(p, nu, plan);
}

}  // namespace

TEST(Init, ConstantSolution) {
  OdeProblem p;
  p.dim = 1;
  p.f = [](double, const Vector& y, Vector& out) { out = Vector::Zero(y.size()); };
  p.y0 = Vector::Constant(1, 4.25);
  for (std::size_t nu = 1; nu <= 4; ++nu) {
    const InitResult r = init(p, nu);
    EXPECT_EQ(r.mean(0, 0), 4.25);
    for (Eigen::Index q = 1; q <= static_cast<Eigen::Index>(nu); ++q) EXPECT_LE(std::abs(r.mean(0, q)), 1e-12);
  }
}

TEST(Init, ExponentialSecondOrder) {
  const InitResult r = init(testing_helpers::linear(1.0), 2);
  EXPECT_LE((r.mean.row(0).array() - 1.0).abs().maxCoeff(), 1e-6);
}

TEST(Init, ExponentialThirdOrder) {
  const InitResult r = init(testing_helpers::linear(1.0), 3);
  EXPECT_LE((r.mean.row(0).array() - 1.0).abs().maxCoeff(), 1e-5);
  EXPECT_LE(r.block_sqrt.row(0).squaredNorm(), 1e-12);
}

TEST(Init, ExactOnPolynomials) {
  for (std::size_t nu = 3; nu <= 5; ++nu) {
    const InitResult r = init(cubic(), nu, 3.0);
    EXPECT_LE(std::abs(r.mean(0, 0)), 1e-10) << nu;
    EXPECT_LE(std::abs(r.mean(0, 1)), 1e-10) << nu;
    EXPECT_LE(std::abs(r.mean(0, 2)), 1e-10) << nu;
    EXPECT_LE(std::abs(r.mean(0, 3) - 2.0), 1e-10) << nu;
    for (Eigen::Index q = 4; q <= static_cast<Eigen::Index>(nu); ++q) EXPECT_LE(std::abs(r.mean(0, q)), 1e-10) << nu;
  }
}

TEST(Init, DerivativeErrorShrinksWithSpacing) {
  const double lambda = -2.0;
  const OdeProblem p = testing_helpers::linear(lambda);
  std::vector<double> dts, errs;
  for (double dt : {1.6e-1, 8e-2, 4e-2}) {
    InitPlan plan = InitPlan::defaults(p, 3);
    plan.dt = dt;
    plan.substeps = 256;
    const InitResult r = initialize_blocks(p, 3, plan);
    double err = 0.0;
    for (Eigen::Index q = 0; q <= 3; ++q) err = std::max(err, std::abs(r.mean(0, q) - std::pow(lambda, q)));
    dts.push_back(dt);
    errs.push_back(err);
  }
  for (std::size_t i = 1; i < errs.size(); ++i) EXPECT_LT(errs[i], errs[i - 1]);
  EXPECT_GE(oracle::loglog_slope(dts, errs), 4.0);
}

TEST(Init, HigherOrdersAtDefaults) {
  const OdeProblem p = testing_helpers::linear(1.0);
  for (std::size_t nu = 2; nu <= 4; ++nu) {
    const InitResult r = init(p, nu);
    EXPECT_LE((r.mean.row(0).array() - 1.0).abs().maxCoeff(), 1e-5) << nu;
  }
}

TEST(Init, SubstepsRefineBootstrap) {
  const OdeProblem p = testing_helpers::linear(1.0);
  InitPlan coarse = InitPlan::defaults(p, 3);
  coarse.substeps = 1;
  const InitPlan fine = InitPlan::defaults(p, 3);
  EXPECT_GT(fine.substeps, 1u);
  const double e_coarse = (initialize_blocks(p, 3, coarse).mean.row(0).array() - 1.0).abs().maxCoeff();
  const double e_fine = (initialize_blocks(p, 3, fine).mean.row(0).array() - 1.0).abs().maxCoeff();
  EXPECT_LT(e_fine, e_coarse);
  InitPlan bad = fine;
  bad.substeps = 0;
  EXPECT_THROW((void)initialize_blocks(p, 3, bad), Error);
}

TEST(Init, CovarianceIsPsdAndPinsValue) {
  for (std::size_t nu = 1; nu <= 6; ++nu) {
    const InitResult r = init(problems::vanderpol(1.0), nu);
    const Matrix c = r.block_sqrt * r.block_sqrt.transpose();
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12) << nu;
    EXPECT_LE(c(0, 0), 1e-12) << nu;
    EXPECT_LE(c(1, 1), 1e-12) << nu;
  }
}

TEST(Init, PacksIntoEveryStructure) {
  const OdeProblem p = problems::lorenz96(5);
  const IwpPrior prior(3, 5);
  const InitPlan plan = InitPlan::defaults(p, 3);
  const GaussianState block = initialize(p, prior, plan, Structure::kBlockDiagonal);
  const GaussianState kron = initialize(p, prior, plan, Structure::kKronecker);
  const GaussianState dense = initialize(p, prior, plan, Structure::kDense);
  EXPECT_EQ(block.mean, kron.mean);
  EXPECT_EQ(block.mean, dense.mean);
  EXPECT_LE(max_abs(block.covariance() - kron.covariance()), 0.0);
  EXPECT_LE(max_abs(block.covariance() - dense.covariance()), 0.0);
  EXPECT_EQ(block.mean.col(0), p.y0);
  EXPECT_LE(max_abs(block.mean.col(1) - p.eval(0.0, p.y0)), 0.0);
}

TEST(Init, ScaleMultipliesCovariance) {
  const OdeProblem p = problems::vanderpol(1.0);
  const IwpPrior prior(3, 2);
  const InitPlan plan = InitPlan::defaults(p, 3);
  const Matrix a = initialize(p, prior, plan, Structure::kBlockDiagonal, 1.0).covariance();
  const Matrix b = initialize(p, prior, plan, Structure::kBlockDiagonal, 9.0).covariance();
  EXPECT_LE(max_abs(b - 9.0 * a), 1e-12 * (1.0 + max_abs(b)));
}

TEST(Init, StiffProblemsGetSmallerBootstrapSteps) {
  const InitPlan mild = InitPlan::defaults(problems::vanderpol(1.0), 4);
  const InitPlan stiff = InitPlan::defaults(problems::vanderpol(1e5), 4);
  EXPECT_LT(stiff.dt, mild.dt);
  EXPECT_LE(stiff.dt * 3e5, 0.1 * (1.0 + 1e-12));
  EXPECT_GE(stiff.dt, 1e-8);
  EXPECT_NO_THROW((void)initialize_blocks(problems::vanderpol(1e5), 4, stiff));
}

TEST(Init, RejectsInvalidPlans) {
  const OdeProblem p = testing_helpers::linear(1.0);
  InitPlan plan = InitPlan::defaults(p, 3);
  InitPlan bad_dt = plan;
  bad_dt.dt = 0.0;
  EXPECT_THROW((void)initialize_blocks(p, 3, bad_dt), Error);
  InitPlan bad_points = plan;
  bad_points.n_points = 7;
  EXPECT_THROW((void)initialize_blocks(p, 3, bad_points), Error);
  InitPlan bad_order = plan;
  bad_order.rk_order = 5;
  EXPECT_THROW((void)initialize_blocks(p, 3, bad_order), Error);
  EXPECT_THROW((void)initialize_blocks(p, 0, plan), Error);
  EXPECT_THROW((void)initialize(p, IwpPrior(3, 2), plan), Error);
}

TEST(Init, RungeKuttaOrders) {
  const OdeProblem p = testing_helpers::linear(1.0);
  for (int order = 1; order <= 4; ++order) {
    std::vector<double> dts, errs;
    for (std::size_t n : {10, 20, 40}) {
      const auto traj = rk_fixed_steps(p, 0.0, p.y0, 1.0 / static_cast<double>(n), n, order);
      dts.push_back(1.0 / static_cast<double>(n));
      errs.push_back(std::abs(traj.back()(0) - std::exp(1.0)));
    }
    EXPECT_NEAR(oracle::loglog_slope(dts, errs), order, 0.2) << order;
  }
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "lqmfg/portfolio.hpp"
#include "test_support.hpp"

namespace lqmfg {
namespace {

const PortfolioParams kParams{};

TEST(ClosedForm, ReferenceValuesAtZero) {
  const auto cf = closed_form(kParams, {1.0, 1000});
  EXPECT_NEAR(cf.Pi[0], 0.6 * std::exp(-0.0096), 1e-12);
  EXPECT_NEAR(cf.Pi[0], 0.594268, 1e-6);
  EXPECT_NEAR(cf.rho[0], -0.5 * std::exp(0.06), 1e-12);
  EXPECT_NEAR(cf.rho[0], -0.530918, 1e-6);
  EXPECT_DOUBLE_EQ(cf.Pi.back(), 0.6);
  EXPECT_DOUBLE_EQ(cf.rho.back(), -0.5);
  for (double s : cf.Sigma) EXPECT_EQ(s, 0.0);
}

TEST(ClosedForm, SignsForRandomParameters) {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 50; ++i) {
    PortfolioParams pp;
    pp.r = u(gen) * 0.2;
    pp.mu = pp.r + u(gen) * 0.3;
    pp.sigma = u(gen);
    pp.gamma = u(gen) * 2.0;
    const auto cf = closed_form(pp, {1.0, 50});
    for (std::size_t k = 0; k < cf.Pi.size(); ++k) {
      EXPECT_GT(cf.Pi[k], 0.0);
      EXPECT_LT(cf.rho[k], 0.0);
    }
  }
}

TEST(ClosedForm, GeneralSolverAgrees) {
  const ProblemSpec p = test::portfolio(1000);
  const auto Pi = solve_pi(p);
  const auto cf = closed_form(kParams, p.grid);
  double worst = 0.0;
  for (std::size_t k = 0; k < Pi.size(); ++k) worst = std::max(worst, std::abs(Pi[k](0, 0) - cf.Pi[k]));
  EXPECT_LE(worst, 1e-6);
}

TEST(ClosedForm, GeneralSigmaSolverReportsPositivityLoss) {
  EXPECT_THROW(solve_sigma(test::portfolio(100)), PositivityLoss);
}

TEST(ClosedForm, RejectsInvalidParameters) {
  PortfolioParams pp;
  pp.gamma = 0.0;
  EXPECT_THROW(closed_form(pp, {1.0, 10}), std::invalid_argument);
}

TEST(Certificate, ClosedFormPasses) {
  const auto rc = compensator_certificate(kParams, 1000);
  EXPECT_TRUE(rc.satisfied) << rc.reason;
  EXPECT_NEAR(rc.terminal_slack, 0.0, 1e-15);
  // sigma^2 P_t at t = 0.
  EXPECT_NEAR(rc.weight_min_eig[0], 0.0625 * 0.6 * std::exp(-0.0096), 1e-12);
}

TEST(Certificate, LhsVanishesForClosedForm) {
  // P' + 2 r P - (B P)^2 / (sigma^2 P) = (0.0096 + 0.12 - 0.1296) P = 0.
  const ProblemSpec p = test::portfolio(200);
  const auto comp = portfolio_compensator(kParams, p.grid);
  for (int k = 0; k <= 200; k += 20) EXPECT_NEAR(rc_lhs(p, comp, k)(0, 0), 0.0, 1e-12);
}

TEST(Certificate, ZeroCompensatorFails) {
  const ProblemSpec p = test::portfolio(100);
  const auto rc = check_condition_rc(p, CompensatorPath::zero(p.grid, 1));
  EXPECT_FALSE(rc.satisfied);
}

TEST(Strategy, ReferenceValues) {
  const auto cf = closed_form(kParams, {1.0, 1000});
  EXPECT_NEAR(portfolio_strategy(kParams, cf, 0.0, 2.0, 2.0), 0.09 * 0.530918 / (0.0625 * 0.594268), 1e-5);
  EXPECT_NEAR(portfolio_strategy(kParams, cf, 0.0, 2.0, 2.0), 1.286495, 1e-5);
  EXPECT_NEAR(portfolio_strategy(kParams, cf, 1.0, 3.0, 2.0), -0.24, 1e-9);
}

TEST(Strategy, NoExcessReturnMeansNoStock) {
  PortfolioParams pp;
  pp.mu = pp.r;
  const auto cf = closed_form(pp, {1.0, 10});
  for (double t : {0.0, 0.5, 1.0}) EXPECT_EQ(portfolio_strategy(pp, cf, t, 1.7, 0.3), 0.0);
}

TEST(Strategy, NonPositivePiThrows) {
  auto cf = closed_form(kParams, {1.0, 10});
  cf.Pi[0] = 0.0;
  EXPECT_THROW(portfolio_strategy(kParams, cf, 0.0, 1.0, 1.0), PreconditionError);
}

TEST(Strategy, MatchesGeneralFeedbackLaw) {
  const auto s = portfolio_setup(kParams, 100);
  const auto gains = gain_schedule(s.solution);
  EXPECT_NEAR(gains[0].K1(0, 0), 1.44, 1e-12);
  EXPECT_NEAR(gains[0].K2(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(-gains.back().k3(0), 1.2, 1e-12);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int k = 0; k <= 100; k += 10) {
    const double t = s.problem.grid.node(k), xh = z(gen), x0 = z(gen);
    const double general = decentralized_control(gains[static_cast<std::size_t>(k)], Vec::Constant(1, xh),
                                                 Vec::Constant(1, x0))(0);
    EXPECT_NEAR(portfolio_strategy(kParams, s.closed, t, xh, x0), general, 1e-9);
  }
}

TEST(Strategy, StationarityResidualIsExcessReturnTimesRho) {
  // The application's mean control is not a zero of the general stationarity condition; the
  // residual is B rho_t.
  const auto s = portfolio_setup(kParams, 100);
  const auto gains = gain_schedule(s.solution);
  for (int k = 0; k <= 100; k += 25) {
    const auto& g = gains[static_cast<std::size_t>(k)];
    const Vec xh = Vec::Constant(1, 1.3), x0 = Vec::Constant(1, 2.1);
    const Vec res = stationarity_residual(s.problem, s.solution, k, xh, x0, decentralized_control(g, xh, x0),
                                          control_u0(g, x0));
    EXPECT_NEAR(res(0), 0.09 * s.closed.rho[static_cast<std::size_t>(k)], 1e-12);
  }
}

class Figures : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("lqmfg_fig_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(Figures, SmokeWithTwoAgents) {
  const auto r = reproduce_figures(kParams, 2, 1, dir_.string(), 100);
  EXPECT_TRUE(std::isfinite(r.rms_x));
  EXPECT_TRUE(std::isfinite(r.sup_u));
  const auto f1 = test::read_file(r.figure1);
  EXPECT_EQ(f1.substr(0, f1.find('\n')), "t,x_mean,x0");
  const auto f2 = test::read_file(r.figure2);
  EXPECT_EQ(f2.substr(0, f2.find('\n')), "t,u_mean,u0");
  EXPECT_EQ(std::count(f1.begin(), f1.end(), '\n'), 102);
}

TEST_F(Figures, BitIdenticalOnRerun) {
  const auto a = reproduce_figures(kParams, 20, 9, dir_.string(), 100);
  const auto first = test::read_file(a.figure1) + test::read_file(a.figure2);
  const auto b = reproduce_figures(kParams, 20, 9, dir_.string(), 100);
  EXPECT_EQ(first, test::read_file(b.figure1) + test::read_file(b.figure2));
}

TEST_F(Figures, GapShrinksWithPopulation) {
  const auto small = reproduce_figures(kParams, 10, 4, dir_.string(), 200);
  const auto large = reproduce_figures(kParams, 1000, 4, dir_.string(), 200);
  EXPECT_LT(large.rms_x, small.rms_x);
}

TEST_F(Figures, MeanControlStartsAtClosedForm) {
  const auto r = reproduce_figures(kParams, 5, 2, dir_.string(), 100);
  const auto f2 = test::read_file(r.figure2);
  std::istringstream is(f2);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_NEAR(std::stod(row.substr(row.rfind(',') + 1)), 1.286495, 1e-5);
}

TEST(FiguresErrors, MissingDirectoryAndTooFewAgents) {
  EXPECT_THROW(reproduce_figures(kParams, 5, 1, "/nonexistent/lqmfg", 10), std::runtime_error);
  EXPECT_THROW(reproduce_figures(kParams, 1, 1, "/tmp", 10), std::invalid_argument);
}

}  // namespace
}  // namespace lqmfg

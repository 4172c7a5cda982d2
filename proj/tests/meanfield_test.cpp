#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lqmfg/meanfield.hpp"
#include "test_support.hpp"

namespace lqmfg {
namespace {

// dx = u dt, cost x^2 + u^2, no terminal cost: Pi = Sigma = tanh(1 - t) and x0(t) = x0(0) cosh(1 - t) / cosh(1).
ProblemSpec regulator(int K) {
  ProblemSpec p = test::scalar_problem(1.0, K);
  test::set(p.B, 1.0);
  test::set(p.Q, 1.0);
  test::set(p.R, 1.0);
  test::set(p.G, 1.0);
  test::set(p.sigma_tilde, 1.0);
  p.weights = {0.0, 0.0, 0.0, 0.0, 0.0};
  p.initial_state = Vec::Constant(1, 1.5);
  return p;
}

TEST(FeedbackGains, RegulatorClosedForm) {
  const ProblemSpec p = regulator(100);
  const auto sol = solve_riccati(p);
  for (double t : {0.0, 0.25, 0.5, 1.0}) {
    const auto g = feedback_gains(sol, t);
    EXPECT_NEAR(g.K1(0, 0), std::tanh(1.0 - t), 1e-9);
    EXPECT_NEAR(g.K2(0, 0), std::tanh(1.0 - t), 1e-9);
    EXPECT_NEAR(g.k3(0), 0.0, 1e-14);
  }
}

TEST(FeedbackGains, NonPositiveWeightThrows) {
  const ProblemSpec p = regulator(10);
  auto sol = solve_riccati(p);
  sol.control_weight[3] = Mat::Constant(1, 1, -1.0);
  EXPECT_THROW(feedback_gains_at(sol, 3), PositivityLoss);
  EXPECT_NO_THROW(feedback_gains_at(sol, 4));
}

TEST(FeedbackGains, NonPositiveMeanWeightThrows) {
  const ProblemSpec p = regulator(10);
  auto sol = solve_riccati(p);
  sol.mean_control_weight[0] = Mat::Zero(1, 1);
  EXPECT_THROW(gain_schedule(sol), PositivityLoss);
}

TEST(DecentralizedControl, ReducesToMeanControlOnTheMean) {
  const ProblemSpec p = test::load_config("coupled_2d.json");
  const auto sol = solve_riccati(p);
  const Vec x0 = Vec::Constant(2, 0.7);
  for (double t : {0.0, 0.5, 1.0}) {
    EXPECT_LE((decentralized_control(sol, t, x0, x0) - control_u0(sol, t, x0)).norm(), 1e-14);
  }
}

TEST(DecentralizedControl, LinearInDeviation) {
  const ProblemSpec p = test::load_config("coupled_2d.json");
  const auto g = feedback_gains(solve_riccati(p), 0.3);
  const Vec x0(Vec::Constant(2, -0.2));
  const Vec e1 = Vec::Unit(2, 0), e2 = Vec::Unit(2, 1);
  const Vec base = decentralized_control(g, x0, x0);
  const Vec sum = decentralized_control(g, x0 + e1 + 2.0 * e2, x0) - base;
  const Vec parts = (decentralized_control(g, x0 + e1, x0) - base) + 2.0 * (decentralized_control(g, x0 + e2, x0) - base);
  EXPECT_LE((sum - parts).norm(), 1e-13);
  EXPECT_LE((sum + g.K1 * (e1 + 2.0 * e2)).norm(), 1e-13);
}

TEST(SimulateX0, NoiselessRegulatorMatchesOde) {
  const ProblemSpec p = regulator(2000);
  const auto sol = solve_riccati(p);
  const auto paths = simulate_x0(p, sol, std::vector<double>(2000, 0.0));
  double worst = 0.0;
  for (int k = 0; k <= 2000; ++k) {
    const double t = p.grid.node(k);
    worst = std::max(worst, std::abs(paths.x0[static_cast<std::size_t>(k)](0) - 1.5 * std::cosh(1.0 - t) / std::cosh(1.0)));
  }
  EXPECT_LE(worst, 1e-3);
  EXPECT_NEAR(paths.u0.back()(0), 0.0, 1e-12);
}

TEST(SimulateX0, FirstOrderInDt) {
  auto terminal = [](int K) {
    const ProblemSpec p = regulator(K);
    return simulate_x0(p, solve_riccati(p), std::vector<double>(static_cast<std::size_t>(K), 0.0)).x0.back()(0);
  };
  const double exact = 1.5 / std::cosh(1.0);
  const double e1 = std::abs(terminal(100) - exact), e2 = std::abs(terminal(200) - exact);
  EXPECT_NEAR(e1 / e2, 2.0, 0.2);
}

TEST(SimulateX0, WrongIncrementCountThrows) {
  const ProblemSpec p = regulator(10);
  EXPECT_THROW(simulate_x0(p, solve_riccati(p), std::vector<double>(9, 0.0)), DimensionError);
}

TEST(SimulateX0, CommonNoiseEntersThroughDiffusion) {
  ProblemSpec p = regulator(10);
  test::set(p.b_bar, 0.5);
  const auto sol = solve_riccati(p);
  std::vector<double> dW0(10, 0.0);
  const auto a = simulate_x0(p, sol, dW0);
  dW0[0] = 0.1;
  const auto b = simulate_x0(p, sol, dW0);
  EXPECT_NEAR(b.x0[1](0) - a.x0[1](0), 0.05, 1e-14);
}

TEST(Stationarity, VanishesAlongFeedbackOnCoupledInstance) {
  const ProblemSpec p = test::load_config("coupled_2d.json");
  const auto sol = solve_riccati(p);
  const auto gains = gain_schedule(sol);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> z;
  double worst = 0.0;
  for (int k = 0; k <= p.grid.K; k += 7) {
    for (int j = 0; j < 5; ++j) {
      const Vec xhat{{z(gen), z(gen)}};
      const Vec x0{{z(gen), z(gen)}};
      const auto& g = gains[static_cast<std::size_t>(k)];
      const Vec u = decentralized_control(g, xhat, x0);
      worst = std::max(worst, stationarity_residual(p, sol, k, xhat, x0, u, control_u0(g, x0)).cwiseAbs().maxCoeff());
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Stationarity, DetectsNonOptimalControl) {
  const ProblemSpec p = test::load_config("coupled_2d.json");
  const auto sol = solve_riccati(p);
  const auto g = feedback_gains_at(sol, 0);
  const Vec x0{{0.3, 0.1}};
  const Vec u = decentralized_control(g, x0, x0) + Vec::Constant(2, 0.1);
  EXPECT_GT(stationarity_residual(p, sol, 0, x0, x0, u, control_u0(g, x0)).norm(), 1e-3);
}

TEST(WriteLimitCsv, HeaderAndRows) {
  const ProblemSpec p = regulator(4);
  const auto paths = simulate_x0(p, solve_riccati(p), std::vector<double>(4, 0.0));
  std::ostringstream os;
  write_limit_csv(os, p.grid, paths);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,x0_1,u0_1");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 5);
}

}  // namespace
}  // namespace lqmfg

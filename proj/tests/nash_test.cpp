#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lqmfg/nash.hpp"
#include "lqmfg/portfolio.hpp"
#include "test_support.hpp"

namespace lqmfg {
namespace {

ProblemSpec regulator(int K) {
  ProblemSpec p = test::scalar_problem(1.0, K);
  test::set(p.B, 1.0);
  test::set(p.Q, 1.0);
  test::set(p.R, 1.0);
  test::set(p.sigma, 0.3);
  test::set(p.G, 1.0);
  test::set(p.sigma_tilde, 1.0);
  p.initial_state = Vec::Constant(1, 1.5);
  return p;
}

// Coupled instance with every noise channel switched off.
ProblemSpec noiseless_coupled(int K) {
  ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), K);
  for (CoefficientPath* c : {&p.D, &p.D_bar, &p.F, &p.F_bar, &p.b_bar, &p.sigma, &p.sigma_bar}) {
    *c = CoefficientPath::zeros(c->at(0).rows(), c->at(0).cols());
  }
  return p;
}

TEST(FitLogLog, ExactPowerLaw) {
  const std::vector<double> x{10, 100, 1000, 10000};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, -0.5));
  const auto f = fit_loglog(x, y);
  EXPECT_NEAR(f.slope, -0.5, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(f.half_width, 0.0, 1e-10);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(FitLogLog, NoisyFitCoversTrueSlope) {
  const std::vector<double> x{50, 200, 800, 3200};
  const std::vector<double> y{1.1 / 50, 0.9 / 200, 1.05 / 800, 0.95 / 3200};
  const auto f = fit_loglog(x, y);
  EXPECT_LE(std::abs(f.slope + 1.0), f.half_width);
  EXPECT_EQ(f.residuals.size(), 4u);
}

TEST(FitLogLog, NeedsThreeDistinctPositivePoints) {
  EXPECT_THROW(fit_loglog({1, 2}, {1, 2}), PreconditionError);
  EXPECT_THROW(fit_loglog({1, 1, 2}, {1, 2, 3}), PreconditionError);
  EXPECT_THROW(fit_loglog({1, 2, 3}, {1, 0, 3}), PreconditionError);
}

TEST(Sweep, NoiselessInstanceHasZeroGaps) {
  const ProblemSpec p = noiseless_coupled(50);
  const auto r = convergence_sweep(p, solve_riccati(p), {5, 10, 20}, 2, 1);
  for (const auto& g : r.mean_gap.gaps) EXPECT_LE(g.mean, 1e-24);
  for (const auto& g : r.agent_gap.gaps) EXPECT_LE(g.mean, 1e-24);
  for (const auto& g : r.cost_gap.gaps) EXPECT_LE(g.mean, 1e-12);
}

TEST(Sweep, ZeroCostInstanceHasZeroCostGap) {
  ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), 50);
  const auto sol = solve_riccati(p);
  p.Q = CoefficientPath::zeros(2, 2);
  p.R = CoefficientPath::zeros(2, 2);
  p.S = CoefficientPath::zeros(2, 2);
  p.q = CoefficientPath::zeros(2, 1);
  p.r = CoefficientPath::zeros(2, 1);
  p.L_T = Mat::Zero(2, 2);
  p.l_T = Vec::Zero(2);
  const auto r = cost_gap_sweep(p, sol, {4, 8, 16}, 2, 3);
  for (const auto& g : r.gaps) EXPECT_EQ(g.mean, 0.0);
  EXPECT_FALSE(r.fit.has_value());
}

TEST(Sweep, SingleNRefusesSlope) {
  const ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), 20);
  const auto r = meanfield_gap_sweep(p, solve_riccati(p), {10}, 2, 1);
  EXPECT_FALSE(r.fit.has_value());
  EXPECT_NE(r.fit_error.find("3 distinct"), std::string::npos);
  EXPECT_TRUE(r.to_json()["slope"].is_null());
}

TEST(Sweep, RejectsUnsortedNs) {
  const ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), 20);
  EXPECT_THROW(meanfield_gap_sweep(p, solve_riccati(p), {20, 10, 40}, 2, 1), PreconditionError);
}

TEST(Sweep, MeanGapDecaysOnCoupledInstance) {
  const ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), 100);
  const auto r = convergence_sweep(p, solve_riccati(p), {10, 40, 160}, 10, 5);
  ASSERT_TRUE(r.mean_gap.fit.has_value());
  EXPECT_LT(r.mean_gap.fit->slope, -0.5);
  ASSERT_TRUE(r.agent_gap.fit.has_value());
  EXPECT_LT(r.agent_gap.fit->slope, -0.5);
}

TEST(Sweep, SamplesCsv) {
  const ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), 10);
  const auto r = meanfield_gap_sweep(p, solve_riccati(p), {2, 4, 8}, 2, 1);
  std::ostringstream os;
  r.write_samples_csv(os);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "quantity,N,replication,value");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 7);
}

TEST(NashProbe, EquilibriumAgainstItselfIsZero) {
  const ProblemSpec p = regulator(50);
  PerturbationFamily f;
  f.members.push_back(Policy::equilibrium());
  const auto r = epsilon_nash_probe(p, solve_riccati(p), 5, f, 4, 1);
  EXPECT_EQ(r.improvements[0].mean, 0.0);
  EXPECT_EQ(r.eps_hat, 0.0);
}

TEST(NashProbe, DeviationsDoNotHelpOnUncoupledRegulator) {
  const ProblemSpec p = regulator(100);
  const auto r = epsilon_nash_probe(p, solve_riccati(p), 10, PerturbationFamily::standard(1), 100, 2);
  for (std::size_t i = 0; i < r.improvements.size(); ++i) {
    EXPECT_LE(r.improvements[i].mean, 3.0 * r.improvements[i].se) << r.labels[i];
  }
  EXPECT_GE(r.eps_hat, 0.0);
}

TEST(NashProbe, ZeroControlHurts) {
  const ProblemSpec p = regulator(100);
  PerturbationFamily f;
  f.members.push_back(Policy::zero());
  const auto r = epsilon_nash_probe(p, solve_riccati(p), 10, f, 50, 4);
  EXPECT_LT(r.improvements[0].mean, 0.0);
}

TEST(NashProbe, CommonRandomNumbersReduceVariance) {
  const ProblemSpec p = regulator(100);
  const auto sol = solve_riccati(p);
  SimulationOptions o;
  const auto base = simulate_population(p, sol, {5, 100, 7, 1}, o);
  o.deviator = Policy::gain_scaled(0.5);
  const auto same = simulate_population(p, sol, {5, 100, 7, 1}, o);
  const auto other = simulate_population(p, sol, {5, 100, 8, 1}, o);
  std::vector<double> crn, indep;
  for (std::size_t r = 0; r < base.reps.size(); ++r) {
    crn.push_back(base.reps[r].cost_N[0] - same.reps[r].cost_N[0]);
    indep.push_back(base.reps[r].cost_N[0] - other.reps[r].cost_N[0]);
  }
  EXPECT_LT(mc_estimate(crn).se, mc_estimate(indep).se);
}

TEST(NashRate, SyntheticProbes) {
  std::vector<NashProbe> probes(3);
  const int Ns[] = {50, 200, 800};
  for (int i = 0; i < 3; ++i) {
    probes[static_cast<std::size_t>(i)].N = Ns[i];
    probes[static_cast<std::size_t>(i)].eps_hat = 0.2 / std::sqrt(Ns[i]);
    probes[static_cast<std::size_t>(i)].eps_se = 1e-4;
  }
  const auto r = fit_nash_rate(probes);
  EXPECT_NEAR(r.c, 0.2, 1e-12);
  EXPECT_TRUE(r.bounded);
  EXPECT_TRUE(r.nonincreasing);
  probes[2].eps_hat = 0.1;
  const auto bad = fit_nash_rate(probes);
  EXPECT_FALSE(bad.nonincreasing);
}

TEST(Convexity, DefiniteInstanceWithIdentityR) {
  ProblemSpec p = with_grid(test::load_config("coupled_2d.json"), 100);
  p.S = CoefficientPath::zeros(2, 2);
  const auto r = convexity_probe(p, 30, 200, 1);
  EXPECT_GE(r.lambda_hat, 0.5 - 3.0 * r.lambda_se);
  for (double e : r.energies) EXPECT_GT(e, 0.0);
}

TEST(Convexity, PortfolioIsUniformlyConvex) {
  const ProblemSpec p = test::portfolio(200);
  const auto r = convexity_probe(p, 30, 200, 2);
  EXPECT_GT(r.lambda_hat, 0.0);
  EXPECT_EQ(r.ratios.size(), 30u);
}

TEST(Convexity, DeterministicOracle) {
  // No noise and no state cost: J0 = int |u|^2 / 2 exactly.
  ProblemSpec p = test::scalar_problem(1.0, 50);
  test::set(p.B, 1.0);
  test::set(p.R, 1.0);
  const auto r = convexity_probe(p, 5, 3, 9);
  for (double v : r.ratios) EXPECT_NEAR(v, 0.5, 1e-12);
  EXPECT_NEAR(r.lambda_se, 0.0, 1e-15);
}

TEST(Envelope, SmallestConstant) {
  // lambda = 1, N = 10: need (1 - C/10) e - C <= j.
  EXPECT_EQ(lower_envelope_constant(1.0, 10, {1.0}, {2.0}), 0.0);
  EXPECT_NEAR(lower_envelope_constant(1.0, 10, {10.0}, {4.0}), 3.0, 1e-12);
}

TEST(Envelope, PortfolioFamilyIsBounded) {
  const auto s = portfolio_setup(PortfolioParams{}, 100);
  const auto comp = portfolio_compensator(PortfolioParams{}, s.problem.grid);
  const auto r = envelope_probe(s.problem, s.solution, comp, 0.01, 20, PerturbationFamily::standard(1), 20, 3);
  EXPECT_TRUE(std::isfinite(r.C0));
  EXPECT_EQ(r.labels.size(), 8u);
}

}  // namespace
}  // namespace lqmfg

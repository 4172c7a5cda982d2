#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "lqmfg/compensator.hpp"
#include "lqmfg/csv.hpp"
#include "lqmfg/meanfield.hpp"
#include "lqmfg/model.hpp"
#include "lqmfg/population.hpp"
#include "lqmfg/portfolio_params.hpp"
#include "lqmfg/riccati.hpp"

namespace lqmfg {

/// Pi_t = gamma exp((2r - B^2/sigma^2)(T - t)), Sigma = 0, rho_t = -exp(r (T - t)) / 2.
struct ClosedForm {
  GridSpec grid;
  std::vector<double> Pi, Sigma, rho;
};

inline double portfolio_decay(const PortfolioParams& pp) {
  const double B = pp.excess_return();
  return 2.0 * pp.r - B * B / (pp.sigma * pp.sigma);
}

inline ClosedForm closed_form(const PortfolioParams& pp, const GridSpec& grid) {
  pp.validate();
  ClosedForm cf;
  cf.grid = grid;
  const double a = portfolio_decay(pp);
  for (int k = 0; k <= grid.K; ++k) {
    const double tau = grid.T - grid.node(k);
    cf.Pi.push_back(pp.gamma * std::exp(a * tau));
    cf.Sigma.push_back(0.0);
    cf.rho.push_back(-0.5 * std::exp(pp.r * tau));
  }
  return cf;
}

/// P = Pi of the closed form with its exact derivative.
inline CompensatorPath portfolio_compensator(const PortfolioParams& pp, const GridSpec& grid) {
  const double a = portfolio_decay(pp), T = grid.T, g = pp.gamma;
  return CompensatorPath::analytic(
      grid, [=](double t) { return Mat::Constant(1, 1, g * std::exp(a * (T - t))); },
      [=](double t) { return Mat::Constant(1, 1, -a * g * std::exp(a * (T - t))); });
}

inline RcReport compensator_certificate(const PortfolioParams& pp, int K, const PositivityTolerance& tol = {}) {
  const ProblemSpec p = portfolio_problem(pp, K);
  return check_condition_rc(p, portfolio_compensator(pp, p.grid), tol);
}

/// u = -B (xhat - x0) / sigma^2 - B rho_t / (sigma^2 Pi_t).
inline double portfolio_strategy(const PortfolioParams& pp, const ClosedForm& cf, double t, double xhat, double x0) {
  const auto k = static_cast<std::size_t>(node_index(cf.grid, t));
  const double Pi = cf.Pi.at(k);
  if (!(Pi > 0.0)) throw PreconditionError("portfolio closed form: Pi must be positive");
  const double B = pp.excess_return(), s2 = pp.sigma * pp.sigma;
  return -B * (xhat - x0) / s2 - B * cf.rho[k] / (s2 * Pi);
}

/// Gains for the general simulator. The mean-field control weight is sigma^2 Pi, as in the
/// application equations, instead of the general sigma^2 Sigma which vanishes here.
inline RiccatiSolution to_riccati_solution(const ProblemSpec& p, const ClosedForm& cf) {
  std::vector<Mat> Pi, Sigma;
  std::vector<Vec> rho;
  for (std::size_t k = 0; k < cf.Pi.size(); ++k) {
    Pi.push_back(Mat::Constant(1, 1, cf.Pi[k]));
    Sigma.push_back(Mat::Constant(1, 1, cf.Sigma[k]));
    rho.push_back(Vec::Constant(1, cf.rho[k]));
  }
  RiccatiSolution sol = assemble_solution(p, std::move(Pi), std::move(Sigma), std::move(rho));
  for (std::size_t k = 0; k < cf.Pi.size(); ++k) {
    const Mat& F = p.F.at(static_cast<int>(k));
    sol.mean_control_weight[k] = F.transpose() * sol.Pi[k] * F;
  }
  return sol;
}

/// Portfolio problem with the closed-form solution.
struct PortfolioSetup {
  ProblemSpec problem;
  ClosedForm closed;
  RiccatiSolution solution;
};

inline PortfolioSetup portfolio_setup(const PortfolioParams& pp, int K) {
  PortfolioSetup s{portfolio_problem(pp, K), {}, {}};
  s.closed = closed_form(pp, s.problem.grid);
  s.solution = to_riccati_solution(s.problem, s.closed);
  return s;
}

/// Closed form when the problem carries market parameters, the general solver otherwise.
inline RiccatiSolution equilibrium_solution(const ProblemSpec& p, const SolverOptions& opts = {}) {
  if (p.portfolio) return to_riccati_solution(p, closed_form(*p.portfolio, p.grid));
  return solve_riccati(p, opts);
}

struct FigureReport {
  double sup_x = 0.0, rms_x = 0.0;  // x_avg - x0
  double sup_u = 0.0, rms_u = 0.0;  // u_avg - u0
  std::string figure1, figure2;
};

inline FigureReport figure_gaps(const ReplicationResult& rep) {
  FigureReport r;
  const std::size_t n = rep.x0.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double dx = (rep.x_avg[k] - rep.x0[k]).norm(), du = (rep.u_avg[k] - rep.u0[k]).norm();
    r.sup_x = std::max(r.sup_x, dx);
    r.sup_u = std::max(r.sup_u, du);
    r.rms_x += dx * dx;
    r.rms_u += du * du;
  }
  r.rms_x = std::sqrt(r.rms_x / static_cast<double>(n));
  r.rms_u = std::sqrt(r.rms_u / static_cast<double>(n));
  return r;
}

/// One replication of N agents. Writes figure1.csv (t, x_mean, x0) and figure2.csv
/// (t, u_mean, u0) to out_dir.
inline FigureReport reproduce_figures(const PortfolioParams& pp, int N, std::uint64_t seed,
                                      const std::string& out_dir, int K = 1000) {
  if (N < 2) throw std::invalid_argument("reproduce_figures: N must be at least 2");
  namespace fs = std::filesystem;
  if (!fs::is_directory(out_dir)) throw std::runtime_error("output directory '" + out_dir + "' does not exist");
  const auto s = portfolio_setup(pp, K);
  const auto res = simulate_population(s.problem, s.solution, {N, 1, seed, 1});
  const auto& rep = res.reps[0];
  FigureReport r = figure_gaps(rep);
  r.figure1 = (fs::path(out_dir) / "figure1.csv").string();
  r.figure2 = (fs::path(out_dir) / "figure2.csv").string();
  auto f1 = csv::open(r.figure1);
  auto f2 = csv::open(r.figure2);
  csv::Writer w1(f1), w2(f2);
  w1.header({"t", "x_mean", "x0"});
  w2.header({"t", "u_mean", "u0"});
  for (std::size_t k = 0; k < rep.x0.size(); ++k) {
    const double t = s.problem.grid.node(static_cast<int>(k));
    w1.row({t, rep.x_avg[k](0), rep.x0[k](0)});
    w2.row({t, rep.u_avg[k](0), rep.u0[k](0)});
  }
  if (!f1 || !f2) throw std::runtime_error("write failed in '" + out_dir + "'");
  return r;
}

}  // namespace lqmfg

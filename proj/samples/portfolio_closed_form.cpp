// Closed-form mean-variance solution next to the general Riccati solver.
#include <cstdio>

#include "lqmfg/lqmfg.hpp"

int main() {
  using namespace lqmfg;
  const PortfolioParams pp;
  const ProblemSpec p = portfolio_problem(pp, 1000);
  const auto Pi = solve_pi(p);
  const auto cf = closed_form(pp, p.grid);

  std::printf("%6s %12s %12s %12s %12s\n", "t", "Pi", "Pi (solver)", "rho", "u(t, 2, 2)");
  for (int k = 0; k <= p.grid.K; k += 100) {
    const double t = p.grid.node(k);
    const auto i = static_cast<std::size_t>(k);
    std::printf("%6.2f %12.6f %12.6f %12.6f %12.6f\n", t, cf.Pi[i], Pi[i](0, 0), cf.rho[i],
                portfolio_strategy(pp, cf, t, 2.0, 2.0));
  }

  // The mean-field Riccati equation has no positive solution here.
  try {
    solve_sigma(p);
  } catch (const PositivityLoss& e) {
    std::printf("solve_sigma: %s\n", e.what());
  }
}

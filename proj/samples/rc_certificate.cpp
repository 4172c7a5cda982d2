// Certify a compensator for the portfolio problem and use it to solve the shifted equation.
#include <cstdio>

#include "lqmfg/lqmfg.hpp"

int main() {
  using namespace lqmfg;
  const PortfolioParams pp;
  const ProblemSpec p = portfolio_problem(pp, 500);

  const auto closed = portfolio_compensator(pp, p.grid);
  const auto rc = check_condition_rc(p, closed);
  std::printf("closed-form P: %s, terminal slack %.3g\n", rc.satisfied ? "certified" : rc.reason.c_str(),
              rc.terminal_slack);

  const auto flat = CompensatorPath::constant(p.grid, Mat::Constant(1, 1, 0.6));
  const auto bad = check_condition_rc(p, flat);
  std::printf("P = 0.6: %s, LHS %.5f\n", bad.satisfied ? "certified" : bad.reason.c_str(), rc_lhs(p, flat, 0)(0, 0));

  const auto tr = verify_via_compensator(p, closed);
  std::printf("max |Pi - (Pi^P + P)| = %.2e, Pi^P(0) = %.3g\n", tr.max_diff, tr.Pi_P.front()(0, 0));
}

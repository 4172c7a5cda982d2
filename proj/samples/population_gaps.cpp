// N-agent population on the bundled two-dimensional instance against its mean-field limit.
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lqmfg/lqmfg.hpp"

int main(int argc, char** argv) {
  using namespace lqmfg;
  std::ifstream f(argc > 1 ? argv[1] : LQMFG_CONFIG_DIR "/coupled_2d.json");
  std::stringstream text;
  text << f.rdbuf();
  const ProblemSpec p = load_problem(text.str());
  const auto sol = solve_riccati(p);

  SimulationOptions o;
  o.limit = true;
  for (int N : {10, 40, 160}) {
    const auto res = simulate_population(p, sol, {N, 20, 1, 1}, o);
    std::vector<double> gap;
    for (const auto& r : res.reps) gap.push_back(r.sup_mean_gap);
    const auto e = mc_estimate(gap);
    const auto c = evaluate_cost_N(res, 0);
    std::printf("N=%4d  E sup|x_avg - x0|^2 = %.3e (se %.1e)  J_1 = %.4f (se %.4f)\n", N, e.mean, e.se, c.mean, c.se);
  }
}

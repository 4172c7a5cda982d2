// Acceptance checks 1 to 11. One PASS/FAIL line per check; exit 4 if any fails.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "lqmfg/lqmfg.hpp"

using namespace lqmfg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::string out;
  std::string configs;
  int threads = 1;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ProblemSpec load_config(const Context& c, const std::string& name) {
  std::ifstream f(fs::path(c.configs) / name);
  if (!f) throw std::runtime_error("cannot read config " + name);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_problem(ss.str());
}

const PortfolioParams kPortfolio{};

Outcome closed_form_oracle(const Context&) {
  const ProblemSpec p = portfolio_problem(kPortfolio, 1000);
  SolverOptions o;
  o.substeps = 10;
  const auto Pi = solve_pi(p, o);
  const auto cf = closed_form(kPortfolio, p.grid);
  double e_pi = 0.0, e_rho = 0.0, e_sigma = 0.0;
  for (int k = 0; k <= p.grid.K; ++k) {
    const double t = p.grid.node(k);
    const auto i = static_cast<std::size_t>(k);
    e_pi = std::max(e_pi, std::abs(Pi[i](0, 0) - 0.6 * std::exp(-0.0096 * (1.0 - t))));
    e_rho = std::max(e_rho, std::abs(cf.rho[i] - (-0.5 * std::exp(0.06 * (1.0 - t)))));
    e_sigma = std::max(e_sigma, std::abs(cf.Sigma[i]));
  }
  return {e_pi <= 1e-6 && e_rho <= 1e-6 && e_sigma <= 1e-12,
          fmt("max|Pi err| %.2e, max|rho err| %.2e, max|Sigma| %.1e", e_pi, e_rho, e_sigma)};
}

// Constant compensator P and an instance whose shifted weights are positive definite.
std::pair<ProblemSpec, Mat> shifted_instance(std::mt19937_64& gen, int n) {
  std::normal_distribution<double> z;
  auto rnd = [&](int r, int c, double s) {
    Mat M(r, c);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = s * z(gen);
    return M;
  };
  const int m = n;
  ProblemSpec p = ProblemSpec::zero({n, m, n}, {1.0, 200});
  const Mat A = rnd(n, n, 0.5), B = rnd(n, m, 0.5), D = rnd(n, n, 0.3), F = rnd(n, m, 0.3);
  p.A = CoefficientPath(A);
  p.B = CoefficientPath(B);
  p.D = CoefficientPath(D);
  p.F = CoefficientPath(F);
  p.sigma = CoefficientPath(rnd(n, n, 0.3));
  Mat P = rnd(n, n, 1.5);
  P = (0.5 * (P + P.transpose())).eval();
  const Mat G = rnd(n + m, n + m, 0.5);
  const Mat block = G * G.transpose() + 0.5 * Mat::Identity(n + m, n + m);
  const Mat Qp = block.topLeftCorner(n, n), Sp = block.topRightCorner(n, m), Rp = block.bottomRightCorner(m, m);
  p.Q = CoefficientPath(Mat(Qp - (P * A + A.transpose() * P + D.transpose() * P * D)));
  p.S = CoefficientPath(Mat(Sp - (P * B + D.transpose() * P * F)));
  p.R = CoefficientPath(Mat(Rp - F.transpose() * P * F));
  const Mat H = rnd(n, n, 0.5);
  p.L_T = H * H.transpose() + 0.2 * Mat::Identity(n, n) + P;
  return {p, P};
}

Outcome compensator_transformation(const Context&) {
  const ProblemSpec pf = portfolio_problem(kPortfolio, 1000);
  double worst = verify_via_compensator(pf, portfolio_compensator(kPortfolio, pf.grid)).max_diff;
  std::mt19937_64 gen(20240611);
  int indefinite = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto [p, P] = shifted_instance(gen, trial % 2 == 0 ? 1 : 2);
    if (linalg::min_eig_sym(p.R.at(0)) < 0.0 || linalg::min_eig_sym(p.Q.at(0)) < 0.0) ++indefinite;
    worst = std::max(worst, verify_via_compensator(p, CompensatorPath::constant(p.grid, P)).max_diff);
  }
  return {worst <= 1e-6, fmt("max ||Pi - (Pi^P + P)|| = %.2e over 21 instances (%d with indefinite Q or R)", worst,
                             indefinite)};
}

Outcome rc_certificate(const Context&) {
  const ProblemSpec p = portfolio_problem(kPortfolio, 1000);
  const double B = kPortfolio.excess_return(), s2 = kPortfolio.sigma * kPortfolio.sigma;
  const auto closed = portfolio_compensator(kPortfolio, p.grid);
  const auto rc = check_condition_rc(p, closed);
  double dev_closed = 0.0;
  for (int k = 0; k <= p.grid.K; ++k) {
    const double target = 2.0 * B * B / s2 * closed.value(k)(0, 0);
    dev_closed = std::max(dev_closed, std::abs(rc_lhs(p, closed, k)(0, 0) - target));
  }
  const auto flat = CompensatorPath::constant(p.grid, Mat::Constant(1, 1, 0.6));
  const auto rc_flat = check_condition_rc(p, flat);
  double dev_flat = 0.0;
  for (int k = 0; k <= p.grid.K; ++k) dev_flat = std::max(dev_flat, std::abs(rc_lhs(p, flat, k)(0, 0) + 0.00576));
  const bool part1 = rc.satisfied && dev_closed <= 1e-6;
  const bool part2 = !rc_flat.satisfied && dev_flat <= 1e-9;
  return {part1 && part2,
          fmt("closed form: passes=%d, max|LHS - 2(B^2/sigma^2)P| = %.3e (LHS(0) = %.3e); constant 0.6: fails=%d, "
              "max|LHS + 0.00576| = %.1e",
              rc.satisfied, dev_closed, rc_lhs(p, closed, 0)(0, 0), !rc_flat.satisfied, dev_flat)};
}

Outcome completing_square(const Context& c) {
  const int K = 100;
  const auto s = portfolio_setup(kPortfolio, K);
  const auto comp = portfolio_compensator(kPortfolio, s.problem.grid);
  const auto r = equivalence_check(s.problem, s.solution, comp, Policy::equilibrium(), 10000, 100, 10000, 31,
                                   c.threads);
  const double zl = std::abs(r.limit.mean) / r.limit.se, zn = std::abs(r.nagent.mean) / r.nagent.se;
  return {zl <= 3.0 && zn <= 3.0, fmt("K=%d M=1e4: limit %.4f (se %.4f, z %.2f); N=100 %.4f (se %.4f, z %.2f)", K,
                                      r.limit.mean, r.limit.se, zl, r.nagent.mean, r.nagent.se, zn)};
}

Outcome stationarity(const Context& c) {
  const ProblemSpec base = load_config(c, "coupled_2d.json");
  double max_stat = 0.0;
  std::vector<double> defects;
  for (int K : {100, 200, 400}) {
    const ProblemSpec p = with_grid(base, K);
    const auto rep = adjoint_consistency(p, solve_riccati(p), 20, 20, 7, 400 / K, c.threads);
    max_stat = std::max(max_stat, rep.max_stationarity);
    defects.push_back(rep.defect.mean);
  }
  const bool mono = defects[1] < defects[0] && defects[2] < defects[1];
  return {max_stat <= 1e-10 && mono, fmt("max stationarity %.2e; defect %.3e > %.3e > %.3e", max_stat, defects[0],
                                         defects[1], defects[2])};
}

std::optional<SweepReports> g_sweep;

const SweepReports& portfolio_sweep(const Context& c) {
  if (!g_sweep) {
    const auto s = portfolio_setup(kPortfolio, 1000);
    g_sweep = convergence_sweep(s.problem, s.solution, {50, 200, 800, 3200}, 20, 2024, c.threads);
    std::ofstream f(fs::path(c.out) / "slopes.csv", std::ios::binary);
    f << "quantity,N,mean,se,slope,slope_half_width\n";
    for (const auto* r : {&g_sweep->mean_gap, &g_sweep->agent_gap, &g_sweep->cost_gap, &g_sweep->expected_cost_gap}) {
      for (std::size_t i = 0; i < r->Ns.size(); ++i) {
        f << r->quantity << ',' << r->Ns[i] << ',' << csv::fmt(r->gaps[i].mean) << ',' << csv::fmt(r->gaps[i].se)
          << ',' << (r->fit ? csv::fmt(r->fit->slope) : "") << ',' << (r->fit ? csv::fmt(r->fit->half_width) : "")
          << '\n';
      }
    }
  }
  return *g_sweep;
}

Outcome meanfield_rate(const Context& c) {
  const auto& r = portfolio_sweep(c).mean_gap;
  if (!r.fit) return {false, r.fit_error};
  return {r.fit->slope >= -1.3 && r.fit->slope <= -0.7,
          fmt("slope %.3f (+-%.3f), window [-1.3, -0.7]", r.fit->slope, r.fit->half_width)};
}

Outcome cost_rate(const Context& c) {
  const auto& sw = portfolio_sweep(c);
  const auto& r = sw.cost_gap;
  if (!r.fit) return {false, r.fit_error};
  const double other = sw.expected_cost_gap.fit ? sw.expected_cost_gap.fit->slope : NAN;
  return {r.fit->slope >= -0.75 && r.fit->slope <= -0.30,
          fmt("pathwise slope %.3f (+-%.3f), window [-0.75, -0.30]; slope of |mean difference| %.3f", r.fit->slope,
              r.fit->half_width, other)};
}

Outcome nash(const Context& c) {
  const auto s = portfolio_setup(kPortfolio, 1000);
  const auto family = PerturbationFamily::standard(1);
  std::vector<NashProbe> probes;
  std::string detail;
  for (int N : {50, 200, 800}) {
    probes.push_back(epsilon_nash_probe(s.problem, s.solution, N, family, 200, 4242, c.threads));
    const auto& p = probes.back();
    std::size_t best = 0;
    for (std::size_t i = 0; i < p.improvements.size(); ++i)
      if (p.improvements[i].mean > p.improvements[best].mean) best = i;
    detail += fmt("N=%d eps %.4f (se %.4f, %s); ", N, p.eps_hat, p.eps_se, p.labels[best].c_str());
  }
  const auto rate = fit_nash_rate(probes);
  detail += fmt("c %.3f bounded=%d nonincreasing=%d", rate.c, rate.bounded, rate.nonincreasing);
  return {rate.bounded && rate.nonincreasing, detail};
}

Outcome figures(const Context& c) {
  const auto r = reproduce_figures(kPortfolio, 5000, 5000, c.out, 1000);
  return {r.rms_x <= 0.05 && r.rms_u <= 0.05, fmt("RMS x gap %.4f, RMS u gap %.4f", r.rms_x, r.rms_u)};
}

Outcome filter(const Context&) {
  const ProblemSpec p = portfolio_problem(kPortfolio, 200);
  const auto probe = filter_consistency_probe(p, 100000, 17);
  // Fine-step reference for dPf/dt = 2 r Pf + c^2 - Pf^2 (G = sigma_tilde = 1).
  const ProblemSpec q = portfolio_problem(kPortfolio, 1000);
  const double dt = q.grid.dt(), a = 2.0 * kPortfolio.r, s2 = kPortfolio.c * kPortfolio.c;
  Mat Pf = Mat::Zero(1, 1);
  const Mat prec = observation_precision(q, 0);
  double ref = 0.0, worst = 0.0;
  const int sub = 1000;
  const double h = dt / sub;
  auto f = [&](double y) { return a * y + s2 - y * y; };
  for (int k = 0; k < q.grid.K; ++k) {
    Pf = covariance_step(q, k, Pf, filter_gain(q, k, Pf, prec), 0.0, dt);
    for (int j = 0; j < sub; ++j) {
      const double k1 = f(ref), k2 = f(ref + h / 2 * k1), k3 = f(ref + h / 2 * k2), k4 = f(ref + h * k3);
      ref += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    worst = std::max(worst, std::abs(Pf(0, 0) - ref));
  }
  const auto a1 = filter_consistency_probe(p, 10, 1), a2 = filter_consistency_probe(p, 10, 99991);
  bool same = a1.Pf.size() == a2.Pf.size();
  for (std::size_t k = 0; same && k < a1.Pf.size(); ++k) same = (a1.Pf[k] - a2.Pf[k]).cwiseAbs().maxCoeff() == 0.0;
  return {probe.max_z <= 3.0 && worst <= 1e-4 && same,
          fmt("particle max z %.2f (1e5 particles, K=200); Pf ODE error %.2e; Pf seed-independent=%d", probe.max_z,
              worst, same)};
}

Outcome convexity(const Context& c) {
  const auto pf = convexity_probe(portfolio_problem(kPortfolio, 1000), 100, 200, 11);
  ProblemSpec pd = with_grid(load_config(c, "coupled_2d.json"), 200);
  pd.S = CoefficientPath::zeros(2, 2);
  const auto r = convexity_probe(pd, 100, 200, 12);
  return {pf.lambda_hat > 0.0 && r.lambda_hat >= 0.5 - 3.0 * r.lambda_se,
          fmt("portfolio lambda %.4f; definite instance lambda %.4f (se %.4f, bound %.4f)", pf.lambda_hat,
              r.lambda_hat, r.lambda_se, 0.5 - 3.0 * r.lambda_se)};
}

struct Criterion {
  int id;
  const char* name;
  double budget;  // seconds, 0 for none
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  Context ctx;
  ctx.out = "acceptance_out";
#ifdef LQMFG_CONFIG_DIR
  ctx.configs = LQMFG_CONFIG_DIR;
#endif
  std::vector<int> only;
  ctx.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--out", ctx.out, "directory for figure and slope CSVs");
  app.add_option("--configs", ctx.configs, "directory with the bundled configs");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--threads", ctx.threads, "worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(ctx.out);

  const std::vector<Criterion> all{
      {1, "closed-form oracle", 1.0, closed_form_oracle},
      {2, "compensator transformation", 5.0, compensator_transformation},
      {3, "RC certificate", 0.0, rc_certificate},
      {4, "completing-square identity", 60.0, completing_square},
      {5, "stationarity identity", 0.0, stationarity},
      {6, "mean-field consistency rate", 600.0, meanfield_rate},
      {7, "cost-gap rate", 0.0, cost_rate},
      {8, "epsilon-Nash probe", 900.0, nash},
      {9, "figure reproduction", 120.0, figures},
      {10, "filter correctness", 0.0, filter},
      {11, "convexity probe", 0.0, convexity},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget > 0.0 && secs > c.budget) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget);
    }
    if (!o.pass) ++failed;
    std::printf("%-4s %2d %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 4;
}

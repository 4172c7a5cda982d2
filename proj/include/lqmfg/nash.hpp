#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lqmfg/compensator.hpp"
#include "lqmfg/csv.hpp"
#include "lqmfg/population.hpp"
#include "lqmfg/rng.hpp"

namespace lqmfg {

/// Least-squares line through (log x, log y).
struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double half_width = 0.0;  // 95% confidence half-width of the slope
  double r2 = 0.0;
  std::vector<double> residuals;
};

namespace detail {

/// Two-sided 97.5% Student t quantiles for 1..30 degrees of freedom.
inline double t_quantile_975(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                 2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                 2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) return std::numeric_limits<double>::infinity();
  return df <= 30 ? table[df - 1] : 1.96;
}

}  // namespace detail

inline LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("fit_loglog: size mismatch");
  std::vector<double> xs = x;
  std::sort(xs.begin(), xs.end());
  if (std::unique(xs.begin(), xs.end()) - xs.begin() < 3) {
    throw PreconditionError("slope fit needs at least 3 distinct points");
  }
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw PreconditionError("slope fit needs positive values");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const auto n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double res = ly[i] - (f.intercept + f.slope * lx[i]);
    f.residuals.push_back(res);
    sse += res * res;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  const int df = static_cast<int>(lx.size()) - 2;
  f.half_width = detail::t_quantile_975(df) * std::sqrt(sse / df / sxx);
  return f;
}

/// Gap estimates per N and the fitted rate.
struct ConvergenceReport {
  std::string quantity;
  std::vector<int> Ns;
  std::vector<Estimate> gaps;
  std::vector<std::vector<double>> samples;  // per N, one value per replication
  std::optional<LogLogFit> fit;
  std::string fit_error;

  void refit() {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < Ns.size(); ++i) {
      x.push_back(Ns[i]);
      y.push_back(gaps[i].mean);
    }
    try {
      fit = fit_loglog(x, y);
      fit_error.clear();
    } catch (const std::exception& e) {
      fit.reset();
      fit_error = e.what();
    }
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < Ns.size(); ++i) {
      rows.push_back({{"N", Ns[i]}, {"mean", gaps[i].mean}, {"se", gaps[i].se}, {"replications", gaps[i].samples}});
    }
    nlohmann::json j{{"quantity", quantity}, {"per_N", rows}};
    if (fit) {
      j["slope"] = fit->slope;
      j["intercept"] = fit->intercept;
      j["slope_half_width"] = fit->half_width;
      j["r2"] = fit->r2;
      j["residuals"] = fit->residuals;
    } else {
      j["slope"] = nullptr;
      j["fit_error"] = fit_error;
    }
    return j;
  }

  /// Columns quantity, N, replication, value.
  void write_samples_csv(std::ostream& os) const {
    os << "quantity,N,replication,value\n";
    for (std::size_t i = 0; i < Ns.size(); ++i) {
      for (std::size_t r = 0; r < samples[i].size(); ++r) {
        os << quantity << ',' << Ns[i] << ',' << r << ',' << csv::fmt(samples[i][r]) << '\n';
      }
    }
  }
};

/// Reports from one sweep. Each N uses its own simulation with both the N-agent and the
/// limit system on shared noise.
struct SweepReports {
  ConvergenceReport mean_gap;       // E sup_t |x_avg - x0|^2
  ConvergenceReport agent_gap;      // E sup_t |x^i - X^i|^2, agent-averaged
  ConvergenceReport cost_gap;       // E |c_N^i - c^i| per path, agent-averaged
  ConvergenceReport expected_cost_gap;  // |E(c_N^i - c^i)|, agent-averaged
};

inline SweepReports convergence_sweep(const ProblemSpec& p, const RiccatiSolution& sol, const std::vector<int>& Ns,
                                      int M, std::uint64_t seed, int threads = 1) {
  for (std::size_t i = 1; i < Ns.size(); ++i) {
    if (Ns[i] <= Ns[i - 1]) throw PreconditionError("Ns must be strictly increasing");
  }
  SweepReports out;
  out.mean_gap.quantity = "mean_gap";
  out.agent_gap.quantity = "agent_gap";
  out.cost_gap.quantity = "cost_gap";
  out.expected_cost_gap.quantity = "expected_cost_gap";
  SimulationOptions o;
  o.limit = true;
  for (int N : Ns) {
    const auto res = simulate_population(p, sol, {N, M, seed, threads}, o);
    std::vector<double> mg, ag, cg, ec;
    for (const auto& r : res.reps) {
      mg.push_back(r.sup_mean_gap);
      ag.push_back(agent_mean(r.sup_agent_gap));
      double abs_sum = 0.0, signed_sum = 0.0;
      for (std::size_t i = 0; i < r.cost_N.size(); ++i) {
        abs_sum += std::abs(r.cost_N[i] - r.cost_limit[i]);
        signed_sum += r.cost_N[i] - r.cost_limit[i];
      }
      cg.push_back(abs_sum / N);
      ec.push_back(signed_sum / N);
    }
    auto push = [N](ConvergenceReport& rep, std::vector<double> s, bool absolute) {
      rep.Ns.push_back(N);
      Estimate e = mc_estimate(s);
      if (absolute) e.mean = std::abs(e.mean);
      rep.gaps.push_back(e);
      rep.samples.push_back(std::move(s));
    };
    push(out.mean_gap, mg, false);
    push(out.agent_gap, ag, false);
    push(out.cost_gap, cg, false);
    push(out.expected_cost_gap, ec, true);
  }
  out.mean_gap.refit();
  out.agent_gap.refit();
  out.cost_gap.refit();
  out.expected_cost_gap.refit();
  return out;
}

inline ConvergenceReport meanfield_gap_sweep(const ProblemSpec& p, const RiccatiSolution& sol,
                                             const std::vector<int>& Ns, int M, std::uint64_t seed, int threads = 1) {
  return convergence_sweep(p, sol, Ns, M, seed, threads).mean_gap;
}

inline ConvergenceReport cost_gap_sweep(const ProblemSpec& p, const RiccatiSolution& sol, const std::vector<int>& Ns,
                                        int M, std::uint64_t seed, int threads = 1) {
  return convergence_sweep(p, sol, Ns, M, seed, threads).cost_gap;
}

/// Alternative policies for a single deviating agent.
struct PerturbationFamily {
  std::vector<Policy> members;

  static PerturbationFamily standard(int m) {
    PerturbationFamily f;
    for (double k : {0.0, 0.5, 0.9, 1.1, 1.5}) f.members.push_back(Policy::gain_scaled(k));
    f.members.push_back(Policy::offset(Vec::Constant(m, 0.5)));
    f.members.push_back(Policy::offset(Vec::Constant(m, -0.5)));
    f.members.push_back(Policy::zero());
    return f;
  }
};

struct NashProbe {
  int N = 0;
  double eps_hat = 0.0;
  double eps_se = 0.0;  // SE of the member attaining the max
  std::vector<std::string> labels;
  std::vector<Estimate> improvements;  // J_1(u_bar) - J_1(u) per member
  Estimate baseline;
};

/// Agent 0 deviates while the others keep the equilibrium policy; all runs share noise.
inline NashProbe epsilon_nash_probe(const ProblemSpec& p, const RiccatiSolution& sol, int N,
                                    const PerturbationFamily& family, int M, std::uint64_t seed, int threads = 1) {
  if (family.members.empty()) throw PreconditionError("perturbation family is empty");
  const PopulationConfig cfg{N, M, seed, threads};
  SimulationOptions o;
  const auto base = simulate_population(p, sol, cfg, o);
  NashProbe out;
  out.N = N;
  out.baseline = evaluate_cost_N(base, 0);
  for (const auto& pol : family.members) {
    o.deviator = pol;
    const auto dev = simulate_population(p, sol, cfg, o);
    std::vector<double> d;
    for (std::size_t r = 0; r < base.reps.size(); ++r) d.push_back(base.reps[r].cost_N[0] - dev.reps[r].cost_N[0]);
    const auto e = mc_estimate(d);
    out.labels.push_back(pol.label);
    out.improvements.push_back(e);
    if (e.mean > out.eps_hat) {
      out.eps_hat = e.mean;
      out.eps_se = e.se;
    }
  }
  return out;
}

/// Least-squares c in eps_N ~ c / sqrt(N), and whether every eps_N <= 3 se_N + c / sqrt(N)
/// with the sequence nonincreasing within 3 combined standard errors.
struct NashRate {
  double c = 0.0;
  bool bounded = false;
  bool nonincreasing = false;
};

inline NashRate fit_nash_rate(const std::vector<NashProbe>& probes) {
  NashRate r;
  double num = 0.0, den = 0.0;
  for (const auto& p : probes) {
    const double x = 1.0 / std::sqrt(static_cast<double>(p.N));
    num += x * p.eps_hat;
    den += x * x;
  }
  r.c = den > 0.0 ? num / den : 0.0;
  r.bounded = true;
  r.nonincreasing = true;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto& p = probes[i];
    if (p.eps_hat > 3.0 * p.eps_se + r.c / std::sqrt(static_cast<double>(p.N))) r.bounded = false;
    if (i > 0) {
      const auto& q = probes[i - 1];
      if (p.eps_hat > q.eps_hat + 3.0 * std::hypot(p.eps_se, q.eps_se)) r.nonincreasing = false;
    }
  }
  return r;
}

struct ConvexityProbe {
  double lambda_hat = std::numeric_limits<double>::infinity();
  double lambda_se = 0.0;  // SE of the minimizing ratio
  std::vector<double> ratios;
  std::vector<double> energies;  // int |u|^2 per control
};

namespace detail {

/// Random open-loop control: sum of three cosines per component with N(0, 1) amplitudes.
inline std::vector<Vec> random_control(const GridSpec& grid, int m, NormalStream& z) {
  const int terms = 3;
  Mat amp(m, terms), phase(m, terms);
  do {
    for (int c = 0; c < m; ++c) {
      for (int j = 0; j < terms; ++j) {
        amp(c, j) = z();
        phase(c, j) = 2.0 * std::numbers::pi * z.uniform();
      }
    }
  } while (amp.norm() < 1e-3);
  std::vector<Vec> u;
  for (int k = 0; k <= grid.K; ++k) {
    const double t = grid.node(k) / grid.T;
    Vec v = Vec::Zero(m);
    for (int c = 0; c < m; ++c)
      for (int j = 0; j < terms; ++j) v(c) += amp(c, j) * std::cos(std::numbers::pi * j * t + phase(c, j));
    u.push_back(v);
  }
  return u;
}

}  // namespace detail

/// Homogeneous cost J0(u) / int |u|^2 over random open-loop controls. J0 drops every
/// inhomogeneous and mean-field term: dX = (A X + B u)dt + (D X + F u)dW0, X_0 = 0, and
/// J0 = E[int <Q X, X> + 2 <S u, X> + <R u, u> dt + <L_T X_T, X_T>] / 2.
inline ConvexityProbe convexity_probe(const ProblemSpec& p, int n_controls, int M, std::uint64_t seed) {
  if (n_controls < 1 || M < 1) throw std::invalid_argument("convexity_probe: need controls and paths");
  const int n = p.dims.n, m = p.dims.m, K = p.grid.K;
  const double dt = p.grid.dt();
  NormalStream pick(seed, 0, kSharedAgent, Channel::probe);
  ConvexityProbe out;
  for (int c = 0; c < n_controls; ++c) {
    const auto u = detail::random_control(p.grid, m, pick);
    double energy = 0.0;
    for (int k = 0; k <= K; ++k) energy += ((k == 0 || k == K) ? 0.5 * dt : dt) * u[static_cast<std::size_t>(k)].squaredNorm();
    // Paths are columns; W0 is independent across paths.
    Mat X = Mat::Zero(n, M);
    Eigen::RowVectorXd cost = Eigen::RowVectorXd::Zero(M);
    std::vector<NormalStream> w;
    w.reserve(static_cast<std::size_t>(M));
    for (int j = 0; j < M; ++j) w.emplace_back(seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(j), Channel::common);
    Eigen::RowVectorXd dW(M);
    for (int k = 0;; ++k) {
      const Vec& uk = u[static_cast<std::size_t>(k)];
      const double wq = (k == 0 || k == K) ? 0.5 * dt : dt;
      cost += wq * ((X.cwiseProduct(p.Q.at(k) * X)).colwise().sum() + 2.0 * (p.S.at(k) * uk).transpose() * X);
      cost.array() += wq * (p.R.at(k) * uk).dot(uk);
      if (k == K) break;
      for (int j = 0; j < M; ++j) dW(j) = w[static_cast<std::size_t>(j)].increment(dt, 1);
      Mat diff = p.D.at(k) * X;
      diff.colwise() += Vec(p.F.at(k) * uk);
      Mat drift = p.A.at(k) * X;
      drift.colwise() += Vec(p.B.at(k) * uk);
      X += drift * dt + diff * dW.asDiagonal();
    }
    cost += X.cwiseProduct(p.L_T * X).colwise().sum();
    std::vector<double> ratios;
    for (int j = 0; j < M; ++j) ratios.push_back(0.5 * cost(j) / energy);
    const auto e = mc_estimate(ratios);
    out.ratios.push_back(e.mean);
    out.energies.push_back(energy);
    if (e.mean < out.lambda_hat) {
      out.lambda_hat = e.mean;
      out.lambda_se = e.se;
    }
  }
  return out;
}

/// Smallest C0 >= 0 with (lambda - C0/N) E int|u|^2 - C0 <= J^P for every sample pair.
inline double lower_envelope_constant(double lambda, int N, const std::vector<double>& energies,
                                      const std::vector<double>& relaxed_costs) {
  double c0 = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    const double need = (lambda * energies[i] - relaxed_costs[i]) / (1.0 + energies[i] / N);
    c0 = std::max(c0, need);
  }
  return c0;
}

struct EnvelopeProbe {
  double C0 = 0.0;
  std::vector<std::string> labels;
  std::vector<double> energies;  // E int |u|^2 of the deviator
  std::vector<double> relaxed;   // E J^P of the deviator in the N-agent system
};

/// C0 of the lower envelope over the deviations of agent 0 in the perturbed N-agent system.
inline EnvelopeProbe envelope_probe(const ProblemSpec& p, const RiccatiSolution& sol, const CompensatorPath& comp,
                                    double lambda, int N, const PerturbationFamily& family, int M, std::uint64_t seed,
                                    int threads = 1) {
  SimulationOptions o;
  o.compensator = &comp;
  EnvelopeProbe out;
  for (const auto& pol : family.members) {
    o.deviator = pol;
    const auto res = simulate_population(p, sol, {N, M, seed, threads}, o);
    std::vector<double> e, j;
    for (const auto& r : res.reps) {
      e.push_back(r.energy_N[0]);
      j.push_back(r.relaxed_N[0]);
    }
    out.labels.push_back(pol.label);
    out.energies.push_back(mc_estimate(e).mean);
    out.relaxed.push_back(mc_estimate(j).mean);
  }
  out.C0 = lower_envelope_constant(lambda, N, out.energies, out.relaxed);
  return out;
}

}  // namespace lqmfg

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "lqmfg/compensator.hpp"
#include "lqmfg/csv.hpp"
#include "lqmfg/filter.hpp"
#include "lqmfg/meanfield.hpp"
#include "lqmfg/model.hpp"
#include "lqmfg/rng.hpp"
#include "lqmfg/riccati.hpp"

namespace lqmfg {

/// Control rule evaluated from (node, xhat, x0). All kinds except open_loop are feedback on the
/// agent's own filter.
struct Policy {
  enum class Kind { equilibrium, gain_scaled, offset, zero, open_loop };
  Kind kind = Kind::equilibrium;
  double kappa = 1.0;
  Vec shift;               // offset: added to the equilibrium control
  std::vector<Vec> path;   // open_loop: control at each node
  std::string label = "equilibrium";

  static Policy equilibrium() { return {}; }

  /// u = -kappa K1 (xhat - x0) - K2 x0 - k3.
  static Policy gain_scaled(double kappa) {
    Policy p;
    p.kind = Kind::gain_scaled;
    p.kappa = kappa;
    p.label = "kappa=" + csv::fmt(kappa);
    return p;
  }

  static Policy offset(const Vec& v) {
    Policy p;
    p.kind = Kind::offset;
    p.shift = v;
    p.label = "offset=" + csv::fmt(v(0)) + (v.size() > 1 ? ",..." : "");
    return p;
  }

  static Policy zero() {
    Policy p;
    p.kind = Kind::zero;
    p.label = "zero";
    return p;
  }

  static Policy open_loop(std::vector<Vec> u) {
    Policy p;
    p.kind = Kind::open_loop;
    p.path = std::move(u);
    p.label = "open_loop";
    return p;
  }

  /// Controls for the agents stored column-wise in Xhat.
  [[nodiscard]] Mat evaluate(const FeedbackGains& g, int k, const Mat& Xhat, const Vec& x0) const {
    const Eigen::Index m = g.k3.size(), N = Xhat.cols();
    if (kind == Kind::zero) return Mat::Zero(m, N);
    if (kind == Kind::open_loop) return path.at(static_cast<std::size_t>(k)).replicate(1, N);
    const Vec u0 = -(g.K2 * x0 + g.k3);
    Mat dev = Xhat;
    dev.colwise() -= x0;
    Mat U = (kind == Kind::gain_scaled ? -kappa : -1.0) * (g.K1 * dev);
    U.colwise() += u0;
    if (kind == Kind::offset) U.colwise() += shift;
    return U;
  }
};

struct PopulationConfig {
  int N = 1;
  int M = 1;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SimulationOptions {
  bool n_agent = true;        // the coupled N-agent system
  bool limit = false;         // limit agents driven by x0, u0 with the same noise
  bool record_paths = false;  // per-agent state, control and filter paths
  bool decomposition = false;
  bool adjoint = false;       // stationarity residual and adjoint defect along the limit agents
  Policy policy;              // all agents
  std::optional<Policy> deviator;  // agent 0 only
  const CompensatorPath* compensator = nullptr;  // relaxed costs when set
  int noise_substeps = 1;
};

struct ReplicationResult {
  std::vector<double> cost_N, cost_limit;        // per agent, half included
  std::vector<double> relaxed_N, relaxed_limit;  // per agent, shifted costs
  std::vector<double> energy_N, energy_limit;    // per agent, trapezoid of |u|^2
  double sup_mean_gap = 0.0;                     // max_k |x_avg - x0|^2
  std::vector<double> sup_agent_gap;             // per agent, max_k |x^i - X^i|^2
  double stationarity_max = 0.0;
  std::vector<double> adjoint_defect;            // per agent
  double decomposition_max = 0.0;

  std::vector<Vec> x_avg, u_avg, x0, u0;
  std::vector<double> theta;
  std::vector<Mat> Pf;
  // With record_paths, per node: columns are agents.
  std::vector<Mat> X, U, Xhat, Y;
};

struct PopulationResult {
  GridSpec grid;
  PopulationConfig config;
  std::vector<ReplicationResult> reps;
};

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  int samples = 0;
};

inline Estimate mc_estimate(const std::vector<double>& xs) {
  Estimate e;
  e.samples = static_cast<int>(xs.size());
  if (xs.empty()) return e;
  double s = 0.0;
  for (double x : xs) s += x;
  e.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double v = 0.0;
    for (double x : xs) v += (x - e.mean) * (x - e.mean);
    e.se = std::sqrt(v / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return e;
}

namespace detail {

/// Runs f(i) for i in [0, count) on up to `threads` workers. f writes only to slot i.
template <class F>
void parallel_for(int count, int threads, F&& f) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Column sums of the element-wise product.
inline Eigen::RowVectorXd coldot(const Mat& a, const Mat& b) { return a.cwiseProduct(b).colwise().sum(); }

/// Running integrand (before the factor 1/2) for all agents with coupling (xc, uc).
inline Eigen::RowVectorXd running_cost(const ProblemSpec& p, int k, const Mat& X, const Mat& U, const Vec& xc,
                                       const Vec& uc) {
  const auto& w = p.weights;
  Mat ex = X;
  ex.colwise() -= w.alpha1 * xc;
  Mat eu = U;
  eu.colwise() -= w.beta1 * uc;
  Mat qx = p.Q.at(k) * ex;
  qx.colwise() += 2.0 * Vec(p.q.at(k));
  Mat ru = p.R.at(k) * eu;
  ru.colwise() += 2.0 * Vec(p.r.at(k));
  Mat su = U;
  su.colwise() -= w.beta2 * uc;
  Mat ex2 = X;
  ex2.colwise() -= w.alpha2 * xc;
  return coldot(qx, ex) + coldot(ru, eu) + 2.0 * coldot(p.S.at(k) * su, ex2);
}

inline Eigen::RowVectorXd terminal_cost(const ProblemSpec& p, const Mat& X, const Vec& xc) {
  Mat e = X;
  e.colwise() -= p.weights.alpha3 * xc;
  Mat le = p.L_T * e;
  le.colwise() += 2.0 * p.l_T;
  return coldot(le, e);
}

inline Eigen::RowVectorXd relaxed_running_cost(const RelaxedQuadruple& w, const Mat& X, const Mat& U) {
  Mat a = w.Q * X + 2.0 * w.S * U;
  a.colwise() += 2.0 * w.q;
  Mat b = w.R * U;
  b.colwise() += 2.0 * w.r;
  return (coldot(a, X) + coldot(b, U)).array() + w.M;
}

inline Eigen::RowVectorXd relaxed_terminal_cost(const RelaxedQuadruple& w, const Mat& X) {
  Mat a = w.L_T * X;
  a.colwise() += 2.0 * w.l_T;
  return coldot(a, X).array() + w.m_T;
}

inline Eigen::RowVectorXd nagent_running_cost(const NAgentRelaxedTerms& w, const Mat& X, const Mat& U, const Vec& xN,
                                              const Vec& uN) {
  Mat a = w.Q * X + 2.0 * w.S * U;
  a.colwise() += 2.0 * w.q_tilde;
  Mat b = w.R * U;
  b.colwise() += 2.0 * w.r_tilde;
  const double c = (w.Q_tilde * xN).dot(xN) + 2.0 * w.q_bar.dot(xN) + (w.R_tilde * uN).dot(uN) +
                   2.0 * w.q_hat.dot(uN) + w.M_tilde + 2.0 * (w.S_tilde * uN).dot(xN);
  const Vec vx = w.Q_bar.transpose() * xN + w.Q_hat.transpose() * uN;
  const Vec vu = w.r_bar.transpose() * xN + w.r_hat.transpose() * uN;
  const Eigen::RowVectorXd cross =
      2.0 * ((X.array().colwise() * vx.array()).colwise().sum() + (U.array().colwise() * vu.array()).colwise().sum());
  return (coldot(a, X) + coldot(b, U) + cross).array() + c;
}

inline Eigen::RowVectorXd nagent_terminal_cost(const ProblemSpec& p, const Mat& P_T, const Mat& X, const Vec& xN) {
  const double a3 = p.weights.alpha3;
  Mat a = (p.L_T - P_T) * X;
  a.colwise() += 2.0 * p.l_T;
  const Vec v = p.L_T.transpose() * xN;
  const Eigen::RowVectorXd cross = -2.0 * a3 * (X.array().colwise() * v.array()).colwise().sum();
  return (coldot(a, X) + cross).array() - 2.0 * a3 * p.l_T.dot(xN) + a3 * a3 * (p.L_T * xN).dot(xN);
}

inline void fill_increments(std::vector<NormalStream>& streams, double dt, int substeps, Mat& out) {
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    streams[static_cast<std::size_t>(i)].increment(dt, substeps, out.col(i).data(), static_cast<int>(out.rows()));
  }
}

/// State step for agents in X with coupling (xc, uc). Returns the observation increments.
inline Mat state_step(const ProblemSpec& p, int k, Mat& X, const Mat& U, const Vec& xc, const Vec& uc, double dW0,
                      const Mat& dW, const Mat& dWb, double dt) {
  Mat obs = p.G.at(k) * X + p.H.at(k) * U;
  obs.colwise() += Vec(p.G_bar.at(k) * xc + p.H_bar.at(k) * uc + p.b_tilde.at(k));
  Mat dY = obs * dt + p.sigma_tilde.at(k) * dWb;
  Mat drift = p.A.at(k) * X + p.B.at(k) * U;
  drift.colwise() += Vec(p.A_bar.at(k) * xc + p.B_bar.at(k) * uc + p.b.at(k));
  Mat diff = p.D.at(k) * X + p.F.at(k) * U;
  diff.colwise() += Vec(p.D_bar.at(k) * xc + p.F_bar.at(k) * uc + p.b_bar.at(k));
  X += drift * dt + diff * dW0 + p.sigma.at(k) * dW + p.sigma_bar.at(k) * dWb;
  return dY;
}

inline void check_finite(const Mat& X, int rep, int node, const char* what) {
  if (X.allFinite()) return;
  Eigen::Index agent = 0;
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    if (!X.col(i).allFinite()) {
      agent = i;
      break;
    }
  }
  throw DivergenceError(std::string(what) + " diverged: replication " + std::to_string(rep) + ", agent " +
                        std::to_string(agent) + ", node " + std::to_string(node));
}

}  // namespace detail

/// One replication of the population. Agents share W0 and theta; agent i has its own W^i and
/// W_bar^i. The N-agent and limit systems use the same draws.
/// Per-node quantities shared by all replications.
struct StepCache {
  std::vector<FeedbackGains> gains;
  std::vector<Mat> precision;
  std::vector<NAgentRelaxedTerms> nagent;  // with a compensator

  StepCache(const ProblemSpec& p, const RiccatiSolution& sol, const CompensatorPath* comp)
      : gains(gain_schedule(sol)) {
    for (int k = 0; k < p.grid.K; ++k) precision.push_back(observation_precision(p, k));
    if (comp) {
      for (int k = 0; k <= p.grid.K; ++k) nagent.push_back(assemble_nagent_terms(p, *comp, k));
    }
  }
};

inline ReplicationResult simulate_replication(const ProblemSpec& p, const RiccatiSolution& sol,
                                              const StepCache& cache, const PopulationConfig& cfg,
                                              const SimulationOptions& opts, int rep) {
  const auto& gains = cache.gains;
  const int n = p.dims.n, d = p.dims.d, K = p.grid.K, N = cfg.N;
  const double dt = p.grid.dt();
  const bool do_limit = opts.limit || opts.adjoint;
  const bool do_nagent = opts.n_agent;
  if (!do_limit && !do_nagent) throw std::invalid_argument("simulate: no system selected");
  const auto r = static_cast<std::uint64_t>(rep);

  NormalStream common(cfg.seed, r, kSharedAgent, Channel::common);
  std::vector<NormalStream> ind, obs;
  ind.reserve(static_cast<std::size_t>(N));
  obs.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    ind.emplace_back(cfg.seed, r, static_cast<std::uint64_t>(i), Channel::individual);
    obs.emplace_back(cfg.seed, r, static_cast<std::uint64_t>(i), Channel::observation);
  }

  ReplicationResult out;
  const Mat X_init = p.initial_state.replicate(1, N);
  Mat X = X_init, Xhat = X_init, Pf = Mat::Zero(n, n);
  Mat XL = X_init, XLhat = X_init, PfL = Mat::Zero(n, n);
  Mat Xc0 = X_init, Xc1 = Mat::Zero(n, N);  // control-free and control-driven parts
  Mat Y = Mat::Zero(n, N);
  Mat phi;
  Vec x0 = p.initial_state;
  double theta = 0.0;

  Eigen::RowVectorXd run_N = Eigen::RowVectorXd::Zero(N), run_L = Eigen::RowVectorXd::Zero(N);
  Eigen::RowVectorXd rel_N = Eigen::RowVectorXd::Zero(N), rel_L = Eigen::RowVectorXd::Zero(N);
  Eigen::RowVectorXd en_N = Eigen::RowVectorXd::Zero(N), en_L = Eigen::RowVectorXd::Zero(N);
  Eigen::RowVectorXd gap_agent = Eigen::RowVectorXd::Zero(N);
  Mat dW(d, N), dWb(d, N);

  auto controls = [&](const FeedbackGains& g, int k, const Mat& Xh) {
    Mat U = opts.policy.evaluate(g, k, Xh, x0);
    if (opts.deviator) U.col(0) = opts.deviator->evaluate(g, k, Xh.col(0), x0);
    return U;
  };

  for (int k = 0;; ++k) {
    const FeedbackGains& g = gains[static_cast<std::size_t>(k)];
    const Vec u0 = control_u0(g, x0);
    const double wq = (k == 0 || k == K) ? 0.5 * dt : dt;
    out.x0.push_back(x0);
    out.u0.push_back(u0);
    out.theta.push_back(theta);

    Mat U, UL;
    Vec xN, uN;
    if (do_nagent) {
      U = controls(g, k, Xhat);
      xN = X.rowwise().mean();
      uN = U.rowwise().mean();
      out.x_avg.push_back(xN);
      out.u_avg.push_back(uN);
      out.Pf.push_back(Pf);
      out.sup_mean_gap = std::max(out.sup_mean_gap, (xN - x0).squaredNorm());
      run_N += wq * detail::running_cost(p, k, X, U, xN, uN);
      en_N += wq * U.colwise().squaredNorm();
      if (opts.compensator) {
        rel_N += wq * detail::nagent_running_cost(cache.nagent[static_cast<std::size_t>(k)], X, U, xN, uN);
      }
      if (opts.record_paths) {
        out.X.push_back(X);
        out.U.push_back(U);
        out.Xhat.push_back(Xhat);
        out.Y.push_back(Y);
      }
    }
    if (do_limit) {
      UL = controls(g, k, XLhat);
      run_L += wq * detail::running_cost(p, k, XL, UL, x0, u0);
      en_L += wq * UL.colwise().squaredNorm();
      if (opts.compensator) {
        rel_L += wq * detail::relaxed_running_cost(assemble_relaxed_at(p, *opts.compensator, k, x0, u0), XL, UL);
      }
      if (!do_nagent) {
        out.Pf.push_back(PfL);
        if (opts.record_paths) {
          out.X.push_back(XL);
          out.U.push_back(UL);
          out.Xhat.push_back(XLhat);
          out.Y.push_back(Y);
        }
      }
      if (do_nagent) gap_agent = gap_agent.cwiseMax((X - XL).colwise().squaredNorm());
      if (opts.adjoint) {
        for (int i = 0; i < N; ++i) {
          const Vec res = stationarity_residual(p, sol, k, XLhat.col(i), x0, UL.col(i), u0);
          out.stationarity_max = std::max(out.stationarity_max, res.cwiseAbs().maxCoeff());
        }
        if (k == 0) {
          Mat dev = XLhat;
          dev.colwise() -= x0;
          phi = sol.Pi[0] * dev;
          phi.colwise() += Vec(sol.Sigma[0] * x0 + sol.rho[0]);
        }
        if (k == K) {
          Mat target = XLhat;
          target.colwise() -= p.weights.alpha3 * x0;
          target = p.L_T * target;
          target.colwise() += p.l_T;
          const Mat diff = phi - target;
          out.adjoint_defect.resize(static_cast<std::size_t>(N));
          for (int i = 0; i < N; ++i) out.adjoint_defect[static_cast<std::size_t>(i)] = diff.col(i).cwiseAbs().maxCoeff();
        }
      }
    }
    if (opts.decomposition && do_nagent) {
      out.decomposition_max = std::max(out.decomposition_max, (X - Xc0 - Xc1).cwiseAbs().maxCoeff());
    }

    if (k == K) {
      if (do_nagent) {
        run_N += detail::terminal_cost(p, X, xN);
        if (opts.compensator) {
          rel_N += detail::nagent_terminal_cost(p, opts.compensator->value(K), X, xN);
        }
      }
      if (do_limit) {
        run_L += detail::terminal_cost(p, XL, x0);
        if (opts.compensator) {
          rel_L += detail::relaxed_terminal_cost(assemble_relaxed_at(p, *opts.compensator, K, x0, u0), XL);
        }
      }
      break;
    }

    // Noise.
    const double dW0 = common.increment(dt, opts.noise_substeps);
    detail::fill_increments(ind, dt, opts.noise_substeps, dW);
    detail::fill_increments(obs, dt, opts.noise_substeps, dWb);
    const double dtheta =
        (p.I.scalar_at(k) * theta + p.b_check.scalar_at(k)) * dt + p.sigma_check.scalar_at(k) * dW0;
    const double dW0_rec = recover_dW0_at(p, k, dtheta, theta, dt);
    theta += dtheta;
    const Mat& precision = cache.precision[static_cast<std::size_t>(k)];

    if (do_nagent) {
      if (opts.decomposition) {
        const Vec m0 = Xc0.rowwise().mean(), m1 = Xc1.rowwise().mean();
        Mat drift0 = p.A.at(k) * Xc0;
        drift0.colwise() += Vec(p.A_bar.at(k) * m0);
        Mat diff0 = p.D.at(k) * Xc0;
        diff0.colwise() += Vec(p.D_bar.at(k) * m0);
        Mat drift1 = p.A.at(k) * Xc1 + p.B.at(k) * U;
        drift1.colwise() += Vec(p.A_bar.at(k) * m1 + p.B_bar.at(k) * uN + p.b.at(k));
        Mat diff1 = p.D.at(k) * Xc1 + p.F.at(k) * U;
        diff1.colwise() += Vec(p.D_bar.at(k) * m1 + p.F_bar.at(k) * uN + p.b_bar.at(k));
        Xc0 += drift0 * dt + diff0 * dW0 + p.sigma.at(k) * dW + p.sigma_bar.at(k) * dWb;
        Xc1 += drift1 * dt + diff1 * dW0;
      }
      const Mat dY = detail::state_step(p, k, X, U, xN, uN, dW0, dW, dWb, dt);
      if (opts.record_paths) Y += dY;
      filter_step_batch(p, k, Xhat, Pf, U, x0, u0, dY, dW0_rec, dt, precision);
      detail::check_finite(X, rep, k + 1, "state");
      detail::check_finite(Xhat, rep, k + 1, "filter");
    }
    if (do_limit) {
      Mat XL_prev_hat = XLhat;
      const Mat dYL = detail::state_step(p, k, XL, UL, x0, u0, dW0, dW, dWb, dt);
      if (opts.record_paths && !do_nagent) Y += dYL;
      if (opts.adjoint) {
        const auto ki = static_cast<std::size_t>(k);
        const auto& w = p.weights;
        const Mat& Pi = sol.Pi[ki];
        const Mat& Sg = sol.Sigma[ki];
        Mat dev = XLhat;
        dev.colwise() -= x0;
        Mat phi_hat = Pi * dev;
        phi_hat.colwise() += Vec(Sg * x0 + sol.rho[ki]);
        Mat udev = UL;
        udev.colwise() -= u0;
        Mat eta = Pi * (p.D.at(k) * dev + p.F.at(k) * udev);
        eta.colwise() +=
            Vec(Sg * ((p.D.at(k) + p.D_bar.at(k)) * x0 + (p.F.at(k) + p.F_bar.at(k)) * u0 + p.b_bar.at(k)));
        Mat ex = XLhat;
        ex.colwise() -= w.alpha1 * x0;
        Mat su = UL;
        su.colwise() -= w.beta2 * u0;
        Mat drift = p.A.at(k).transpose() * phi_hat + p.D.at(k).transpose() * eta + p.Q.at(k) * ex + p.S.at(k) * su;
        drift.colwise() += Vec(p.q.at(k));
        Mat innovation = dYL - (p.G.at(k) * XLhat + p.H.at(k) * UL) * dt;
        innovation.colwise() -= Vec(p.G_bar.at(k) * x0 + p.H_bar.at(k) * u0 + p.b_tilde.at(k)) * dt;
        const Mat gain = filter_gain(p, k, PfL, precision);
        phi += -drift * dt + eta * dW0_rec + Pi * gain * innovation;
      }
      filter_step_batch(p, k, XLhat, PfL, UL, x0, u0, dYL, dW0_rec, dt, precision);
      detail::check_finite(XL, rep, k + 1, "limit state");
    }
    x0 = advance_x0(p, k, x0, u0, dW0, dt);
  }

  auto to_vec = [](const Eigen::RowVectorXd& v, double scale) {
    std::vector<double> o(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) o[static_cast<std::size_t>(i)] = scale * v(i);
    return o;
  };
  if (do_nagent) {
    out.cost_N = to_vec(run_N, 0.5);
    out.energy_N = to_vec(en_N, 1.0);
    if (opts.compensator) out.relaxed_N = to_vec(rel_N, 0.5);
  }
  if (do_limit) {
    out.cost_limit = to_vec(run_L, 0.5);
    out.energy_limit = to_vec(en_L, 1.0);
    if (opts.compensator) out.relaxed_limit = to_vec(rel_L, 0.5);
    if (do_nagent) out.sup_agent_gap = to_vec(gap_agent, 1.0);
  }
  return out;
}

inline PopulationResult simulate_population(const ProblemSpec& p, const RiccatiSolution& sol,
                                            const PopulationConfig& cfg, const SimulationOptions& opts = {}) {
  if (cfg.N < 1 || cfg.M < 1) throw std::invalid_argument("N and M must be at least 1");
  if (sol.grid.K != p.grid.K) throw DimensionError("simulate: solution grid differs from problem grid");
  const StepCache cache(p, sol, opts.compensator);
  PopulationResult res;
  res.grid = p.grid;
  res.config = cfg;
  res.reps.resize(static_cast<std::size_t>(cfg.M));
  detail::parallel_for(cfg.M, cfg.threads, [&](int r) {
    res.reps[static_cast<std::size_t>(r)] = simulate_replication(p, sol, cache, cfg, opts, r);
  });
  return res;
}

/// Trapezoid running cost plus terminal cost of one path, coupling through (xc, uc).
inline double trajectory_cost(const ProblemSpec& p, const std::vector<Vec>& x, const std::vector<Vec>& u,
                              const std::vector<Vec>& xc, const std::vector<Vec>& uc) {
  const int K = p.grid.K;
  const double dt = p.grid.dt();
  if (x.size() != static_cast<std::size_t>(K) + 1 || u.size() != x.size() || xc.size() != x.size() ||
      uc.size() != x.size()) {
    throw DimensionError("trajectory_cost: paths must have K+1 samples");
  }
  double total = 0.0;
  for (int k = 0; k <= K; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double wq = (k == 0 || k == K) ? 0.5 * dt : dt;
    total += wq * detail::running_cost(p, k, x[i], u[i], xc[i], uc[i])(0);
  }
  total += detail::terminal_cost(p, x.back(), xc.back())(0);
  return 0.5 * total;
}

/// Monte-Carlo estimate of the N-agent cost of agent i.
inline Estimate evaluate_cost_N(const PopulationResult& res, int i) {
  std::vector<double> xs;
  for (const auto& r : res.reps) xs.push_back(r.cost_N.at(static_cast<std::size_t>(i)));
  return mc_estimate(xs);
}

/// Monte-Carlo estimate of the limit cost of agent i.
inline Estimate evaluate_cost_limit(const PopulationResult& res, int i) {
  std::vector<double> xs;
  for (const auto& r : res.reps) xs.push_back(r.cost_limit.at(static_cast<std::size_t>(i)));
  return mc_estimate(xs);
}

/// Limit cost of a single path; the standard error of one path is zero.
inline Estimate evaluate_cost_limit(const ProblemSpec& p, const std::vector<Vec>& x, const std::vector<Vec>& u,
                                    const std::vector<Vec>& x0, const std::vector<Vec>& u0) {
  return {trajectory_cost(p, x, u, x0, u0), 0.0, 1};
}

inline double agent_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct EquivalenceResult {
  Estimate limit;   // J - J^P - <P_0 x, x>/2 over limit paths
  Estimate nagent;  // same for the N-agent cost, agent-averaged per replication
  [[nodiscard]] double limit_residual() const { return std::abs(limit.mean); }
  [[nodiscard]] double nagent_residual() const { return std::abs(nagent.mean); }
};

/// Completing-square check on shared paths. The limit part uses M_limit replications of one
/// limit agent; the N-agent part uses M_nagent replications of N agents.
inline EquivalenceResult equivalence_check(const ProblemSpec& p, const RiccatiSolution& sol,
                                           const CompensatorPath& comp, const Policy& policy, int M_limit, int N,
                                           int M_nagent, std::uint64_t seed, int threads = 1) {
  const double shift = 0.5 * (comp.value(0) * p.initial_state).dot(p.initial_state);
  EquivalenceResult out;
  SimulationOptions o;
  o.policy = policy;
  o.compensator = &comp;
  if (M_limit > 0) {
    o.n_agent = false;
    o.limit = true;
    const auto res = simulate_population(p, sol, {1, M_limit, seed, threads}, o);
    std::vector<double> d;
    for (const auto& r : res.reps) d.push_back(r.cost_limit[0] - r.relaxed_limit[0] - shift);
    out.limit = mc_estimate(d);
  }
  if (M_nagent > 0) {
    o.n_agent = true;
    o.limit = false;
    const auto res = simulate_population(p, sol, {N, M_nagent, seed, threads}, o);
    std::vector<double> d;
    for (const auto& r : res.reps) d.push_back(agent_mean(r.cost_N) - agent_mean(r.relaxed_N) - shift);
    out.nagent = mc_estimate(d);
  }
  return out;
}

struct AdjointReport {
  Estimate defect;                // mean over paths of the terminal defect
  double max_defect = 0.0;
  double max_stationarity = 0.0;  // max over nodes and paths
};

/// Terminal defect of the forward-integrated adjoint along limit agents, and the stationarity
/// residual at every node.
inline AdjointReport adjoint_consistency(const ProblemSpec& p, const RiccatiSolution& sol, int N, int M,
                                         std::uint64_t seed, int noise_substeps = 1, int threads = 1) {
  SimulationOptions o;
  o.n_agent = false;
  o.adjoint = true;
  o.noise_substeps = noise_substeps;
  const auto res = simulate_population(p, sol, {N, M, seed, threads}, o);
  AdjointReport out;
  std::vector<double> per_rep;
  for (const auto& r : res.reps) {
    per_rep.push_back(agent_mean(r.adjoint_defect));
    for (double v : r.adjoint_defect) out.max_defect = std::max(out.max_defect, v);
    out.max_stationarity = std::max(out.max_stationarity, r.stationarity_max);
  }
  out.defect = mc_estimate(per_rep);
  return out;
}

struct GradientEstimate {
  double eps = 0.0;
  Estimate derivative;  // [J(u + eps v) - J(u - eps v)] / (2 eps)
  Estimate second;      // [J(u + eps v) - 2 J(u) + J(u - eps v)] / eps^2
};

/// Directional derivatives of the limit cost along a constant control offset v, with common
/// random numbers. Each replication contributes the agent average over N limit agents.
inline std::vector<GradientEstimate> gradient_check(const ProblemSpec& p, const RiccatiSolution& sol, const Vec& v,
                                                    const std::vector<double>& eps, int N, int M,
                                                    std::uint64_t seed, int threads = 1) {
  SimulationOptions o;
  o.n_agent = false;
  o.limit = true;
  const PopulationConfig cfg{N, M, seed, threads};
  auto costs = [&](const Policy& pol) {
    o.policy = pol;
    const auto res = simulate_population(p, sol, cfg, o);
    std::vector<double> c;
    for (const auto& r : res.reps) c.push_back(agent_mean(r.cost_limit));
    return c;
  };
  const auto base = costs(Policy::equilibrium());
  std::vector<GradientEstimate> out;
  for (double e : eps) {
    GradientEstimate g;
    g.eps = e;
    if (v.isZero(0.0) || e == 0.0) {
      g.derivative = mc_estimate(std::vector<double>(base.size(), 0.0));
      g.second = g.derivative;
      out.push_back(g);
      continue;
    }
    const auto plus = costs(Policy::offset(e * v));
    const auto minus = costs(Policy::offset(-e * v));
    std::vector<double> d1, d2;
    for (std::size_t r = 0; r < base.size(); ++r) {
      d1.push_back((plus[r] - minus[r]) / (2.0 * e));
      d2.push_back((plus[r] - 2.0 * base[r] + minus[r]) / (e * e));
    }
    g.derivative = mc_estimate(d1);
    g.second = mc_estimate(d2);
    out.push_back(g);
  }
  return out;
}

/// Per-agent paths: t, replication, agent, state, control and filter entries.
inline void write_population_csv(std::ostream& os, const PopulationResult& res) {
  csv::Writer w(os);
  if (res.reps.empty() || res.reps.front().X.empty()) throw PreconditionError("no recorded paths");
  const Eigen::Index n = res.reps.front().X.front().rows(), m = res.reps.front().U.front().rows();
  std::vector<std::string> cols{"t", "replication", "agent"};
  for (Eigen::Index c = 0; c < n; ++c) cols.push_back("x_" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < m; ++c) cols.push_back("u_" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < n; ++c) cols.push_back("xhat_" + std::to_string(c + 1));
  w.header(cols);
  for (std::size_t r = 0; r < res.reps.size(); ++r) {
    const auto& rep = res.reps[r];
    for (std::size_t k = 0; k < rep.X.size(); ++k) {
      for (Eigen::Index i = 0; i < rep.X[k].cols(); ++i) {
        std::vector<double> row{res.grid.node(static_cast<int>(k)), static_cast<double>(r), static_cast<double>(i)};
        csv::append_row_major(row, rep.X[k].col(i));
        csv::append_row_major(row, rep.U[k].col(i));
        csv::append_row_major(row, rep.Xhat[k].col(i));
        w.row(row);
      }
    }
  }
}

/// Columns t, x_avg, x0, u_avg, u0 for one replication.
inline void write_average_csv(std::ostream& os, const GridSpec& grid, const ReplicationResult& rep) {
  csv::Writer w(os);
  const Eigen::Index n = rep.x0.front().size(), m = rep.u0.front().size();
  std::vector<std::string> cols{"t"};
  for (Eigen::Index c = 0; c < n; ++c) cols.push_back("x_avg_" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < n; ++c) cols.push_back("x0_" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < m; ++c) cols.push_back("u_avg_" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < m; ++c) cols.push_back("u0_" + std::to_string(c + 1));
  w.header(cols);
  for (std::size_t k = 0; k < rep.x0.size(); ++k) {
    std::vector<double> row{grid.node(static_cast<int>(k))};
    csv::append_row_major(row, rep.x_avg.at(k));
    csv::append_row_major(row, rep.x0[k]);
    csv::append_row_major(row, rep.u_avg.at(k));
    csv::append_row_major(row, rep.u0[k]);
    w.row(row);
  }
}

}  // namespace lqmfg

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "lqmfg/csv.hpp"
#include "lqmfg/model.hpp"
#include "lqmfg/riccati.hpp"
#include "lqmfg/types.hpp"

namespace lqmfg {

/// u = -K1 (xhat - x0) - (K2 x0 + k3), and u0 = -(K2 x0 + k3).
struct FeedbackGains {
  Mat K1;  // R_cal^{-1} Pi_tilde^T
  Mat K2;  // R_tilde^{-1} Sigma_bar^T
  Vec k3;  // R_tilde^{-1} rho_tilde
};

inline FeedbackGains feedback_gains_at(const RiccatiSolution& sol, int k) {
  const auto i = static_cast<std::size_t>(k);
  const double t = sol.grid.node(k);
  const Mat& W = sol.control_weight[i];
  const double w = linalg::min_eig_sym(W);
  if (!(w > 0.0)) throw PositivityLoss("R + F^T Pi F", t, w);
  const Mat& Wt = sol.mean_control_weight[i];
  const double wt = linalg::min_eig_sym(Wt);
  if (!(wt > 0.0)) throw PositivityLoss("R_tilde + R_tilde^T", t, wt);
  const auto lu = Wt.partialPivLu();
  FeedbackGains g;
  g.K1 = W.ldlt().solve(sol.Pi_tilde[i].transpose());
  g.K2 = lu.solve(sol.Sigma_bar[i].transpose());
  g.k3 = lu.solve(sol.rho_tilde[i]);
  if (!g.K1.allFinite() || !g.K2.allFinite() || !g.k3.allFinite()) {
    throw PositivityLoss("feedback gains", t, 0.0);
  }
  return g;
}

inline FeedbackGains feedback_gains(const RiccatiSolution& sol, double t) {
  return feedback_gains_at(sol, node_index(sol.grid, t));
}

/// Gains at every node.
inline std::vector<FeedbackGains> gain_schedule(const RiccatiSolution& sol) {
  std::vector<FeedbackGains> out;
  out.reserve(static_cast<std::size_t>(sol.grid.K) + 1);
  for (int k = 0; k <= sol.grid.K; ++k) out.push_back(feedback_gains_at(sol, k));
  return out;
}

inline Vec control_u0(const FeedbackGains& g, const Vec& x0) { return -(g.K2 * x0 + g.k3); }

inline Vec control_u0(const RiccatiSolution& sol, double t, const Vec& x0) {
  return control_u0(feedback_gains(sol, t), x0);
}

inline Vec decentralized_control(const FeedbackGains& g, const Vec& xhat, const Vec& x0) {
  return -g.K1 * (xhat - x0) - g.K2 * x0 - g.k3;
}

inline Vec decentralized_control(const RiccatiSolution& sol, double t, const Vec& xhat, const Vec& x0) {
  return decentralized_control(feedback_gains(sol, t), xhat, x0);
}

/// Euler step of dx0 = [(A + A_bar) x0 + (B + B_bar) u0 + b]dt + [(D + D_bar) x0 + (F + F_bar) u0 + b_bar]dW0.
inline Vec advance_x0(const ProblemSpec& p, int k, const Vec& x0, const Vec& u0, double dW0, double dt) {
  const Vec drift = (p.A.at(k) + p.A_bar.at(k)) * x0 + (p.B.at(k) + p.B_bar.at(k)) * u0 + p.b.at(k);
  const Vec diff = (p.D.at(k) + p.D_bar.at(k)) * x0 + (p.F.at(k) + p.F_bar.at(k)) * u0 + p.b_bar.at(k);
  return x0 + drift * dt + diff * dW0;
}

struct LimitPaths {
  std::vector<Vec> x0;
  std::vector<Vec> u0;
};

inline LimitPaths simulate_x0(const ProblemSpec& p, const std::vector<FeedbackGains>& gains,
                              const std::vector<double>& dW0) {
  const int K = p.grid.K;
  if (dW0.size() != static_cast<std::size_t>(K)) throw DimensionError("simulate_x0: need K increments of W0");
  const double dt = p.grid.dt();
  LimitPaths out;
  out.x0.reserve(static_cast<std::size_t>(K) + 1);
  out.u0.reserve(static_cast<std::size_t>(K) + 1);
  Vec x = p.initial_state;
  for (int k = 0; k <= K; ++k) {
    const Vec u = control_u0(gains[static_cast<std::size_t>(k)], x);
    out.x0.push_back(x);
    out.u0.push_back(u);
    if (k == K) break;
    x = advance_x0(p, k, x, u, dW0[static_cast<std::size_t>(k)], dt);
    if (!x.allFinite()) throw DivergenceError("x0 diverged at node " + std::to_string(k + 1));
  }
  return out;
}

inline LimitPaths simulate_x0(const ProblemSpec& p, const RiccatiSolution& sol, const std::vector<double>& dW0) {
  return simulate_x0(p, gain_schedule(sol), dW0);
}

/// B^T phi + F^T eta + S^T(xhat - a2 x0) + R(u - b1 u0) + r with phi and eta reconstructed from
/// Pi, Sigma, rho. Zero along the feedback law whenever u0 solves the mean-field equation.
inline Vec stationarity_residual(const ProblemSpec& p, const RiccatiSolution& sol, int k, const Vec& xhat,
                                 const Vec& x0, const Vec& u, const Vec& u0) {
  const auto i = static_cast<std::size_t>(k);
  const auto& w = p.weights;
  const Mat& Pi = sol.Pi[i];
  const Mat& Sg = sol.Sigma[i];
  const Vec e = xhat - x0;
  const Vec phi = Pi * e + Sg * x0 + sol.rho[i];
  const Vec eta = Pi * (p.D.at(k) * e + p.F.at(k) * (u - u0)) +
                  Sg * ((p.D.at(k) + p.D_bar.at(k)) * x0 + (p.F.at(k) + p.F_bar.at(k)) * u0 + p.b_bar.at(k));
  return p.B.at(k).transpose() * phi + p.F.at(k).transpose() * eta + p.S.at(k).transpose() * (xhat - w.alpha2 * x0) +
         p.R.at(k) * (u - w.beta1 * u0) + p.r.at(k);
}

/// Columns t, x0 entries, u0 entries.
inline void write_limit_csv(std::ostream& os, const GridSpec& grid, const LimitPaths& paths) {
  csv::Writer w(os);
  std::vector<std::string> cols{"t"};
  for (Eigen::Index c = 0; c < paths.x0.front().size(); ++c) cols.push_back("x0_" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < paths.u0.front().size(); ++c) cols.push_back("u0_" + std::to_string(c + 1));
  w.header(cols);
  for (std::size_t k = 0; k < paths.x0.size(); ++k) {
    std::vector<double> row{grid.node(static_cast<int>(k))};
    csv::append_row_major(row, paths.x0[k]);
    csv::append_row_major(row, paths.u0[k]);
    w.row(row);
  }
}

}  // namespace lqmfg

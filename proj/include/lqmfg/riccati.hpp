#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lqmfg/compensator.hpp"
#include "lqmfg/csv.hpp"
#include "lqmfg/model.hpp"
#include "lqmfg/types.hpp"

namespace lqmfg {

struct SolverOptions {
  int substeps = 10;
  double positivity_floor = 1e-8;
  bool symmetrize = true;
  double divergence_bound = 1e12;
};

/// Node samples of Pi, Sigma, rho and the gain ingredients derived from them.
struct RiccatiSolution {
  GridSpec grid;
  std::vector<Mat> Pi;
  std::vector<Mat> Sigma;
  std::vector<Vec> rho;

  std::vector<Mat> control_weight;       // R + F^T Pi F
  std::vector<Mat> mean_control_weight;  // (1 - b1) R + F^T Sigma (F + F_bar)
  std::vector<Mat> Pi_tilde;             // Pi B + D^T Pi F + S
  std::vector<Mat> Sigma_tilde;          // Sigma (B + B_bar) + D^T Sigma (F + F_bar) + (1 - b2) S
  std::vector<Mat> Sigma_bar;            // Sigma^T B + (D + D_bar)^T Sigma^T F + (1 - a2) S
  std::vector<Vec> rho_tilde;            // B^T rho + F^T Sigma b_bar + r
};

namespace detail {

/// Classical RK4 from t_K back to t_0 with `substeps` steps per grid interval. rhs(k, t, X)
/// returns dX/dt using the coefficients of interval k, also at its right end. post(X, t) runs
/// after every substep.
template <class State, class Rhs, class Post>
std::vector<State> rk4_backward(const GridSpec& grid, State terminal, int substeps, Rhs&& rhs, Post&& post) {
  if (substeps < 1) throw std::invalid_argument("substeps must be at least 1");
  const int K = grid.K;
  const double h = grid.dt() / substeps;
  std::vector<State> out(static_cast<std::size_t>(K) + 1);
  State X = std::move(terminal);
  out[static_cast<std::size_t>(K)] = X;
  for (int k = K - 1; k >= 0; --k) {
    const double t_right = grid.node(k + 1);
    for (int j = 0; j < substeps; ++j) {
      const double t = t_right - j * h;
      const State k1 = rhs(k, t, X);
      const State k2 = rhs(k, t - 0.5 * h, State(X - 0.5 * h * k1));
      const State k3 = rhs(k, t - 0.5 * h, State(X - 0.5 * h * k2));
      const State k4 = rhs(k, t - h, State(X - h * k3));
      X -= (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      post(X, t - h);
    }
    out[static_cast<std::size_t>(k)] = X;
  }
  return out;
}

/// dPi/dt for Pi' + Pi A + A^T Pi + D^T Pi D + Q - Pt (R + F^T Pi F)^{-1} Pt^T = 0 with
/// Pt = Pi B + D^T Pi F + S.
inline Mat symmetric_riccati_rhs(const Mat& P, const Mat& A, const Mat& B, const Mat& D, const Mat& F, const Mat& Q,
                                 const Mat& S, const Mat& R, double t, double floor, const char* label) {
  const Mat W = R + F.transpose() * P * F;
  const double w = linalg::min_eig_sym(W);
  if (!(w >= floor)) throw PositivityLoss(label, t, w);
  const Mat Pt = P * B + D.transpose() * P * F + S;
  return -(P * A + A.transpose() * P + D.transpose() * P * D + Q - Pt * W.ldlt().solve(Pt.transpose()));
}

inline auto divergence_guard(double bound, const char* what) {
  return [bound, what](Mat& X, double t) {
    if (!X.allFinite() || linalg::max_abs(X) > bound) {
      throw DivergenceError(std::string(what) + " diverged at t=" + std::to_string(t));
    }
  };
}

struct SigmaTerms {
  Mat weight;  // (1 - b1) R + F^T Sigma (F + F_bar)
  Mat tilde;   // Sigma (B + B_bar) + D^T Sigma (F + F_bar) + (1 - b2) S
  Mat bar_t;   // B^T Sigma + F^T Sigma (D + D_bar) + (1 - a2) S^T
};

inline SigmaTerms sigma_terms(const ProblemSpec& p, int k, const Mat& Sg) {
  const auto& w = p.weights;
  const Mat& B = p.B.at(k);
  const Mat& D = p.D.at(k);
  const Mat& F = p.F.at(k);
  const Mat FF = F + p.F_bar.at(k);
  SigmaTerms s;
  s.weight = (1.0 - w.beta1) * p.R.at(k) + F.transpose() * Sg * FF;
  s.tilde = Sg * (B + p.B_bar.at(k)) + D.transpose() * Sg * FF + (1.0 - w.beta2) * p.S.at(k);
  s.bar_t = B.transpose() * Sg + F.transpose() * Sg * (D + p.D_bar.at(k)) + (1.0 - w.alpha2) * p.S.at(k).transpose();
  return s;
}

inline double sym_part_min_eig(const Mat& W) { return linalg::min_eig_sym(W + W.transpose()); }

inline Mat sigma_rhs(const ProblemSpec& p, int k, double t, const Mat& Sg, double floor) {
  const auto s = sigma_terms(p, k, Sg);
  const double w = sym_part_min_eig(s.weight);
  if (!(w >= floor)) throw PositivityLoss("R_tilde + R_tilde^T", t, w);
  const Mat& A = p.A.at(k);
  const Mat& D = p.D.at(k);
  return -(Sg * (A + p.A_bar.at(k)) + A.transpose() * Sg + D.transpose() * Sg * (D + p.D_bar.at(k)) -
           s.tilde * s.weight.partialPivLu().solve(s.bar_t) + (1.0 - p.weights.alpha1) * p.Q.at(k));
}

inline Vec rho_rhs(const ProblemSpec& p, int k, double t, const Mat& Sg, const Vec& rho, double floor) {
  const auto s = sigma_terms(p, k, Sg);
  const double w = sym_part_min_eig(s.weight);
  if (!(w >= floor)) throw PositivityLoss("R_tilde + R_tilde^T", t, w);
  const Vec b_bar = p.b_bar.at(k);
  const Vec rho_t = p.B.at(k).transpose() * rho + p.F.at(k).transpose() * Sg * b_bar + Vec(p.r.at(k));
  return -(p.A.at(k).transpose() * rho - s.tilde * s.weight.partialPivLu().solve(rho_t) + Sg * Vec(p.b.at(k)) +
           p.D.at(k).transpose() * Sg * b_bar + Vec(p.q.at(k)));
}

}  // namespace detail

/// Backward solve of the symmetric Riccati equation from Pi_T = L_T.
inline std::vector<Mat> solve_pi(const ProblemSpec& p, const SolverOptions& opts = {}) {
  auto rhs = [&](int k, double t, const Mat& P) {
    return detail::symmetric_riccati_rhs(P, p.A.at(k), p.B.at(k), p.D.at(k), p.F.at(k), p.Q.at(k), p.S.at(k),
                                         p.R.at(k), t, opts.positivity_floor, "R + F^T Pi F");
  };
  auto guard = detail::divergence_guard(opts.divergence_bound, "Pi");
  auto post = [&](Mat& P, double t) {
    if (opts.symmetrize) P = linalg::sym(P);
    guard(P, t);
  };
  return detail::rk4_backward<Mat>(p.grid, linalg::sym(p.L_T), opts.substeps, rhs, post);
}

/// Backward solve of the (generally asymmetric) mean-field Riccati equation from (1 - a3) L_T.
inline std::vector<Mat> solve_sigma(const ProblemSpec& p, const SolverOptions& opts = {}) {
  auto rhs = [&](int k, double t, const Mat& Sg) { return detail::sigma_rhs(p, k, t, Sg, opts.positivity_floor); };
  return detail::rk4_backward<Mat>(p.grid, Mat((1.0 - p.weights.alpha3) * p.L_T), opts.substeps, rhs,
                                   detail::divergence_guard(opts.divergence_bound, "Sigma"));
}

/// Backward solve of the linear equation for rho from rho_T = l_T. Between nodes Sigma is
/// interpolated by cubic Hermite polynomials whose slopes come from the Sigma equation.
inline std::vector<Vec> solve_rho(const ProblemSpec& p, const std::vector<Mat>& Sigma, const SolverOptions& opts = {}) {
  if (Sigma.size() != static_cast<std::size_t>(p.grid.K) + 1) {
    throw DimensionError("solve_rho: Sigma path must have K+1 samples");
  }
  const double dt = p.grid.dt();
  auto sigma_at = [&](int k, double t) -> Mat {
    const double s = (t - p.grid.node(k)) / dt;
    if (s <= 1e-14) return Sigma[static_cast<std::size_t>(k)];
    if (s >= 1.0 - 1e-14) return Sigma[static_cast<std::size_t>(k) + 1];
    const Mat& S0 = Sigma[static_cast<std::size_t>(k)];
    const Mat& S1 = Sigma[static_cast<std::size_t>(k) + 1];
    const Mat d0 = detail::sigma_rhs(p, k, p.grid.node(k), S0, -INFINITY);
    const Mat d1 = detail::sigma_rhs(p, k, p.grid.node(k + 1), S1, -INFINITY);
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    return h00 * S0 + h10 * dt * d0 + h01 * S1 + h11 * dt * d1;
  };
  auto rhs = [&](int k, double t, const Vec& rho) {
    return detail::rho_rhs(p, k, t, sigma_at(k, t), rho, opts.positivity_floor);
  };
  auto guard = [&](Vec& rho, double t) {
    if (!rho.allFinite() || linalg::max_abs(rho) > opts.divergence_bound) {
      throw DivergenceError("rho diverged at t=" + std::to_string(t));
    }
  };
  return detail::rk4_backward<Vec>(p.grid, p.l_T, opts.substeps, rhs, guard);
}

/// Gain ingredients at every node from given Pi, Sigma, rho paths.
inline RiccatiSolution assemble_solution(const ProblemSpec& p, std::vector<Mat> Pi, std::vector<Mat> Sigma,
                                         std::vector<Vec> rho) {
  const std::size_t n_nodes = static_cast<std::size_t>(p.grid.K) + 1;
  if (Pi.size() != n_nodes || Sigma.size() != n_nodes || rho.size() != n_nodes) {
    throw DimensionError("assemble_solution: paths must have K+1 samples");
  }
  RiccatiSolution sol;
  sol.grid = p.grid;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const int k = static_cast<int>(i);
    const Mat& P = Pi[i];
    const Mat& F = p.F.at(k);
    sol.control_weight.push_back(p.R.at(k) + F.transpose() * P * F);
    sol.Pi_tilde.push_back(P * p.B.at(k) + p.D.at(k).transpose() * P * F + p.S.at(k));
    const auto s = detail::sigma_terms(p, k, Sigma[i]);
    sol.mean_control_weight.push_back(s.weight);
    sol.Sigma_tilde.push_back(s.tilde);
    sol.Sigma_bar.push_back(s.bar_t.transpose());
    sol.rho_tilde.push_back(p.B.at(k).transpose() * rho[i] + F.transpose() * Sigma[i] * Vec(p.b_bar.at(k)) +
                            Vec(p.r.at(k)));
  }
  sol.Pi = std::move(Pi);
  sol.Sigma = std::move(Sigma);
  sol.rho = std::move(rho);
  return sol;
}

/// Pi, Sigma and rho with gains. Throws PositivityLoss when either weight degenerates.
inline RiccatiSolution solve_riccati(const ProblemSpec& p, const SolverOptions& opts = {}) {
  auto Pi = solve_pi(p, opts);
  auto Sigma = solve_sigma(p, opts);
  auto rho = solve_rho(p, Sigma, opts);
  return assemble_solution(p, std::move(Pi), std::move(Sigma), std::move(rho));
}

struct CompensatorTransform {
  std::vector<Mat> Pi_P;  // solution of the shifted (definite) equation
  double max_diff = 0.0;  // max_k ||Pi_k - (Pi_P_k + P_k)||_inf
};

/// Solve the Riccati equation with the shifted weights (Q^P, S^P, R^P, L_T - P_T) and compare
/// Pi_P + P with Pi from solve_pi.
inline CompensatorTransform verify_via_compensator(const ProblemSpec& p, const CompensatorPath& comp,
                                                   const SolverOptions& opts = {},
                                                   const PositivityTolerance& tol = {}) {
  const auto rc = check_condition_rc(p, comp, tol);
  if (!rc.satisfied) throw PreconditionError("verify_via_compensator: " + rc.reason);
  auto rhs = [&](int k, double t, const Mat& X) {
    const Mat P = comp.value_at(t);
    const Mat Pdot = comp.derivative_at(t);
    const auto base = detail::relaxed_base(p, k, P, Pdot);
    return detail::symmetric_riccati_rhs(X, p.A.at(k), p.B.at(k), p.D.at(k), p.F.at(k), base.Q, base.S, base.R, t,
                                         opts.positivity_floor, "R^P + F^T Pi^P F");
  };
  auto guard = detail::divergence_guard(opts.divergence_bound, "Pi^P");
  auto post = [&](Mat& X, double t) {
    if (opts.symmetrize) X = linalg::sym(X);
    guard(X, t);
  };
  CompensatorTransform out;
  out.Pi_P = detail::rk4_backward<Mat>(p.grid, linalg::sym(p.L_T - comp.value(p.grid.K)), opts.substeps, rhs, post);
  const auto Pi = solve_pi(p, opts);
  for (std::size_t k = 0; k < Pi.size(); ++k) {
    out.max_diff = std::max(out.max_diff, linalg::max_abs(Pi[k] - (out.Pi_P[k] + comp.value(static_cast<int>(k)))));
  }
  return out;
}

/// One row per node: t followed by the row-major entries of each sample.
inline void write_path_csv(std::ostream& os, const GridSpec& grid, const std::string& name,
                           const std::vector<Mat>& path) {
  csv::Writer w(os);
  std::vector<std::string> cols{"t"};
  for (auto& c : csv::matrix_columns(name, path.front().rows(), path.front().cols())) cols.push_back(c);
  w.header(cols);
  for (std::size_t k = 0; k < path.size(); ++k) {
    std::vector<double> row{grid.node(static_cast<int>(k))};
    csv::append_row_major(row, path[k]);
    w.row(row);
  }
}

inline void write_path_csv(std::ostream& os, const GridSpec& grid, const std::string& name,
                           const std::vector<Vec>& path) {
  std::vector<Mat> as_mat(path.begin(), path.end());
  write_path_csv(os, grid, name, as_mat);
}

}  // namespace lqmfg

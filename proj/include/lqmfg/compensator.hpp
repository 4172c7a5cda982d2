#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lqmfg/model.hpp"
#include "lqmfg/types.hpp"

namespace lqmfg {

/// Floors used for "uniformly positive" and "nonnegative" checks.
struct PositivityTolerance {
  double floor = 1e-8;  // min eigenvalue required for >> 0
  double slack = 1e-9;  // allowed negative eigenvalue for >= 0
};

/// Symmetric matrix path P on the grid together with its time derivative.
///
/// Node values are always stored. Off-node values come from the analytic callables when
/// given, otherwise from cubic Hermite interpolation of the node values and derivatives.
class CompensatorPath {
 public:
  using Fn = std::function<Mat(double)>;

  /// Derivative by second-order central differences, one-sided at the endpoints.
  static CompensatorPath from_samples(const GridSpec& grid, std::vector<Mat> P) {
    if (P.size() != static_cast<std::size_t>(grid.K) + 1) {
      throw DimensionError("compensator needs K+1 samples");
    }
    const int K = grid.K;
    const double h = grid.dt();
    std::vector<Mat> Pdot(P.size());
    if (K == 1) {
      Pdot[0] = Pdot[1] = (P[1] - P[0]) / h;
    } else {
      Pdot[0] = (-3.0 * P[0] + 4.0 * P[1] - P[2]) / (2.0 * h);
      for (int k = 1; k < K; ++k) Pdot[k] = (P[k + 1] - P[k - 1]) / (2.0 * h);
      Pdot[K] = (3.0 * P[K] - 4.0 * P[K - 1] + P[K - 2]) / (2.0 * h);
    }
    return from_samples(grid, std::move(P), std::move(Pdot));
  }

  static CompensatorPath from_samples(const GridSpec& grid, std::vector<Mat> P, std::vector<Mat> Pdot) {
    if (P.size() != static_cast<std::size_t>(grid.K) + 1 || Pdot.size() != P.size()) {
      throw DimensionError("compensator needs K+1 samples of P and of its derivative");
    }
    CompensatorPath c;
    c.grid_ = grid;
    c.P_ = std::move(P);
    c.Pdot_ = std::move(Pdot);
    return c;
  }

  static CompensatorPath analytic(const GridSpec& grid, Fn P, Fn Pdot) {
    CompensatorPath c;
    c.grid_ = grid;
    for (int k = 0; k <= grid.K; ++k) {
      c.P_.push_back(P(grid.node(k)));
      c.Pdot_.push_back(Pdot(grid.node(k)));
    }
    c.P_fn_ = std::move(P);
    c.Pdot_fn_ = std::move(Pdot);
    return c;
  }

  static CompensatorPath constant(const GridSpec& grid, const Mat& P) {
    const Mat zero = Mat::Zero(P.rows(), P.cols());
    return analytic(grid, [P](double) { return P; }, [zero](double) { return zero; });
  }

  static CompensatorPath zero(const GridSpec& grid, int n) { return constant(grid, Mat::Zero(n, n)); }

  [[nodiscard]] const GridSpec& grid() const { return grid_; }
  [[nodiscard]] Eigen::Index dim() const { return P_.front().rows(); }
  [[nodiscard]] const Mat& value(int k) const { return P_[static_cast<std::size_t>(k)]; }
  [[nodiscard]] const Mat& derivative(int k) const { return Pdot_[static_cast<std::size_t>(k)]; }
  [[nodiscard]] bool has_analytic() const { return static_cast<bool>(P_fn_); }

  [[nodiscard]] Mat value_at(double t) const {
    if (P_fn_) return P_fn_(t);
    auto [k, s, h] = locate(t);
    if (s == 0.0) return P_[k];
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    return h00 * P_[k] + h10 * h * Pdot_[k] + h01 * P_[k + 1] + h11 * h * Pdot_[k + 1];
  }

  [[nodiscard]] Mat derivative_at(double t) const {
    if (Pdot_fn_) return Pdot_fn_(t);
    auto [k, s, h] = locate(t);
    if (s == 0.0) return Pdot_[k];
    const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
    const double d01 = -6 * s * s + 6 * s, d11 = 3 * s * s - 2 * s;
    return (d00 * P_[k] + d01 * P_[k + 1]) / h + d10 * Pdot_[k] + d11 * Pdot_[k + 1];
  }

  [[nodiscard]] bool is_symmetric(double tol = 0.0) const {
    for (const auto& P : P_)
      if (linalg::max_abs(P - P.transpose()) > tol) return false;
    return true;
  }

 private:
  struct Where {
    std::size_t k;
    double s;
    double h;
  };

  [[nodiscard]] Where locate(double t) const {
    const int k = node_index(grid_, t);
    const double h = grid_.dt();
    if (k == grid_.K) return {static_cast<std::size_t>(k), 0.0, h};
    double s = (t - grid_.node(k)) / h;
    if (std::abs(s) < 1e-12) s = 0.0;
    return {static_cast<std::size_t>(k), s, h};
  }

  GridSpec grid_;
  std::vector<Mat> P_, Pdot_;
  Fn P_fn_, Pdot_fn_;
};

/// Cost weights after shifting by a compensator P (limit form, coupling through x0, u0).
struct RelaxedQuadruple {
  Mat Q, S, R;  // Q^P, S^P, R^P
  Vec q, r;     // q^P, r^P
  double M = 0.0;
  Mat L_T;      // L_T - P_T
  Vec l_T;      // l_T - a3 L_T x0_T
  double m_T = 0.0;
};

/// Weights of the shifted N-agent cost, coupling through the empirical averages.
struct NAgentRelaxedTerms {
  Mat Q, S, R;                                          // as in RelaxedQuadruple
  Mat Q_tilde, Q_bar, Q_hat, S_tilde, R_tilde, r_bar, r_hat;
  Vec q_tilde, q_bar, r_tilde, q_hat;
  double M_tilde = 0.0;
};

namespace detail {

struct RelaxedBase {
  Mat Q, S, R;
};

inline RelaxedBase relaxed_base(const ProblemSpec& p, int k, const Mat& P, const Mat& Pdot) {
  const Mat& A = p.A.at(k);
  const Mat& B = p.B.at(k);
  const Mat& D = p.D.at(k);
  const Mat& F = p.F.at(k);
  RelaxedBase out;
  out.Q = p.Q.at(k) + Pdot + P * A + A.transpose() * P + D.transpose() * P * D;
  out.S = p.S.at(k) + P * B + D.transpose() * P * F;
  out.R = p.R.at(k) + F.transpose() * P * F;
  return out;
}

inline double noise_trace(const ProblemSpec& p, int k, const Mat& P) {
  const Mat& s = p.sigma.at(k);
  const Mat& sb = p.sigma_bar.at(k);
  return (s.transpose() * P * s).trace() + (sb.transpose() * P * sb).trace();
}

}  // namespace detail

/// Relaxed quadruple at grid node k. The terminal entries use P_T and treat x0 as x0_T.
inline RelaxedQuadruple assemble_relaxed_at(const ProblemSpec& p, const CompensatorPath& comp, int k, const Vec& x0,
                                            const Vec& u0) {
  const Mat& P = comp.value(k);
  const auto base = detail::relaxed_base(p, k, P, comp.derivative(k));
  const auto& w = p.weights;
  const Mat& A_bar = p.A_bar.at(k);
  const Mat& B_bar = p.B_bar.at(k);
  const Mat& D = p.D.at(k);
  const Mat& D_bar = p.D_bar.at(k);
  const Mat& F = p.F.at(k);
  const Mat& F_bar = p.F_bar.at(k);
  const Mat& Q = p.Q.at(k);
  const Mat& R = p.R.at(k);
  const Mat& S = p.S.at(k);
  const Vec b = p.b.at(k);
  const Vec b_bar = p.b_bar.at(k);
  const Vec q = p.q.at(k);
  const Vec r = p.r.at(k);

  RelaxedQuadruple out;
  out.Q = base.Q;
  out.S = base.S;
  out.R = base.R;
  out.q = q + P * b + D.transpose() * P * b_bar + (P * A_bar + D.transpose() * P * D_bar - w.alpha1 * Q) * x0 +
          (P * B_bar + D.transpose() * P * F_bar - w.beta2 * S) * u0;
  out.r = r + F.transpose() * P * b_bar + (F.transpose() * P * D_bar - w.alpha2 * S.transpose()) * x0 +
          (F.transpose() * P * F_bar - w.beta1 * R) * u0;
  const Vec Px0 = (w.alpha1 * w.alpha1 * Q + D_bar.transpose() * P * D_bar) * x0 +
                  2.0 * D_bar.transpose() * P * b_bar - 2.0 * w.alpha1 * q;
  const Vec Pu0 = (w.beta1 * w.beta1 * R + F_bar.transpose() * P * F_bar) * u0 +
                  2.0 * F_bar.transpose() * P * b_bar - 2.0 * w.beta1 * r;
  out.M = Px0.dot(x0) + Pu0.dot(u0) +
          2.0 * ((D_bar.transpose() * P * F_bar + w.alpha2 * w.beta2 * S) * u0).dot(x0) +
          b_bar.dot(P * b_bar) + detail::noise_trace(p, k, P);

  const Mat& P_T = comp.value(p.grid.K);
  out.L_T = p.L_T - P_T;
  out.l_T = p.l_T - w.alpha3 * p.L_T * x0;
  out.m_T = (w.alpha3 * w.alpha3 * p.L_T * x0 - 2.0 * w.alpha3 * p.l_T).dot(x0);
  return out;
}

/// Relaxed quadruple at time t, which must be a grid node.
inline RelaxedQuadruple assemble_relaxed(const ProblemSpec& p, const CompensatorPath& comp, double t, const Vec& x0,
                                         const Vec& u0) {
  const int k = node_index(p.grid, t);
  if (std::abs(p.grid.node(k) - t) > 1e-9 * std::max(1.0, p.grid.T)) {
    throw DomainError("assemble_relaxed: t is not a grid node");
  }
  return assemble_relaxed_at(p, comp, k, x0, u0);
}

inline NAgentRelaxedTerms assemble_nagent_terms(const ProblemSpec& p, const CompensatorPath& comp, int k) {
  const Mat& P = comp.value(k);
  const auto base = detail::relaxed_base(p, k, P, comp.derivative(k));
  const auto& w = p.weights;
  const Mat& A_bar = p.A_bar.at(k);
  const Mat& B_bar = p.B_bar.at(k);
  const Mat& D = p.D.at(k);
  const Mat& D_bar = p.D_bar.at(k);
  const Mat& F = p.F.at(k);
  const Mat& F_bar = p.F_bar.at(k);
  const Mat& Q = p.Q.at(k);
  const Mat& R = p.R.at(k);
  const Mat& S = p.S.at(k);
  const Vec b = p.b.at(k);
  const Vec b_bar = p.b_bar.at(k);
  const Vec q = p.q.at(k);
  const Vec r = p.r.at(k);

  NAgentRelaxedTerms t;
  t.Q = base.Q;
  t.S = base.S;
  t.R = base.R;
  t.Q_tilde = w.alpha1 * w.alpha1 * Q + D_bar.transpose() * P * D_bar;
  t.Q_bar = -w.alpha1 * Q + A_bar.transpose() * P + D_bar.transpose() * P * D;
  t.Q_hat = -w.beta2 * S.transpose() + B_bar.transpose() * P + F_bar.transpose() * P * D;
  t.S_tilde = D_bar.transpose() * P * F_bar + w.alpha2 * w.beta2 * S;
  t.R_tilde = w.beta1 * w.beta1 * R + F_bar.transpose() * P * F_bar;
  t.r_bar = -w.alpha2 * S + D_bar.transpose() * P * F;
  t.r_hat = F_bar.transpose() * P * F - w.beta1 * R;
  t.q_tilde = q + P * b + D.transpose() * P * b_bar;
  t.q_bar = -w.alpha1 * q + D_bar.transpose() * P * b_bar;
  t.r_tilde = r + F.transpose() * P * b_bar;
  t.q_hat = F_bar.transpose() * P * b_bar - w.beta1 * r;
  t.M_tilde = b_bar.dot(P * b_bar) + detail::noise_trace(p, k, P);
  return t;
}

/// Integrand of the shifted limit cost (before the factor 1/2).
inline double relaxed_running(const RelaxedQuadruple& w, const Vec& x, const Vec& u) {
  return (w.Q * x + 2.0 * w.q).dot(x) + 2.0 * (w.S * u).dot(x) + w.M + (w.R * u + 2.0 * w.r).dot(u);
}

inline double relaxed_terminal(const RelaxedQuadruple& w, const Vec& x) {
  return (w.L_T * x + 2.0 * w.l_T).dot(x) + w.m_T;
}

/// Integrand of the shifted N-agent cost (before the factor 1/2).
inline double nagent_relaxed_running(const NAgentRelaxedTerms& w, const Vec& x, const Vec& u, const Vec& xN,
                                     const Vec& uN) {
  return (w.Q * x + 2.0 * w.q_tilde + 2.0 * w.S * u).dot(x) + (w.R * u + 2.0 * w.r_tilde).dot(u) +
         (w.Q_tilde * xN).dot(xN) + 2.0 * (w.Q_bar * x + w.r_bar * u + w.q_bar).dot(xN) +
         (w.R_tilde * uN).dot(uN) + 2.0 * (w.Q_hat * x + w.r_hat * u + w.q_hat).dot(uN) + w.M_tilde +
         2.0 * (w.S_tilde * uN).dot(xN);
}

inline double nagent_relaxed_terminal(const ProblemSpec& p, const Mat& P_T, const Vec& x, const Vec& xN) {
  const double a3 = p.weights.alpha3;
  return ((p.L_T - P_T) * x + 2.0 * p.l_T).dot(x) - 2.0 * a3 * (p.L_T * x + p.l_T).dot(xN) +
         a3 * a3 * (p.L_T * xN).dot(xN);
}

/// R >= floor and Q - S R^{-1} S^T >= -tol.
inline bool schur_psd(const Mat& Q, const Mat& S, const Mat& R, double floor, double tol = 1e-9) {
  if (Q.rows() != Q.cols() || R.rows() != R.cols() || S.rows() != Q.rows() || S.cols() != R.rows()) {
    throw DimensionError("schur_psd: inconsistent shapes");
  }
  if (linalg::min_eig_sym(R) < floor) return false;
  const Mat complement = Q - S * R.ldlt().solve(S.transpose());
  return linalg::min_eig_sym(complement) >= -tol;
}

/// R >> 0, [[Q, S], [S^T, R]] >= 0 and L_T >= 0.
inline bool check_condition_pd(const Mat& Q, const Mat& S, const Mat& R, const Mat& L_T,
                               const PositivityTolerance& tol = {}) {
  if (linalg::min_eig_sym(R) < tol.floor) return false;
  const Eigen::Index n = Q.rows(), m = R.rows();
  Mat block(n + m, n + m);
  block << Q, S, S.transpose(), R;
  if (linalg::min_eig_sym(block) < -tol.slack) return false;
  return linalg::min_eig_sym(L_T) >= -tol.slack;
}

/// Condition (PD) for the original weights at every node.
inline bool check_condition_pd(const ProblemSpec& p, const PositivityTolerance& tol = {}) {
  for (int k = 0; k <= p.grid.K; ++k) {
    if (!check_condition_pd(p.Q.at(k), p.S.at(k), p.R.at(k), p.L_T, tol)) return false;
  }
  return true;
}

struct RcReport {
  bool satisfied = false;
  std::vector<double> lhs_min_eig;     // per node; -inf where R + F^T P F is below the floor
  std::vector<double> weight_min_eig;  // R + F^T P F, per node
  double terminal_slack = 0.0;         // min eigenvalue of L_T - P_T
  std::optional<int> failed_node;
  std::string reason;

  [[nodiscard]] nlohmann::json to_json() const {
    auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json lhs = nlohmann::json::array(), wts = nlohmann::json::array();
    for (double v : lhs_min_eig) lhs.push_back(finite_or_null(v));
    for (double v : weight_min_eig) wts.push_back(finite_or_null(v));
    nlohmann::json j{{"satisfied", satisfied},
                     {"terminal_slack", terminal_slack},
                     {"lhs_min_eig", lhs},
                     {"weight_min_eig", wts},
                     {"reason", reason}};
    j["failed_node"] = failed_node ? nlohmann::json(*failed_node) : nlohmann::json(nullptr);
    return j;
  }
};

/// Left-hand side of the compensator inequality at node k:
/// Pdot + PA + A^T P + D^T P D + Q - (S + PB + D^T P F)(R + F^T P F)^{-1}(...)^T.
inline Mat rc_lhs(const ProblemSpec& p, const CompensatorPath& comp, int k) {
  const auto base = detail::relaxed_base(p, k, comp.value(k), comp.derivative(k));
  return base.Q - base.S * base.R.ldlt().solve(base.S.transpose());
}

inline RcReport check_condition_rc(const ProblemSpec& p, const CompensatorPath& comp,
                                   const PositivityTolerance& tol = {}) {
  if (!comp.is_symmetric(1e-12)) throw PreconditionError("check_condition_rc: compensator is not symmetric");
  if (comp.grid().K != p.grid.K) throw DimensionError("check_condition_rc: compensator grid differs from problem grid");
  RcReport rep;
  rep.satisfied = true;
  const int K = p.grid.K;
  rep.lhs_min_eig.resize(static_cast<std::size_t>(K) + 1);
  rep.weight_min_eig.resize(static_cast<std::size_t>(K) + 1);
  auto fail = [&](int k, std::string why) {
    if (rep.satisfied) {
      rep.satisfied = false;
      rep.failed_node = k;
      rep.reason = std::move(why);
    }
  };
  for (int k = 0; k <= K; ++k) {
    const auto base = detail::relaxed_base(p, k, comp.value(k), comp.derivative(k));
    const double w = linalg::min_eig_sym(base.R);
    rep.weight_min_eig[static_cast<std::size_t>(k)] = w;
    if (w < tol.floor) {
      rep.lhs_min_eig[static_cast<std::size_t>(k)] = -std::numeric_limits<double>::infinity();
      fail(k, "R + F^T P F below floor at node " + std::to_string(k));
      continue;
    }
    const double lhs = linalg::min_eig_sym(base.Q - base.S * base.R.ldlt().solve(base.S.transpose()));
    rep.lhs_min_eig[static_cast<std::size_t>(k)] = lhs;
    if (lhs < -tol.slack) fail(k, "compensator inequality violated at node " + std::to_string(k));
  }
  rep.terminal_slack = linalg::min_eig_sym(p.L_T - comp.value(K));
  if (rep.terminal_slack < -tol.slack) fail(K, "P_T exceeds L_T");
  return rep;
}

}  // namespace lqmfg

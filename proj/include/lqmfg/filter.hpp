#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lqmfg/model.hpp"
#include "lqmfg/rng.hpp"
#include "lqmfg/types.hpp"

namespace lqmfg {

/// Conditional mean and covariance of one agent's state given its observations and theta.
struct FilterState {
  Vec xhat;
  Mat Pf;
};

/// Increments of one step. theta is the common observation at the start of the step.
struct ObservationIncrement {
  Vec dY;
  double dtheta = 0.0;
  double theta = 0.0;
  double dt = 0.0;
};

/// dW0 implied by the common observation over [t_k, t_k + dt).
inline double recover_dW0_at(const ProblemSpec& p, int k, double dtheta, double theta, double dt) {
  const double s = p.sigma_check.scalar_at(k);
  if (!(std::abs(s) >= p.sigma_check_floor)) throw DegeneracyError("sigma_check below floor");
  return (dtheta - (p.I.scalar_at(k) * theta + p.b_check.scalar_at(k)) * dt) / s;
}

inline double recover_dW0(double dtheta, double theta, double t, const ProblemSpec& p, double dt) {
  return recover_dW0_at(p, node_index(p.grid, t), dtheta, theta, dt);
}

inline double recover_dW0(double dtheta, double theta, double t, const ProblemSpec& p) {
  return recover_dW0(dtheta, theta, t, p, p.grid.dt());
}

/// (sigma_tilde sigma_tilde^T)^{-1} at node k.
inline Mat observation_precision(const ProblemSpec& p, int k) {
  const Mat& st = p.sigma_tilde.at(k);
  const Mat V = st * st.transpose();
  const double scale = std::max(1.0, linalg::max_abs(V));
  if (linalg::min_eig_sym(V) <= 1e-12 * scale) throw DegeneracyError("sigma_tilde sigma_tilde^T singular");
  return V.ldlt().solve(Mat::Identity(V.rows(), V.cols()));
}

/// Kalman gain (Pf G^T + sigma_bar sigma_tilde^T)(sigma_tilde sigma_tilde^T)^{-1}.
inline Mat filter_gain(const ProblemSpec& p, int k, const Mat& Pf, const Mat& precision) {
  return (Pf * p.G.at(k).transpose() + p.sigma_bar.at(k) * p.sigma_tilde.at(k).transpose()) * precision;
}

inline Mat filter_gain(const ProblemSpec& p, int k, const Mat& Pf) {
  return filter_gain(p, k, Pf, observation_precision(p, k));
}

/// Covariance step shared by all agents of one replication.
inline Mat covariance_step(const ProblemSpec& p, int k, const Mat& Pf, const Mat& gain, double dW0, double dt) {
  const Mat& A = p.A.at(k);
  const Mat& D = p.D.at(k);
  const Mat& s = p.sigma.at(k);
  const Mat& sb = p.sigma_bar.at(k);
  const Mat& st = p.sigma_tilde.at(k);
  Mat next = Pf + (A * Pf + Pf * A.transpose() + D * Pf * D.transpose() + s * s.transpose() + sb * sb.transpose() -
                   gain * (st * st.transpose()) * gain.transpose()) *
                      dt;
  if (dW0 != 0.0) next += (D * Pf + Pf * D.transpose()) * dW0;
  return linalg::project_psd(next);
}

/// Filter step for a batch of agents stored column-wise in Xhat (n x N) with controls U
/// (m x N) and observation increments dY (n x N). Pf is common to the batch.
inline void filter_step_batch(const ProblemSpec& p, int k, Mat& Xhat, Mat& Pf, const Mat& U, const Vec& x0,
                              const Vec& u0, const Mat& dY, double dW0, double dt, const Mat& precision) {
  const Mat gain = filter_gain(p, k, Pf, precision);
  const Vec drift_c = p.A_bar.at(k) * x0 + p.B_bar.at(k) * u0 + p.b.at(k);
  const Vec diff_c = p.D_bar.at(k) * x0 + p.F_bar.at(k) * u0 + p.b_bar.at(k);
  const Vec obs_c = p.G_bar.at(k) * x0 + p.H_bar.at(k) * u0 + p.b_tilde.at(k);
  Mat innovation = dY - (p.G.at(k) * Xhat + p.H.at(k) * U) * dt;
  innovation.colwise() -= obs_c * dt;
  Mat drift = p.A.at(k) * Xhat + p.B.at(k) * U;
  drift.colwise() += drift_c;
  Mat next = Xhat + drift * dt + gain * innovation;
  if (dW0 != 0.0) {
    Mat diff = p.D.at(k) * Xhat + p.F.at(k) * U;
    diff.colwise() += diff_c;
    next += diff * dW0;
  }
  Xhat = std::move(next);
  Pf = covariance_step(p, k, Pf, gain, dW0, dt);
}

/// One Euler step of the conditionally Gaussian filter for a single agent.
inline FilterState filter_step(const FilterState& state, const ObservationIncrement& inc, const Vec& u, const Vec& x0,
                               const Vec& u0, double t, const ProblemSpec& p) {
  const int k = node_index(p.grid, t);
  const double dW0 = recover_dW0_at(p, k, inc.dtheta, inc.theta, inc.dt);
  Mat X = state.xhat;
  Mat Pf = state.Pf;
  filter_step_batch(p, k, X, Pf, u, x0, u0, inc.dY, dW0, inc.dt, observation_precision(p, k));
  return {X.col(0), Pf};
}

/// Initial filter state for a known initial condition.
inline FilterState initial_filter_state(const ProblemSpec& p) {
  return {p.initial_state, Mat::Zero(p.dims.n, p.dims.n)};
}

struct FilterProbeOptions {
  double feedback = 0.5;  // u = -feedback * B^T xhat
  int noise_substeps = 1;
};

struct FilterProbeResult {
  double max_abs_error = 0.0;  // max over nodes and components of |xhat - particle mean|
  double max_z = 0.0;          // max of |xhat - particle mean| / SE; errors below 1e-9 relative are ignored
  std::vector<double> error;   // per node, max over components
  std::vector<double> se;      // per node, at the component attaining the error
  std::vector<Vec> xhat, particle_mean;
  std::vector<Mat> Pf;
  std::vector<double> ess;
};

namespace detail {

/// Symmetric square root of a PSD matrix.
inline Mat psd_sqrt(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(linalg::sym(M));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

/// Runs the filter on one simulated agent and a bootstrap particle filter on the same
/// observations, with x0 frozen at the initial state and u0 = 0. The particle filter is exact
/// for the Euler-discretized model: weights use the one-step likelihood of dY and the
/// observation noise in each particle's state step is drawn conditionally on dY.
inline FilterProbeResult filter_consistency_probe(const ProblemSpec& p, int n_particles, std::uint64_t seed,
                                                  const FilterProbeOptions& opts = {}) {
  if (n_particles < 1) throw std::invalid_argument("n_particles must be positive");
  const int n = p.dims.n, m = p.dims.m, d = p.dims.d, K = p.grid.K;
  const double dt = p.grid.dt();
  const Vec x0 = p.initial_state;
  const Vec u0 = Vec::Zero(m);

  NormalStream w_truth(seed, 0, 0, Channel::individual);
  NormalStream wb_truth(seed, 0, 0, Channel::observation);
  NormalStream w0(seed, 0, kSharedAgent, Channel::common);
  NormalStream cloud(seed, 0, 0, Channel::particle);

  FilterProbeResult out;
  Vec X = p.initial_state;
  Mat Xhat = p.initial_state;
  Mat Pf = Mat::Zero(n, n);
  Mat parts = p.initial_state.replicate(1, n_particles);
  Vec logw = Vec::Zero(n_particles);
  double theta = 0.0;

  auto record = [&](const Vec& weights, double ess) {
    const Vec mean = parts * weights;
    Vec var = Vec::Zero(n);
    for (int j = 0; j < n_particles; ++j) var += weights(j) * (parts.col(j) - mean).cwiseAbs2();
    double err = 0.0, se = 0.0;
    for (int c = 0; c < n; ++c) {
      const double e = std::abs(Xhat(c, 0) - mean(c));
      const double s = std::sqrt(var(c) / ess);
      if (e >= err) {
        err = e;
        se = s;
      }
      // Errors at rounding level count as agreement whatever the spread.
      if (e > 1e-9 * (1.0 + std::abs(mean(c)))) out.max_z = std::max(out.max_z, s > 0.0 ? e / s : INFINITY);
    }
    out.max_abs_error = std::max(out.max_abs_error, err);
    out.error.push_back(err);
    out.se.push_back(se);
    out.xhat.push_back(Xhat.col(0));
    out.particle_mean.push_back(mean);
    out.Pf.push_back(Pf);
    out.ess.push_back(ess);
  };
  record(Vec::Constant(n_particles, 1.0 / n_particles), n_particles);

  Vec dw(d), dwb(d);
  Mat Z(d, n_particles);
  for (int k = 0; k < K; ++k) {
    const Mat& A = p.A.at(k);
    const Mat& B = p.B.at(k);
    const Mat& D = p.D.at(k);
    const Mat& F = p.F.at(k);
    const Mat& G = p.G.at(k);
    const Mat& H = p.H.at(k);
    const Mat& s = p.sigma.at(k);
    const Mat& sb = p.sigma_bar.at(k);
    const Mat& st = p.sigma_tilde.at(k);
    const Mat precision = observation_precision(p, k);
    const Vec u = -opts.feedback * B.transpose() * Xhat.col(0);
    const Vec drift_c = p.A_bar.at(k) * x0 + p.B_bar.at(k) * u0 + p.b.at(k) + B * u;
    const Vec diff_c = p.D_bar.at(k) * x0 + p.F_bar.at(k) * u0 + p.b_bar.at(k) + F * u;
    const Vec obs_c = p.G_bar.at(k) * x0 + p.H_bar.at(k) * u0 + p.b_tilde.at(k) + H * u;

    // Truth and observations.
    w_truth.increment(dt, opts.noise_substeps, dw.data(), d);
    wb_truth.increment(dt, opts.noise_substeps, dwb.data(), d);
    const double dW0 = w0.increment(dt, opts.noise_substeps);
    const Vec dY = (G * X + obs_c) * dt + st * dwb;
    const double dtheta = (p.I.scalar_at(k) * theta + p.b_check.scalar_at(k)) * dt + p.sigma_check.scalar_at(k) * dW0;
    X += (A * X + drift_c) * dt + (D * X + diff_c) * dW0 + s * dw + sb * dwb;

    const double dW0_rec = recover_dW0_at(p, k, dtheta, theta, dt);
    theta += dtheta;

    // Particles: reweight on dY given the state at t_k, then propagate.
    Mat innov = -(G * parts) * dt;  // dY - mean_j
    innov.colwise() += dY - obs_c * dt;
    const Mat prec_dt = precision / dt;
    for (int j = 0; j < n_particles; ++j) logw(j) -= 0.5 * innov.col(j).dot(prec_dt * innov.col(j));
    const Mat cond_mean = st.transpose() * precision;  // E[dW_bar | dY] = cond_mean (dY - mean_j)
    const Mat cond_sqrt = detail::psd_sqrt((Mat::Identity(d, d) - st.transpose() * precision * st) * dt);
    const bool cond_noise = linalg::max_abs(cond_sqrt) > 0.0;

    Mat next = parts + ((A * parts).colwise() + drift_c) * dt + ((D * parts).colwise() + diff_c) * dW0;
    if (linalg::max_abs(s) > 0.0) {
      for (int j = 0; j < n_particles; ++j)
        for (int c = 0; c < d; ++c) Z(c, j) = cloud() * std::sqrt(dt);
      next += s * Z;
    }
    if (linalg::max_abs(sb) > 0.0) {
      Mat wbar = cond_mean * innov;
      if (cond_noise) {
        for (int j = 0; j < n_particles; ++j)
          for (int c = 0; c < d; ++c) Z(c, j) = cloud();
        wbar += cond_sqrt * Z;
      }
      next += sb * wbar;
    }
    parts = std::move(next);

    // Filter.
    Mat U = u;
    filter_step_batch(p, k, Xhat, Pf, U, x0, u0, dY, dW0_rec, dt, precision);

    // Normalize, record, resample.
    logw.array() -= logw.maxCoeff();
    Vec wts = logw.array().exp();
    wts /= wts.sum();
    const double ess = 1.0 / wts.squaredNorm();
    record(wts, ess);
    if (ess < 0.5 * n_particles) {
      Mat resampled(n, n_particles);
      const double step = 1.0 / n_particles;
      double u_off = cloud.uniform() * step;
      double cum = wts(0);
      int src = 0;
      for (int j = 0; j < n_particles; ++j) {
        const double target = u_off + j * step;
        while (cum < target && src < n_particles - 1) cum += wts(++src);
        resampled.col(j) = parts.col(src);
      }
      parts = std::move(resampled);
      logw.setZero();
    } else {
      logw = wts.array().log();
    }
  }
  return out;
}

}  // namespace lqmfg

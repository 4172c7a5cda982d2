#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace lqmfg {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Config text does not follow the schema.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A coefficient or argument has the wrong shape.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A time argument lies outside [0, T].
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A noise loading that must be invertible is not (sigma_check, sigma_tilde).
class DegeneracyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation was called outside its precondition.
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or exploding values during integration or simulation.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A uniform positivity requirement failed during a Riccati solve.
class PositivityLoss : public std::runtime_error {
 public:
  PositivityLoss(const std::string& what_matrix, double time, double eigenvalue)
      : std::runtime_error(what_matrix + " lost positivity at t=" + std::to_string(time) +
                           " (min eigenvalue " + std::to_string(eigenvalue) + ")"),
        time_(time),
        eigenvalue_(eigenvalue) {}

  [[nodiscard]] double time() const noexcept { return time_; }
  [[nodiscard]] double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  double time_;
  double eigenvalue_;
};

namespace linalg {

inline Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

/// Smallest eigenvalue of the symmetric part of M.
inline double min_eig_sym(const Mat& M) {
  if (M.size() == 0) return 0.0;
  if (M.rows() == 1) return M(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(sym(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Clip negative eigenvalues to zero when the smallest one is below -threshold.
inline Mat project_psd(const Mat& M, double threshold = 1e-12) {
  Mat S = sym(M);
  if (S.rows() == 1) return S(0, 0) < -threshold ? Mat::Zero(1, 1) : S;
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.eigenvalues().minCoeff() >= -threshold) return S;
  Vec lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

inline bool all_finite(const Mat& M) { return M.allFinite(); }

inline double max_abs(const Mat& M) { return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff(); }

}  // namespace linalg
}  // namespace lqmfg

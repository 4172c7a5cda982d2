#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lqmfg/compensator.hpp"
#include "test_support.hpp"

using namespace lqmfg;

namespace {

constexpr double kB = 0.09, kSigma = 0.25, kR = 0.06, kGamma = 0.6;
constexpr double kDecay = 2 * kR - kB * kB / (kSigma * kSigma);  // -0.0096

CompensatorPath portfolio_P(const GridSpec& g) {
  auto P = [](double t) { return Mat::Constant(1, 1, kGamma * std::exp(kDecay * (1.0 - t))); };
  auto Pdot = [](double t) { return Mat::Constant(1, 1, -kDecay * kGamma * std::exp(kDecay * (1.0 - t))); };
  return CompensatorPath::analytic(g, P, Pdot);
}

// Smallest eigenvalue of [[a, b], [b, c]] in closed form.
double min_eig_2x2(double a, double b, double c) {
  return 0.5 * (a + c) - std::sqrt(0.25 * (a - c) * (a - c) + b * b);
}

Mat random_matrix(std::mt19937_64& gen, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat M(r, c);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = nd(gen);
  return M;
}

Mat random_sym(std::mt19937_64& gen, int n, double scale = 1.0) {
  Mat M = random_matrix(gen, n, n, scale);
  return 0.5 * (M + M.transpose());
}

ProblemSpec random_instance(std::mt19937_64& gen, int n, int m, int d, int K) {
  ProblemSpec p = ProblemSpec::zero({n, m, d}, {1.0, K});
  p.A = CoefficientPath(random_matrix(gen, n, n, 0.5));
  p.A_bar = CoefficientPath(random_matrix(gen, n, n, 0.5));
  p.B = CoefficientPath(random_matrix(gen, n, m, 0.5));
  p.B_bar = CoefficientPath(random_matrix(gen, n, m, 0.5));
  p.D = CoefficientPath(random_matrix(gen, n, n, 0.3));
  p.D_bar = CoefficientPath(random_matrix(gen, n, n, 0.3));
  p.F = CoefficientPath(random_matrix(gen, n, m, 0.5));
  p.F_bar = CoefficientPath(random_matrix(gen, n, m, 0.3));
  p.b = CoefficientPath(random_matrix(gen, n, 1));
  p.b_bar = CoefficientPath(random_matrix(gen, n, 1));
  p.sigma = CoefficientPath(random_matrix(gen, n, d));
  p.sigma_bar = CoefficientPath(random_matrix(gen, n, d));
  p.Q = CoefficientPath(random_sym(gen, n));
  p.R = CoefficientPath(random_sym(gen, m));
  p.S = CoefficientPath(random_matrix(gen, n, m));
  p.q = CoefficientPath(random_matrix(gen, n, 1));
  p.r = CoefficientPath(random_matrix(gen, m, 1));
  p.L_T = random_sym(gen, n);
  p.l_T = random_matrix(gen, n, 1);
  std::uniform_real_distribution<double> ud(-1.0, 1.5);
  p.weights = {ud(gen), ud(gen), ud(gen), ud(gen), ud(gen)};
  return p;
}

// Original running integrand (before the factor 1/2) with coupling (xc, uc).
double running(const ProblemSpec& p, const Vec& x, const Vec& u, const Vec& xc, const Vec& uc) {
  const auto& w = p.weights;
  const Vec ex = x - w.alpha1 * xc;
  const Vec eu = u - w.beta1 * uc;
  return (p.Q.at(0) * ex + 2 * Vec(p.q.at(0))).dot(ex) + (p.R.at(0) * eu + 2 * Vec(p.r.at(0))).dot(eu) +
         2 * (p.S.at(0) * (u - w.beta2 * uc)).dot(x - w.alpha2 * xc);
}

// d<Px, x>/dt drift contribution for coupling (xc, uc).
double ito_drift(const ProblemSpec& p, const Mat& P, const Mat& Pdot, const Vec& x, const Vec& u, const Vec& xc,
                 const Vec& uc) {
  const Vec drift = p.A.at(0) * x + p.B.at(0) * u + p.A_bar.at(0) * xc + p.B_bar.at(0) * uc + Vec(p.b.at(0));
  const Vec diff0 = p.D.at(0) * x + p.F.at(0) * u + p.D_bar.at(0) * xc + p.F_bar.at(0) * uc + Vec(p.b_bar.at(0));
  const Mat& s = p.sigma.at(0);
  const Mat& sb = p.sigma_bar.at(0);
  return (Pdot * x).dot(x) + 2 * (P * x).dot(drift) + diff0.dot(P * diff0) + (s.transpose() * P * s).trace() +
         (sb.transpose() * P * sb).trace();
}

}  // namespace

TEST(SchurPsd, IdentityBlocks) {
  EXPECT_TRUE(schur_psd(Mat::Identity(2, 2), Mat::Zero(2, 1), Mat::Identity(1, 1), 1e-8));
}

TEST(SchurPsd, BoundaryComplementZero) {
  const Mat S = Mat::Constant(1, 1, 1.0);
  EXPECT_TRUE(schur_psd(S * S.transpose(), S, Mat::Identity(1, 1), 1e-8));
}

TEST(SchurPsd, NegativeComplement) {
  // Block [[0, 1], [1, 1]] has eigenvalue (1 - sqrt 5)/2 < 0.
  ASSERT_LT(min_eig_2x2(0.0, 1.0, 1.0), 0.0);
  EXPECT_FALSE(schur_psd(Mat::Zero(1, 1), Mat::Constant(1, 1, 1.0), Mat::Identity(1, 1), 1e-8));
}

TEST(SchurPsd, AgreesWithBlockEigenvaluesOnRandomInstances) {
  std::mt19937_64 gen(3);
  int compared = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int n = 1 + trial % 2, m = 1 + (trial / 2) % 2;
    Mat L = random_matrix(gen, n + m, n + m);
    Mat block = L * L.transpose() - 0.3 * Mat::Identity(n + m, n + m);
    const Mat Q = block.topLeftCorner(n, n), S = block.topRightCorner(n, m), R = block.bottomRightCorner(m, m);
    Eigen::SelfAdjointEigenSolver<Mat> es(block);
    const double block_min = es.eigenvalues().minCoeff();
    Eigen::SelfAdjointEigenSolver<Mat> er(R);
    const double r_min = er.eigenvalues().minCoeff();
    if (std::abs(block_min) < 1e-6 || std::abs(r_min - 1e-8) < 1e-6) continue;
    const bool expected = r_min >= 1e-8 && block_min >= 0.0;
    EXPECT_EQ(schur_psd(Q, S, R, 1e-8), expected) << "trial " << trial;
    ++compared;
  }
  EXPECT_GT(compared, 300);
}

TEST(AssembleRelaxed, ZeroCompensatorIsIdentity) {
  std::mt19937_64 gen(5);
  const ProblemSpec p = random_instance(gen, 2, 2, 1, 4);
  const auto comp = CompensatorPath::zero(p.grid, 2);
  const Vec x0 = random_matrix(gen, 2, 1), u0 = random_matrix(gen, 2, 1);
  const auto w = assemble_relaxed(p, comp, 0.5, x0, u0);
  EXPECT_EQ(w.Q, p.Q.at(2));
  EXPECT_EQ(w.S, p.S.at(2));
  EXPECT_EQ(w.R, p.R.at(2));
  EXPECT_EQ(w.L_T, p.L_T);
}

TEST(AssembleRelaxed, PortfolioClosedFormAtZero) {
  const ProblemSpec p = test::portfolio();
  const auto comp = portfolio_P(p.grid);
  const auto w = assemble_relaxed(p, comp, 0.0, Vec::Constant(1, 2.0), Vec::Constant(1, 1.2));
  const double P0 = kGamma * std::exp(-0.0096);
  EXPECT_NEAR(P0, 0.594268, 1e-6);
  EXPECT_NEAR(w.Q(0, 0), kB * kB / (kSigma * kSigma) * P0, 1e-12);
  EXPECT_NEAR(w.Q(0, 0), 0.077017, 1e-5);
  EXPECT_NEAR(w.S(0, 0), 0.053484, 1e-5);
  EXPECT_NEAR(w.R(0, 0), 0.037142, 1e-5);
}

TEST(AssembleRelaxed, PortfolioClosedFormSolvesRiccatiEquality) {
  const ProblemSpec p = test::portfolio();
  const auto comp = portfolio_P(p.grid);
  for (int k = 0; k <= p.grid.K; k += 50) {
    const auto w = assemble_relaxed_at(p, comp, k, Vec::Zero(1), Vec::Zero(1));
    EXPECT_NEAR(w.Q(0, 0) - w.S(0, 0) * w.S(0, 0) / w.R(0, 0), 0.0, 1e-12) << k;
  }
}

TEST(AssembleRelaxed, OffGridTimeIsRejected) {
  const ProblemSpec p = test::portfolio(10);
  EXPECT_THROW(assemble_relaxed(p, CompensatorPath::zero(p.grid, 1), 0.05, Vec::Zero(1), Vec::Zero(1)), DomainError);
}

TEST(AssembleRelaxed, EqualsRunningCostPlusItoDrift) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 2, m = 1 + (trial / 2) % 2, d = 1 + trial % 3;
    const ProblemSpec p = random_instance(gen, n, m, d, 1);
    const Mat P = random_sym(gen, n), Pdot = random_sym(gen, n);
    const auto comp = CompensatorPath::from_samples(p.grid, {P, P}, {Pdot, Pdot});
    const Vec x = random_matrix(gen, n, 1), u = random_matrix(gen, m, 1);
    const Vec x0 = random_matrix(gen, n, 1), u0 = random_matrix(gen, m, 1);
    const auto w = assemble_relaxed_at(p, comp, 0, x0, u0);
    const double expected = running(p, x, u, x0, u0) + ito_drift(p, P, Pdot, x, u, x0, u0);
    EXPECT_NEAR(relaxed_running(w, x, u), expected, 1e-10 * (1 + std::abs(expected))) << trial;

    const double a3 = p.weights.alpha3;
    const Vec e = x - a3 * x0;
    const double terminal = (p.L_T * e + 2 * p.l_T).dot(e) - (P * x).dot(x);
    EXPECT_NEAR(relaxed_terminal(w, x), terminal, 1e-10 * (1 + std::abs(terminal))) << trial;
  }
}

TEST(NAgentRelaxedTerms, EqualRunningCostPlusItoDrift) {
  std::mt19937_64 gen(19);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 2, m = 1 + (trial / 2) % 2, d = 1 + trial % 3;
    const ProblemSpec p = random_instance(gen, n, m, d, 1);
    const Mat P = random_sym(gen, n), Pdot = random_sym(gen, n);
    const auto comp = CompensatorPath::from_samples(p.grid, {P, P}, {Pdot, Pdot});
    const Vec x = random_matrix(gen, n, 1), u = random_matrix(gen, m, 1);
    const Vec xN = random_matrix(gen, n, 1), uN = random_matrix(gen, m, 1);
    const auto w = assemble_nagent_terms(p, comp, 0);
    const double expected = running(p, x, u, xN, uN) + ito_drift(p, P, Pdot, x, u, xN, uN);
    EXPECT_NEAR(nagent_relaxed_running(w, x, u, xN, uN), expected, 1e-10 * (1 + std::abs(expected))) << trial;

    const double a3 = p.weights.alpha3;
    const Vec e = x - a3 * xN;
    const double terminal = (p.L_T * e + 2 * p.l_T).dot(e) - (P * x).dot(x);
    EXPECT_NEAR(nagent_relaxed_terminal(p, P, x, xN), terminal, 1e-10 * (1 + std::abs(terminal))) << trial;
  }
}

TEST(NAgentRelaxedTerms, AggregateToLimitFormWhenCouplingIsTheLimit) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 30; ++trial) {
    const ProblemSpec p = random_instance(gen, 2, 2, 2, 1);
    const Mat P = random_sym(gen, 2), Pdot = random_sym(gen, 2);
    const auto comp = CompensatorPath::from_samples(p.grid, {P, P}, {Pdot, Pdot});
    const Vec x = random_matrix(gen, 2, 1), u = random_matrix(gen, 2, 1);
    const Vec x0 = random_matrix(gen, 2, 1), u0 = random_matrix(gen, 2, 1);
    const double limit = relaxed_running(assemble_relaxed_at(p, comp, 0, x0, u0), x, u);
    const double nagent = nagent_relaxed_running(assemble_nagent_terms(p, comp, 0), x, u, x0, u0);
    EXPECT_NEAR(limit, nagent, 1e-10 * (1 + std::abs(limit)));
  }
}

TEST(ConditionPd, Examples) {
  const Mat I2 = Mat::Identity(2, 2);
  EXPECT_TRUE(check_condition_pd(I2, Mat::Zero(2, 2), I2, I2));
  EXPECT_FALSE(check_condition_pd(test::portfolio(10)));
  EXPECT_FALSE(check_condition_pd(-I2, Mat::Zero(2, 2), I2, I2));
}

TEST(ConditionRc, PortfolioClosedFormSatisfiedWithZeroLhs) {
  const ProblemSpec p = test::portfolio();
  const RcReport rep = check_condition_rc(p, portfolio_P(p.grid));
  EXPECT_TRUE(rep.satisfied) << rep.reason;
  // The general inequality holds with equality: P solves the Riccati equation itself.
  for (double v : rep.lhs_min_eig) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_NEAR(rep.terminal_slack, 0.0, 1e-15);
  for (std::size_t k = 0; k < rep.weight_min_eig.size(); ++k) EXPECT_GT(rep.weight_min_eig[k], 0.0);
}

TEST(ConditionRc, ConstantCompensatorFails) {
  const ProblemSpec p = test::portfolio();
  const RcReport rep = check_condition_rc(p, CompensatorPath::constant(p.grid, Mat::Constant(1, 1, 0.6)));
  EXPECT_FALSE(rep.satisfied);
  // 2 r P - (P B)^2 / (sigma^2 P) = 0.6 (0.12 - 0.1296)
  const double expected = 0.6 * (2 * kR - kB * kB / (kSigma * kSigma));
  EXPECT_NEAR(expected, -0.00576, 1e-12);
  for (double v : rep.lhs_min_eig) EXPECT_NEAR(v, -0.00576, 1e-9);
  ASSERT_TRUE(rep.failed_node.has_value());
}

TEST(ConditionRc, ZeroCompensatorOnPortfolioFailsWeight) {
  const ProblemSpec p = test::portfolio(20);
  const RcReport rep = check_condition_rc(p, CompensatorPath::zero(p.grid, 1));
  EXPECT_FALSE(rep.satisfied);
  EXPECT_EQ(rep.failed_node.value(), 0);
  EXPECT_TRUE(std::isinf(rep.lhs_min_eig.front()));
}

TEST(ConditionRc, PdInstanceWithZeroCompensator) {
  ProblemSpec p = test::load_config("coupled_2d.json");
  EXPECT_TRUE(check_condition_pd(p));
  EXPECT_TRUE(check_condition_rc(p, CompensatorPath::zero(p.grid, 2)).satisfied);
}

TEST(ConditionRc, EquivalentToPdOfRelaxedQuadruple) {
  std::mt19937_64 gen(29);
  int compared = 0, satisfied = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + trial % 2, m = 1 + (trial / 2) % 2;
    ProblemSpec p = random_instance(gen, n, m, 1, 3);
    Mat Rpd = random_matrix(gen, m, m);
    p.R = CoefficientPath(Mat(Rpd * Rpd.transpose() * 0.5 - 0.2 * Mat::Identity(m, m)));
    const Mat P = random_sym(gen, n, 0.7);
    const Mat Pdot = random_sym(gen, n, 0.7);
    p.L_T = P + random_sym(gen, n, 0.3) + 0.3 * Mat::Identity(n, n);
    const auto comp = CompensatorPath::from_samples(p.grid, std::vector<Mat>(4, P), std::vector<Mat>(4, Pdot));
    const PositivityTolerance tol;
    bool near_boundary = false;
    bool pd_all = true;
    for (int k = 0; k <= 3; ++k) {
      const auto w = assemble_relaxed_at(p, comp, k, Vec::Zero(n), Vec::Zero(m));
      Mat block(n + m, n + m);
      block << w.Q, w.S, w.S.transpose(), w.R;
      Eigen::SelfAdjointEigenSolver<Mat> eb(block), er(w.R), el(w.L_T);
      for (double v : {eb.eigenvalues().minCoeff(), er.eigenvalues().minCoeff() - tol.floor,
                       el.eigenvalues().minCoeff()}) {
        near_boundary = near_boundary || std::abs(v) < 1e-6;
      }
      // Schur complement may sit near zero while the block eigenvalue does not.
      if (er.eigenvalues().minCoeff() > tol.floor) {
        Eigen::SelfAdjointEigenSolver<Mat> ec(Mat(w.Q - w.S * w.R.inverse() * w.S.transpose()));
        near_boundary = near_boundary || std::abs(ec.eigenvalues().minCoeff()) < 1e-6;
      }
      pd_all = pd_all && check_condition_pd(w.Q, w.S, w.R, w.L_T, tol);
    }
    if (near_boundary) continue;
    const bool rc = check_condition_rc(p, comp, tol).satisfied;
    EXPECT_EQ(rc, pd_all) << "trial " << trial;
    ++compared;
    satisfied += rc;
  }
  EXPECT_GT(compared, 200);
  EXPECT_GT(satisfied, 5);
}

TEST(ConditionRc, MonotoneInTolerance) {
  std::mt19937_64 gen(31);
  for (int trial = 0; trial < 100; ++trial) {
    ProblemSpec p = random_instance(gen, 1, 1, 1, 3);
    p.R = CoefficientPath(Mat::Constant(1, 1, std::abs(p.R.scalar_at(0))));
    const Mat P = random_sym(gen, 1, 0.3);
    const auto comp = CompensatorPath::constant(p.grid, P);
    bool prev = false;
    for (double scale : {1e-9, 1e-6, 1e-3, 1e-1, 1.0, 10.0}) {
      const bool now = check_condition_rc(p, comp, {1e-8 / scale, 1e-9 * scale * 1e6}).satisfied;
      EXPECT_TRUE(!prev || now) << "loosening flipped the result, trial " << trial;
      prev = now;
    }
  }
}

TEST(ConditionRc, ReportSerializes) {
  const ProblemSpec p = test::portfolio(4);
  const auto j = check_condition_rc(p, portfolio_P(p.grid)).to_json();
  EXPECT_EQ(j.at("lhs_min_eig").size(), 5u);
  EXPECT_EQ(j.at("weight_min_eig").size(), 5u);
  EXPECT_TRUE(j.at("satisfied").get<bool>());
}

TEST(CompensatorPath, CentralDifferencesAreSecondOrder) {
  auto err = [](int K) {
    const GridSpec g{1.0, K};
    std::vector<Mat> P;
    for (int k = 0; k <= K; ++k) P.push_back(Mat::Constant(1, 1, std::sin(3 * g.node(k))));
    const auto c = CompensatorPath::from_samples(g, P);
    double e = 0;
    for (int k = 0; k <= K; ++k) e = std::max(e, std::abs(c.derivative(k)(0, 0) - 3 * std::cos(3 * g.node(k))));
    return e;
  };
  EXPECT_GT(err(20) / err(40), 3.5);
}

TEST(CompensatorPath, HermiteInterpolationMatchesSmoothPath) {
  const GridSpec g{1.0, 50};
  std::vector<Mat> P, Pd;
  for (int k = 0; k <= 50; ++k) {
    P.push_back(Mat::Constant(1, 1, std::exp(-g.node(k))));
    Pd.push_back(Mat::Constant(1, 1, -std::exp(-g.node(k))));
  }
  const auto c = CompensatorPath::from_samples(g, P, Pd);
  for (double t : {0.013, 0.5101, 0.999}) {
    EXPECT_NEAR(c.value_at(t)(0, 0), std::exp(-t), 1e-9);
    EXPECT_NEAR(c.derivative_at(t)(0, 0), -std::exp(-t), 1e-6);
  }
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aggwass/gaussian.hpp"
#include "aggwass/rng.hpp"

using namespace aggwass;

namespace {

Eigen::MatrixXd random_psd(Eigen::Index d, Rng& rng, bool singular = false) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = standard_normal(rng);
  if (singular) a.col(0).setZero();
  return a * a.transpose();
}

Gaussian random_gaussian(Eigen::Index d, Rng& rng, bool singular = false) {
  return Gaussian(standard_normal_vector(d, rng), random_psd(d, rng, singular));
}

Gaussian g1(double mu, double var) {
  return Gaussian(Eigen::VectorXd::Constant(1, mu), Eigen::MatrixXd::Constant(1, 1, var));
}

}  // namespace

TEST(SqrtmPsd, Examples) {
  EXPECT_TRUE(sqrtm_psd(Eigen::Matrix2d::Identity()).isApprox(Eigen::MatrixXd::Identity(2, 2)));
  Eigen::Matrix2d d = Eigen::Vector2d(4, 9).asDiagonal();
  Eigen::Matrix2d expect = Eigen::Vector2d(2, 3).asDiagonal();
  EXPECT_NEAR((sqrtm_psd(d) - expect).norm(), 0.0, 1e-12);
  Eigen::Matrix2d a;
  a << 2, 1, 1, 2;
  const Eigen::MatrixXd b = sqrtm_psd(a);
  EXPECT_NEAR((b * b - a).norm(), 0.0, 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
  EXPECT_NEAR(es.eigenvalues()(0), 1.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues()(1), std::sqrt(3.0), 1e-12);
}

TEST(SqrtmPsd, RoundTripOnRandomRoots) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const Eigen::MatrixXd b = random_psd(1 + t % 4, rng, t % 5 == 0);
    EXPECT_LT((sqrtm_psd(b * b) - b).norm(), 1e-7);
  }
}

TEST(SqrtmPsd, RejectsNonSymmetric) {
  Eigen::Matrix2d a;
  a << 1, 0.5, 0, 1;
  EXPECT_THROW(sqrtm_psd(a), InvalidInput);
}

TEST(Gaussian, Invariants) {
  EXPECT_THROW(Gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix3d::Identity()), InvalidInput);
  Eigen::Matrix2d neg;
  neg << 1, 0, 0, -0.1;
  EXPECT_THROW(Gaussian(Eigen::Vector2d::Zero(), neg), InvalidInput);
  Eigen::Matrix2d tiny;
  tiny << 1, 0, 0, -1e-10;
  const Gaussian g(Eigen::Vector2d::Zero(), tiny);
  EXPECT_EQ(g.eigenvalues().minCoeff(), 0.0);
  EXPECT_TRUE(g.degenerate());
  EXPECT_THROW(Gaussian(Eigen::VectorXd(0), Eigen::MatrixXd(0, 0)), InvalidInput);
}

TEST(W2Gaussian, Examples) {
  const Gaussian a(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
  EXPECT_NEAR(w2_gaussian(a, a), 0.0, 1e-12);
  const Gaussian b(Eigen::Vector2d(3, 3), Eigen::Matrix2d::Identity());
  EXPECT_NEAR(w2_gaussian(a, b), std::sqrt(18.0), 1e-8);
  EXPECT_NEAR(w2_gaussian(g1(0, 1), g1(0, 4)), 1.0, 1e-8);
  const Gaussian c(Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0).asDiagonal().toDenseMatrix());
  EXPECT_NEAR(w2_gaussian(c, a), 1.0, 1e-8);
  EXPECT_THROW(w2_gaussian(a, g1(0, 1)), InvalidInput);
}

TEST(W2Gaussian, MetricProperties) {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const Eigen::Index d = 1 + t % 3;
    const Gaussian a = random_gaussian(d, rng, t % 7 == 0);
    const Gaussian b = random_gaussian(d, rng);
    const Gaussian c = random_gaussian(d, rng, t % 11 == 0);
    EXPECT_NEAR(w2_gaussian(a, b), w2_gaussian(b, a), 1e-10);
    EXPECT_NEAR(w2_gaussian(a, a), 0.0, 1e-12);
    EXPECT_LE(w2_gaussian(a, c), w2_gaussian(a, b) + w2_gaussian(b, c) + 1e-8);
    const Gaussian a2(b.mean(), a.cov());
    EXPECT_NEAR(w2_gaussian(a, a2), (a.mean() - b.mean()).norm(), 1e-8);
  }
}

TEST(W2Gaussian, MatchesSortedSampleTransportIn1d) {
  Rng rng(3);
  const Gaussian a = g1(0.5, 2.0), b = g1(-1.0, 0.3);
  const Eigen::Index n = 5000;
  Eigen::VectorXd x = sample(a, n, rng).col(0), y = sample(b, n, rng).col(0);
  std::sort(x.data(), x.data() + n);
  std::sort(y.data(), y.data() + n);
  const double emp = std::sqrt((x - y).squaredNorm() / static_cast<double>(n));
  EXPECT_NEAR(emp, w2_gaussian(a, b), 0.05);
}

TEST(LogPdf, Examples) {
  EXPECT_NEAR(log_pdf(g1(0, 1), Eigen::VectorXd::Zero(1)), -0.918938533, 1e-9);
  const Gaussian a(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
  EXPECT_NEAR(log_pdf(a, Eigen::Vector2d::Zero()), -1.837877066, 1e-9);
  EXPECT_NEAR(log_pdf(g1(1, 4), Eigen::VectorXd::Constant(1, 3.0)), -2.112085713, 1e-9);
  const Gaussian s(Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0).asDiagonal().toDenseMatrix());
  EXPECT_THROW(log_pdf(s, Eigen::Vector2d::Zero()), DegenerateDensity);
  EXPECT_THROW(log_pdf(a, Eigen::VectorXd::Zero(3)), InvalidInput);
}

TEST(Sample, Examples) {
  Rng rng(1);
  const Eigen::MatrixXd x = sample(g1(0, 1), 100000, rng);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (x.rows() - 1);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);

  const Gaussian point(Eigen::Vector2d(5, 5), Eigen::Matrix2d::Zero());
  const Eigen::MatrixXd p = sample(point, 7, rng);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_EQ(p.row(i), Eigen::RowVector2d(5, 5));

  Rng r1(9), r2(9);
  EXPECT_EQ(sample(g1(0, 1), 10, r1), sample(g1(0, 1), 10, r2));
}

TEST(KlGaussian, Examples) {
  EXPECT_NEAR(kl_gaussian(g1(0, 1), g1(0, 1)), 0.0, 1e-12);
  EXPECT_NEAR(kl_gaussian(g1(0, 1), g1(1, 1)), 0.5, 1e-12);
  const Gaussian a(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
  const Gaussian s(Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0).asDiagonal().toDenseMatrix());
  EXPECT_THROW(kl_gaussian(a, s), DegenerateDensity);
  // KL(N(0,1) || N(0,4)) = 0.5 (1/4 + log 4 - 1)
  EXPECT_NEAR(kl_gaussian(g1(0, 1), g1(0, 4)), 0.5 * (0.25 + std::log(4.0) - 1.0), 1e-12);
}

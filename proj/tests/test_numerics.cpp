#include <gtest/gtest.h>

#include "icon/numerics.hpp"
#include "oracles.hpp"

using namespace icon;

TEST(FiniteDiff, IdentityGivesIdentity) {
  const VectorMap f = [](const Vector& x) { return x; };
  const Matrix j = finite_diff_jacobian(f, Vector::Constant(2, 0.7));
  EXPECT_LT((j - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FiniteDiff, LinearMapIsExact) {
  Matrix a(2, 2);
  a << 2, 0, 0, 3;
  const VectorMap f = [&](const Vector& x) { return Vector(a * x); };
  Vector x(2);
  x << -1.5, 4.0;
  EXPECT_LT((finite_diff_jacobian(f, x) - a).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FiniteDiff, RandomLinearMapToMachineScale) {
  RngStream rng(3, 0);
  const Matrix a = rng.normal_matrix(5, 4);
  const VectorMap f = [&](const Vector& x) { return Vector(a * x); };
  const Vector x = rng.normal_matrix(4, 1).col(0);
  EXPECT_LT((finite_diff_jacobian(f, x) - a).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FiniteDiff, NonFiniteOutputThrows) {
  const VectorMap f = [](const Vector& x) { return Vector(x.array().log()); };
  EXPECT_THROW(finite_diff_jacobian(f, Vector::Zero(2)), NumericDomainError);
}

TEST(FiniteDiff, DefaultStepScalesWithInfNorm) {
  Vector x(3);
  x << 0.1, -20.0, 3.0;
  EXPECT_DOUBLE_EQ(default_fd_step(x), 1e-4 * 20.0);
  EXPECT_DOUBLE_EQ(default_fd_step(Vector::Constant(3, 0.5)), 1e-4);
}

TEST(SpectralNorm, TrivialCases) {
  EXPECT_NEAR(spectral_norm(Matrix::Identity(3, 3)), 1.0, 1e-12);
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 1;
  EXPECT_NEAR(spectral_norm(d), 3.0, 1e-10);
  EXPECT_EQ(spectral_norm(Matrix::Zero(4, 3)), 0.0);
}

TEST(SpectralNorm, MatchesJacobiSvdOracle) {
  RngStream rng(11, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix m = rng.normal_matrix(8, 8);
    const double oracle = oracle::jacobi_singular_values(m).front();
    EXPECT_NEAR(spectral_norm(m) / oracle, 1.0, 1e-8);
    EXPECT_LE(spectral_norm(m), m.norm() * (1.0 + 1e-12));
  }
}

TEST(Rmse, AnalyticCases) {
  Matrix a = Matrix::Zero(1, 2), b(1, 2);
  b << 3, 4;
  EXPECT_NEAR(rmse(a, b), std::sqrt(12.5), 1e-12);
  EXPECT_EQ(rmse(b, b), 0.0);
}

TEST(Rmse, MatchesNaiveLoop) {
  RngStream rng(5, 0);
  const Matrix a = rng.normal_matrix(37, 6), b = rng.normal_matrix(37, 6);
  EXPECT_NEAR(rmse(a, b), oracle::naive_rmse(a, b), 1e-12);
}

TEST(Rmse, ShapeMismatchThrows) {
  EXPECT_THROW(rmse(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), ContractError);
}

TEST(Pearson, Cases) {
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << 1, 2, 4;
  EXPECT_NEAR(pearson(a, a), 1.0, 1e-12);
  EXPECT_NEAR(pearson(a, Vector(-a)), -1.0, 1e-12);
  EXPECT_NEAR(pearson(a, b), 0.98198, 1e-5);
  EXPECT_THROW(pearson(a, Vector::Ones(3)), NumericDomainError);
  EXPECT_THROW(pearson(Vector::Ones(1), Vector::Ones(1)), ContractError);
}

TEST(Pca, TwoDimensionalInputIsIsometry) {
  RngStream rng(7, 0);
  const Matrix p = rng.normal_matrix(50, 2);
  const Matrix q = pca_project(p, 2);
  const Matrix c = p.rowwise() - p.colwise().mean();
  for (int i = 0; i < 50; ++i)
    for (int j = i + 1; j < 50; ++j)
      EXPECT_NEAR((q.row(i) - q.row(j)).norm(), (c.row(i) - c.row(j)).norm(), 1e-10);
}

TEST(Pca, CollinearCloudHasZeroSecondComponent) {
  RngStream rng(8, 0);
  Matrix p(40, 3);
  for (int i = 0; i < 40; ++i) {
    const double s = rng.normal();
    p.row(i) << 1 + s, 2 - 2 * s, 0.5 * s;
  }
  EXPECT_LT(pca_project(p, 2).col(1).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pca, ReconstructionErrorEqualsDiscardedEigenvalues) {
  RngStream rng(9, 0);
  Matrix p = rng.normal_matrix(200, 5);
  p.col(0) *= 3.0;
  p.col(1) *= 2.0;
  const Matrix c = p.rowwise() - p.colwise().mean();
  const Matrix q = pca_project(p, 2);
  // Scores are orthogonal projections, so the residual energy is |c|^2 - |q|^2.
  const double n = static_cast<double>(p.rows());
  const double err = (c.squaredNorm() - q.squaredNorm()) / n;
  const auto sv = oracle::jacobi_singular_values(c / std::sqrt(n));
  double discarded = 0.0;
  for (std::size_t i = 2; i < sv.size(); ++i) discarded += sv[i] * sv[i];
  EXPECT_NEAR(err / discarded, 1.0, 1e-8);
}

TEST(Pca, AxisSignConvention) {
  RngStream rng(10, 0);
  Matrix p = rng.normal_matrix(30, 3);
  const Matrix q1 = pca_project(p, 2);
  const Matrix q2 = pca_project(-p, 2);
  // Negating the cloud leaves the sign-fixed axes unchanged, so scores flip.
  EXPECT_LT((q1 + q2).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Rng, ReproducibleAndStreamSeparated) {
  RngStream a(42, Stream::kLatents), b(42, Stream::kLatents), c(42, Stream::kMixer);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, NormalMoments) {
  RngStream rng(1, 0);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  RngStream rng(2, 0);
  auto s = rng.sample_without_replacement(100, 40);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::unique(s.begin(), s.end()), s.end());
  EXPECT_EQ(s.size(), 40u);
  EXPECT_LT(s.back(), 100u);
}

TEST(Rng, SplitIsDeterministic) {
  RngStream a(5, 1), b(5, 1);
  RngStream ca = a.split(3), cb = b.split(3), cc = a.split(4);
  EXPECT_EQ(ca.next_u64(), cb.next_u64());
  EXPECT_NE(cb.next_u64(), cc.next_u64());
}

TEST(TanhArray, MatchesStdTanh) {
  Eigen::ArrayXXd x(1, 7);
  x << -800, -20, -1, 0, 1e-8, 0.5, 800;
  const Eigen::ArrayXXd y = tanh_array(x);
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(y(0, i), std::tanh(x(0, i)), 1e-15);
}

TEST(RequireFinite, RejectsNan) {
  Matrix m = Matrix::Zero(2, 2);
  m(1, 1) = std::nan("");
  EXPECT_THROW(require_finite(m, "m"), NumericDomainError);
}

#include <gtest/gtest.h>

#include "pil/error.hpp"
#include "pil/numkit.hpp"

using namespace pil;

TEST(RngStream, SameSeedSameSequence)
{
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i)
    ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, SubstreamIgnoresParentConsumption)
{
  RngStream a(7);
  const RngStream fresh = a.substream(3);
  for (int i = 0; i < 50; ++i)
    a.normal();
  RngStream later = a.substream(3);
  RngStream first = fresh;
  for (int i = 0; i < 20; ++i)
    ASSERT_EQ(first.next_u64(), later.next_u64());
}

TEST(RngStream, DistinctKeysDiffer)
{
  const RngStream root(1);
  EXPECT_NE(root.substream(1).seed(), root.substream(2).seed());
  EXPECT_NE(root.substream(1).seed(), root.seed());
}

TEST(RngStream, IndexStaysInRange)
{
  RngStream r(5);
  for (int i = 0; i < 1000; ++i)
    ASSERT_LT(r.index(7), 7u);
}

TEST(NoiseModel, GaussianSampleCovarianceMatches)
{
  Mat cov(2, 2);
  cov << 0.5, 0.2, 0.2, 0.3;
  const NoiseModel nm = NoiseModel::gaussian(cov);
  RngStream r(11);
  const int N = 200000;
  const Mat S = nm.sample(N, r);
  const Mat emp = S * S.transpose() / N;
  // Standard error of each entry is about sqrt(2/N) * 0.5 ~ 1.6e-3.
  EXPECT_LT((emp - cov).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT(S.rowwise().mean().cwiseAbs().maxCoeff(), 1e-2);
}

TEST(NoiseModel, UniformStaysInBoundsWithKnownMoment)
{
  Vec b(3);
  b << 0.1, 1.0, 2.0;
  const NoiseModel nm = NoiseModel::uniform(b);
  RngStream r(3);
  const Mat S = nm.sample(100000, r);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LE(S.row(i).cwiseAbs().maxCoeff(), b[i]);
    const double var = S.row(i).squaredNorm() / S.cols();
    EXPECT_NEAR(var, b[i] * b[i] / 3.0, 0.02 * b[i] * b[i]);
  }
  EXPECT_NEAR(nm.second_moment()(2, 2), 4.0 / 3.0, 1e-15);
}

TEST(NoiseModel, NoneIsZeroAndRejectsBadInputs)
{
  RngStream r(0);
  EXPECT_TRUE(NoiseModel::none(3).sample(4, r).isZero(0.0));
  Mat bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(NoiseModel::gaussian(bad), Error);
  EXPECT_THROW(NoiseModel::uniform(Vec::Constant(2, -1.0)), Error);
}

TEST(Linalg, SolveLinearMatchesKnownSolution)
{
  Mat A(3, 3);
  A << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  Mat X(3, 2);
  X << 1, -1, 2, 0.5, -3, 4;
  EXPECT_LT((solve_linear(A, A * X) - X).norm(), 1e-12);
  EXPECT_LT((solve_right(X.transpose() * A, A) - X.transpose()).norm(), 1e-12);
}

TEST(Linalg, SingularSystemIsNumericalError)
{
  Mat A(2, 2);
  A << 1, 2, 2, 4;
  try {
    solve_linear(A, Mat::Identity(2, 2));
    FAIL() << "expected NumericalError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
  }
}

TEST(Linalg, SpectralQuantitiesAgainstHandValues)
{
  Mat D = Mat::Zero(3, 3);
  D.diagonal() << 3.0, -5.0, 1.0;
  EXPECT_NEAR(spectral_norm(D), 5.0, 1e-10);
  EXPECT_NEAR(spectral_radius(D), 5.0, 1e-10);

  Mat R(2, 2);  // rotation by 90 degrees scaled by 0.5: eigenvalues +-0.5i
  R << 0.0, -0.5, 0.5, 0.0;
  EXPECT_NEAR(spectral_radius(R), 0.5, 1e-12);

  Mat J(2, 2);  // Jordan block: radius 0.9, norm > 0.9
  J << 0.9, 1.0, 0.0, 0.9;
  EXPECT_NEAR(spectral_radius(J), 0.9, 1e-12);
  const double expect = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * 0.81));  // singular values of [[a,1],[0,a]]
  EXPECT_NEAR(spectral_norm(J), expect, 1e-9);

  Mat S(2, 2);
  S << 2, 1, 1, 2;
  EXPECT_NEAR(min_eigenvalue_sym(S), 1.0, 1e-12);
  EXPECT_TRUE(is_psd(S));
  S(0, 0) = 0.0;
  EXPECT_FALSE(is_psd(S));
}

TEST(Linalg, FinitenessAndShapes)
{
  Mat M = Mat::Ones(2, 3);
  EXPECT_TRUE(is_finite(M));
  M(1, 2) = std::nan("");
  EXPECT_FALSE(is_finite(M));
  EXPECT_EQ(describe_shape(M), "2x3");
}

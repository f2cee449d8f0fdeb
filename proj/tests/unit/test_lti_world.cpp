#include <gtest/gtest.h>

#include "pil/error.hpp"
#include "pil/lti_world.hpp"

using namespace pil;

namespace {

Mat lqr_gain_of(const LtiSystem& s) { return lqr_gain(s, Mat::Identity(s.n(), s.n()), 0.01 * Mat::Identity(s.m(), s.m())).K; }

}  // namespace

TEST(Lqr, ScalarMatchesQuadraticFormula)
{
  const double a = 1.2, b = 0.5, q = 2.0, r = 0.3;
  const LtiSystem s(Mat::Constant(1, 1, a), Mat::Constant(1, 1, b));
  // Scalar DARE: b^2 P^2 + (r (1 - a^2) - q b^2) P - q r = 0, positive root.
  const double beta = r * (1.0 - a * a) - q * b * b;
  const double P = (-beta + std::sqrt(beta * beta + 4.0 * b * b * q * r)) / (2.0 * b * b);
  const double K = -a * b * P / (r + b * b * P);
  EXPECT_NEAR(riccati_fixed_point(s, Mat::Constant(1, 1, q), Mat::Constant(1, 1, r))(0, 0), P, 1e-9 * P);
  EXPECT_NEAR(lqr_gain(s, Mat::Constant(1, 1, q), Mat::Constant(1, 1, r)).K(0, 0), K, 1e-9);
}

TEST(Lqr, ReferenceSystemSatisfiesDareAndStabilizes)
{
  const LtiSystem s = reference_lti_system();
  const Mat Q = Mat::Identity(2, 2);
  const Mat R = 0.01 * Mat::Identity(1, 1);
  const Mat P = riccati_fixed_point(s, Q, R);
  const Mat BtPB = R + s.B.transpose() * P * s.B;
  const Mat resid = Q + s.A.transpose() * P * s.A -
                    s.A.transpose() * P * s.B * BtPB.inverse() * s.B.transpose() * P * s.A - P;
  EXPECT_LT(resid.cwiseAbs().maxCoeff(), 1e-8 * P.norm());
  EXPECT_LT(spectral_radius(s.closed_loop(lqr_gain_of(s))), 1.0);
}

TEST(Lqr, RejectsIndefiniteWeights)
{
  const LtiSystem s = reference_lti_system();
  EXPECT_THROW(lqr_gain(s, -Mat::Identity(2, 2), Mat::Identity(1, 1)), Error);
  EXPECT_THROW(lqr_gain(s, Mat::Identity(2, 2), Mat::Zero(1, 1)), Error);
  EXPECT_THROW(lqr_gain(s, Mat::Identity(3, 3), Mat::Identity(1, 1)), Error);
}

TEST(ExpertData, NoiseFreeTrajectoriesFollowTheLoop)
{
  const LtiSystem s = reference_lti_system();
  const Mat K = lqr_gain_of(s);
  RngStream rng(4);
  const auto ds = generate_expert_dataset(s, {K}, 3, 20, NoiseModel::isotropic_gaussian(2, 1.0), NoiseModel::none(2),
                                          NoiseModel::none(1), rng);
  ASSERT_EQ(ds.size(), 3u);
  for (const auto& tr : ds.trajectories) {
    ASSERT_EQ(tr.x.cols(), 21);
    ASSERT_EQ(tr.u.cols(), 20);
    EXPECT_EQ(tr.y, tr.x);
    EXPECT_EQ(tr.v, tr.u);
    for (int t = 0; t < 20; ++t) {
      EXPECT_LT((tr.u.col(t) - K * tr.x.col(t)).norm(), 1e-14);
      EXPECT_LT((tr.x.col(t + 1) - s.A * tr.x.col(t) - s.B * tr.u.col(t)).norm(), 1e-14);
    }
  }
}

TEST(ExpertData, NoiseRecordsExplainMeasurements)
{
  const LtiSystem s = reference_lti_system();
  RngStream rng(9);
  const auto ds = generate_expert_dataset(s, {lqr_gain_of(s)}, 2, 30, NoiseModel::isotropic_gaussian(2, 1.0),
                                          NoiseModel::isotropic_gaussian(2, 0.01), NoiseModel::isotropic_gaussian(1, 0.3),
                                          rng);
  for (const auto& tr : ds.trajectories) {
    EXPECT_LT((tr.y - tr.x - tr.xi).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((tr.v - tr.u - tr.eta).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GT(tr.xi.norm(), 0.0);
  }
  ds.validate();
}

TEST(ExpertData, DeterministicPerSeedAndTrajectoryCountStable)
{
  const LtiSystem s = reference_lti_system();
  const NoiseModel x0 = NoiseModel::isotropic_gaussian(2, 1.0);
  const NoiseModel xi = NoiseModel::isotropic_gaussian(2, 0.01);
  const NoiseModel eta = NoiseModel::isotropic_gaussian(1, 0.01);
  RngStream r1(5), r2(5);
  const auto a = generate_expert_dataset(s, {lqr_gain_of(s)}, 4, 10, x0, xi, eta, r1);
  const auto b = generate_expert_dataset(s, {lqr_gain_of(s)}, 4, 10, x0, xi, eta, r2);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(a.trajectories[i].y, b.trajectories[i].y);
}

TEST(ExpertData, ShapeMismatchesAreRejected)
{
  const LtiSystem s = reference_lti_system();
  RngStream rng(0);
  EXPECT_THROW(generate_expert_dataset(s, {Mat::Zero(2, 2)}, 1, 5, NoiseModel::none(2), NoiseModel::none(2),
                                       NoiseModel::none(1), rng),
               Error);
  EXPECT_THROW(generate_expert_dataset(s, {Mat::Zero(1, 2)}, 1, 5, NoiseModel::none(2), NoiseModel::none(3),
                                       NoiseModel::none(1), rng),
               Error);
}

TEST(Coverage, PositiveForExcitedDataAndZeroForDegenerate)
{
  const LtiSystem s = reference_lti_system();
  RngStream rng(2);
  const auto ds = generate_expert_dataset(s, {lqr_gain_of(s)}, 10, 20, NoiseModel::isotropic_gaussian(2, 1.0),
                                          NoiseModel::none(2), NoiseModel::none(1), rng);
  EXPECT_GT(check_coverage(ds, 2).phi_x, 1e-3);
  const auto flat = generate_expert_dataset(s, {lqr_gain_of(s)}, 3, 20, NoiseModel::none(2), NoiseModel::none(2),
                                            NoiseModel::none(1), rng);
  EXPECT_NEAR(check_coverage(flat, 1).phi_x, 0.0, 1e-15);
}

TEST(Rollout, LearnedLoopSeesNoisyStates)
{
  const LtiSystem s = reference_lti_system();
  const Mat K = lqr_gain_of(s);
  RngStream rng(8);
  Vec x0(2);
  x0 << 1.0, -0.5;
  const Trajectory tr = rollout_learned(s, linear_policy(K), x0, 15, NoiseModel::isotropic_gaussian(2, 0.01), rng);
  for (int t = 0; t < 15; ++t) {
    EXPECT_LT((tr.u.col(t) - K * tr.y.col(t)).norm(), 1e-14);
    EXPECT_LT((tr.x.col(t + 1) - s.A * tr.x.col(t) - s.B * tr.u.col(t)).norm(), 1e-14);
  }
}

#include <gtest/gtest.h>

#include "../support/linear_oracles.hpp"
#include "pil/error.hpp"

using namespace pil;
using namespace pil::test;

namespace {

struct Fixture
{
  LtiSystem sys = reference_lti_system();
  Mat K = lqr_gain(sys, Mat::Identity(2, 2), 0.01 * Mat::Identity(1, 1)).K;

  TrajectoryDataset data(double xi_var, double eta_var, int n_traj = 10, int T = 50, std::uint64_t seed = 1) const
  {
    RngStream rng(seed);
    return generate_expert_dataset(sys, {K}, n_traj, T, NoiseModel::isotropic_gaussian(2, 1.0),
                                   NoiseModel::isotropic_gaussian(2, xi_var), NoiseModel::isotropic_gaussian(1, eta_var),
                                   rng);
  }
};

LossWeightsLinear weights(int H, double P = 1.0, double decay = 0.9)
{
  return {Mat::Identity(2, 2), Mat::Identity(1, 1), P * Mat::Identity(2, 2), H, decay};
}

}  // namespace

TEST(Predictors, NoiselessOlsRecoversClosedLoopPowers)
{
  Fixture f;
  const auto ds = f.data(0.0, 0.0);
  const auto G = fit_predictors_ols(ObservationView(ds), 4);
  const auto Gt = PredictorSetLinear::closed_loop_powers(f.sys, f.K, 4);
  for (int tau = 1; tau <= 4; ++tau)
    EXPECT_LT((G.at(tau) - Gt.at(tau)).norm(), 1e-8) << "tau " << tau;
  EXPECT_EQ(G.at(0), Mat::Identity(2, 2));
}

TEST(Predictors, SyntheticLinearMapIsExact)
{
  Mat Gtrue(3, 3);
  Gtrue << 0.9, 0.1, 0.0, -0.2, 0.8, 0.3, 0.05, 0.0, 0.7;
  TrajectoryDataset ds;
  ds.meta.n = 3;
  ds.meta.m = 1;
  ds.meta.T = 30;
  ds.meta.obs_dim = 3;
  RngStream rng(3);
  for (int i = 0; i < 3; ++i) {
    Trajectory tr;
    tr.y = Mat(3, 31);
    tr.y.col(0) = NoiseModel::isotropic_gaussian(3, 1.0).sample(1, rng);
    for (int t = 0; t < 30; ++t)
      tr.y.col(t + 1) = Gtrue * tr.y.col(t);
    tr.x = tr.y;
    tr.xi = Mat::Zero(3, 31);
    tr.u = tr.v = tr.eta = Mat::Zero(1, 30);
    ds.trajectories.push_back(tr);
  }
  EXPECT_LT((fit_predictors_ols(ObservationView(ds), 1).at(1) - Gtrue).norm(), 1e-10);
}

TEST(Predictors, ConstantTrajectoryIsSingularUnlessRidged)
{
  TrajectoryDataset ds;
  ds.meta.n = 2;
  ds.meta.m = 1;
  ds.meta.T = 10;
  ds.meta.obs_dim = 2;
  Trajectory tr;
  tr.y = Mat::Ones(2, 11);
  tr.x = tr.y;
  tr.xi = Mat::Zero(2, 11);
  tr.u = tr.v = tr.eta = Mat::Zero(1, 10);
  ds.trajectories.push_back(tr);
  try {
    fit_predictors_ols(ObservationView(ds), 1);
    FAIL() << "expected a singular-Gram error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
    EXPECT_NE(std::string(e.what()).find("ridge"), std::string::npos);
  }
  EXPECT_NO_THROW(fit_predictors_ols(ObservationView(ds), 1, 1e-3));
}

TEST(Predictors, RidgedOlsMatchesOracle)
{
  Fixture f;
  const auto ds = f.data(0.01, 0.01, 3, 20);
  const auto G = fit_predictors_ols(ObservationView(ds), 3, 0.5);
  for (int tau = 1; tau <= 3; ++tau) {
    const Mat oracle = minimize_quadratic_matrix([&](const Mat& g) { return ols_loss(ds, tau, g, 0.5); }, 2, 2);
    EXPECT_LT((G.at(tau) - oracle).norm(), 1e-8);
  }
}

TEST(Bc, ExactWithoutNoiseAndConsistentUnderInputNoise)
{
  Fixture f;
  EXPECT_LT((fit_bc(ObservationView(f.data(0.0, 0.0))).K - f.K).norm(), 1e-8);
  // Pure input noise: error shrinks roughly like 1/sqrt(T).
  double small = 0.0, large = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    small += spectral_norm(fit_bc(ObservationView(f.data(0.0, 0.1, 4, 25, s))).K - f.K);
    large += spectral_norm(fit_bc(ObservationView(f.data(0.0, 0.1, 64, 25, s))).K - f.K);
  }
  EXPECT_LT(large, 0.5 * small);  // 16x the data: ideally a factor 4
}

TEST(Bc, StateNoiseBiasPersists)
{
  Fixture f;
  // Errors-in-variables attenuation: more data does not remove the bias.
  double err_mid = 0.0, err_big = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    err_mid += spectral_norm(fit_bc(ObservationView(f.data(0.1, 0.0, 50, 100, s))).K - f.K);
    err_big += spectral_norm(fit_bc(ObservationView(f.data(0.1, 0.0, 400, 100, s))).K - f.K);
  }
  EXPECT_GT(err_big, 0.7 * err_mid);
  EXPECT_GT(err_big / 5, 0.05 * spectral_norm(f.K));
}

TEST(Bc, MatchesOracleAndObjective)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.05, 2, 30);
  const Mat K = fit_bc(ObservationView(ds)).K;
  const Mat oracle = minimize_quadratic_matrix([&](const Mat& k) { return bc_loss(ds, k); }, 1, 2);
  EXPECT_LT((K - oracle).norm(), 1e-8);
  EXPECT_NEAR(bc_objective(ObservationView(ds), K), bc_loss(ds, K), 1e-9 * bc_loss(ds, K));
}

TEST(PilFixedG, ExactRecoveryWithTruePredictors)
{
  Fixture f;
  const auto ds = f.data(0.0, 0.0);
  for (int H : {1, 2, 5}) {
    const auto G = PredictorSetLinear::closed_loop_powers(f.sys, f.K, H);
    EXPECT_LT((fit_pil_fixed_G(ObservationView(ds), f.sys, G, weights(H)).K - f.K).norm(), 1e-8) << "H " << H;
  }
}

TEST(PilFixedG, MatchesOracleAndObjective)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.05, 2, 30);
  const ObservationView view(ds);
  const auto G = fit_predictors_ols(view, 3);
  const auto w = weights(3, 2.0, 0.8);
  const Mat K = fit_pil_fixed_G(view, f.sys, G, w).K;
  const auto loss = [&](const Mat& k) { return pil_loss(ds, f.sys, k, G.G, w.Q, w.R, w.P, w.decay); };
  EXPECT_LT((K - minimize_quadratic_matrix(loss, 1, 2)).norm(), 1e-8);
  EXPECT_NEAR(pil_objective(view, f.sys, K, G, w), loss(K), 1e-9 * loss(K));
}

TEST(PilFixedG, ReducesToBcWhenConsistencyIsOff)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.05);
  const ObservationView view(ds);
  const LossWeightsLinear w(Mat::Identity(2, 2), Mat::Identity(1, 1), Mat::Zero(2, 2), 1, 0.9);
  const auto G = fit_predictors_ols(view, 1);
  EXPECT_LT((fit_pil_fixed_G(view, f.sys, G, w).K - fit_bc(view).K).norm(), 1e-12);
}

TEST(PilH1, ExactRecoveryAndReductions)
{
  Fixture f;
  const auto clean = f.data(0.0, 0.0);
  EXPECT_LT((fit_pil_h1(ObservationView(clean), f.sys, Mat::Identity(2, 2), Mat::Identity(1, 1)).K - f.K).norm(), 1e-8);

  const auto ds = f.data(0.05, 0.05);
  const ObservationView view(ds);
  EXPECT_LT((fit_pil_h1(view, f.sys, Mat::Zero(2, 2), Mat::Identity(1, 1)).K - fit_bc(view).K).norm(), 1e-12);

  // R -> 0 on clean data: the transition least squares alone pins K*.
  EXPECT_LT((fit_pil_h1(ObservationView(clean), f.sys, Mat::Identity(2, 2), 1e-12 * Mat::Identity(1, 1)).K - f.K).norm(),
            1e-8);
}

TEST(PilH1, MatchesOracleAndObjective)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.05, 2, 30);
  Mat Q(2, 2);
  Q << 2.0, 0.3, 0.3, 1.0;
  const Mat R = 0.5 * Mat::Identity(1, 1);
  const Mat K = fit_pil_h1(ObservationView(ds), f.sys, Q, R).K;
  const auto loss = [&](const Mat& k) { return h1_loss(ds, f.sys, k, Q, R); };
  EXPECT_LT((K - minimize_quadratic_matrix(loss, 1, 2)).norm(), 1e-8);
  EXPECT_NEAR(pil_h1_objective(ObservationView(ds), f.sys, K, Q, R), loss(K), 1e-9 * loss(K));
}

TEST(PilFixedG, DecayNeutralH1AgreesWithOneStepVariant)
{
  // alpha = 1, H = 1, P = Q: with G_1 = A + B K* the predicted and measured
  // next states coincide on clean data, so both estimators solve one problem.
  Fixture f;
  const auto clean = f.data(0.0, 0.0);
  const ObservationView view(clean);
  Mat Q(2, 2);
  Q << 1.5, 0.2, 0.2, 0.7;
  const Mat R = 0.3 * Mat::Identity(1, 1);
  const LossWeightsLinear w(Q, R, Q, 1, 1.0);
  const Mat Kg = fit_pil_fixed_G(view, f.sys, PredictorSetLinear::closed_loop_powers(f.sys, f.K, 1), w).K;
  EXPECT_LT((Kg - fit_pil_h1(view, f.sys, Q, R).K).norm(), 1e-9);
}

TEST(Alternating, NoiselessConvergesToTruth)
{
  Fixture f;
  const auto ds = f.data(0.0, 0.0);
  const auto r = fit_pil_alternating(ObservationView(ds), f.sys, weights(3), 2000, 1e-12);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.K.K - f.K).norm(), 1e-6);
  const auto Gt = PredictorSetLinear::closed_loop_powers(f.sys, f.K, 3);
  for (int tau = 1; tau <= 3; ++tau)
    EXPECT_LT((r.G.at(tau) - Gt.at(tau)).norm(), 1e-6);
}

TEST(Alternating, ObjectiveNeverIncreases)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.1);
  const auto r = fit_pil_alternating(ObservationView(ds), f.sys, weights(4), 200, 1e-10);
  ASSERT_GE(r.objective_trace.size(), 3u);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
    EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1] + 1e-12 * std::abs(r.objective_trace[i - 1]));
}

TEST(Alternating, LargeConsistencyWeightComposesPredictors)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.1);
  const auto r = fit_pil_alternating(ObservationView(ds), f.sys, weights(3, 1e6), 500, 1e-12);
  const Mat M = f.sys.closed_loop(r.K.K);
  for (int tau = 1; tau <= 3; ++tau)
    EXPECT_LT((r.G.at(tau) - M * r.G.at(tau - 1)).norm(), 1e-3);
}

TEST(Alternating, StopsAtIterationCapWithFlag)
{
  Fixture f;
  const auto ds = f.data(0.05, 0.1);
  const auto r = fit_pil_alternating(ObservationView(ds), f.sys, weights(3), 1, 1e-300);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 1);
}

TEST(Compare, NoStateNoiseMeansNoPredictiveTerm)
{
  Fixture f;
  const auto ds = f.data(0.0, 0.1);
  const auto rep = compare_pil_bc(ds, f.sys, Mat::Identity(2, 2), Mat::Identity(1, 1), Mat::Zero(2, 2),
                                  0.1 * Mat::Identity(1, 1));
  EXPECT_EQ(rep.omega_pil_norm, 0.0);
  EXPECT_GT(rep.omega_bc_norm, 0.0);
  EXPECT_TRUE(rep.condition_holds);
}

TEST(Compare, TermsMatchDirectSums)
{
  Fixture f;
  const auto ds = f.data(0.02, 0.1, 3, 20);
  const Mat Q = Mat::Identity(2, 2);
  const auto rep = compare_pil_bc(ds, f.sys, Q, Mat::Identity(1, 1), 0.02 * Q, 0.1 * Mat::Identity(1, 1));
  Mat wp = Mat::Zero(1, 2), wb = Mat::Zero(1, 2);
  for (const auto& tr : ds.trajectories)
    for (int t = 0; t < 20; ++t) {
      wp += f.sys.B.transpose() * Q * (tr.xi.col(t + 1) - f.sys.A * tr.xi.col(t)) * tr.y.col(t).transpose();
      wb += f.sys.B.transpose() * Q * f.sys.B * tr.eta.col(t) * tr.y.col(t).transpose();
    }
  EXPECT_LT((rep.omega_pil - wp).norm(), 1e-12 * (1.0 + wp.norm()));
  EXPECT_LT((rep.omega_bc - wb).norm(), 1e-12 * (1.0 + wb.norm()));
}

TEST(Compare, RequiresNoiseRecords)
{
  Fixture f;
  auto ds = f.data(0.0, 0.1);
  ds.has_noise_records = false;
  EXPECT_THROW(compare_pil_bc(ds, f.sys, Mat::Identity(2, 2), Mat::Identity(1, 1), Mat::Zero(2, 2),
                              Mat::Identity(1, 1)),
               Error);
}

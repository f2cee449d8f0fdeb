#include <gtest/gtest.h>

#include <filesystem>

#include "../support/gradient_suite.hpp"
#include "pil/error.hpp"

using namespace pil;

namespace {

PilModelSpec small_spec(int obs, int n, int m, int H, const std::string& enc, std::vector<bool> per)
{
  PilModelSpec s;
  s.obs_dim = obs;
  s.n = n;
  s.m = m;
  s.H = H;
  s.encoder = enc;
  s.periodic = std::move(per);
  s.encoder_hidden = {16, 16};
  s.predictor_hidden = {16};
  s.policy_hidden = {16, 16};
  return s;
}

TrajectoryDataset linear_data(int n_traj, int T, std::uint64_t seed)
{
  const LtiSystem sys = reference_lti_system();
  const Mat K = lqr_gain(sys, Mat::Identity(2, 2), 0.01 * Mat::Identity(1, 1)).K;
  RngStream rng(seed);
  return generate_expert_dataset(sys, {K}, n_traj, T, NoiseModel::isotropic_gaussian(2, 1.0),
                                 NoiseModel::uniform(Vec::Constant(2, 0.01)), NoiseModel::uniform(Vec::Constant(1, 0.01)),
                                 rng);
}

}  // namespace

TEST(LossConfig, DefaultsAndValidation)
{
  const auto c = PilLossConfig::defaults(2, 1, 3, TrainMode::Pil);
  EXPECT_DOUBLE_EQ(c.Q(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(c.R(0, 0), 0.01);
  EXPECT_DOUBLE_EQ(c.P(1, 1), 1.0);
  EXPECT_NEAR(c.weight(3), 0.81, 1e-15);
  c.validate(2, 1);
  auto bad = c;
  bad.P(0, 0) = -1.0;
  EXPECT_THROW(bad.validate(2, 1), Error);
  bad.mode = TrainMode::Bc;
  EXPECT_NO_THROW(bad.validate(2, 1));  // bc never looks at P
  auto h0 = c;
  h0.H = 0;
  EXPECT_THROW(h0.validate(2, 1), Error);
  EXPECT_EQ(train_mode_from_string(to_string(TrainMode::Rollout)), TrainMode::Rollout);
  EXPECT_THROW(train_mode_from_string("dagger"), Error);
}

TEST(Model, SegmentLayoutAndInitIndependence)
{
  PilModel with(small_spec(2, 2, 1, 3, "raw", {false, false}), true);
  PilModel without(small_spec(2, 2, 1, 3, "raw", {false, false}), false);
  ASSERT_TRUE(with.params.segments_valid());
  EXPECT_EQ(with.params.segments()[0].name, "policy");
  EXPECT_EQ(with.params.segments()[1].name, "encoder");
  EXPECT_EQ(with.params.segments().back().name, "pred_3");
  EXPECT_EQ(without.params.segments().size(), 1u);
  with.init(RngStream(9));
  without.init(RngStream(9));
  const std::size_t np = with.params.segment("policy").size;
  EXPECT_EQ(with.params.flat.head(np), without.params.flat.head(np));
  const Mat X = Mat::Random(2, 5);
  EXPECT_EQ(with.policy_eval(X), without.policy_eval(X));
}

TEST(Model, PeriodicPolicyIsInvariantToFullTurns)
{
  PilModel m(small_spec(3, 2, 1, 2, "trig_angle", {true, false}), false);
  m.init(RngStream(1));
  Mat X(2, 3);
  X << 0.3, -2.0, 1.0, 0.5, 0.0, -1.0;
  Mat Y = X;
  Y.row(0).array() += 2 * M_PI;
  EXPECT_LT((m.policy_eval(X) - m.policy_eval(Y)).norm(), 1e-12);
}

TEST(Model, CheckpointRoundTripReproducesPolicy)
{
  PilModel m(small_spec(3, 2, 1, 2, "trig_angle", {true, false}), true);
  m.init(RngStream(2));
  const auto path = std::filesystem::temp_directory_path() / "pil_unit_model.json";
  nn::save_checkpoint(path, m.to_checkpoint({{"note", "x"}}));
  const PilModel back = PilModel::from_checkpoint(nn::load_checkpoint(path));
  const Mat X = Mat::Random(2, 7);
  EXPECT_EQ(back.policy_eval(X), m.policy_eval(X));
  EXPECT_EQ(back.spec().H, 2);
  EXPECT_TRUE(back.has_predictors());
  EXPECT_EQ(deploy_policy(back)(X), deploy_policy(m)(X));
  const ObsEncoder enc = ObsEncoder::trig_angle({true, false});
  EXPECT_LT((deploy_policy(back, enc)(enc.encode(X)) - m.policy_eval(X)).norm(), 1e-12);
}

TEST(Chunks, CountsAndContents)
{
  const auto ds = linear_data(3, 10, 1);
  const auto idx = enumerate_chunks(ds, 4);
  EXPECT_EQ(idx.size(), 3u * 7);
  const auto b = assemble_batch(ds, {idx[5]}, 4, ObsEncoder::raw(2));
  const int i = idx[5].traj, t = idx[5].t;
  EXPECT_EQ(b.H(), 4);
  EXPECT_EQ(b.y_obs.col(0), ds.trajectories[static_cast<std::size_t>(i)].y.col(t));
  EXPECT_EQ(b.x_meas[4].col(0), ds.trajectories[static_cast<std::size_t>(i)].y.col(t + 4));
  EXPECT_EQ(b.v[3].col(0), ds.trajectories[static_cast<std::size_t>(i)].v.col(t + 3));
  EXPECT_THROW(enumerate_chunks(ds, 11), Error);
}

TEST(Losses, GradientsMatchFiniteDifferences)
{
  for (const auto& g : test::loss_gradient_checks(5))
    EXPECT_LT(g.worst_rel_err, 1e-4) << g.name;
}

TEST(Losses, TermsHaveTheExpectedStructure)
{
  const auto ds = linear_data(2, 8, 3);
  const LinearDynamics dyn(reference_lti_system());
  PilModel m(small_spec(2, 2, 1, 2, "raw", {false, false}), true);
  m.init(RngStream(4));
  const ChunkBatch b = assemble_batch(ds, enumerate_chunks(ds, 2), 2, ObsEncoder::raw(2));

  ad::Tape t1(&m.params);
  const auto bc = chunk_loss(m, dyn, b, PilLossConfig::defaults(2, 1, 2, TrainMode::Bc), t1);
  EXPECT_EQ(bc.values.state_err, 0.0);
  EXPECT_EQ(bc.values.consistency, 0.0);
  // Direct: mean over windows of ||v_t - pi(y_t)||_R^2.
  const Mat u = m.policy_eval(b.x_meas[0]);
  const double direct = 0.01 * (b.v[0] - u).squaredNorm() / b.size();
  EXPECT_NEAR(bc.values.total, direct, 1e-14);

  ad::Tape t2(&m.params);
  const auto ro = chunk_loss(m, dyn, b, PilLossConfig::defaults(2, 1, 2, TrainMode::Rollout), t2);
  EXPECT_EQ(ro.values.consistency, 0.0);
  EXPECT_GT(ro.values.state_err, 0.0);

  ad::Tape t3(&m.params);
  const auto pl = chunk_loss(m, dyn, b, PilLossConfig::defaults(2, 1, 2, TrainMode::Pil), t3);
  EXPECT_GT(pl.values.consistency, 0.0);
  EXPECT_NEAR(pl.values.total, pl.values.state_err + pl.values.input_err + pl.values.consistency, 1e-14);

  PilModel nopred(small_spec(2, 2, 1, 2, "raw", {false, false}), false);
  ad::Tape t4(&nopred.params);
  EXPECT_THROW(chunk_loss(nopred, dyn, b, PilLossConfig::defaults(2, 1, 2, TrainMode::Pil), t4), Error);
}

TEST(Train, LossDecreasesAndRunsAreDeterministic)
{
  const auto ds = linear_data(10, 20, 5);
  const LinearDynamics dyn(reference_lti_system());
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 32;
  tc.lr_start = 1e-2;
  for (TrainMode mode : {TrainMode::Bc, TrainMode::Rollout, TrainMode::Pil}) {
    auto run = [&] {
      PilModel m(small_spec(2, 2, 1, 2, "raw", {false, false}), mode == TrainMode::Pil);
      m.init(RngStream(6));
      RngStream rng(7);
      const PilLossConfig lc = PilLossConfig::defaults(2, 1, mode == TrainMode::Bc ? 1 : 2, mode);
      auto r = train(m, ds, dyn, lc, tc, rng);
      // Minibatch averages are noisy; compare full-dataset losses instead.
      r.log.back().loss = evaluate_loss(m, ds, dyn, lc);
      return std::make_pair(r, m.params.flat);
    };
    const auto [r1, p1] = run();
    const auto [r2, p2] = run();
    EXPECT_EQ(p1, p2) << to_string(mode);
    ASSERT_EQ(r1.log.size(), 41u);
    EXPECT_LT(r1.log.back().loss.total, 0.5 * r1.log.front().loss.total) << to_string(mode);
    EXPECT_NEAR(r1.log.back().lr, tc.lr_end, 1e-6);
  }
}

TEST(Train, LogFormatHasHeaderAndOneRowPerEpoch)
{
  TrainResult r;
  r.log.push_back({0, {1, 2, 3, 6}, 1e-3});
  r.log.push_back({1, {0.5, 1, 1, 2.5}, 5e-4});
  const std::string s = format_train_log(r);
  EXPECT_EQ(s.substr(0, s.find('\n')), "epoch,state_err,input_err,consistency,total,lr");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}

TEST(Train, BadSettingsAreConfigErrors)
{
  const auto ds = linear_data(2, 5, 1);
  const LinearDynamics dyn(reference_lti_system());
  PilModel m(small_spec(2, 2, 1, 2, "raw", {false, false}), true);
  m.init(RngStream(1));
  TrainConfig tc;
  tc.epochs = 0;
  RngStream rng(1);
  EXPECT_THROW(train(m, ds, dyn, PilLossConfig::defaults(2, 1, 2, TrainMode::Pil), tc, rng), Error);
}

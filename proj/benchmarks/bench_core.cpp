#include <benchmark/benchmark.h>

#include "pil/eval_metrics.hpp"
#include "pil/linear_learners.hpp"
#include "pil/pil_nn.hpp"
#include "pil/runtime.hpp"

using namespace pil;

namespace {

TrajectoryDataset linear_data(int n_traj, int T)
{
  const LtiSystem sys = reference_lti_system();
  const Mat K = lqr_gain(sys, Mat::Identity(2, 2), 0.01 * Mat::Identity(1, 1)).K;
  RngStream rng(1);
  return generate_expert_dataset(sys, {K}, n_traj, T, NoiseModel::isotropic_gaussian(2, 1.0),
                                 NoiseModel::isotropic_gaussian(2, 0.01), NoiseModel::isotropic_gaussian(1, 0.01), rng);
}

PilModelSpec pendulum_spec(int width, int H)
{
  PilModelSpec s;
  s.obs_dim = 3;
  s.n = 2;
  s.m = 1;
  s.H = H;
  s.encoder = "trig_angle";
  s.periodic = {true, false};
  s.encoder_hidden = {width, width};
  s.predictor_hidden = {width};
  s.policy_hidden = {width / 2, width / 2};
  return s;
}

struct PendulumBatch
{
  Pendulum pend;
  TrajectoryDataset ds;
  ChunkBatch batch;

  PendulumBatch(int H, int B)
  {
    RngStream rng(2);
    ds = generate_nonlinear_dataset(pend, pendulum_expert(pend), 20, 50, NoiseModel::uniform(Vec::Constant(2, 1.0)),
                                    NoiseModel::uniform(Vec::Constant(2, 0.01)), NoiseModel::uniform(Vec::Constant(1, 0.1)),
                                    ObsEncoder::trig_angle(pend.periodic()), rng);
    auto chunks = enumerate_chunks(ds, H);
    chunks.resize(static_cast<std::size_t>(B));
    batch = assemble_batch(ds, chunks, H, ObsEncoder::trig_angle(pend.periodic()));
  }
};

void BM_PilLossForward(benchmark::State& state)
{
  const int width = static_cast<int>(state.range(0));
  const int H = 4;
  PendulumBatch pb(H, 64);
  PilModel model(pendulum_spec(width, H), true);
  model.init(RngStream(3));
  const auto cfg = PilLossConfig::defaults(2, 1, H, TrainMode::Pil);
  for (auto _ : state) {
    ad::Tape tape(&model.params);
    benchmark::DoNotOptimize(chunk_loss(model, pb.pend, pb.batch, cfg, tape).values.total);
  }
}
BENCHMARK(BM_PilLossForward)->Arg(32)->Arg(128);

void BM_PilLossForwardBackward(benchmark::State& state)
{
  const int width = static_cast<int>(state.range(0));
  const int H = 4;
  PendulumBatch pb(H, 64);
  PilModel model(pendulum_spec(width, H), true);
  model.init(RngStream(3));
  const auto cfg = PilLossConfig::defaults(2, 1, H, TrainMode::Pil);
  for (auto _ : state) {
    model.params.zero_grad();
    ad::Tape tape(&model.params);
    const ChunkLoss cl = chunk_loss(model, pb.pend, pb.batch, cfg, tape);
    tape.backward(cl.total);
    benchmark::DoNotOptimize(model.params.grad.data());
  }
}
BENCHMARK(BM_PilLossForwardBackward)->Arg(32)->Arg(128);

void BM_FitBc(benchmark::State& state)
{
  const auto ds = linear_data(50, static_cast<int>(state.range(0)));
  const ObservationView view(ds);
  for (auto _ : state)
    benchmark::DoNotOptimize(fit_bc(view).K.data());
}
BENCHMARK(BM_FitBc)->Arg(100)->Arg(1000);

void BM_FitPilFixedG(benchmark::State& state)
{
  const auto ds = linear_data(50, 100);
  const ObservationView view(ds);
  const int H = static_cast<int>(state.range(0));
  const auto sys = reference_lti_system();
  const auto G = fit_predictors_ols(view, H);
  const LossWeightsLinear w(Mat::Identity(2, 2), Mat::Identity(1, 1), Mat::Identity(2, 2), H, 0.9);
  for (auto _ : state)
    benchmark::DoNotOptimize(fit_pil_fixed_G(view, sys, G, w).K.data());
}
BENCHMARK(BM_FitPilFixedG)->Arg(1)->Arg(4)->Arg(16);

void BM_PendulumStep(benchmark::State& state)
{
  const Pendulum pend;
  const int cols = static_cast<int>(state.range(0));
  Mat X = Mat::Random(2, cols);
  const Mat U = Mat::Random(1, cols);
  for (auto _ : state) {
    X = pend.step(X, U);
    benchmark::DoNotOptimize(X.data());
  }
  state.SetItemsProcessed(state.iterations() * cols);
}
BENCHMARK(BM_PendulumStep)->Arg(1)->Arg(1000);

}  // namespace

int main(int argc, char** argv)
{
  configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv))
    return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

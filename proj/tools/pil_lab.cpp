// pil-lab: runs the experiments and the gen-data / train / eval pipeline.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "pil/experiments.hpp"
#include "pil/runtime.hpp"

namespace {

int exit_code(pil::ErrorKind k)
{
  switch (k) {
    case pil::ErrorKind::Config: return 2;
    case pil::ErrorKind::Numerical: return 3;
    case pil::ErrorKind::Io: return 4;
    case pil::ErrorKind::Shape: return 1;
  }
  return 1;
}

struct Options
{
  std::string config;
  int seeds = 0;
  std::string out;
};

pil::ExperimentConfig load(const Options& o, const std::string& command)
{
  pil::ExperimentConfig cfg = pil::ExperimentConfig::load(o.config);
  const bool stage = command == "gen-data" || command == "train" || command == "eval";
  const std::string want = stage ? "pipeline" : command;
  if (cfg.experiment != want)
    throw pil::ConfigError("'" + command + "' needs a config with experiment \"" + want + "\", got \"" +
                           cfg.experiment + "\"");
  if (o.seeds > 0) {
    cfg.seeds.clear();
    for (int s = 0; s < o.seeds; ++s)
      cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (!o.out.empty())
    cfg.out = o.out;
  cfg.validate();
  return cfg;
}

int run(const std::string& command, const Options& o)
{
  const pil::ExperimentConfig cfg = load(o, command);
  const int threads = pil::threads_from_env();
  const std::filesystem::path dir = cfg.out;
  std::fprintf(stderr, "pil-lab %s: config %s, %zu seed(s), %d thread(s), out %s\n", command.c_str(),
               cfg.hash().c_str(), cfg.seeds.size(), threads, dir.string().c_str());
  if (command == "gen-data")
    pil::stage_gen_data(cfg, dir, threads);
  else if (command == "train")
    pil::stage_train(cfg, dir, threads);
  else if (command == "eval")
    pil::stage_eval(cfg, dir, threads);
  else
    pil::write_outputs(pil::run_experiment(cfg, threads), cfg, dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  pil::configure_allocator();
  CLI::App app{"Predictive imitation learning experiments"};
  app.require_subcommand(1);
  Options opts;
  const char* commands[][2] = {
      {"lin-noise-sweep", "BC vs PIL on the linear system across noise regimes and horizons"},
      {"lin-pred-order", "BC / rollout / PIL networks imitating a random-MLP expert"},
      {"pendulum", "five training variants on the torque-limited pendulum"},
      {"theory-scan", "estimation-error scaling and the PIL vs BC noise comparison"},
      {"gen-data", "pipeline stage: write expert datasets"},
      {"train", "pipeline stage: fit models from written datasets"},
      {"eval", "pipeline stage: evaluate written models"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "experiment config (JSON)")->required();
    sub->add_option("--seeds", opts.seeds, "use seeds 0..N-1")->check(CLI::PositiveNumber);
    sub->add_option("--out", opts.out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opts);
  } catch (const pil::Error& e) {
    std::fprintf(stderr, "pil-lab: %s error: %s\n", pil::to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pil-lab: error: %s\n", e.what());
    return 1;
  }
}

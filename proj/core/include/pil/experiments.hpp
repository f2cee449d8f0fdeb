#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pil/eval_metrics.hpp"
#include "pil/pil_nn.hpp"

namespace pil {

/// Weight matrix given either as a scalar c (meaning c I) or as explicit rows.
struct WeightSpec
{
  bool is_scalar = true;
  double scalar = 1.0;
  Mat matrix;

  WeightSpec() = default;
  WeightSpec(double c) : scalar(c) {}  // NOLINT: scalar shorthand is the common case

  Mat resolve(int n, const std::string& what) const;
  nlohmann::json to_json() const;
  static WeightSpec parse(const nlohmann::json& j, const std::string& path);
};

/// Noise description: kind none | gaussian (scale = std per coordinate) |
/// uniform (scale = half-width). A single scale entry is broadcast. With
/// units "deg" the scales are converted to radians.
struct NoiseSpec
{
  std::string kind = "none";
  std::vector<double> scale;
  std::string units = "rad";

  NoiseModel resolve(int dim, const std::string& what) const;
  nlohmann::json to_json() const;
  static NoiseSpec parse(const nlohmann::json& j, const std::string& path);
};

struct NoiseCase
{
  std::string name;
  NoiseSpec xi;
  NoiseSpec eta;
};

struct DataSpec
{
  int n_traj = 50;
  int T = 100;
  NoiseSpec x0{"gaussian", {1.0}, "rad"};
};

struct LinearSpec
{
  WeightSpec Qc{1.0};
  WeightSpec Rc{0.01};
  WeightSpec R{1.0};
  WeightSpec P{1.0};
  double decay = 0.9;
  std::string predictors = "ols";  ///< ols | true
  double ridge = 0.0;
};

struct ModelSection
{
  std::vector<int> encoder_hidden{128, 128};
  std::vector<int> predictor_hidden{128};
  std::vector<int> policy_hidden{64, 64};
  std::string activation = "leaky_relu";
};

struct LossSection
{
  WeightSpec Q{0.25};
  WeightSpec R{0.01};
  WeightSpec P{1.0};
  double decay = 0.9;
};

struct TrainSection
{
  int epochs = 500;
  int batch_size = 64;
  int steps_per_epoch = 0;
  double lr_start = 5e-4;
  double lr_end = 1e-8;
};

struct EvalSection
{
  int n_test = 1000;
  int T = 100;
  /// Start distribution of test rollouts; kind "none" reuses data.x0.
  NoiseSpec x0;
};

struct ScalingSection
{
  std::string estimator = "pil_fixed_g";
  int H = 2;
  double decay = 0.9;
  WeightSpec Q{1.0};
  WeightSpec R{1.0};
  WeightSpec P{1.0};
  std::vector<int> T_grid{32, 64, 128, 256, 512, 1024, 2048, 4096};
  std::vector<double> xi_levels{0.0, 0.0025, 0.005, 0.01};
  double eta_variance = 0.01;
  int segment_length = 8;
  int seeds = 30;
  int plateau_points = 2;
};

struct ComparisonCase
{
  std::string name;
  double xi_variance = 0.0;
  double eta_variance = 0.0;
};

struct ComparisonSection
{
  int draws = 1000;
  int n_traj = 50;
  int T = 100;
  WeightSpec Q{1.0};
  WeightSpec R{1.0};
  std::vector<ComparisonCase> cases;
};

/// One experiment (or pipeline) description. Parsing starts from the
/// experiment's defaults and rejects unknown keys by their full path.
struct ExperimentConfig
{
  std::string experiment;
  std::vector<std::uint64_t> seeds;
  std::string out = "results";
  std::string environment = "linear_lqr";  ///< pipeline only: linear_lqr | linear_mlp | pendulum

  bool reference_system = true;
  Mat A;
  Mat B;
  PendulumParams pendulum;
  double k_e = 1.0;

  DataSpec data;
  std::vector<NoiseCase> noise;
  std::vector<int> H;
  std::vector<std::string> methods;

  LinearSpec linear;
  ModelSection model;
  LossSection loss;
  TrainSection train;
  EvalSection eval;
  ScalingSection scaling;
  ComparisonSection comparison;

  static ExperimentConfig defaults(const std::string& experiment);
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Throws ConfigError on semantic problems (duplicate seeds, unknown methods...).
  void validate() const;
  /// FNV-1a of the canonical JSON text without `out`, as 16 hex digits.
  std::string hash() const;

  LtiSystem system() const;
};

/// Known experiment ids (the CLI subcommands that take a full experiment).
const std::vector<std::string>& experiment_ids();

struct ResultRow
{
  std::string experiment;
  std::string method;
  int H = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

/// Rows plus auxiliary files (relative path -> content).
struct RunOutput
{
  std::vector<ResultRow> rows;
  std::map<std::string, std::string> files;
};

struct Aggregate
{
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
};

/// Mean/std over seeds of the rows matching (method, H, metric).
Aggregate aggregate(const std::vector<ResultRow>& rows, const std::string& method, int H, const std::string& metric);

std::string format_results_csv(const std::vector<ResultRow>& rows, const std::string& config_hash);

/// Thread count from PIL_THREADS (>= 1), else the hardware concurrency.
int threads_from_env();

/// Runs fn(0..count-1) on up to `threads` workers. Results must be written to
/// per-index slots; the first exception (by index) is rethrown.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

RunOutput run_lin_noise_sweep(const ExperimentConfig& cfg, int threads = 1);
RunOutput run_lin_pred_order(const ExperimentConfig& cfg, int threads = 1);
RunOutput run_pendulum(const ExperimentConfig& cfg, int threads = 1);
RunOutput run_theory_scan(const ExperimentConfig& cfg, int threads = 1);
RunOutput run_experiment(const ExperimentConfig& cfg, int threads = 1);

/// results.csv, config.json and every auxiliary file under `dir`. Each CSV
/// starts with a "# config_hash=<hash>" line.
void write_outputs(const RunOutput& out, const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Pipeline stages over serialized artifacts in `dir`:
///   gen-data: data/seed<S>.csv (+ sidecar)
///   train:    models/<method>_H<h>_seed<S>.json (checkpoint), .csv (linear_lqr gain bundle), logs/
///   eval:     results.csv
void stage_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads = 1);
void stage_train(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads = 1);
void stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads = 1);

}  // namespace pil

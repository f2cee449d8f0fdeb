#pragma once

#include <string>
#include <vector>

#include "pil/nn.hpp"
#include "pil/nonlinear_world.hpp"

namespace pil {

enum class TrainMode { Bc, Rollout, Pil };

const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct PilLossConfig
{
  Mat Q;
  Mat R;
  Mat P;
  int H = 1;
  double decay = 0.9;
  TrainMode mode = TrainMode::Pil;
  bool dynamics_gradient = true;

  /// Appendix-style defaults: Q = 0.25 I, R = 0.01 I, P = I.
  static PilLossConfig defaults(int n, int m, int H, TrainMode mode);
  void validate(int n, int m) const;
  double weight(int tau) const;
};

struct LossBreakdown
{
  double state_err = 0.0;
  double input_err = 0.0;
  double consistency = 0.0;
  double total = 0.0;
};

/// Architecture of the encoder / predictor heads / policy triple.
struct PilModelSpec
{
  int obs_dim = 0;
  int n = 0;
  int m = 0;
  int H = 1;
  std::string encoder = "raw";
  std::vector<bool> periodic;
  std::vector<int> encoder_hidden{128, 128};
  std::vector<int> predictor_hidden{128};
  std::vector<int> policy_hidden{64, 64};
  nn::Activation activation = nn::Activation::LeakyRelu;

  void validate() const;
  nlohmann::json to_json() const;
  static PilModelSpec from_json(const nlohmann::json& j);
};

/// Policy on raw-state-shaped inputs (periodic coordinates fed through
/// cos/sin features), plus the training-time encoder and H predictor heads.
/// Segment order in the parameter store: policy, encoder, pred_1..pred_H.
class PilModel
{
public:
  PilModel() = default;
  /// Predictor heads and encoder are only allocated when with_predictors.
  PilModel(PilModelSpec spec, bool with_predictors);

  /// Each network draws from its own substream, so the policy initialization
  /// does not depend on whether predictors exist.
  void init(const RngStream& rng);

  const PilModelSpec& spec() const noexcept { return spec_; }
  bool has_predictors() const noexcept { return !predictors_.empty(); }

  ad::Var policy_forward(ad::Tape& tape, ad::Var x) const;
  ad::Var encoder_forward(ad::Tape& tape, ad::Var y) const;
  ad::Var predictor_forward(ad::Tape& tape, int tau, ad::Var z) const;
  Mat policy_eval(const Mat& X) const;

  nn::Checkpoint to_checkpoint(const nlohmann::json& meta = nlohmann::json::object()) const;
  static PilModel from_checkpoint(const nn::Checkpoint& ckpt);

  ad::ParamStore params;

private:
  PilModelSpec spec_;
  nn::Mlp policy_;
  nn::Mlp encoder_;
  std::vector<nn::Mlp> predictors_;
};

/// Minibatch of length-(H+1) windows, one window per column. States are kept
/// in raw coordinates (decoded when the encoder is trigonometric).
struct ChunkBatch
{
  Mat y_obs;               ///< obs_dim x B, encoded y_t (encoder input)
  std::vector<Mat> x_meas; ///< H+1 entries, n x B: decoded y_{t+tau}
  std::vector<Mat> v;      ///< H entries, m x B: v_{t+tau}, tau = 0..H-1

  int size() const { return static_cast<int>(y_obs.cols()); }
  int H() const { return static_cast<int>(v.size()); }
};

struct ChunkIndex
{
  int traj = 0;
  int t = 0;
};

/// All windows t = 0..T-H of every trajectory (T - H + 1 per trajectory).
std::vector<ChunkIndex> enumerate_chunks(const TrajectoryDataset& ds, int H);

ChunkBatch assemble_batch(const TrajectoryDataset& ds, const std::vector<ChunkIndex>& idx, int H,
                          const ObsEncoder& encoder);

struct ChunkLoss
{
  LossBreakdown values;
  ad::Var total;
};

/// Terms shared by the predictive and rollout losses, given predicted states
/// preds[tau-1] = x_{t+tau|t}. Inputs u_{t+tau-1|t} are the policy applied to
/// the previous predicted state unless already supplied. Averaged over the batch.
ChunkLoss predictive_terms(ad::Tape& tape, const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch,
                           ad::Var x0, const std::vector<ad::Var>& preds, const PilLossConfig& cfg,
                           bool with_consistency, const std::vector<ad::Var>* inputs = nullptr);

ChunkLoss pil_chunk_loss(const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch,
                         const PilLossConfig& cfg, ad::Tape& tape);
ChunkLoss rollout_chunk_loss(const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch,
                             const PilLossConfig& cfg, ad::Tape& tape);
/// sum ||v_t - policy(y_t)||_R^2 over the batch, averaged. Uses only x_meas[0], v[0].
ChunkLoss bc_chunk_loss(const PilModel& model, const ChunkBatch& batch, const PilLossConfig& cfg, ad::Tape& tape);

/// Dispatches on cfg.mode.
ChunkLoss chunk_loss(const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch, const PilLossConfig& cfg,
                     ad::Tape& tape);

struct TrainConfig
{
  int epochs = 100;
  int batch_size = 64;
  double lr_start = 5e-4;
  double lr_end = 1e-8;
  /// Minibatches per epoch; 0 means ceil(#chunks / batch_size).
  int steps_per_epoch = 0;
};

struct TrainLogRow
{
  int epoch = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

struct TrainResult
{
  /// Row 0 is the full-data loss before training; row e >= 1 averages the
  /// minibatch losses of epoch e.
  std::vector<TrainLogRow> log;
};

/// Adam + cosine schedule over minibatches drawn uniformly with replacement.
/// Deterministic given rng. In bc mode the windows have length 1 regardless of H.
TrainResult train(PilModel& model, const TrajectoryDataset& ds, const Dynamics& dyn, const PilLossConfig& cfg,
                  const TrainConfig& tc, RngStream& rng);

/// Full-data loss without updating parameters.
LossBreakdown evaluate_loss(const PilModel& model, const TrajectoryDataset& ds, const Dynamics& dyn,
                            const PilLossConfig& cfg);

std::string format_train_log(const TrainResult& r);

/// Stateless u = policy(y) on raw-coordinate measurements. Encoder and
/// predictors are not used.
Policy deploy_policy(const PilModel& model);
/// Same, for encoded measurements: decodes first.
Policy deploy_policy(const PilModel& model, const ObsEncoder& encoder);

}  // namespace pil

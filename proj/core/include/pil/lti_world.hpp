#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pil/numkit.hpp"

namespace pil {

/// x_{t+1} = A x_t + B u_t
struct LtiSystem
{
  Mat A;
  Mat B;

  LtiSystem() = default;
  LtiSystem(Mat a, Mat b);

  int n() const noexcept { return static_cast<int>(A.rows()); }
  int m() const noexcept { return static_cast<int>(B.cols()); }
  Mat closed_loop(const Mat& K) const { return A + B * K; }
};

/// The two-state system used throughout the linear experiments:
/// A = [[0.95, 0.05], [0, 0.95]], B = [0, 0.05]^T.
LtiSystem reference_lti_system();

/// State feedback u = K x (note the sign: K already carries the minus).
struct FeedbackGain
{
  Mat K;
};

/// Batched state feedback: columns of the argument are states, columns of the
/// result are the corresponding inputs.
using Policy = std::function<Mat(const Mat&)>;

Policy linear_policy(const Mat& K);

/// One trajectory, stored column-per-time-step. States and observations have
/// T+1 columns, inputs and input observations have T (the last state has no
/// action). The true states are kept for evaluation only.
struct Trajectory
{
  Mat x;    ///< n x (T+1) true states
  Mat u;    ///< m x T true inputs
  Mat y;    ///< obs_dim x (T+1) noisy (possibly encoded) state measurements
  Mat v;    ///< m x T noisy input measurements
  Mat xi;   ///< n x (T+1) state noise in raw coordinates, y = x + xi for the raw encoder
  Mat eta;  ///< m x T input noise, v = u + eta

  int length() const noexcept { return static_cast<int>(u.cols()); }
};

struct DatasetMeta
{
  int n = 0;
  int m = 0;
  int T = 0;
  int obs_dim = 0;
  std::string encoder = "raw";
  NoiseModel x0 = NoiseModel::none(0);
  NoiseModel xi = NoiseModel::none(0);
  NoiseModel eta = NoiseModel::none(0);
  std::uint64_t seed = 0;
  std::string expert;
  nlohmann::json extra = nlohmann::json::object();
};

struct TrajectoryDataset
{
  DatasetMeta meta;
  std::vector<Trajectory> trajectories;
  bool has_noise_records = true;

  std::size_t size() const noexcept { return trajectories.size(); }
  /// Throws ShapeError if any trajectory disagrees with the metadata.
  void validate() const;
};

/// Learner-facing view of a dataset: exposes the measurements (y, v) only.
class ObservationView
{
public:
  explicit ObservationView(const TrajectoryDataset& ds) : ds_(&ds) {}

  std::size_t size() const noexcept { return ds_->size(); }
  int n() const noexcept { return ds_->meta.n; }
  int m() const noexcept { return ds_->meta.m; }
  int obs_dim() const noexcept { return ds_->meta.obs_dim; }
  int T() const noexcept { return ds_->meta.T; }
  const std::string& encoder() const noexcept { return ds_->meta.encoder; }

  const Mat& y(std::size_t i) const { return ds_->trajectories[i].y; }
  const Mat& v(std::size_t i) const { return ds_->trajectories[i].v; }

private:
  const TrajectoryDataset* ds_;
};

/// Discrete LQR gain by Riccati fixed-point iteration starting from P = Qc.
FeedbackGain lqr_gain(const LtiSystem& sys, const Mat& Qc, const Mat& Rc);

/// Stabilizing Riccati solution used by lqr_gain; exposed for tests.
Mat riccati_fixed_point(const LtiSystem& sys, const Mat& Qc, const Mat& Rc);

/// Expert rollouts u_t = K x_t on the true state, with measurement noise on
/// both channels. Each trajectory draws from its own substream.
TrajectoryDataset generate_expert_dataset(const LtiSystem& sys, const FeedbackGain& K, int n_traj, int T,
                                          const NoiseModel& x0_model, const NoiseModel& xi_model,
                                          const NoiseModel& eta_model, RngStream& rng);

/// Closed loop of a learned policy that only sees y_t = x_t + xi_t.
/// Result: x holds the true states, y the measurements, u the applied inputs.
Trajectory rollout_learned(const LtiSystem& sys, const Policy& policy, const Vec& x0, int T,
                           const NoiseModel& xi_model, RngStream& rng);

struct CoverageReport
{
  double phi_x = 0.0;
  std::size_t samples = 0;
};

/// Smallest eigenvalue of the pooled empirical second moment of the true
/// states x_0..x_{T-H}.
CoverageReport check_coverage(const TrajectoryDataset& ds, int H);

}  // namespace pil

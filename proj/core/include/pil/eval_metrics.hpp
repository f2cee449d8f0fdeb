#pragma once

#include <string>
#include <vector>

#include "pil/dynamics.hpp"
#include "pil/linear_learners.hpp"
#include "pil/nonlinear_world.hpp"

namespace pil {

struct DiscrepancyResult
{
  std::vector<double> per_traj;  ///< max_t ||x_t^exp - x_t^learned||_2
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation of per_traj
  int n_test = 0;

  double half_std() const { return 0.5 * std; }
};

/// Mean and population std of `values`.
void summarize(const std::vector<double>& values, double& mean, double& std);

/// Paired rollouts from shared starts x0 ~ x0_model. The expert acts on the
/// true state; the learned policy acts on x + xi (fresh noise each step). Both
/// closed loops are simulated as one column batch. Gaps use the dynamics'
/// wrapped difference. Extending T only appends draws, so results for a
/// shorter horizon are a prefix.
DiscrepancyResult max_discrepancy(const Dynamics& dyn, const Policy& expert, const Policy& learned, int n_test, int T,
                                  const NoiseModel& x0_model, const NoiseModel& xi_model, RngStream& rng);

DiscrepancyResult max_discrepancy(const LtiSystem& sys, const Policy& expert, const Policy& learned, int n_test, int T,
                                  const NoiseModel& x0_model, const NoiseModel& xi_model, RngStream& rng);

struct ReturnResult
{
  std::vector<double> per_episode;
  double mean = 0.0;
  double expert_mean = 0.0;
  /// mean / expert_mean (both are non-positive sums of costs).
  double ratio = 0.0;
};

/// Pendulum returns of `policy` (acting on x + xi) and of `expert` (on the true
/// state) from the same starts.
ReturnResult episode_return(const Pendulum& pendulum, const Policy& policy, const Policy& expert, int n_test, int T,
                            const NoiseModel& x0_model, const NoiseModel& xi_model, RngStream& rng);

enum class Estimator { PilFixedG, Bc, PilH1 };

const char* to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

struct ScalingConfig
{
  LtiSystem sys;
  Mat K_star;
  LossWeightsLinear weights;  ///< Q, R, P, H, decay for the predictive estimators
  Estimator estimator = Estimator::PilFixedG;
  std::vector<int> T_grid;          ///< total samples per dataset
  std::vector<double> xi_levels;    ///< Sigma_xi = level * I; must contain 0
  double eta_variance = 0.01;       ///< Sigma_eta = eta_variance * I
  int segment_length = 8;           ///< dataset = T / L trajectories of length L
  int seeds = 30;
  std::uint64_t seed = 0;
  int plateau_points = 2;           ///< largest-T cells averaged into a plateau
};

struct ScalingCell
{
  int T = 0;
  int T_eff = 0;  ///< n_traj (L - H + 1)
  double xi_level = 0.0;
  double mean_err = 0.0;
  double std_err = 0.0;
};

struct ScalingFit
{
  std::vector<ScalingCell> cells;
  /// Noise-free column: (T_eff, mean error), strictly increasing in T_eff.
  std::vector<std::pair<double, double>> grid;
  bool slope_fitted = false;
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;
  /// Plateau (large-T mean error) per nonzero xi level, ascending.
  std::vector<double> plateau_levels;
  std::vector<double> plateaus;
  /// plateaus[k+1] / plateaus[k] (meaningful when levels double).
  std::vector<double> plateau_ratios;
  /// Least-squares coefficient of plateau against level through the origin.
  double noise_floor = 0.0;
};

/// Error ||K_hat - K*|| (spectral) over a (T, Sigma_xi) grid. The predictive
/// estimators use the true closed-loop predictors. Slope is fitted on the
/// noise-free column unless its errors are at rounding level (< 1e-7).
ScalingFit scaling_scan(const ScalingConfig& cfg);

/// Least-squares line through (log x, log y).
void loglog_fit(const std::vector<std::pair<double, double>>& pts, double& slope, double& intercept,
                std::vector<double>& residuals);

}  // namespace pil

#pragma once

#include <vector>

#include "pil/lti_world.hpp"

namespace pil {

/// Multi-step transition maps G_1..G_H (n x n). G_0 is the identity and is
/// not stored.
struct PredictorSetLinear
{
  std::vector<Mat> G;

  int H() const noexcept { return static_cast<int>(G.size()); }
  /// tau-step map; tau = 0 returns the identity.
  Mat at(int tau) const;

  /// (A + B K)^tau for tau = 1..H.
  static PredictorSetLinear closed_loop_powers(const LtiSystem& sys, const Mat& K, int H);
  static PredictorSetLinear identity(int n, int H);
};

/// Weights of the predictive imitation objective. Term tau of the horizon is
/// scaled by decay^(tau-1).
struct LossWeightsLinear
{
  Mat Q;
  Mat R;
  Mat P;
  int H = 1;
  double decay = 1.0;

  LossWeightsLinear() = default;
  LossWeightsLinear(Mat q, Mat r, Mat p, int h, double alpha);

  double weight(int tau) const;
};

/// Ordinary least squares for the tau-step maps, pooled over trajectories:
/// G_tau = (sum_t y_{t+tau} y_t^T)(sum_t y_t y_t^T + ridge I)^{-1}, t = 0..T-tau.
PredictorSetLinear fit_predictors_ols(const ObservationView& data, int H, double ridge = 0.0);

/// K_BC = (sum v_t y_t^T)(sum y_t y_t^T)^{-1}
FeedbackGain fit_bc(const ObservationView& data);

/// Minimizer in K of the predictive objective with the predictors held fixed.
FeedbackGain fit_pil_fixed_G(const ObservationView& data, const LtiSystem& sys, const PredictorSetLinear& G,
                             const LossWeightsLinear& w);

/// One-step variant with G_1 tied to A + B K:
/// min_K sum ||y_{t+1} - (A + B K) y_t||_Q^2 + ||v_t - K y_t||_R^2
FeedbackGain fit_pil_h1(const ObservationView& data, const LtiSystem& sys, const Mat& Q, const Mat& R);

/// The full predictive objective (state, input and consistency terms) for
/// given K and predictors.
double pil_objective(const ObservationView& data, const LtiSystem& sys, const Mat& K, const PredictorSetLinear& G,
                     const LossWeightsLinear& w);

/// Objective of fit_pil_h1.
double pil_h1_objective(const ObservationView& data, const LtiSystem& sys, const Mat& K, const Mat& Q, const Mat& R);

/// Objective of fit_bc: sum ||v_t - K y_t||^2.
double bc_objective(const ObservationView& data, const Mat& K);

/// Objective of fit_predictors_ols for a single tau.
double ols_objective(const ObservationView& data, int tau, const Mat& G, double ridge = 0.0);

struct AlternatingResult
{
  FeedbackGain K;
  PredictorSetLinear G;
  int iterations = 0;
  bool converged = false;
  /// Objective after every half-step (K-step, then G-sweep), starting with the
  /// initial point.
  std::vector<double> objective_trace;
};

/// Block coordinate descent on (K, G_1..G_H): K-step is fit_pil_fixed_G, the
/// G-step minimizes the objective exactly in each G_tau (ascending tau, using
/// the already updated G_{tau-1}). Stops when the largest parameter change is
/// below tol. If max_iters is hit, the best iterate is returned with
/// converged = false.
AlternatingResult fit_pil_alternating(const ObservationView& data, const LtiSystem& sys, const LossWeightsLinear& w,
                                      int max_iters, double tol, const PredictorSetLinear* init = nullptr);

struct ComparisonReport
{
  Mat omega_pil;
  Mat omega_bc;
  double omega_pil_norm = 0.0;
  double omega_bc_norm = 0.0;
  double lhs = 0.0;  ///< ||B^T Q (I - A)|| sqrt(tr Sigma_xi)
  double rhs = 0.0;  ///< ||B^T Q B|| sqrt(tr Sigma_eta)
  bool condition_holds = false;
};

/// Noise-driven error terms of the one-step predictive and cloning estimators
/// and the sufficient condition comparing them. Needs the dataset's noise
/// records (simulation only).
ComparisonReport compare_pil_bc(const TrajectoryDataset& ds, const LtiSystem& sys, const Mat& Q, const Mat& R,
                                const Mat& sigma_xi, const Mat& sigma_eta);

}  // namespace pil

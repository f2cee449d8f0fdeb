#include "pil/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pil {

void summarize(const std::vector<double>& values, double& mean, double& std)
{
  mean = 0.0;
  std = 0.0;
  if (values.empty())
    return;
  mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values)
    ss += (v - mean) * (v - mean);
  std = std::sqrt(ss / static_cast<double>(values.size()));
}

namespace {

Mat checked_policy(const Policy& p, const Mat& X, int m, const char* who)
{
  Mat U = p(X);
  if (U.rows() != m || U.cols() != X.cols())
    throw ShapeError(std::string(who) + " returned " + describe_shape(U) + " for " + describe_shape(X));
  return U;
}

void wrap_rows(Mat& X, const std::vector<bool>& per)
{
  for (std::size_t r = 0; r < per.size(); ++r)
    if (per[r])
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        X(static_cast<Eigen::Index>(r), j) = wrap_angle(X(static_cast<Eigen::Index>(r), j));
}

}  // namespace

DiscrepancyResult max_discrepancy(const Dynamics& dyn, const Policy& expert, const Policy& learned, int n_test, int T,
                                  const NoiseModel& x0_model, const NoiseModel& xi_model, RngStream& rng)
{
  const int n = dyn.state_dim();
  const int m = dyn.input_dim();
  if (n_test < 1 || T < 0)
    throw ConfigError("max_discrepancy: need n_test >= 1 and T >= 0");
  if (x0_model.dim() != n || xi_model.dim() != n)
    throw ShapeError("max_discrepancy: noise model dimension mismatch");
  const auto per = dyn.periodic();

  const Mat X0 = x0_model.sample(n_test, rng);
  Mat xe = X0;
  Mat xl = X0;
  Vec worst = Vec::Zero(n_test);  // t = 0 contributes 0: the starts coincide
  for (int t = 0; t < T; ++t) {
    Mat y = xl + xi_model.sample(n_test, rng);
    wrap_rows(y, per);
    const Mat ue = checked_policy(expert, xe, m, "expert");
    const Mat ul = checked_policy(learned, y, m, "learned policy");
    xe = dyn.step(xe, ue);
    xl = dyn.step(xl, ul);
    worst = worst.cwiseMax(dyn.difference(xe, xl).colwise().norm().transpose());
  }

  DiscrepancyResult r;
  r.n_test = n_test;
  r.per_traj.assign(worst.data(), worst.data() + worst.size());
  summarize(r.per_traj, r.mean, r.std);
  return r;
}

DiscrepancyResult max_discrepancy(const LtiSystem& sys, const Policy& expert, const Policy& learned, int n_test, int T,
                                  const NoiseModel& x0_model, const NoiseModel& xi_model, RngStream& rng)
{
  return max_discrepancy(LinearDynamics(sys), expert, learned, n_test, T, x0_model, xi_model, rng);
}

ReturnResult episode_return(const Pendulum& pendulum, const Policy& policy, const Policy& expert, int n_test, int T,
                            const NoiseModel& x0_model, const NoiseModel& xi_model, RngStream& rng)
{
  if (n_test < 1 || T < 1)
    throw ConfigError("episode_return: need n_test >= 1 and T >= 1");
  if (x0_model.dim() != 2 || xi_model.dim() != 2)
    throw ShapeError("episode_return: noise model dimension mismatch");
  const auto per = pendulum.periodic();
  const double lim = pendulum.params().torque_limit;

  const Mat X0 = x0_model.sample(n_test, rng);
  Mat xp = X0;
  Mat xe = X0;
  Vec rp = Vec::Zero(n_test);
  Vec re = Vec::Zero(n_test);
  for (int t = 0; t < T; ++t) {
    Mat y = xp + xi_model.sample(n_test, rng);
    wrap_rows(y, per);
    const Mat up = checked_policy(policy, y, 1, "policy");
    const Mat ue = checked_policy(expert, xe, 1, "expert");
    for (int j = 0; j < n_test; ++j) {
      // The cost sees the torque actually applied.
      rp[j] += pendulum_reward(wrap_angle(xp(0, j)), xp(1, j), std::clamp(up(0, j), -lim, lim));
      re[j] += pendulum_reward(wrap_angle(xe(0, j)), xe(1, j), std::clamp(ue(0, j), -lim, lim));
    }
    xp = pendulum.step(xp, up);
    xe = pendulum.step(xe, ue);
  }
  ReturnResult r;
  r.per_episode.assign(rp.data(), rp.data() + rp.size());
  r.mean = rp.mean();
  r.expert_mean = re.mean();
  r.ratio = r.expert_mean != 0.0 ? r.mean / r.expert_mean : 1.0;
  return r;
}

const char* to_string(Estimator e)
{
  switch (e) {
    case Estimator::PilFixedG: return "pil_fixed_g";
    case Estimator::Bc: return "bc";
    case Estimator::PilH1: return "pil_h1";
  }
  return "?";
}

Estimator estimator_from_string(const std::string& s)
{
  if (s == "pil_fixed_g")
    return Estimator::PilFixedG;
  if (s == "bc")
    return Estimator::Bc;
  if (s == "pil_h1")
    return Estimator::PilH1;
  throw ConfigError("unknown estimator '" + s + "'");
}

void loglog_fit(const std::vector<std::pair<double, double>>& pts, double& slope, double& intercept,
                std::vector<double>& residuals)
{
  if (pts.size() < 2)
    throw ConfigError("loglog_fit: need at least two points");
  const auto k = static_cast<Eigen::Index>(pts.size());
  Mat X(k, 2);
  Vec y(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& [a, b] = pts[static_cast<std::size_t>(i)];
    if (!(a > 0.0) || !(b > 0.0))
      throw NumericalError("loglog_fit: coordinates must be positive");
    X(i, 0) = std::log(a);
    X(i, 1) = 1.0;
    y[i] = std::log(b);
  }
  const Vec beta = X.colPivHouseholderQr().solve(y);
  slope = beta[0];
  intercept = beta[1];
  const Vec res = y - X * beta;
  residuals.assign(res.data(), res.data() + res.size());
}

ScalingFit scaling_scan(const ScalingConfig& cfg)
{
  const int n = cfg.sys.n();
  const int m = cfg.sys.m();
  const int H = cfg.estimator == Estimator::PilFixedG ? cfg.weights.H : 1;
  const int L = cfg.segment_length;
  if (cfg.T_grid.size() < 2 || cfg.xi_levels.empty() || cfg.seeds < 1)
    throw ConfigError("scaling_scan: need >= 2 sample sizes, >= 1 noise level and >= 1 seed");
  if (L <= H)
    throw ConfigError("scaling_scan: segment length must exceed the horizon");
  if (!std::is_sorted(cfg.T_grid.begin(), cfg.T_grid.end()) ||
      std::adjacent_find(cfg.T_grid.begin(), cfg.T_grid.end()) != cfg.T_grid.end())
    throw ConfigError("scaling_scan: sample sizes must be strictly increasing");
  for (int T : cfg.T_grid)
    if (T < L || T % L != 0)
      throw ConfigError("scaling_scan: each sample size must be a positive multiple of the segment length");
  for (double lvl : cfg.xi_levels)
    if (lvl < 0.0)
      throw ConfigError("scaling_scan: noise levels must be non-negative");
  if (cfg.K_star.rows() != m || cfg.K_star.cols() != n)
    throw ShapeError("scaling_scan: K* has wrong shape");

  const PredictorSetLinear Gstar = PredictorSetLinear::closed_loop_powers(cfg.sys, cfg.K_star, H);
  const NoiseModel x0 = NoiseModel::isotropic_gaussian(n, 1.0);
  const NoiseModel eta = NoiseModel::isotropic_gaussian(m, cfg.eta_variance);

  ScalingFit fit;
  for (double lvl : cfg.xi_levels) {
    const NoiseModel xi = NoiseModel::isotropic_gaussian(n, lvl);
    for (int T : cfg.T_grid) {
      const int n_traj = T / L;
      std::vector<double> errs;
      errs.reserve(static_cast<std::size_t>(cfg.seeds));
      for (int s = 0; s < cfg.seeds; ++s) {
        // Same draw key for every noise level: common random numbers across the grid.
        RngStream rng(mix64(cfg.seed ^ mix64((static_cast<std::uint64_t>(T) << 20) + static_cast<std::uint64_t>(s))));
        const TrajectoryDataset ds = generate_expert_dataset(cfg.sys, {cfg.K_star}, n_traj, L, x0, xi, eta, rng);
        const ObservationView view(ds);
        Mat K;
        switch (cfg.estimator) {
          case Estimator::PilFixedG: K = fit_pil_fixed_G(view, cfg.sys, Gstar, cfg.weights).K; break;
          case Estimator::Bc: K = fit_bc(view).K; break;
          case Estimator::PilH1: K = fit_pil_h1(view, cfg.sys, cfg.weights.Q, cfg.weights.R).K; break;
        }
        errs.push_back(spectral_norm(K - cfg.K_star));
      }
      ScalingCell c;
      c.T = T;
      c.T_eff = n_traj * (L - H + 1);
      c.xi_level = lvl;
      summarize(errs, c.mean_err, c.std_err);
      fit.cells.push_back(c);
    }
  }

  for (const auto& c : fit.cells)
    if (c.xi_level == 0.0)
      fit.grid.emplace_back(static_cast<double>(c.T_eff), c.mean_err);
  if (fit.grid.size() >= 2) {
    const bool rounding_level =
        std::all_of(fit.grid.begin(), fit.grid.end(), [](const auto& p) { return p.second < 1e-7; });
    if (!rounding_level) {
      loglog_fit(fit.grid, fit.slope, fit.intercept, fit.residuals);
      fit.slope_fitted = true;
    }
  }

  std::vector<double> levels;
  for (double lvl : cfg.xi_levels)
    if (lvl > 0.0)
      levels.push_back(lvl);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  const int k = std::clamp(cfg.plateau_points, 1, static_cast<int>(cfg.T_grid.size()));
  double num = 0.0;
  double den = 0.0;
  for (double lvl : levels) {
    std::vector<double> tail;
    for (const auto& c : fit.cells)
      if (c.xi_level == lvl)
        tail.push_back(c.mean_err);
    const double p =
        std::accumulate(tail.end() - k, tail.end(), 0.0) / static_cast<double>(k);
    fit.plateau_levels.push_back(lvl);
    fit.plateaus.push_back(p);
    num += lvl * p;
    den += lvl * lvl;
  }
  for (std::size_t i = 1; i < fit.plateaus.size(); ++i)
    fit.plateau_ratios.push_back(fit.plateaus[i] / fit.plateaus[i - 1]);
  fit.noise_floor = den > 0.0 ? num / den : 0.0;
  return fit;
}

}  // namespace pil

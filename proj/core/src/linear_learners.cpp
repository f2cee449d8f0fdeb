#include "pil/linear_learners.hpp"

#include <cmath>
#include <limits>

namespace pil {

namespace {

void require_raw(const ObservationView& data, const char* who)
{
  if (data.obs_dim() != data.n())
    throw ShapeError(std::string(who) + ": closed-form learners need raw state observations");
  if (data.size() == 0) throw ConfigError(std::string(who) + ": empty dataset");
}

void check_system(const ObservationView& data, const LtiSystem& sys, const char* who)
{
  if (sys.n() != data.n() || sys.m() != data.m())
    throw ShapeError(std::string(who) + ": system dimensions do not match the dataset");
}

void check_square(const Mat& M, int n, const char* who, const char* name)
{
  if (M.rows() != n || M.cols() != n)
    throw ShapeError(std::string(who) + ": " + name + " must be " + std::to_string(n) + "x" + std::to_string(n) +
                     ", got " + describe_shape(M));
}

/// Left-multiplies with the inverse of a (small) coefficient matrix and then
/// right-divides by a Gram matrix, reporting which one failed.
Mat sandwich_solve(const Mat& left, const Mat& numerator, const Mat& gram, const char* who)
{
  Mat tmp;
  try {
    tmp = solve_linear(left, numerator);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(who) + ": weight matrix is not invertible: " + e.what());
  }
  try {
    return solve_right(tmp, gram);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(who) + ": data Gram matrix is singular: " + e.what());
  }
}

}  // namespace

Mat PredictorSetLinear::at(int tau) const
{
  if (tau == 0) {
    if (G.empty()) throw ShapeError("PredictorSetLinear: empty set has no dimension");
    return Mat::Identity(G.front().rows(), G.front().cols());
  }
  if (tau < 0 || tau > H()) throw ShapeError("PredictorSetLinear: tau " + std::to_string(tau) + " out of range");
  return G[static_cast<std::size_t>(tau - 1)];
}

PredictorSetLinear PredictorSetLinear::closed_loop_powers(const LtiSystem& sys, const Mat& K, int H)
{
  PredictorSetLinear out;
  const Mat M = sys.closed_loop(K);
  Mat P = Mat::Identity(sys.n(), sys.n());
  for (int tau = 1; tau <= H; ++tau) {
    P = M * P;
    out.G.push_back(P);
  }
  return out;
}

PredictorSetLinear PredictorSetLinear::identity(int n, int H)
{
  PredictorSetLinear out;
  out.G.assign(static_cast<std::size_t>(H), Mat::Identity(n, n));
  return out;
}

LossWeightsLinear::LossWeightsLinear(Mat q, Mat r, Mat p, int h, double alpha)
    : Q(std::move(q)), R(std::move(r)), P(std::move(p)), H(h), decay(alpha)
{
  if (H < 1) throw ConfigError("loss weights: H must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("loss weights: decay must lie in (0, 1]");
  if (!is_psd(Q)) throw NumericalError("loss weights: Q is not positive semidefinite");
  if (!is_psd(R)) throw NumericalError("loss weights: R is not positive semidefinite");
  if (!is_psd(P)) throw NumericalError("loss weights: P is not positive semidefinite");
  if (Q.rows() != P.rows()) throw ShapeError("loss weights: Q and P must share the state dimension");
}

double LossWeightsLinear::weight(int tau) const { return std::pow(decay, tau - 1); }

PredictorSetLinear fit_predictors_ols(const ObservationView& data, int H, double ridge)
{
  require_raw(data, "fit_predictors_ols");
  if (H < 1 || data.T() < H) throw ConfigError("fit_predictors_ols: need 1 <= H <= T");
  if (ridge < 0.0) throw ConfigError("fit_predictors_ols: ridge must be >= 0");
  const int n = data.n();
  const int T = data.T();

  PredictorSetLinear out;
  for (int tau = 1; tau <= H; ++tau) {
    Mat cross = Mat::Zero(n, n);
    Mat gram = ridge * Mat::Identity(n, n);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto Y0 = data.y(i).leftCols(T - tau + 1);
      const auto Y1 = data.y(i).middleCols(tau, T - tau + 1);
      cross.noalias() += Y1 * Y0.transpose();
      gram.noalias() += Y0 * Y0.transpose();
    }
    try {
      out.G.push_back(solve_right(cross, gram));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("fit_predictors_ols: singular Gram matrix (try a positive ridge): ") + e.what());
    }
  }
  return out;
}

FeedbackGain fit_bc(const ObservationView& data)
{
  require_raw(data, "fit_bc");
  const int n = data.n();
  const int m = data.m();
  const int T = data.T();
  Mat cross = Mat::Zero(m, n);
  Mat gram = Mat::Zero(n, n);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto Y = data.y(i).leftCols(T);
    cross.noalias() += data.v(i) * Y.transpose();
    gram.noalias() += Y * Y.transpose();
  }
  try {
    return {solve_right(cross, gram)};
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("fit_bc: singular Gram matrix: ") + e.what());
  }
}

FeedbackGain fit_pil_fixed_G(const ObservationView& data, const LtiSystem& sys, const PredictorSetLinear& G,
                             const LossWeightsLinear& w)
{
  require_raw(data, "fit_pil_fixed_G");
  check_system(data, sys, "fit_pil_fixed_G");
  const int n = data.n();
  const int m = data.m();
  const int T = data.T();
  const int H = w.H;
  if (G.H() < H) throw ShapeError("fit_pil_fixed_G: predictor set shorter than horizon");
  if (T < H) throw ConfigError("fit_pil_fixed_G: need T >= H");
  check_square(w.P, n, "fit_pil_fixed_G", "P");
  check_square(w.R, m, "fit_pil_fixed_G", "R");

  const Mat BtP = sys.B.transpose() * w.P;
  const Mat BtPA = BtP * sys.A;
  const int count = T - H + 1;

  Mat numerator = Mat::Zero(m, n);
  Mat gram = Mat::Zero(n, n);
  for (int tau = 1; tau <= H; ++tau) {
    const double d = w.weight(tau);
    const Mat Gprev = G.at(tau - 1);
    const Mat& Gcur = G.G[static_cast<std::size_t>(tau - 1)];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto Y0 = data.y(i).leftCols(count);
      const Mat pred_prev = Gprev * Y0;
      const Mat pred_cur = Gcur * Y0;
      const auto V = data.v(i).middleCols(tau - 1, count);
      const Mat target = w.R * V + BtP * pred_cur - BtPA * pred_prev;
      numerator.noalias() += d * target * pred_prev.transpose();
      gram.noalias() += d * pred_prev * pred_prev.transpose();
    }
  }
  return {sandwich_solve(w.R + BtP * sys.B, numerator, gram, "fit_pil_fixed_G")};
}

FeedbackGain fit_pil_h1(const ObservationView& data, const LtiSystem& sys, const Mat& Q, const Mat& R)
{
  require_raw(data, "fit_pil_h1");
  check_system(data, sys, "fit_pil_h1");
  const int n = data.n();
  const int m = data.m();
  const int T = data.T();
  check_square(Q, n, "fit_pil_h1", "Q");
  check_square(R, m, "fit_pil_h1", "R");

  const Mat BtQ = sys.B.transpose() * Q;
  Mat numerator = Mat::Zero(m, n);
  Mat gram = Mat::Zero(n, n);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto Y0 = data.y(i).leftCols(T);
    const auto Y1 = data.y(i).middleCols(1, T);
    const Mat residual = Y1 - sys.A * Y0;
    numerator.noalias() += BtQ * residual * Y0.transpose() + R * data.v(i) * Y0.transpose();
    gram.noalias() += Y0 * Y0.transpose();
  }
  return {sandwich_solve(BtQ * sys.B + R, numerator, gram, "fit_pil_h1")};
}

double pil_objective(const ObservationView& data, const LtiSystem& sys, const Mat& K, const PredictorSetLinear& G,
                     const LossWeightsLinear& w)
{
  const int T = data.T();
  const int H = w.H;
  const int count = T - H + 1;
  const Mat M = sys.closed_loop(K);
  double total = 0.0;
  for (int tau = 1; tau <= H; ++tau) {
    const double d = w.weight(tau);
    const Mat Gprev = G.at(tau - 1);
    const Mat& Gcur = G.G[static_cast<std::size_t>(tau - 1)];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto Y0 = data.y(i).leftCols(count);
      const Mat prev = Gprev * Y0;
      const Mat cur = Gcur * Y0;
      const Mat ey = data.y(i).middleCols(tau, count) - cur;
      const Mat ev = data.v(i).middleCols(tau - 1, count) - K * prev;
      const Mat wres = cur - M * prev;
      total += d * ((ey.transpose() * w.Q * ey).trace() + (ev.transpose() * w.R * ev).trace() +
                    (wres.transpose() * w.P * wres).trace());
    }
  }
  return total;
}

double pil_h1_objective(const ObservationView& data, const LtiSystem& sys, const Mat& K, const Mat& Q, const Mat& R)
{
  const int T = data.T();
  const Mat M = sys.closed_loop(K);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto Y0 = data.y(i).leftCols(T);
    const Mat ey = data.y(i).middleCols(1, T) - M * Y0;
    const Mat ev = data.v(i) - K * Y0;
    total += (ey.transpose() * Q * ey).trace() + (ev.transpose() * R * ev).trace();
  }
  return total;
}

double bc_objective(const ObservationView& data, const Mat& K)
{
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += (data.v(i) - K * data.y(i).leftCols(data.T())).squaredNorm();
  return total;
}

double ols_objective(const ObservationView& data, int tau, const Mat& G, double ridge)
{
  const int T = data.T();
  double total = ridge * G.squaredNorm();
  for (std::size_t i = 0; i < data.size(); ++i)
    total += (data.y(i).middleCols(tau, T - tau + 1) - G * data.y(i).leftCols(T - tau + 1)).squaredNorm();
  return total;
}

AlternatingResult fit_pil_alternating(const ObservationView& data, const LtiSystem& sys, const LossWeightsLinear& w,
                                      int max_iters, double tol, const PredictorSetLinear* init)
{
  require_raw(data, "fit_pil_alternating");
  check_system(data, sys, "fit_pil_alternating");
  const int n = data.n();
  const int T = data.T();
  const int H = w.H;
  if (T < H) throw ConfigError("fit_pil_alternating: need T >= H");
  check_square(w.Q, n, "fit_pil_alternating", "Q");
  check_square(w.P, n, "fit_pil_alternating", "P");
  const int count = T - H + 1;

  // Cross moments that do not depend on the iterate.
  Mat S = Mat::Zero(n, n);                                      // sum y_t y_t^T
  std::vector<Mat> Sy(static_cast<std::size_t>(H + 1), Mat::Zero(n, n));  // sum y_{t+tau} y_t^T
  std::vector<Mat> Sv(static_cast<std::size_t>(H + 1), Mat::Zero(data.m(), n));  // sum v_{t+tau} y_t^T
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto Y0 = data.y(i).leftCols(count);
    S.noalias() += Y0 * Y0.transpose();
    for (int tau = 1; tau <= H; ++tau)
      Sy[static_cast<std::size_t>(tau)].noalias() += data.y(i).middleCols(tau, count) * Y0.transpose();
    for (int tau = 0; tau < H; ++tau)
      Sv[static_cast<std::size_t>(tau)].noalias() += data.v(i).middleCols(tau, count) * Y0.transpose();
  }

  AlternatingResult res;
  res.G = init ? *init : PredictorSetLinear::identity(n, H);
  if (res.G.H() != H) throw ShapeError("fit_pil_alternating: initial predictor set has the wrong horizon");
  res.K.K = Mat::Zero(data.m(), n);
  res.objective_trace.push_back(pil_objective(data, sys, res.K.K, res.G, w));

  double best = std::numeric_limits<double>::infinity();
  AlternatingResult best_iterate;
  for (int it = 1; it <= max_iters; ++it) {
    const Mat K_old = res.K.K;
    const PredictorSetLinear G_old = res.G;

    res.K = fit_pil_fixed_G(data, sys, res.G, w);
    res.objective_trace.push_back(pil_objective(data, sys, res.K.K, res.G, w));

    const Mat& K = res.K.K;
    const Mat M = sys.closed_loop(K);
    const Mat KtRK = K.transpose() * w.R * K;
    const Mat MtPM = M.transpose() * w.P * M;
    for (int tau = 1; tau <= H; ++tau) {
      // Terms involving G_tau: state and consistency at tau, and (if tau < H)
      // input and consistency at tau + 1.
      const double d = w.weight(tau);
      Mat lhs = d * (w.Q + w.P);
      Mat rhs = d * (w.Q * Sy[static_cast<std::size_t>(tau)] + w.P * M * res.G.at(tau - 1) * S);
      if (tau < H) {
        const double d1 = w.weight(tau + 1);
        lhs += d1 * (KtRK + MtPM);
        rhs += d1 * (K.transpose() * w.R * Sv[static_cast<std::size_t>(tau)] +
                     M.transpose() * w.P * res.G.G[static_cast<std::size_t>(tau)] * S);
      }
      res.G.G[static_cast<std::size_t>(tau - 1)] = sandwich_solve(lhs, rhs, S, "fit_pil_alternating");
    }
    const double obj = pil_objective(data, sys, res.K.K, res.G, w);
    res.objective_trace.push_back(obj);
    res.iterations = it;

    double change = (res.K.K - K_old).cwiseAbs().maxCoeff();
    for (int tau = 0; tau < H; ++tau)
      change = std::max(change, (res.G.G[static_cast<std::size_t>(tau)] - G_old.G[static_cast<std::size_t>(tau)]).cwiseAbs().maxCoeff());

    if (obj < best) {
      best = obj;
      best_iterate.K = res.K;
      best_iterate.G = res.G;
    }
    if (change < tol) {
      res.converged = true;
      return res;
    }
  }
  best_iterate.iterations = res.iterations;
  best_iterate.converged = false;
  best_iterate.objective_trace = std::move(res.objective_trace);
  return best_iterate;
}

ComparisonReport compare_pil_bc(const TrajectoryDataset& ds, const LtiSystem& sys, const Mat& Q, const Mat& R,
                                const Mat& sigma_xi, const Mat& sigma_eta)
{
  if (!ds.has_noise_records) throw ConfigError("compare_pil_bc: dataset carries no noise records");
  const int n = sys.n();
  const int m = sys.m();
  check_square(Q, n, "compare_pil_bc", "Q");
  check_square(R, m, "compare_pil_bc", "R");
  check_square(sigma_xi, n, "compare_pil_bc", "Sigma_xi");
  check_square(sigma_eta, m, "compare_pil_bc", "Sigma_eta");
  const int T = ds.meta.T;

  const Mat BtQ = sys.B.transpose() * Q;
  const Mat BtQB = BtQ * sys.B;
  ComparisonReport rep;
  rep.omega_pil = Mat::Zero(m, n);
  rep.omega_bc = Mat::Zero(m, n);
  for (const auto& tr : ds.trajectories) {
    if (tr.xi.cols() != T + 1 || tr.eta.cols() != T) throw ConfigError("compare_pil_bc: incomplete noise records");
    const auto Y0 = tr.y.leftCols(T);
    const Mat state_noise = tr.xi.middleCols(1, T) - sys.A * tr.xi.leftCols(T);
    rep.omega_pil.noalias() += BtQ * state_noise * Y0.transpose();
    rep.omega_bc.noalias() += BtQB * tr.eta * Y0.transpose();
  }
  rep.omega_pil_norm = spectral_norm(rep.omega_pil);
  rep.omega_bc_norm = spectral_norm(rep.omega_bc);
  rep.lhs = spectral_norm(BtQ * (Mat::Identity(n, n) - sys.A)) * std::sqrt(sigma_xi.trace());
  rep.rhs = spectral_norm(BtQB) * std::sqrt(sigma_eta.trace());
  // Relative slack so exact ties (common for structured A, B) survive rounding.
  rep.condition_holds = rep.lhs <= rep.rhs * (1.0 + 1e-12);
  return rep;
}

}  // namespace pil

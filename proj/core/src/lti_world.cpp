#include "pil/lti_world.hpp"

#include <cmath>
#include <sstream>

namespace pil {

LtiSystem::LtiSystem(Mat a, Mat b) : A(std::move(a)), B(std::move(b))
{
  if (A.rows() != A.cols()) throw ShapeError("LtiSystem: A must be square, got " + describe_shape(A));
  if (B.rows() != A.rows())
    throw ShapeError("LtiSystem: B has " + std::to_string(B.rows()) + " rows, expected " + std::to_string(A.rows()));
  if (!is_finite(A) || !is_finite(B)) throw NumericalError("LtiSystem: non-finite entries");
}

LtiSystem reference_lti_system()
{
  Mat A(2, 2);
  A << 0.95, 0.05, 0.0, 0.95;
  Mat B(2, 1);
  B << 0.0, 0.05;
  return {A, B};
}

Policy linear_policy(const Mat& K)
{
  return [K](const Mat& states) -> Mat {
    if (states.rows() != K.cols())
      throw ShapeError("linear policy: state dim " + std::to_string(states.rows()) + " != gain cols " +
                       std::to_string(K.cols()));
    return K * states;
  };
}

void TrajectoryDataset::validate() const
{
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    auto bad = [&](const char* field, const Mat& M, int rows, int cols) {
      if (M.rows() != rows || M.cols() != cols) {
        std::ostringstream os;
        os << "trajectory " << i << ": field " << field << " is " << describe_shape(M) << ", expected " << rows
           << "x" << cols;
        throw ShapeError(os.str());
      }
    };
    bad("x", tr.x, meta.n, meta.T + 1);
    bad("u", tr.u, meta.m, meta.T);
    bad("y", tr.y, meta.obs_dim, meta.T + 1);
    bad("v", tr.v, meta.m, meta.T);
    if (has_noise_records) {
      bad("xi", tr.xi, meta.n, meta.T + 1);
      bad("eta", tr.eta, meta.m, meta.T);
    }
  }
}

Mat riccati_fixed_point(const LtiSystem& sys, const Mat& Qc, const Mat& Rc)
{
  const int n = sys.n();
  const int m = sys.m();
  if (Qc.rows() != n || Qc.cols() != n) throw ShapeError("lqr: Qc must be " + std::to_string(n) + "x" + std::to_string(n));
  if (Rc.rows() != m || Rc.cols() != m) throw ShapeError("lqr: Rc must be " + std::to_string(m) + "x" + std::to_string(m));
  if (!is_psd(Qc)) throw NumericalError("lqr: Qc is not positive semidefinite");
  if (!is_psd(Rc) || min_eigenvalue_sym(Rc) <= 0.0) throw NumericalError("lqr: Rc is not positive definite");

  const Mat& A = sys.A;
  const Mat& B = sys.B;
  Mat P = Qc;
  for (int it = 0; it < 100000; ++it) {
    const Mat BtP = B.transpose() * P;
    const Mat gain = solve_linear(Rc + BtP * B, BtP * A);
    Mat next = Qc + A.transpose() * P * A - A.transpose() * P * B * gain;
    next = 0.5 * (next + next.transpose());
    if (!is_finite(next)) throw NumericalError("lqr: Riccati iteration diverged (system not stabilizable?)");
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change <= 1e-12 * std::max(1.0, P.cwiseAbs().maxCoeff())) return P;
  }
  throw NumericalError("lqr: Riccati iteration did not converge within 100000 steps");
}

FeedbackGain lqr_gain(const LtiSystem& sys, const Mat& Qc, const Mat& Rc)
{
  const Mat P = riccati_fixed_point(sys, Qc, Rc);
  const Mat BtP = sys.B.transpose() * P;
  FeedbackGain g{-solve_linear(Rc + BtP * sys.B, BtP * sys.A)};
  const double rho = spectral_radius(sys.closed_loop(g.K));
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "lqr: closed loop is not stable (spectral radius " << rho << ")";
    throw NumericalError(os.str());
  }
  return g;
}

TrajectoryDataset generate_expert_dataset(const LtiSystem& sys, const FeedbackGain& K, int n_traj, int T,
                                          const NoiseModel& x0_model, const NoiseModel& xi_model,
                                          const NoiseModel& eta_model, RngStream& rng)
{
  const int n = sys.n();
  const int m = sys.m();
  if (K.K.rows() != m || K.K.cols() != n) throw ShapeError("generate_expert_dataset: gain must be " + std::to_string(m) + "x" + std::to_string(n));
  if (x0_model.dim() != n || xi_model.dim() != n || eta_model.dim() != m)
    throw ShapeError("generate_expert_dataset: noise model dimensions do not match the system");
  if (n_traj < 0 || T < 1) throw ConfigError("generate_expert_dataset: need n_traj >= 0 and T >= 1");

  TrajectoryDataset ds;
  ds.meta.n = n;
  ds.meta.m = m;
  ds.meta.T = T;
  ds.meta.obs_dim = n;
  ds.meta.x0 = x0_model;
  ds.meta.xi = xi_model;
  ds.meta.eta = eta_model;
  ds.meta.seed = rng.seed();
  ds.meta.expert = "linear_state_feedback";
  ds.meta.extra["K"] = std::vector<double>(K.K.data(), K.K.data() + K.K.size());

  const RngStream base(rng.next_u64());
  ds.trajectories.resize(static_cast<std::size_t>(n_traj));
  for (int i = 0; i < n_traj; ++i) {
    RngStream r = base.substream(static_cast<std::uint64_t>(i));
    Trajectory& tr = ds.trajectories[static_cast<std::size_t>(i)];
    tr.x.resize(n, T + 1);
    tr.u.resize(m, T);
    tr.x.col(0) = x0_model.sample(1, r).col(0);
    for (int t = 0; t < T; ++t) {
      tr.u.col(t) = K.K * tr.x.col(t);
      tr.x.col(t + 1) = sys.A * tr.x.col(t) + sys.B * tr.u.col(t);
    }
    tr.y = tr.x + xi_model.sample(T + 1, r);
    tr.v = tr.u + eta_model.sample(T, r);
    // Record the realized noise so y - x == xi holds bit-for-bit.
    tr.xi = tr.y - tr.x;
    tr.eta = tr.v - tr.u;
  }
  return ds;
}

Trajectory rollout_learned(const LtiSystem& sys, const Policy& policy, const Vec& x0, int T,
                           const NoiseModel& xi_model, RngStream& rng)
{
  const int n = sys.n();
  const int m = sys.m();
  if (x0.size() != n) throw ShapeError("rollout_learned: x0 has wrong dimension");
  if (xi_model.dim() != n) throw ShapeError("rollout_learned: noise model dimension mismatch");

  Trajectory tr;
  tr.x.resize(n, T + 1);
  tr.y.resize(n, T + 1);
  tr.u.resize(m, T);
  tr.x.col(0) = x0;
  const Mat noise = xi_model.sample(T + 1, rng);
  for (int t = 0; t <= T; ++t) {
    tr.y.col(t) = tr.x.col(t) + noise.col(t);
    if (t == T) break;
    const Mat u = policy(tr.y.col(t));
    if (u.rows() != m || u.cols() != 1)
      throw ShapeError("rollout_learned: policy returned " + describe_shape(u) + ", expected " + std::to_string(m) + "x1");
    tr.u.col(t) = u.col(0);
    tr.x.col(t + 1) = sys.A * tr.x.col(t) + sys.B * tr.u.col(t);
  }
  tr.xi = tr.y - tr.x;
  return tr;
}

CoverageReport check_coverage(const TrajectoryDataset& ds, int H)
{
  if (ds.trajectories.empty()) throw ConfigError("check_coverage: empty dataset");
  if (H < 0 || ds.meta.T < H) throw ConfigError("check_coverage: need T >= H");
  const int n = ds.meta.n;
  Mat gram = Mat::Zero(n, n);
  std::size_t count = 0;
  for (const auto& tr : ds.trajectories) {
    const auto X = tr.x.leftCols(ds.meta.T - H + 1);
    gram.noalias() += X * X.transpose();
    count += static_cast<std::size_t>(X.cols());
  }
  gram /= static_cast<double>(count);
  return {std::max(0.0, min_eigenvalue_sym(gram)), count};
}

}  // namespace pil

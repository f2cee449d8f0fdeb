#include "pil/nonlinear_world.hpp"

#include <algorithm>
#include <cmath>

namespace pil {

void PendulumParams::validate() const
{
  for (double v : {g, l, mass, dt, torque_limit})
    if (!(v > 0.0) || !std::isfinite(v))
      throw ConfigError("pendulum parameters must be positive and finite");
}

nlohmann::json PendulumParams::to_json() const
{
  return {{"g", g}, {"l", l}, {"mass", mass}, {"dt", dt}, {"torque_limit", torque_limit}};
}

PendulumParams PendulumParams::from_json(const nlohmann::json& j)
{
  PendulumParams p;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (!it->is_number())
      throw ConfigError("pendulum." + k + " must be a number");
    const double v = it->get<double>();
    if (k == "g") p.g = v;
    else if (k == "l") p.l = v;
    else if (k == "mass") p.mass = v;
    else if (k == "dt") p.dt = v;
    else if (k == "torque_limit") p.torque_limit = v;
    else throw ConfigError("unknown key 'pendulum." + k + "'");
  }
  p.validate();
  return p;
}

Pendulum::Pendulum(PendulumParams p) : p_(p)
{
  p_.validate();
  a_ = 3.0 * p_.g / (2.0 * p_.l);
  b_ = 3.0 / (p_.mass * p_.l * p_.l);
}

Mat Pendulum::step(const Mat& X, const Mat& U) const
{
  if (X.rows() != 2 || U.rows() != 1 || X.cols() != U.cols())
    throw ShapeError("pendulum step: state " + describe_shape(X) + ", input " + describe_shape(U));
  Mat out(2, X.cols());
  const double lim = p_.torque_limit;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double th = X(0, j);
    const double u = std::clamp(U(0, j), -lim, lim);
    const double om = X(1, j) + p_.dt * (a_ * std::sin(th) + b_ * u);
    out(0, j) = wrap_angle(th + p_.dt * om);
    out(1, j) = om;
  }
  return out;
}

void Pendulum::jacobians(const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) const
{
  const double dt = p_.dt;
  const double c = std::cos(x(0));
  const double bu = std::abs(u(0)) <= p_.torque_limit ? b_ : 0.0;
  Jx.resize(2, 2);
  Ju.resize(2, 1);
  Jx << 1.0 + dt * dt * a_ * c, dt, dt * a_ * c, 1.0;
  Ju << dt * dt * bu, dt * bu;
}

void Pendulum::vjp(const Mat& X, const Mat& U, const Mat& adj, Mat& adjX, Mat& adjU) const
{
  const double dt = p_.dt;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double c = std::cos(X(0, j));
    const double bu = std::abs(U(0, j)) <= p_.torque_limit ? b_ : 0.0;
    const double g0 = adj(0, j);
    const double g1 = adj(1, j);
    adjX(0, j) += (1.0 + dt * dt * a_ * c) * g0 + dt * a_ * c * g1;
    adjX(1, j) += dt * g0 + g1;
    adjU(0, j) += dt * dt * bu * g0 + dt * bu * g1;
  }
}

nlohmann::json Pendulum::descriptor() const
{
  nlohmann::json j = p_.to_json();
  j["name"] = "pendulum";
  return j;
}

double Pendulum::energy(double theta, double theta_dot) const
{
  const double ml2 = p_.mass * p_.l * p_.l;
  return 0.5 * (ml2 / 3.0) * theta_dot * theta_dot + 0.5 * p_.mass * p_.g * p_.l * std::cos(theta);
}

LtiSystem Pendulum::linearize_upright() const
{
  Mat Jx, Ju;
  jacobians(Vec::Zero(2), Vec::Zero(1), Jx, Ju);
  return LtiSystem(Jx, Ju);
}

Policy pendulum_expert(const Pendulum& pendulum, double k_e)
{
  const Mat K = lqr_gain(pendulum.linearize_upright(), Mat::Identity(2, 2), Mat::Identity(1, 1)).K;
  const double lim = pendulum.params().torque_limit;
  const double e_up = pendulum.upright_energy();
  const Pendulum p = pendulum;
  return [K, lim, e_up, k_e, p](const Mat& X) -> Mat {
    if (X.rows() != 2)
      throw ShapeError("pendulum expert: state " + describe_shape(X));
    Mat U(1, X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double th = wrap_angle(X(0, j));
      const double om = X(1, j);
      double u;
      if (std::abs(th) < 0.3 && std::abs(om) < 1.0)
        u = K(0, 0) * th + K(0, 1) * om;
      else
        u = -k_e * om * (p.energy(th, om) - e_up);
      U(0, j) = std::clamp(u, -lim, lim);
    }
    return U;
  };
}

double pendulum_reward(double theta, double theta_dot, double u)
{
  return -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
}

Policy MlpExpert::policy() const
{
  const nn::Mlp n = net;
  const Vec w = flat;
  return [n, w](const Mat& X) { return n.eval(w, X); };
}

MlpExpert mlp_expert_linear(std::uint64_t seed)
{
  nn::MlpSpec spec;
  spec.widths = {2, 16, 16, 1};
  spec.hidden = nn::Activation::Relu;
  spec.output = nn::Activation::Tanh;
  ad::ParamStore store;
  nn::Mlp net(spec, store, "expert");
  RngStream rng(seed);
  net.init(store, rng);
  return {net, store.flat};
}

ObsEncoder ObsEncoder::raw(int n)
{
  return {EncoderKind::Raw, std::vector<bool>(static_cast<std::size_t>(n), false)};
}

ObsEncoder ObsEncoder::trig_angle(const std::vector<bool>& periodic)
{
  return {EncoderKind::TrigAngle, periodic};
}

ObsEncoder ObsEncoder::from_name(const std::string& name, const std::vector<bool>& periodic)
{
  if (name == "raw")
    return raw(static_cast<int>(periodic.size()));
  if (name == "trig_angle")
    return trig_angle(periodic);
  throw ConfigError("unknown encoder '" + name + "'");
}

std::string ObsEncoder::name() const { return kind == EncoderKind::Raw ? "raw" : "trig_angle"; }

int ObsEncoder::obs_dim() const
{
  if (kind == EncoderKind::Raw)
    return state_dim();
  return state_dim() + static_cast<int>(std::count(periodic.begin(), periodic.end(), true));
}

Mat ObsEncoder::encode(const Mat& X) const
{
  if (X.rows() != state_dim())
    throw ShapeError("encode: state " + describe_shape(X));
  if (kind == EncoderKind::Raw)
    return X;
  Mat Y(obs_dim(), X.cols());
  Eigen::Index out = 0;
  for (std::size_t r = 0; r < periodic.size(); ++r) {
    const auto row = X.row(static_cast<Eigen::Index>(r));
    if (periodic[r]) {
      Y.row(out++) = row.array().cos().matrix();
      Y.row(out++) = row.array().sin().matrix();
    } else {
      Y.row(out++) = row;
    }
  }
  return Y;
}

Mat ObsEncoder::decode(const Mat& Y) const
{
  if (Y.rows() != obs_dim())
    throw ShapeError("decode: observation " + describe_shape(Y));
  if (kind == EncoderKind::Raw)
    return Y;
  Mat X(state_dim(), Y.cols());
  Eigen::Index in = 0;
  for (std::size_t r = 0; r < periodic.size(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    if (periodic[r]) {
      for (Eigen::Index j = 0; j < Y.cols(); ++j)
        X(ri, j) = std::atan2(Y(in + 1, j), Y(in, j));
      in += 2;
    } else {
      X.row(ri) = Y.row(in++);
    }
  }
  return X;
}

TrajectoryDataset generate_nonlinear_dataset(const Dynamics& dyn, const Policy& expert, int n_traj, int T,
                                             const NoiseModel& x0_model, const NoiseModel& xi_model,
                                             const NoiseModel& eta_model, const ObsEncoder& encoder, RngStream& rng)
{
  const int n = dyn.state_dim();
  const int m = dyn.input_dim();
  if (x0_model.dim() != n || xi_model.dim() != n || eta_model.dim() != m)
    throw ShapeError("generate_nonlinear_dataset: noise model dimensions do not match the system");
  if (encoder.state_dim() != n)
    throw ShapeError("generate_nonlinear_dataset: encoder state dimension mismatch");
  if (n_traj < 0 || T < 1)
    throw ConfigError("generate_nonlinear_dataset: need n_traj >= 0 and T >= 1");

  TrajectoryDataset ds;
  ds.meta.n = n;
  ds.meta.m = m;
  ds.meta.T = T;
  ds.meta.obs_dim = encoder.obs_dim();
  ds.meta.encoder = encoder.name();
  ds.meta.x0 = x0_model;
  ds.meta.xi = xi_model;
  ds.meta.eta = eta_model;
  ds.meta.seed = rng.seed();
  ds.meta.extra["dynamics"] = dyn.descriptor();

  const RngStream base(rng.next_u64());
  ds.trajectories.resize(static_cast<std::size_t>(n_traj));
  for (int i = 0; i < n_traj; ++i) {
    RngStream r = base.substream(static_cast<std::uint64_t>(i));
    Trajectory& tr = ds.trajectories[static_cast<std::size_t>(i)];
    tr.x.resize(n, T + 1);
    tr.u.resize(m, T);
    tr.x.col(0) = x0_model.sample(1, r).col(0);
    for (int t = 0; t < T; ++t) {
      const Mat u = expert(tr.x.col(t));
      if (u.rows() != m || u.cols() != 1)
        throw ShapeError("generate_nonlinear_dataset: expert returned " + describe_shape(u));
      tr.u.col(t) = u.col(0);
      tr.x.col(t + 1) = dyn.step(tr.x.col(t), u).col(0);
    }
    tr.xi = xi_model.sample(T + 1, r);
    tr.y = encoder.encode(tr.x + tr.xi);
    tr.v = tr.u + eta_model.sample(T, r);
    tr.eta = tr.v - tr.u;
    if (encoder.kind == EncoderKind::Raw)
      tr.xi = tr.y - tr.x;
  }
  return ds;
}

Trajectory rollout_nonlinear(const Dynamics& dyn, const Policy& policy, const Vec& x0, int T,
                             const NoiseModel& xi_model, RngStream& rng)
{
  const int n = dyn.state_dim();
  const int m = dyn.input_dim();
  if (x0.size() != n)
    throw ShapeError("rollout_nonlinear: x0 has wrong dimension");
  if (xi_model.dim() != n)
    throw ShapeError("rollout_nonlinear: noise model dimension mismatch");
  const auto per = dyn.periodic();

  Trajectory tr;
  tr.x.resize(n, T + 1);
  tr.y.resize(n, T + 1);
  tr.u.resize(m, T);
  tr.x.col(0) = x0;
  tr.xi = xi_model.sample(T + 1, rng);
  for (int t = 0; t <= T; ++t) {
    tr.y.col(t) = tr.x.col(t) + tr.xi.col(t);
    for (int r = 0; r < n; ++r)
      if (per[static_cast<std::size_t>(r)])
        tr.y(r, t) = wrap_angle(tr.y(r, t));
    if (t == T)
      break;
    const Mat u = policy(tr.y.col(t));
    if (u.rows() != m || u.cols() != 1)
      throw ShapeError("rollout_nonlinear: policy returned " + describe_shape(u));
    tr.u.col(t) = u.col(0);
    tr.x.col(t + 1) = dyn.step(tr.x.col(t), u).col(0);
  }
  return tr;
}

}  // namespace pil

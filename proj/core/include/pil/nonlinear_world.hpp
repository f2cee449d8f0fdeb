#pragma once

#include <string>
#include <vector>

#include "pil/dynamics.hpp"
#include "pil/nn.hpp"

namespace pil {

struct PendulumParams
{
  double g = 9.81;
  double l = 1.0;
  double mass = 1.0;
  double dt = 0.05;
  double torque_limit = 2.0;

  void validate() const;
  nlohmann::json to_json() const;
  static PendulumParams from_json(const nlohmann::json& j);
};

/// Rigid rod driven by a pivot torque, theta = 0 upright. State (theta, theta_dot).
/// Semi-implicit Euler:
///   theta_dot' = theta_dot + dt (3g/(2l) sin theta + 3/(m l^2) clip(u))
///   theta'     = wrap(theta + dt theta_dot')
class Pendulum final : public Dynamics
{
public:
  explicit Pendulum(PendulumParams p = {});

  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  Mat step(const Mat& X, const Mat& U) const override;
  /// The wrap is treated as the identity. At |u| beyond the torque limit the
  /// input derivative is 0.
  void jacobians(const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) const override;
  void vjp(const Mat& X, const Mat& U, const Mat& adj, Mat& adjX, Mat& adjU) const override;
  std::vector<bool> periodic() const override { return {true, false}; }
  nlohmann::json descriptor() const override;

  const PendulumParams& params() const noexcept { return p_; }

  /// 1/2 (m l^2 / 3) theta_dot^2 + (m g l / 2) cos theta. Equals m g l / 2 at
  /// the upright equilibrium.
  double energy(double theta, double theta_dot) const;
  double upright_energy() const { return 0.5 * p_.mass * p_.g * p_.l; }

  /// Linearization about the upright equilibrium with zero torque.
  LtiSystem linearize_upright() const;

private:
  PendulumParams p_;
  double a_;  // 3g/(2l)
  double b_;  // 3/(m l^2)
};

/// Energy-shaping swing-up with LQR catch: inside |theta| < 0.3 and
/// |theta_dot| < 1 the input is K (theta, theta_dot) with K the LQR gain
/// (Qc = I, Rc = I) of the upright linearization; elsewhere
/// u = -k_e theta_dot (E - E_upright). Both branches clip to the torque limit.
Policy pendulum_expert(const Pendulum& pendulum, double k_e = 1.0);

/// Per-step reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2).
double pendulum_reward(double theta, double theta_dot, double u);

/// Frozen random network 2 -> 16 -> 16 -> 1 (ReLU hidden, tanh output)
/// initialized from `seed`.
struct MlpExpert
{
  nn::Mlp net;
  Vec flat;

  Policy policy() const;
};

MlpExpert mlp_expert_linear(std::uint64_t seed);

enum class EncoderKind { Raw, TrigAngle };

/// Measurement encoder. trig_angle replaces every periodic coordinate r by
/// (cos r, sin r) in place, so (theta, theta_dot) -> (cos theta, sin theta, theta_dot).
struct ObsEncoder
{
  EncoderKind kind = EncoderKind::Raw;
  std::vector<bool> periodic;

  static ObsEncoder raw(int n);
  static ObsEncoder trig_angle(const std::vector<bool>& periodic);
  static ObsEncoder from_name(const std::string& name, const std::vector<bool>& periodic);

  std::string name() const;
  int state_dim() const { return static_cast<int>(periodic.size()); }
  int obs_dim() const;
  Mat encode(const Mat& X) const;
  /// Inverse on the image of encode: periodic coordinates via atan2(sin, cos).
  Mat decode(const Mat& Y) const;
};

/// Expert rollouts on a known (possibly nonlinear) system. The expert sees the
/// true state. State noise is drawn in raw coordinates and added before
/// encoding; input noise is added to the expert's input.
TrajectoryDataset generate_nonlinear_dataset(const Dynamics& dyn, const Policy& expert, int n_traj, int T,
                                             const NoiseModel& x0_model, const NoiseModel& xi_model,
                                             const NoiseModel& eta_model, const ObsEncoder& encoder, RngStream& rng);

/// Closed loop x' = f(x, policy(y)) from x0, where y = x + xi in raw
/// coordinates (periodic ones wrapped).
Trajectory rollout_nonlinear(const Dynamics& dyn, const Policy& policy, const Vec& x0, int T,
                             const NoiseModel& xi_model, RngStream& rng);

constexpr double deg_to_rad(double deg) { return deg * 0.017453292519943295; }

}  // namespace pil

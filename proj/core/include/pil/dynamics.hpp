#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "pil/lti_world.hpp"

namespace pil {

/// Known dynamics x' = f(x, u), evaluated on column batches.
class Dynamics
{
public:
  virtual ~Dynamics() = default;

  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;

  virtual Mat step(const Mat& X, const Mat& U) const = 0;

  /// df/dx (n x n) and df/du (n x m) at a single point.
  virtual void jacobians(const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) const = 0;

  /// Vector-Jacobian product over a batch: adjX += Jx^T adj, adjU += Ju^T adj
  /// column by column. The default evaluates jacobians() per column.
  virtual void vjp(const Mat& X, const Mat& U, const Mat& adj, Mat& adjX, Mat& adjU) const;

  /// Coordinates that live on the circle (wrapped to (-pi, pi]).
  virtual std::vector<bool> periodic() const { return std::vector<bool>(static_cast<std::size_t>(state_dim()), false); }

  virtual nlohmann::json descriptor() const = 0;

  /// a - b with periodic coordinates wrapped to (-pi, pi].
  Mat difference(const Mat& a, const Mat& b) const;
};

using DynamicsPtr = std::shared_ptr<const Dynamics>;

class LinearDynamics final : public Dynamics
{
public:
  explicit LinearDynamics(LtiSystem sys) : sys_(std::move(sys)) {}

  int state_dim() const override { return sys_.n(); }
  int input_dim() const override { return sys_.m(); }
  Mat step(const Mat& X, const Mat& U) const override;
  void jacobians(const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) const override;
  void vjp(const Mat& X, const Mat& U, const Mat& adj, Mat& adjX, Mat& adjU) const override;
  nlohmann::json descriptor() const override;

  const LtiSystem& system() const noexcept { return sys_; }

private:
  LtiSystem sys_;
};

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

}  // namespace pil

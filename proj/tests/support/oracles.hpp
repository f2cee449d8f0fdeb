#pragma once

// Test-side reference computations. Nothing here calls into the library's
// solvers, so agreement with the library is evidence rather than tautology.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "pil/dynamics.hpp"

namespace pil::test {

/// Dense quadratic f(x) = 1/2 x^T H x + g^T x + c recovered from a black-box
/// f by second differences. Exact (up to rounding) when f is quadratic.
struct Quadratic
{
  Mat H;
  Vec g;
  double c = 0.0;
};

inline Quadratic extract_quadratic(const std::function<double(const Vec&)>& f, int dim, double h = 1.0)
{
  Quadratic q;
  q.H = Mat::Zero(dim, dim);
  q.g = Vec::Zero(dim);
  const Vec zero = Vec::Zero(dim);
  q.c = f(zero);
  std::vector<double> fp(static_cast<std::size_t>(dim)), fm(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) {
    Vec e = zero;
    e[i] = h;
    fp[static_cast<std::size_t>(i)] = f(e);
    fm[static_cast<std::size_t>(i)] = f(-e);
    q.g[i] = (fp[static_cast<std::size_t>(i)] - fm[static_cast<std::size_t>(i)]) / (2.0 * h);
    q.H(i, i) = (fp[static_cast<std::size_t>(i)] - 2.0 * q.c + fm[static_cast<std::size_t>(i)]) / (h * h);
  }
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j) {
      Vec e = zero;
      e[i] = h;
      e[j] = h;
      // f(h e_i + h e_j) = c + h (g_i + g_j) + h^2 ((H_ii + H_jj) / 2 + H_ij)
      const double fij = f(e);
      const double hij =
          (fij - q.c - h * (q.g[i] + q.g[j]) - 0.5 * h * h * (q.H(i, i) + q.H(j, j))) / (h * h);
      q.H(i, j) = hij;
      q.H(j, i) = hij;
    }
  return q;
}

/// Minimizes 1/2 x^T H x + g^T x by conjugate gradients (plain loops, H SPD).
inline Vec cg_minimize(const Mat& H, const Vec& g, int max_iters = 10000, double tol = 1e-14)
{
  const int n = static_cast<int>(g.size());
  Vec x = Vec::Zero(n);
  Vec r = -g;  // residual of H x = -g
  Vec p = r;
  double rr = r.dot(r);
  const double stop = tol * tol * std::max(1.0, g.dot(g));
  for (int k = 0; k < max_iters && rr > stop; ++k) {
    const Vec Hp = H * p;
    const double alpha = rr / p.dot(Hp);
    x += alpha * p;
    r -= alpha * Hp;
    const double rr_new = r.dot(r);
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return x;
}

/// Column-major vec and its inverse.
inline Vec vec(const Mat& M) { return Eigen::Map<const Vec>(M.data(), M.size()); }
inline Mat unvec(const Vec& v, int rows, int cols) { return Eigen::Map<const Mat>(v.data(), rows, cols); }

/// Central difference of f along d.
inline double directional_fd(const std::function<double(const Vec&)>& f, const Vec& x, const Vec& d, double h)
{
  return (f(x + h * d) - f(x - h * d)) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-12)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Dynamics that records every step() output (record mode) or replays them in
/// call order (replay mode). Replaying freezes f's output, which is exactly
/// what a stop-gradient on the dynamics means for a finite-difference oracle.
class RecordReplayDynamics final : public Dynamics
{
public:
  explicit RecordReplayDynamics(const Dynamics& inner) : inner_(inner) {}

  void replay() { replaying_ = true; cursor_ = 0; }
  void rewind() { cursor_ = 0; }

  int state_dim() const override { return inner_.state_dim(); }
  int input_dim() const override { return inner_.input_dim(); }
  Mat step(const Mat& X, const Mat& U) const override
  {
    if (replaying_)
      return recorded_.at(cursor_++);
    recorded_.push_back(inner_.step(X, U));
    return recorded_.back();
  }
  void jacobians(const Vec& x, const Vec& u, Mat& Jx, Mat& Ju) const override { inner_.jacobians(x, u, Jx, Ju); }
  void vjp(const Mat& X, const Mat& U, const Mat& adj, Mat& adjX, Mat& adjU) const override
  {
    inner_.vjp(X, U, adj, adjX, adjU);
  }
  std::vector<bool> periodic() const override { return inner_.periodic(); }
  nlohmann::json descriptor() const override { return inner_.descriptor(); }

private:
  const Dynamics& inner_;
  bool replaying_ = false;
  mutable std::size_t cursor_ = 0;
  mutable std::vector<Mat> recorded_;
};

}  // namespace pil::test

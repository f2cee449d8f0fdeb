#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

#include "pil/error.hpp"

namespace pil {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Seeded random stream. Substreams derived from (seed, key) are independent
/// of the parent's consumption history, so per-trajectory or per-seed work can
/// be split across threads without changing results.
class RngStream
{
public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child stream keyed by `key`. Does not advance this stream.
  RngStream substream(std::uint64_t key) const;

  double normal();
  double uniform(double lo, double hi);
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::mt19937_64& engine() noexcept { return engine_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// splitmix64 finalizer, used to derive substream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

enum class NoiseKind { None, Gaussian, Uniform };

/// Measurement / initial-state noise. Gaussian carries a covariance, uniform
/// carries per-coordinate half-widths, none carries only the dimension.
class NoiseModel
{
public:
  static NoiseModel none(int dim);
  static NoiseModel gaussian(const Mat& covariance);
  static NoiseModel isotropic_gaussian(int dim, double variance);
  static NoiseModel uniform(const Vec& half_widths);

  NoiseKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return dim_; }
  const Mat& covariance() const noexcept { return cov_; }
  const Vec& bounds() const noexcept { return bounds_; }

  /// Covariance of a single draw (uniform: diag(b^2/3)).
  Mat second_moment() const;

  /// Fills column-by-column; each column is one independent draw.
  Mat sample(int count, RngStream& rng) const;

private:
  NoiseKind kind_ = NoiseKind::None;
  int dim_ = 0;
  Mat cov_;
  Mat factor_;  // cov = factor * factor^T
  Vec bounds_;
};

Vec sample_noise(const NoiseModel& model, int dim, RngStream& rng);

/// Solves A X = B by LU with partial pivoting. Throws NumericalError when the
/// reciprocal condition estimate drops below 1e-12.
Mat solve_linear(const Mat& A, const Mat& B);

/// Solves X A = B (right division), i.e. X = B A^{-1}.
Mat solve_right(const Mat& B, const Mat& A);

/// Largest singular value via power iteration on M^T M.
double spectral_norm(const Mat& M);

double spectral_radius(const Mat& M);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue_sym(const Mat& S);

bool is_finite(const Mat& M);
bool is_psd(const Mat& S, double tol = 1e-10);

std::string describe_shape(const Mat& M);

}  // namespace pil

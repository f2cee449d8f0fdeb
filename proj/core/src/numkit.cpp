#include "pil/numkit.hpp"

#include <cmath>
#include <sstream>

namespace pil {

const char* to_string(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Io: return "io";
    case ErrorKind::Shape: return "shape";
  }
  return "unknown";
}

std::uint64_t mix64(std::uint64_t x) noexcept
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

RngStream RngStream::substream(std::uint64_t key) const
{
  return RngStream(mix64(seed_ ^ mix64(key + 0x632be59bd9b4e019ULL)));
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform(double lo, double hi)
{
  // 53 random mantissa bits -> [0, 1)
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::size_t RngStream::index(std::size_t n)
{
  return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
}

NoiseModel NoiseModel::none(int dim)
{
  NoiseModel m;
  m.kind_ = NoiseKind::None;
  m.dim_ = dim;
  return m;
}

NoiseModel NoiseModel::gaussian(const Mat& covariance)
{
  if (covariance.rows() != covariance.cols())
    throw ShapeError("gaussian noise: covariance must be square, got " + describe_shape(covariance));
  if (!is_finite(covariance))
    throw NumericalError("gaussian noise: covariance has non-finite entries");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + covariance.cwiseAbs().maxCoeff()))
    throw NumericalError("gaussian noise: covariance is not symmetric");

  Eigen::SelfAdjointEigenSolver<Mat> eig(covariance);
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    std::ostringstream os;
    os << "gaussian noise: covariance is not positive semidefinite (min eigenvalue "
       << eig.eigenvalues().minCoeff() << ")";
    throw NumericalError(os.str());
  }

  NoiseModel m;
  m.kind_ = NoiseKind::Gaussian;
  m.dim_ = static_cast<int>(covariance.rows());
  m.cov_ = covariance;
  m.factor_ = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  return m;
}

NoiseModel NoiseModel::isotropic_gaussian(int dim, double variance)
{
  if (variance == 0.0) return none(dim);
  return gaussian(variance * Mat::Identity(dim, dim));
}

NoiseModel NoiseModel::uniform(const Vec& half_widths)
{
  if (!is_finite(half_widths) || (half_widths.array() < 0.0).any())
    throw NumericalError("uniform noise: bounds must be finite and nonnegative");
  NoiseModel m;
  m.kind_ = NoiseKind::Uniform;
  m.dim_ = static_cast<int>(half_widths.size());
  m.bounds_ = half_widths;
  return m;
}

Mat NoiseModel::second_moment() const
{
  switch (kind_) {
    case NoiseKind::None: return Mat::Zero(dim_, dim_);
    case NoiseKind::Gaussian: return cov_;
    case NoiseKind::Uniform: return (bounds_.array().square() / 3.0).matrix().asDiagonal();
  }
  return Mat::Zero(dim_, dim_);
}

Mat NoiseModel::sample(int count, RngStream& rng) const
{
  Mat out = Mat::Zero(dim_, count);
  switch (kind_) {
    case NoiseKind::None: break;
    case NoiseKind::Gaussian: {
      Vec z(dim_);
      for (int c = 0; c < count; ++c) {
        for (int i = 0; i < dim_; ++i) z(i) = rng.normal();
        out.col(c) = factor_ * z;
      }
      break;
    }
    case NoiseKind::Uniform:
      for (int c = 0; c < count; ++c)
        for (int i = 0; i < dim_; ++i) out(i, c) = rng.uniform(-bounds_(i), bounds_(i));
      break;
  }
  return out;
}

Vec sample_noise(const NoiseModel& model, int dim, RngStream& rng)
{
  if (dim != model.dim())
    throw ShapeError("sample_noise: requested dim " + std::to_string(dim) + " but model has dim " +
                     std::to_string(model.dim()));
  return model.sample(1, rng).col(0);
}

Mat solve_linear(const Mat& A, const Mat& B)
{
  if (A.rows() != A.cols())
    throw ShapeError("solve_linear: A must be square, got " + describe_shape(A));
  if (A.rows() != B.rows())
    throw ShapeError("solve_linear: rows(A)=" + std::to_string(A.rows()) + " != rows(B)=" + std::to_string(B.rows()));
  if (A.size() == 0) return Mat(0, B.cols());

  Eigen::PartialPivLU<Mat> lu(A);
  const double rcond = lu.rcond();
  if (!(rcond >= 1e-12)) {
    std::ostringstream os;
    os << "solve_linear: matrix is singular to working precision (reciprocal condition estimate " << rcond << ")";
    throw NumericalError(os.str());
  }
  return lu.solve(B);
}

Mat solve_right(const Mat& B, const Mat& A) { return solve_linear(A.transpose(), B.transpose()).transpose(); }

double spectral_norm(const Mat& M)
{
  if (M.size() == 0) return 0.0;
  const double scale = M.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  const Mat N = M / scale;
  const Mat G = N.transpose() * N;

  // Fixed pseudo-random start so the result is deterministic and almost never
  // orthogonal to the dominant singular vector.
  Vec v(G.rows());
  std::uint64_t s = 0x2545F4914F6CDD1DULL;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    s = mix64(s);
    v(i) = 0.5 + static_cast<double>(s >> 11) * 0x1.0p-53;
  }
  v.normalize();

  double lambda = v.dot(G * v);
  for (int it = 0; it < 100000; ++it) {
    Vec w = G * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    const double next = v.dot(G * v);
    if (std::abs(next - lambda) <= 1e-15 * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return scale * std::sqrt(std::max(lambda, 0.0));
}

double spectral_radius(const Mat& M)
{
  if (M.size() == 0) return 0.0;
  return M.eigenvalues().cwiseAbs().maxCoeff();
}

double min_eigenvalue_sym(const Mat& S)
{
  Eigen::SelfAdjointEigenSolver<Mat> eig(S, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

bool is_finite(const Mat& M) { return M.allFinite(); }

bool is_psd(const Mat& S, double tol)
{
  if (S.rows() != S.cols()) return false;
  if (S.size() == 0) return true;
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > tol * (1.0 + S.cwiseAbs().maxCoeff())) return false;
  return min_eigenvalue_sym(S) >= -tol * std::max(1.0, S.cwiseAbs().maxCoeff());
}

std::string describe_shape(const Mat& M) { return std::to_string(M.rows()) + "x" + std::to_string(M.cols()); }

}  // namespace pil

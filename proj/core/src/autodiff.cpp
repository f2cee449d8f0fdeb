#include "pil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pil {

double wrap_angle(double a)
{
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0.0)
    r += two_pi;
  r -= std::numbers::pi;
  // fmod maps +pi to -pi; keep the half-open interval (-pi, pi].
  if (r <= -std::numbers::pi)
    r += two_pi;
  return r;
}

void Dynamics::vjp(const Mat& X, const Mat& U, const Mat& adj, Mat& adjX, Mat& adjU) const
{
  Mat Jx, Ju;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    jacobians(X.col(j), U.col(j), Jx, Ju);
    adjX.col(j).noalias() += Jx.transpose() * adj.col(j);
    adjU.col(j).noalias() += Ju.transpose() * adj.col(j);
  }
}

Mat Dynamics::difference(const Mat& a, const Mat& b) const
{
  Mat d = a - b;
  const auto per = periodic();
  for (std::size_t r = 0; r < per.size(); ++r) {
    if (!per[r])
      continue;
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      d(static_cast<Eigen::Index>(r), j) = wrap_angle(d(static_cast<Eigen::Index>(r), j));
  }
  return d;
}

Mat LinearDynamics::step(const Mat& X, const Mat& U) const
{
  if (X.rows() != sys_.n() || U.rows() != sys_.m() || X.cols() != U.cols())
    throw ShapeError("linear step: state " + describe_shape(X) + ", input " + describe_shape(U));
  Mat out = sys_.A * X;
  out.noalias() += sys_.B * U;
  return out;
}

void LinearDynamics::jacobians(const Vec&, const Vec&, Mat& Jx, Mat& Ju) const
{
  Jx = sys_.A;
  Ju = sys_.B;
}

void LinearDynamics::vjp(const Mat&, const Mat&, const Mat& adj, Mat& adjX, Mat& adjU) const
{
  adjX.noalias() += sys_.A.transpose() * adj;
  adjU.noalias() += sys_.B.transpose() * adj;
}

nlohmann::json LinearDynamics::descriptor() const
{
  auto rows = [](const Mat& M) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        row.push_back(M(r, c));
      j.push_back(row);
    }
    return j;
  };
  return {{"name", "linear"}, {"A", rows(sys_.A)}, {"B", rows(sys_.B)}};
}

}  // namespace pil

namespace pil::ad {

const Segment& ParamStore::add_segment(const std::string& name, std::size_t size)
{
  if (has_segment(name))
    throw ConfigError("duplicate parameter segment '" + name + "'");
  const std::size_t offset = this->size();
  flat.conservativeResize(static_cast<Eigen::Index>(offset + size));
  grad.conservativeResize(static_cast<Eigen::Index>(offset + size));
  flat.tail(static_cast<Eigen::Index>(size)).setZero();
  grad.tail(static_cast<Eigen::Index>(size)).setZero();
  segments_.push_back({name, offset, size});
  return segments_.back();
}

const Segment& ParamStore::segment(const std::string& name) const
{
  for (const auto& s : segments_)
    if (s.name == name)
      return s;
  throw ConfigError("no parameter segment '" + name + "'");
}

bool ParamStore::has_segment(const std::string& name) const
{
  return std::any_of(segments_.begin(), segments_.end(), [&](const Segment& s) { return s.name == name; });
}

bool ParamStore::segments_valid() const
{
  if (grad.size() != flat.size())
    return false;
  std::size_t next = 0;
  for (const auto& s : segments_) {
    if (s.offset != next)
      return false;
    next += s.size;
  }
  return next == size();
}

Var Tape::push(Node node)
{
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v, const char* op) const
{
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError(std::string(op) + ": invalid tape variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Mat& a, const Mat& b)
{
  std::ostringstream os;
  os << op << ": incompatible shapes " << describe_shape(a) << " and " << describe_shape(b);
  throw ShapeError(os.str());
}

}  // namespace

Var Tape::constant(Mat value)
{
  Node n{Op::Constant};
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Mat value)
{
  Node n{Op::Constant};
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(std::size_t offset, int rows, int cols)
{
  if (!params_)
    throw ConfigError("param: tape has no parameter store");
  const auto count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (offset + count > params_->size())
    throw ShapeError("param: range exceeds parameter vector");
  Node n{Op::Param};
  n.value = Eigen::Map<const Mat>(params_->flat.data() + offset, rows, cols);
  n.offset = offset;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b)
{
  const Node& na = node(a, "matmul");
  const Node& nb = node(b, "matmul");
  if (na.value.cols() != nb.value.rows())
    shape_fail("matmul", na.value, nb.value);
  Node n{Op::MatMul, a.id, b.id};
  n.value.noalias() = na.value * nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b)
{
  const Node& na = node(a, "add");
  const Node& nb = node(b, "add");
  Node n{Op::Add, a.id, b.id};
  if (na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols()) {
    n.value = na.value + nb.value;
  } else if (nb.value.cols() == 1 && na.value.rows() == nb.value.rows()) {
    n.op = Op::AddBroadcast;
    n.value = na.value.colwise() + nb.value.col(0);
  } else {
    shape_fail("add", na.value, nb.value);
  }
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b)
{
  const Node& na = node(a, "sub");
  const Node& nb = node(b, "sub");
  if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols())
    shape_fail("sub", na.value, nb.value);
  Node n{Op::Sub, a.id, b.id};
  n.value = na.value - nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double c)
{
  const Node& na = node(a, "scale");
  Node n{Op::Scale, a.id};
  n.value = c * na.value;
  n.coef = c;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::leaky_relu(Var a, double slope)
{
  const Node& na = node(a, "leaky_relu");
  Node n{Op::LeakyRelu, a.id};
  n.value = na.value.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  n.coef = slope;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::tanh(Var a)
{
  const Node& na = node(a, "tanh");
  Node n{Op::Tanh, a.id};
  n.value = na.value.array().tanh().matrix();
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::square_norm_weighted(Var x, const Mat& W)
{
  const Node& nx = node(x, "square_norm_weighted");
  if (W.rows() != nx.value.rows() || W.cols() != nx.value.rows())
    shape_fail("square_norm_weighted", nx.value, W);
  Node n{Op::SquareNormWeighted, x.id};
  n.value.resize(1, 1);
  n.value(0, 0) = (nx.value.array() * (W * nx.value).array()).sum();
  n.aux = W;
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::stop_gradient(Var a)
{
  const Node& na = node(a, "stop_gradient");
  Node n{Op::StopGradient, a.id};
  n.value = na.value;
  return push(std::move(n));
}

Var Tape::wrap_periodic(Var a, const std::vector<bool>& periodic)
{
  const Node& na = node(a, "wrap_periodic");
  if (static_cast<Eigen::Index>(periodic.size()) != na.value.rows())
    throw ShapeError("wrap_periodic: mask length " + std::to_string(periodic.size()) + " vs " +
                     describe_shape(na.value));
  Node n{Op::WrapPeriodic, a.id};
  n.value = na.value;
  for (std::size_t r = 0; r < periodic.size(); ++r)
    if (periodic[r])
      for (Eigen::Index j = 0; j < n.value.cols(); ++j)
        n.value(static_cast<Eigen::Index>(r), j) = wrap_angle(n.value(static_cast<Eigen::Index>(r), j));
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::trig_features(Var a, const std::vector<bool>& periodic)
{
  const Node& na = node(a, "trig_features");
  if (static_cast<Eigen::Index>(periodic.size()) != na.value.rows())
    throw ShapeError("trig_features: mask length " + std::to_string(periodic.size()) + " vs " +
                     describe_shape(na.value));
  const auto extra = std::count(periodic.begin(), periodic.end(), true);
  Node n{Op::TrigFeatures, a.id};
  n.value.resize(na.value.rows() + extra, na.value.cols());
  Eigen::Index out = 0;
  for (std::size_t r = 0; r < periodic.size(); ++r) {
    const auto row = na.value.row(static_cast<Eigen::Index>(r));
    if (periodic[r]) {
      n.value.row(out++) = row.array().cos().matrix();
      n.value.row(out++) = row.array().sin().matrix();
    } else {
      n.value.row(out++) = row;
    }
  }
  n.mask = periodic;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::apply_dynamics(const pil::Dynamics& f, Var x, Var u)
{
  const Node& nx = node(x, "apply_dynamics");
  const Node& nu = node(u, "apply_dynamics");
  if (nx.value.rows() != f.state_dim() || nu.value.rows() != f.input_dim() || nx.value.cols() != nu.value.cols())
    shape_fail("apply_dynamics", nx.value, nu.value);
  Node n{Op::Dynamics, x.id, u.id};
  n.value = f.step(nx.value, nu.value);
  n.dyn = &f;
  n.requires_grad = nx.requires_grad || nu.requires_grad;
  return push(std::move(n));
}

const Mat& Tape::value(Var v) const { return node(v, "value").value; }

double Tape::scalar(Var v) const
{
  const Mat& m = value(v);
  if (m.size() != 1)
    throw ShapeError("scalar: node is " + describe_shape(m));
  return m(0, 0);
}

void Tape::backward(Var root)
{
  const Node& nr = node(root, "backward");
  if (nr.value.size() != 1)
    throw ShapeError("backward: root must be scalar, got " + describe_shape(nr.value));

  const std::size_t count = nodes_.size();
  adjoints_.assign(count, Mat());
  touched_.assign(count, false);

  auto acc = [&](int id) -> Mat& {
    auto i = static_cast<std::size_t>(id);
    if (!touched_[i]) {
      adjoints_[i] = Mat::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
      touched_[i] = true;
    }
    return adjoints_[i];
  };

  acc(root.id)(0, 0) = 1.0;

  for (std::size_t k = static_cast<std::size_t>(root.id) + 1; k-- > 0;) {
    if (!touched_[k] || !nodes_[k].requires_grad)
      continue;
    const Node& n = nodes_[k];
    const Mat& g = adjoints_[k];
    switch (n.op) {
      case Op::Constant:
      case Op::StopGradient:
        break;
      case Op::Param:
        if (params_) {
          Eigen::Map<const Vec> flat_g(g.data(), g.size());
          params_->grad.segment(static_cast<Eigen::Index>(n.offset), g.size()) += flat_g;
        }
        break;
      case Op::MatMul:
        if (needs(n.a))
          acc(n.a).noalias() += g * nodes_[static_cast<std::size_t>(n.b)].value.transpose();
        if (needs(n.b))
          acc(n.b).noalias() += nodes_[static_cast<std::size_t>(n.a)].value.transpose() * g;
        break;
      case Op::Add:
        if (needs(n.a))
          acc(n.a) += g;
        if (needs(n.b))
          acc(n.b) += g;
        break;
      case Op::AddBroadcast:
        if (needs(n.a))
          acc(n.a) += g;
        if (needs(n.b))
          acc(n.b) += g.rowwise().sum();
        break;
      case Op::Sub:
        if (needs(n.a))
          acc(n.a) += g;
        if (needs(n.b))
          acc(n.b) -= g;
        break;
      case Op::Scale:
        acc(n.a) += n.coef * g;
        break;
      case Op::LeakyRelu: {
        const Mat& in = nodes_[static_cast<std::size_t>(n.a)].value;
        const double s = n.coef;
        acc(n.a) += g.binaryExpr(in, [s](double gi, double xi) { return xi > 0.0 ? gi : s * gi; });
        break;
      }
      case Op::Tanh:
        acc(n.a) += (g.array() * (1.0 - n.value.array().square())).matrix();
        break;
      case Op::SquareNormWeighted: {
        const Mat& in = nodes_[static_cast<std::size_t>(n.a)].value;
        acc(n.a).noalias() += g(0, 0) * ((n.aux + n.aux.transpose()) * in);
        break;
      }
      case Op::WrapPeriodic:
        acc(n.a) += g;
        break;
      case Op::TrigFeatures: {
        const Mat& in = nodes_[static_cast<std::size_t>(n.a)].value;
        Mat& ga = acc(n.a);
        Eigen::Index out = 0;
        for (std::size_t r = 0; r < n.mask.size(); ++r) {
          const auto ri = static_cast<Eigen::Index>(r);
          if (n.mask[r]) {
            ga.row(ri).array() += -in.row(ri).array().sin() * g.row(out).array() +
                                  in.row(ri).array().cos() * g.row(out + 1).array();
            out += 2;
          } else {
            ga.row(ri) += g.row(out++);
          }
        }
        break;
      }
      case Op::Dynamics: {
        const Mat& X = nodes_[static_cast<std::size_t>(n.a)].value;
        const Mat& U = nodes_[static_cast<std::size_t>(n.b)].value;
        Mat& gx = acc(n.a);
        Mat& gu = acc(n.b);
        n.dyn->vjp(X, U, g, gx, gu);
        break;
      }
    }
  }
}

Mat Tape::adjoint(Var v) const
{
  const Node& n = node(v, "adjoint");
  const auto i = static_cast<std::size_t>(v.id);
  if (i < touched_.size() && touched_[i])
    return adjoints_[i];
  return Mat::Zero(n.value.rows(), n.value.cols());
}

}  // namespace pil::ad

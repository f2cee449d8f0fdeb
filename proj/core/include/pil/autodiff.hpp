#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pil/dynamics.hpp"
#include "pil/numkit.hpp"

namespace pil::ad {

/// Named contiguous range of the flat parameter vector.
struct Segment
{
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat parameter vector with a gradient buffer of equal length, partitioned
/// into named segments (encoder, predictor heads, policy).
class ParamStore
{
public:
  /// Appends a zero-initialized segment and returns it. Names must be unique.
  const Segment& add_segment(const std::string& name, std::size_t size);
  const Segment& segment(const std::string& name) const;
  bool has_segment(const std::string& name) const;
  const std::vector<Segment>& segments() const noexcept { return segments_; }

  std::size_t size() const noexcept { return static_cast<std::size_t>(flat.size()); }
  void zero_grad() { grad.setZero(); }

  /// True when the segments are disjoint and cover the vector exactly.
  bool segments_valid() const;

  Vec flat;
  Vec grad;

private:
  std::vector<Segment> segments_;
};

/// Handle to a tape node.
struct Var
{
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Dynamic reverse-mode tape. Values are matrices; the batch dimension runs
/// along columns. Nodes only reference earlier nodes, so the backward pass is
/// a single sweep in reverse insertion order. Rebuild per minibatch.
class Tape
{
public:
  explicit Tape(ParamStore* params = nullptr) : params_(params) {}

  Var constant(Mat value);
  /// Leaf that is differentiated through; read its gradient with adjoint().
  Var variable(Mat value);
  /// Leaf reading rows x cols entries (column-major) of the parameter vector at
  /// `offset`. Its adjoint is accumulated into ParamStore::grad.
  Var param(std::size_t offset, int rows, int cols);

  Var matmul(Var a, Var b);
  /// Elementwise sum. `b` may also be a column vector broadcast over a's columns.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var leaky_relu(Var a, double slope = 0.01);
  Var relu(Var a);
  Var tanh(Var a);
  /// Scalar sum over columns of x_j^T W x_j.
  Var square_norm_weighted(Var x, const Mat& W);
  /// Forwards the value, blocks the adjoint.
  Var stop_gradient(Var a);
  /// Wraps the flagged rows to (-pi, pi]; derivative is taken as 1.
  Var wrap_periodic(Var a, const std::vector<bool>& periodic);
  /// Replaces each flagged row r with the two rows (cos r, sin r).
  Var trig_features(Var a, const std::vector<bool>& periodic);
  /// Batched x' = f(x, u); adjoints flow through the dynamics' Jacobians.
  Var apply_dynamics(const Dynamics& f, Var x, Var u);

  const Mat& value(Var v) const;
  double scalar(Var v) const;

  /// Seeds d(root)/d(root) = 1 and propagates. Root must be 1x1.
  void backward(Var root);

  /// Adjoint of any node after backward(); zero if it did not participate.
  Mat adjoint(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

private:
  enum class Op
  {
    Constant,
    Param,
    MatMul,
    Add,
    AddBroadcast,
    Sub,
    Scale,
    LeakyRelu,
    Tanh,
    SquareNormWeighted,
    StopGradient,
    WrapPeriodic,
    TrigFeatures,
    Dynamics
  };

  struct Node
  {
    explicit Node(Op o, int lhs = -1, int rhs = -1) : op(o), a(lhs), b(rhs) {}

    Op op;
    int a = -1;
    int b = -1;
    Mat value;
    Mat aux;  // weight matrix for SquareNormWeighted
    double coef = 0.0;
    std::size_t offset = 0;
    std::vector<bool> mask;
    const pil::Dynamics* dyn = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);
  const Node& node(Var v, const char* op) const;
  bool needs(int id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad; }

  ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<Mat> adjoints_;
  std::vector<bool> touched_;
};

}  // namespace pil::ad

#include <gtest/gtest.h>

#include "../support/gradient_suite.hpp"
#include "pil/error.hpp"

using namespace pil;
using namespace pil::ad;

TEST(ParamStore, SegmentsAreContiguousAndUnique)
{
  ParamStore s;
  const auto a = s.add_segment("a", 3);
  const auto b = s.add_segment("b", 5);
  EXPECT_EQ(a.offset, 0u);
  EXPECT_EQ(b.offset, 3u);
  EXPECT_EQ(s.size(), 8u);
  EXPECT_TRUE(s.segments_valid());
  EXPECT_TRUE(s.flat.isZero(0.0));
  EXPECT_THROW(s.add_segment("a", 1), Error);
  EXPECT_THROW(s.segment("missing"), Error);
}

TEST(Tape, OpsMatchFiniteDifferences)
{
  for (const auto& g : test::op_gradient_checks(10))
    EXPECT_LT(g.worst_rel_err, 1e-6) << g.name;
}

TEST(Tape, ForwardValuesAreTheObviousOnes)
{
  Tape t;
  Mat A(2, 2), B(2, 2);
  A << 1, -2, 3, 0.5;
  B << 0.1, 0.2, -0.3, 4;
  const Var a = t.constant(A), b = t.constant(B);
  EXPECT_EQ(t.value(t.matmul(a, b)), A * B);
  EXPECT_EQ(t.value(t.add(a, b)), A + B);
  EXPECT_EQ(t.value(t.sub(a, b)), A - B);
  EXPECT_EQ(t.value(t.scale(a, 2.0)), 2.0 * A);
  EXPECT_EQ(t.value(t.relu(a)), A.cwiseMax(0.0));
  EXPECT_DOUBLE_EQ(t.value(t.leaky_relu(a, 0.1))(0, 1), -0.2);
  EXPECT_DOUBLE_EQ(t.scalar(t.square_norm_weighted(a, Mat::Identity(2, 2))), A.squaredNorm());
  Mat ang(1, 2);
  ang << 3.5, -0.25;
  const Mat w = t.value(t.wrap_periodic(t.constant(ang), {true}));
  EXPECT_NEAR(w(0, 0), 3.5 - 2 * M_PI, 1e-15);
  EXPECT_EQ(w(0, 1), -0.25);
  const Mat tf = t.value(t.trig_features(t.constant(ang), {true}));
  ASSERT_EQ(tf.rows(), 2);
  EXPECT_DOUBLE_EQ(tf(0, 0), std::cos(3.5));
  EXPECT_DOUBLE_EQ(tf(1, 0), std::sin(3.5));
}

TEST(Tape, BroadcastAddsColumnToEveryColumn)
{
  Tape t;
  const Var x = t.variable(Mat::Ones(2, 3));
  const Var b = t.variable(Mat::Constant(2, 1, 0.5));
  const Var s = t.square_norm_weighted(t.add(x, b), Mat::Identity(2, 2));
  EXPECT_DOUBLE_EQ(t.scalar(s), 6 * 2.25);
  t.backward(s);
  // d/db sum_j ||x_j + b||^2 = 2 sum_j (x_j + b)
  EXPECT_TRUE(t.adjoint(b).isApprox(Mat::Constant(2, 1, 9.0)));
}

TEST(Tape, StopGradientBlocksExactly)
{
  Tape t;
  const Var x = t.variable(Mat::Constant(2, 1, 0.7));
  const Var y = t.add(t.tanh(x), t.stop_gradient(t.scale(x, 5.0)));
  const Var root = t.square_norm_weighted(y, Mat::Identity(2, 2));
  t.backward(root);
  const double yv = std::tanh(0.7) + 3.5;
  const double expect = 2.0 * yv * (1.0 - std::tanh(0.7) * std::tanh(0.7));
  EXPECT_NEAR(t.adjoint(x)(0, 0), expect, 1e-14);
}

TEST(Tape, ShapeErrorsNameTheOp)
{
  Tape t;
  const Var a = t.constant(Mat::Zero(2, 3));
  const Var b = t.constant(Mat::Zero(2, 3));
  try {
    t.matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
  EXPECT_THROW(t.add(a, t.constant(Mat::Zero(3, 1))), Error);
  EXPECT_THROW(t.backward(a), Error);
  EXPECT_THROW(t.value(Var{99}), Error);
}

TEST(Tape, UntouchedNodesHaveZeroAdjoint)
{
  Tape t;
  const Var x = t.variable(Mat::Ones(1, 1));
  const Var unused = t.variable(Mat::Ones(3, 2));
  t.backward(t.scale(x, 3.0));
  EXPECT_EQ(t.adjoint(x)(0, 0), 3.0);
  EXPECT_TRUE(t.adjoint(unused).isZero(0.0));
  EXPECT_EQ(t.adjoint(unused).rows(), 3);
}

TEST(Tape, ParamGradientsAccumulateIntoStore)
{
  ParamStore s;
  s.add_segment("w", 2);
  s.flat << 1.0, 2.0;
  Tape t(&s);
  const Var w = t.param(0, 2, 1);
  t.backward(t.square_norm_weighted(w, Mat::Identity(2, 2)));
  EXPECT_DOUBLE_EQ(s.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(s.grad[1], 4.0);
  Tape t2(&s);
  t2.backward(t2.square_norm_weighted(t2.param(0, 2, 1), Mat::Identity(2, 2)));
  EXPECT_DOUBLE_EQ(s.grad[1], 8.0);
  EXPECT_THROW(t2.param(1, 2, 1), Error);
  Tape nostore;
  EXPECT_THROW(nostore.param(0, 1, 1), Error);
}

TEST(Tape, PendulumSaturationHasNoInputGradient)
{
  const Pendulum p;
  Tape t;
  const Var x = t.variable(Mat::Constant(2, 1, 0.1));
  const Var u = t.variable(Mat::Constant(1, 1, 10.0));
  t.backward(t.square_norm_weighted(t.apply_dynamics(p, x, u), Mat::Identity(2, 2)));
  EXPECT_EQ(t.adjoint(u)(0, 0), 0.0);
  EXPECT_NE(t.adjoint(x)(0, 0), 0.0);
}

#include <gtest/gtest.h>

#include "slt/ops.hpp"
#include "slt/tensor.hpp"

using slt::Tensor;

TEST(Tensor, ShapeAndData) {
  auto t = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.dim(0), 2);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_FLOAT_EQ(t.data()[4], 5.0f);
}

TEST(Tensor, RejectsNonPositiveExtent) {
  EXPECT_THROW(Tensor<float>::zeros({2, 0}), slt::Error);
  EXPECT_THROW(Tensor<float>::zeros({-1}), slt::Error);
}

TEST(Tensor, RejectsDataSizeMismatch) {
  EXPECT_THROW(Tensor<float>::from_data({2, 2}, {1, 2, 3}), slt::Error);
}

TEST(Tensor, FanOutAccumulatesGradient) {
  auto x = Tensor<double>::from_data({1}, {3.0});
  x.set_requires_grad(true);
  auto y = slt::add(x, x);  // dy/dx = 2
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Tensor, BackwardRequiresScalar) {
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  auto y = slt::scale(x, 2.0);
  EXPECT_THROW(y.backward(), slt::Error);
}

TEST(Tensor, SecondBackwardWithoutRebuildFails) {
  auto x = Tensor<double>::from_data({1}, {2.0});
  x.set_requires_grad(true);
  auto y = slt::mul(x, x);
  y.backward();
  EXPECT_THROW(y.backward(), slt::Error);
}

TEST(Tensor, ConstantScalarBackwardIsFine) {
  auto c = Tensor<double>::scalar(5.0);
  EXPECT_NO_THROW(c.backward());
}

TEST(Tensor, UnreachableParameterKeepsZeroGrad) {
  auto x = Tensor<double>::from_data({1}, {1.0});
  auto unused = Tensor<double>::from_data({2}, {1.0, 1.0});
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  auto y = slt::mul(x, x);
  y.backward();
  EXPECT_DOUBLE_EQ(unused.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(unused.grad()[1], 0.0);
}

TEST(Tensor, NonFiniteOutputIsAnError) {
  auto x = Tensor<double>::from_data({1}, {-1.0});
  EXPECT_THROW(slt::log_t(x), slt::Error);
  auto z = Tensor<double>::from_data({1}, {0.0});
  EXPECT_THROW(slt::div(Tensor<double>::scalar(1.0), z), slt::Error);
}

TEST(Tensor, DetachBlocksGradient) {
  auto x = Tensor<double>::from_data({1}, {3.0});
  x.set_requires_grad(true);
  auto y = slt::mul(slt::detach(slt::mul(x, x)), x);  // treated as c * x
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 9.0);  // only the direct factor
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  auto x = Tensor<double>::from_data({1}, {2.0});
  x.set_requires_grad(true);
  {
    slt::NoGradGuard ng;
    auto y = slt::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    y.backward();  // constant graph: no-op
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, GradAccumulatesAcrossBackwards) {
  auto x = Tensor<double>::from_data({1}, {4.0});
  x.set_requires_grad(true);
  auto y1 = slt::mul(x, x);
  y1.backward();
  auto y2 = slt::mul(x, x);
  y2.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 16.0);  // 8 + 8
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

#include <gtest/gtest.h>

#include "rest/error.hpp"
#include "rest/ops.hpp"
#include "rest/tape.hpp"
#include "rest/tensor.hpp"

using namespace rest;

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_EQ(shape_to_string({2, 3}), "[2, 3]");
}

TEST(Tensor, ValuesMustMatchShape) { EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError); }

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a({3}, 0.0);
  Tensor b = a;
  Tensor c = a.clone();
  b[1] = 7.0;
  EXPECT_EQ(a[1], 7.0);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
}

TEST(Tensor, ReshapeRejectsCountMismatch) {
  Tensor a({2, 3});
  EXPECT_EQ(a.reshape({3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(a.reshape({4}), ShapeError);
}

TEST(Tape, NothingRecordedWithoutTape) {
  Tensor a = Tensor({2}, std::vector<double>{1, 2}).set_requires_grad(true);
  Tensor y = sum(hadamard(a, a));
  EXPECT_EQ(y.item(), 5.0);
  EXPECT_FALSE(a.has_grad());
}

TEST(Tape, BackwardAccumulatesIntoLeaves) {
  Tensor a = Tensor({2}, std::vector<double>{1, 2}).set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum(hadamard(a, a)));
  }
  ASSERT_TRUE(a.has_grad());
  EXPECT_DOUBLE_EQ(a.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 4.0);
  {
    Tape tape;
    tape.backward(sum(a));
  }
  EXPECT_DOUBLE_EQ(a.grad()[1], 5.0);
}

TEST(Tape, GradientLeavesStoredGradsAlone) {
  Tensor a = Tensor({2}, std::vector<double>{3, -1}).set_requires_grad(true);
  Tape tape;
  Tensor y = sum(hadamard(a, a));
  const auto g = tape.gradient(y, a);
  EXPECT_DOUBLE_EQ(g[0], 6.0);
  EXPECT_DOUBLE_EQ(g[1], -2.0);
  EXPECT_FALSE(a.has_grad());
}

TEST(Tape, NestedTapesRestorePrevious) {
  Tape outer;
  EXPECT_EQ(Tape::current(), &outer);
  {
    Tape inner;
    EXPECT_EQ(Tape::current(), &inner);
  }
  EXPECT_EQ(Tape::current(), &outer);
}

TEST(Tape, SharedSubexpressionGetsBothContributions) {
  Tensor a = Tensor::scalar(2.0).set_requires_grad(true);
  Tape tape;
  Tensor b = hadamard(a, a);         // a^2
  Tensor y = add(hadamard(b, a), b);  // a^3 + a^2
  tape.backward(y);
  EXPECT_DOUBLE_EQ(a.grad()[0], 3 * 4.0 + 2 * 2.0);
}

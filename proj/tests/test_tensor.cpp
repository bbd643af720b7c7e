#include "pekit/tensor.hpp"

#include <gtest/gtest.h>

namespace {

using pekit::Shape;
using pekit::Tensor;

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3);
  EXPECT_EQ(t.size(), 24);
  EXPECT_EQ(t.dim(1), 3);
  for (std::int64_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.data()[i], 0.0);
}

TEST(Tensor, FromValuesRowMajor) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at({0, 0}), 1.0);
  EXPECT_EQ(t.at({0, 2}), 3.0);
  EXPECT_EQ(t.at({1, 0}), 4.0);
  EXPECT_EQ(t.at({1, 2}), 6.0);
}

TEST(Tensor, ValueCountMismatchThrows) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, IndexOutOfRangeThrows) {
  Tensor t({2, 2}, {1, 2, 3, 4});
  EXPECT_THROW(t.at({2, 0}), std::out_of_range);
  EXPECT_THROW(t.at({0}), std::invalid_argument);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_EQ(Tensor::scalar(3.5).item(), 3.5);
  Tensor t({2}, {1, 2});
  EXPECT_THROW(t.item(), std::invalid_argument);
}

TEST(Tensor, FullOnesZeros) {
  EXPECT_EQ(Tensor::full({3}, 2.5).at({1}), 2.5);
  EXPECT_EQ(Tensor::ones({2, 2}).at({1, 1}), 1.0);
  EXPECT_EQ(Tensor::zeros({2}).at({0}), 0.0);
}

TEST(Tensor, CopiesShareBuffer) {
  Tensor a({2}, {1, 2});
  Tensor b = a;
  EXPECT_EQ(a.data(), b.data());
}

}  // namespace

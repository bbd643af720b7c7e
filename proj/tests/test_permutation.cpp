#include "pekit/permutation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

namespace {

using namespace pekit;

TEST(Permutation, IdentityAndValidation) {
  Permutation p = Permutation::identity(4);
  EXPECT_TRUE(p.is_identity());
  EXPECT_THROW(Permutation({0, 0, 1}), std::invalid_argument);
  EXPECT_THROW(Permutation({0, 3}), std::invalid_argument);
}

TEST(Permutation, InverseAndCompose) {
  Permutation p({2, 0, 1});
  Permutation q = p.inverse();
  EXPECT_TRUE(p.then(q).is_identity());
  EXPECT_TRUE(q.then(p).is_identity());
  // then: (a.then(b))[i] = b[a[i]]
  Permutation r({1, 2, 0});
  Permutation pr = p.then(r);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(pr[i], r[p[i]]);
}

TEST(Permutation, RandomIsBijection) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    Permutation p = Permutation::random(7, rng);
    std::vector<bool> seen(7, false);
    for (int i = 0; i < 7; ++i) {
      EXPECT_FALSE(seen[static_cast<std::size_t>(p[i])]);
      seen[static_cast<std::size_t>(p[i])] = true;
    }
  }
}

TEST(ApplyAxis, MovesSliceToDestination) {
  // p[i] = destination of source i.
  Tensor x({3}, {10, 20, 30});
  Permutation p({2, 0, 1});
  Tensor y = apply_axis(x, 0, p);
  EXPECT_EQ(y.at({0}), 20.0);
  EXPECT_EQ(y.at({1}), 30.0);
  EXPECT_EQ(y.at({2}), 10.0);
}

TEST(ApplyAxis, InnerAxisOfMatrix) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Permutation p({1, 2, 0});
  Tensor y = apply_axis(x, 1, p);
  // column j moves to column p[j]
  EXPECT_EQ(y.at({0, 1}), 1.0);
  EXPECT_EQ(y.at({0, 2}), 2.0);
  EXPECT_EQ(y.at({0, 0}), 3.0);
  EXPECT_EQ(y.at({1, 1}), 4.0);
}

TEST(ApplyAxis, SizeMismatchThrows) {
  Tensor x({3}, {1, 2, 3});
  EXPECT_THROW(apply_axis(x, 0, Permutation::identity(4)), std::invalid_argument);
  EXPECT_THROW(apply_axis(x, 1, Permutation::identity(3)), std::invalid_argument);
}

TEST(NestedPermutation, SubsetSwapWithIdentityInners) {
  // Two subsets of three: swapping subsets moves [1,2,3|4,5,6] to [4,5,6|1,2,3].
  NestedPermutation np(Permutation({1, 0}),
                       {Permutation::identity(3), Permutation::identity(3)});
  Tensor x({6}, {1, 2, 3, 4, 5, 6});
  Tensor y = apply_nested_axis(x, 0, np);
  const std::vector<double> want = {4, 5, 6, 1, 2, 3};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(y.at({i}), want[static_cast<std::size_t>(i)]);
}

TEST(NestedPermutation, FlattenMatchesMap) {
  Rng rng(2);
  NestedPermutation np = NestedPermutation::random(3, 4, rng);
  Permutation f = np.flatten();
  for (std::int64_t g = 0; g < 12; ++g) EXPECT_EQ(f[g], np.map(g));
}

// Independent oracle: build the explicit (outer x I) * blockdiag(inners)
// matrix and apply its transpose to a stacked vector.
TEST(NestedPermutation, MatchesExplicitMatrixForm) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t M = 2 + trial % 2, K = 2 + (trial / 2) % 3;
    const std::int64_t n = M * K;
    NestedPermutation np = NestedPermutation::random(M, K, rng);

    // Permutation matrix convention: P[i][p[i]] = 1.
    std::vector<std::vector<double>> P0(static_cast<std::size_t>(M),
                                        std::vector<double>(static_cast<std::size_t>(M), 0));
    for (std::int64_t s = 0; s < M; ++s) P0[static_cast<std::size_t>(s)][static_cast<std::size_t>(np.outer()[s])] = 1;

    std::vector<std::vector<double>> kron(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(n), 0));
    for (std::int64_t s = 0; s < M; ++s)
      for (std::int64_t t = 0; t < M; ++t)
        for (std::int64_t a = 0; a < K; ++a)
          kron[static_cast<std::size_t>(s * K + a)][static_cast<std::size_t>(t * K + a)] =
              P0[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)];

    std::vector<std::vector<double>> bd(static_cast<std::size_t>(n),
                                        std::vector<double>(static_cast<std::size_t>(n), 0));
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t a = 0; a < K; ++a)
        bd[static_cast<std::size_t>(m * K + a)][static_cast<std::size_t>(m * K + np.inner(m)[a])] = 1;

    // Omega = kron * bd; y = Omega^T x.
    std::vector<std::vector<double>> omega(static_cast<std::size_t>(n),
                                           std::vector<double>(static_cast<std::size_t>(n), 0));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t l = 0; l < n; ++l)
          omega[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
              kron[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)] *
              bd[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];

    Tensor x({n});
    for (std::int64_t i = 0; i < n; ++i) x.mutable_data()[i] = rng.uniform(-5, 5);

    std::vector<double> y_matrix(static_cast<std::size_t>(n), 0);
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t i = 0; i < n; ++i)
        y_matrix[static_cast<std::size_t>(j)] +=
            omega[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * x.data()[i];

    Tensor y = apply_nested_axis(x, 0, np);
    for (std::int64_t i = 0; i < n; ++i)
      EXPECT_NEAR(y.data()[i], y_matrix[static_cast<std::size_t>(i)], 1e-12)
          << "M=" << M << " K=" << K << " trial=" << trial;
  }
}

TEST(Scheme, JointGroupSharesOneDraw) {
  PermutationScheme joint;
  joint.axes = {AxisPerm::arbitrary(0, 4), AxisPerm::arbitrary(0, 4)};
  ASSERT_EQ(joint.joint_groups().size(), 1u);
  EXPECT_EQ(joint.joint_groups()[0], (std::vector<int>{0, 1}));

  Rng rng(4);
  SchemeDraw draw = draw_scheme({&joint}, rng);
  Tensor x({4, 4});
  for (std::int64_t i = 0; i < 16; ++i) x.mutable_data()[i] = static_cast<double>(i);
  Tensor y = apply_scheme(x, joint, draw);
  const Permutation& p = draw.flat.at(0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(y.at({p[i], p[j]}), x.at({i, j}));
}

TEST(Scheme, SlotSizeConflictThrows) {
  PermutationScheme bad;
  bad.axes = {AxisPerm::arbitrary(0, 4), AxisPerm::arbitrary(0, 5)};
  Rng rng(5);
  EXPECT_THROW(draw_scheme({&bad}, rng), std::invalid_argument);
}

TEST(Scheme, OuterJointNestedAxesShareSubsetMoves) {
  // Rows: 3 subsets x 2, columns: 3 subsets x 4; the outer draw is shared,
  // the inner draws are independent.
  PermutationScheme s;
  s.axes = {AxisPerm::nested(0, 1, 3, 2), AxisPerm::nested(0, 2, 3, 4)};
  Rng rng(6);
  SchemeDraw draw = draw_scheme({&s}, rng);
  EXPECT_EQ(draw.flat.size(), 1u);
  EXPECT_EQ(draw.inners.size(), 2u);

  // Tag each element with its (row-subset, col-subset) pair and verify the
  // pair moves identically through both axes.
  Tensor x({6, 12});
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 12; ++c) x.at_mut({r, c}) = (r / 2) * 10 + (c / 4);
  Tensor y = apply_scheme(x, s, draw);
  const Permutation& outer = draw.flat.at(0);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 12; ++c) {
      const auto v = static_cast<int>(y.at({r, c}));
      const int rs = v / 10, cs = v % 10;
      EXPECT_EQ(outer[rs], r / 2);
      EXPECT_EQ(outer[cs], c / 4);
    }
  }
}

TEST(CheckEquivariance, ElementwiseMapPasses) {
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::arbitrary(0, 5)};
  auto f = [](const Tensor& x) {
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i)
      y.mutable_data()[i] = x.data()[i] * x.data()[i];
    return y;
  };
  Rng rng(7);
  auto rep = check_equivariance(f, scheme, scheme, uniform_sampler({5}), 50, 1e-12, rng);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.max_abs_err, 1e-12);
}

TEST(CheckEquivariance, PoolingWithSelfExclusionPasses) {
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::arbitrary(0, 6)};
  auto f = [](const Tensor& x) {
    double total = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) total += x.data()[i];
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i)
      y.mutable_data()[i] = x.data()[i] + 0.5 * (total - x.data()[i]);
    return y;
  };
  Rng rng(8);
  auto rep = check_equivariance(f, scheme, scheme, uniform_sampler({6}), 50, 1e-12, rng);
  EXPECT_TRUE(rep.pass);
}

TEST(CheckEquivariance, SortFails) {
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::arbitrary(0, 6)};
  auto f = [](const Tensor& x) {
    Tensor y = x;
    std::vector<double> v(x.data(), x.data() + x.size());
    std::sort(v.begin(), v.end());
    return Tensor(x.shape(), v);
  };
  Rng rng(9);
  auto rep = check_equivariance(f, scheme, scheme, uniform_sampler({6}), 50, 1e-9, rng);
  EXPECT_FALSE(rep.pass);
  EXPECT_GT(rep.max_abs_err, 1e-3);
}

TEST(CheckEquivariance, PositionDependentMapFails) {
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::arbitrary(0, 6)};
  auto f = [](const Tensor& x) {
    Tensor y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i)
      y.mutable_data()[i] = x.data()[i] + static_cast<double>(i);
    return y;
  };
  Rng rng(10);
  auto rep = check_equivariance(f, scheme, scheme, uniform_sampler({6}), 50, 1e-9, rng);
  EXPECT_FALSE(rep.pass);
}

}  // namespace

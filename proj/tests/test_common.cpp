#include <set>

#include <gtest/gtest.h>

#include "sbdiag/common.hpp"
#include "sbdiag/neighbors.hpp"
#include "test_util.hpp"

namespace sbdiag {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  double s = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
  }
  EXPECT_NEAR(s / 20000.0, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  double s = 0.0, ss = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    ss += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(ss / n, 1.0, 0.03);
}

TEST(Rng, PermutationIsBijection) {
  Rng r(3);
  const auto p = r.permutation(257);
  std::set<std::size_t> seen(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 257u);
  EXPECT_EQ(*seen.rbegin(), 256u);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(4);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(DeriveSeed, DependsOnEveryId) {
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  EXPECT_EQ(derive_seed(9, 8, 7), derive_seed(9, 8, 7));
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (int threads : {1, 3, 8}) {
    set_num_threads(threads);
    std::vector<int> hits(1001, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  set_num_threads(1);
}

TEST(ParallelFor, PropagatesErrors) {
  set_num_threads(4);
  EXPECT_EQ(testing::error_kind_of([] {
              parallel_for(100, [](std::size_t i) {
                if (i == 77) fail(ErrorKind::kDegenerate, "boom");
              });
            }),
            ErrorKind::kDegenerate);
  set_num_threads(1);
}

TEST(Numeric, LogSumExpStable) {
  const std::vector<double> z{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(z), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> w{-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(w), -1000.0 + std::log(2.0), 1e-12);
}

TEST(Numeric, SoftmaxSumsToOne) {
  Rng r(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z(6);
    for (auto& v : z) v = 5.0 * r.normal();
    const auto p = softmax(z);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Numeric, ArgmaxTiesGoLow) {
  const std::vector<double> z{1.0, 3.0, 3.0};
  EXPECT_EQ(argmax(z), 1u);
}

TEST(Numeric, AverageRanksShareTies) {
  const std::vector<double> v{10.0, 20.0, 10.0, 5.0};
  const auto r = average_ranks(v);
  EXPECT_DOUBLE_EQ(r[3], 1.0);
  EXPECT_DOUBLE_EQ(r[0], 2.5);
  EXPECT_DOUBLE_EQ(r[2], 2.5);
  EXPECT_DOUBLE_EQ(r[1], 4.0);
}

TEST(Numeric, SpearmanOfMonotoneIsOne) {
  std::vector<double> a, b;
  for (int i = 0; i < 30; ++i) {
    a.push_back(i);
    b.push_back(std::exp(0.1 * i));
  }
  EXPECT_NEAR(spearman(a, b), 1.0, 1e-12);
}

TEST(NeighborIndex, MatchesExhaustiveOracle) {
  Rng rng(11);
  const Matrix pts = testing::random_matrix(300, 5, rng);
  const NeighborIndex index(pts);
  for (std::size_t i = 0; i < 300; i += 7) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < 300; ++j)
      if (j != i) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += std::pow(pts(static_cast<Eigen::Index>(j), c) - pts(static_cast<Eigen::Index>(i), c), 2);
        all.emplace_back(s, j);
      }
    std::sort(all.begin(), all.end());
    const auto nb = index.query(i, 12);
    ASSERT_EQ(nb.ids.size(), 12u);
    for (std::size_t m = 0; m < 12; ++m) {
      EXPECT_EQ(nb.ids[m], all[m].second);
      EXPECT_NEAR(nb.distances[m], std::sqrt(all[m].first), 1e-12);
      if (m > 0) EXPECT_LE(nb.distances[m - 1], nb.distances[m]);
    }
  }
}

TEST(NeighborIndex, ExcludesSelfAndBreaksTiesByLowerId) {
  Matrix pts = Matrix::Zero(5, 2);
  const NeighborIndex index(pts);
  const auto nb = index.query(2, 3);
  EXPECT_EQ(nb.ids, (std::vector<std::size_t>{0, 1, 3}));
}

TEST(NeighborIndex, QueryPointIncludesAllStored) {
  Matrix pts(3, 1);
  pts << 0.0, 1.0, 5.0;
  const NeighborIndex index(pts);
  Vector x(1);
  x << 0.9;
  const auto nb = index.query_point(x, 2);
  EXPECT_EQ(nb.ids, (std::vector<std::size_t>{1, 0}));
}

}  // namespace
}  // namespace sbdiag

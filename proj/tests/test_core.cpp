#include <gtest/gtest.h>

#include <cmath>

#include "flashattn/config.hpp"
#include "flashattn/errors.hpp"
#include "flashattn/matrix.hpp"
#include "flashattn/memory_tracker.hpp"
#include "flashattn/random.hpp"
#include "flashattn/reference.hpp"
#include "test_util.hpp"

namespace fa = flashattn;
using fa::Matrix;
using fa::RowVector;

TEST(RowMax, SmallExamples) {
  EXPECT_EQ(fa::rowmax(Matrix{{1, 3}, {2, 0}}), (RowVector{3, 2}));
  const RowVector masked = fa::rowmax(Matrix{{fa::kNegInf, fa::kNegInf}});
  ASSERT_EQ(masked.size(), 1u);
  EXPECT_EQ(masked[0], fa::kNegInf);
}

TEST(RowMax, MatchesScalarScan) {
  const Matrix m = fa::random_normal(64, 64, 3);
  const RowVector got = fa::rowmax(m);
  for (std::size_t r = 0; r < 64; ++r) {
    double best = m(r, 0);
    for (std::size_t c = 1; c < 64; ++c)
      if (m(r, c) > best) best = m(r, c);
    EXPECT_EQ(got[r], best);
  }
}

TEST(RowSum, SmallExamples) {
  EXPECT_EQ(fa::rowsum(Matrix{{1, 2}, {3, 4}}), (RowVector{3, 7}));
  EXPECT_EQ(fa::rowsum(Matrix(4, 8)), RowVector(4));
}

TEST(RowSum, MatchesCompensatedSum) {
  const Matrix m = fa::random_normal(64, 64, 11);
  const RowVector got = fa::rowsum(m);
  for (std::size_t r = 0; r < 64; ++r) {
    // Kahan-Babuska summation
    double sum = 0.0, comp = 0.0;
    for (double x : m.row(r)) {
      const double t = sum + x;
      comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
      sum = t;
    }
    const double exact = sum + comp;
    EXPECT_LE(std::abs(got[r] - exact), 1e-12 * std::max(1.0, std::abs(exact)));
  }
}

TEST(RowReductions, EmptyMatrixIsDimensionError) {
  EXPECT_THROW(fa::rowmax(Matrix()), fa::DimensionError);
  EXPECT_THROW(fa::rowsum(Matrix(0, 3)), fa::DimensionError);
}

TEST(Matmul, IdentityLeavesMatrix) {
  const Matrix eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const Matrix m = fa::random_normal(3, 4, 5);
  fa::CostCounters c;
  EXPECT_EQ(fa::matmul(eye, m, false, c), m);
  EXPECT_EQ(c.matmul_flops, 2u * 3 * 4 * 3);
}

TEST(Matmul, BitwiseEqualToTripleLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t m = 1 + seed % 7, k = 1 + (seed * 3) % 11, n = 1 + (seed * 5) % 9;
    const Matrix a = fa::random_normal(m, k, seed);
    const Matrix b = fa::random_normal(k, n, seed + 100);
    Matrix want(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t x = 0; x < k; ++x) acc += a(i, x) * b(x, j);
        want(i, j) = acc;
      }
    fa::CostCounters c;
    EXPECT_EQ(fa::matmul(a, b, false, c), want);
    EXPECT_EQ(fa::matmul(a, fa::transpose(b), true, c), want);
  }
}

TEST(Matmul, TwoByThreeTimesThreeByTwo) {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  const Matrix b{{7, 8}, {9, 10}, {11, 12}};
  fa::CostCounters c;
  EXPECT_EQ(fa::matmul(a, b, false, c), (Matrix{{58, 64}, {139, 154}}));
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  fa::CostCounters c;
  EXPECT_THROW(fa::matmul(Matrix(2, 3), Matrix(4, 5), false, c), fa::DimensionError);
  EXPECT_THROW(fa::matmul(Matrix(2, 3), Matrix(4, 5), true, c), fa::DimensionError);
}

TEST(Views, BlockAliasesParent) {
  Matrix m(4, 5);
  fa::MatrixView b = m.block(1, 2, 2, 3);
  b(0, 0) = 7.0;
  b(1, 2) = -1.5;
  EXPECT_EQ(m(1, 2), 7.0);
  EXPECT_EQ(m(2, 4), -1.5);
  b.fill(2.0);
  EXPECT_EQ(m(2, 3), 2.0);
  EXPECT_EQ(m(0, 0), 0.0);
  const fa::ConstMatrixView cb = m.view().block(1, 2, 2, 3);
  EXPECT_EQ(&cb(0, 0), &m(1, 2));
}

TEST(Views, OutOfRangeBlockIsIndexError) {
  Matrix m(4, 4);
  EXPECT_THROW(m.block(3, 0, 2, 1), fa::IndexError);
  EXPECT_THROW(m.view().block(0, 1, 1, 4), fa::IndexError);
}

TEST(Softmax, RowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix s = fa::random_normal(16, 1 + seed, seed, 4.0);
    const RowVector sums = fa::rowsum(fa::softmax_rows(s));
    for (double x : sums) EXPECT_NEAR(x, 1.0, 1e-6);
  }
}

TEST(MaxAbsDiff, NanPropagates) {
  const Matrix a{{1.0, NAN}};
  const Matrix b{{1.0, 2.0}};
  EXPECT_TRUE(std::isnan(fa::max_abs_diff(a, b)));
}

TEST(Reduced, RoundsThroughFloat) {
  EXPECT_EQ(fa::to_reduced(1.0 + 1e-12), 1.0);
  EXPECT_EQ(fa::to_reduced(0.1), static_cast<double>(0.1f));
}

TEST(Random, SeedIsReproducible) {
  EXPECT_EQ(fa::random_normal(8, 8, 42), fa::random_normal(8, 8, 42));
  EXPECT_NE(fa::random_normal(8, 8, 42), fa::random_normal(8, 8, 43));
}

TEST(Random, MomentsLookNormal) {
  const Matrix m = fa::random_normal(200, 100, 9);
  double mean = 0.0, sq = 0.0;
  for (double x : m.data()) {
    mean += x;
    sq += x * x;
  }
  mean /= m.size();
  sq /= m.size();
  EXPECT_NEAR(mean, 0.0, 0.03);
  EXPECT_NEAR(sq, 1.0, 0.03);
}

TEST(BlockSpec, CeilDivisionAndRaggedEdges) {
  const fa::BlockSpec b = fa::BlockSpec::make(17, 16, 5);
  EXPECT_EQ(b.row_blocks(), 2u);
  EXPECT_EQ(b.col_blocks(), 4u);
  EXPECT_EQ(b.row_end(1), 17u);
  EXPECT_EQ(b.col_end(3), 17u);
  EXPECT_THROW(fa::BlockSpec::make(16, 0, 4), fa::ConfigError);
  EXPECT_THROW(fa::BlockSpec::make(0, 4, 4), fa::ConfigError);
}

TEST(AttentionConfig, DefaultScaleAndValidation) {
  fa::AttentionConfig cfg = fa::AttentionConfig::make(8, 16, 4, 4);
  EXPECT_DOUBLE_EQ(cfg.scale(), 0.25);
  cfg.softmax_scale = -1.0;
  EXPECT_THROW(cfg.validate(), fa::ConfigError);
  cfg.softmax_scale = 0.5;
  cfg.block = fa::BlockSpec::make(9, 4, 4);
  EXPECT_THROW(cfg.validate(), fa::ConfigError);
}

TEST(MemoryTracker, CountsLibraryAllocations) {
  const std::int64_t before = fa::MemoryTracker::current_bytes();
  fa::PeakMemoryScope scope;
  {
    Matrix m(100, 10);
    EXPECT_EQ(fa::MemoryTracker::current_bytes() - before, 8000);
  }
  EXPECT_EQ(fa::MemoryTracker::current_bytes(), before);
  EXPECT_EQ(scope.peak_above_baseline(), 8000);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "test_support.hpp"

using namespace ras;
using testing_support::random_matrix;

namespace {

// Triple loop, k ascending; the kernels promise this summation order.
Matrix naive_gemm(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            float s = 0.0f;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

Matrix copy_rows(const Matrix& x, const std::vector<std::uint32_t>& rows) {
    Matrix out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
    return out;
}

std::vector<std::uint32_t> random_subset(std::size_t n, Rng& rng) {
    std::vector<std::uint32_t> out;
    const double keep = rng.uniform();
    for (std::uint32_t i = 0; i < n; ++i)
        if (rng.uniform() < keep) out.push_back(i);
    return out;
}

}  // namespace

TEST(Gemm, IdentityAndZero) {
    Matrix eye(2, 2, {1, 0, 0, 1});
    Matrix b(2, 2, {1, 2, 3, 4});
    EXPECT_TRUE(bit_equal(gemm(eye, b), b));
    Matrix z(1, 2, {0, 0});
    Matrix col(2, 1, {5, 7});
    Matrix r = gemm(z, col);
    ASSERT_EQ(r.rows(), 1u);
    EXPECT_EQ(r(0, 0), 0.0f);
}

TEST(Gemm, MatchesTripleLoopExactly) {
    Rng rng(1);
    Matrix a = random_matrix(7, 5, rng), b = random_matrix(5, 3, rng);
    EXPECT_TRUE(bit_equal(gemm(a, b), naive_gemm(a, b)));
    for (int t = 0; t < 50; ++t) {
        const std::size_t m = 1 + rng.below(70), k = 1 + rng.below(70), n = 1 + rng.below(70);
        Matrix x = random_matrix(m, k, rng), y = random_matrix(k, n, rng);
        ASSERT_TRUE(bit_equal(gemm(x, y), naive_gemm(x, y))) << m << "x" << k << "x" << n;
    }
}

TEST(Gemm, AccumulateSeedsTheSum) {
    Rng rng(2);
    Matrix a = random_matrix(6, 9, rng), b = random_matrix(9, 4, rng), c0 = random_matrix(6, 4, rng);
    Matrix got = gemm(a, b, c0);
    Matrix want(6, 4);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            float s = c0(i, j);
            for (std::size_t k = 0; k < 9; ++k) s += a(i, k) * b(k, j);
            want(i, j) = s;
        }
    EXPECT_TRUE(bit_equal(got, want));
}

TEST(Gemm, ShapeMismatchRejected) {
    try {
        gemm(Matrix(2, 3), Matrix(2, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Shape);
    }
    EXPECT_THROW(gemm(Matrix(2, 3), Matrix(3, 2), Matrix(2, 3)), Error);
}

TEST(Gemm, ThreadCountDoesNotChangeBits) {
    Rng rng(3);
    Matrix a = random_matrix(129, 67, rng), b = random_matrix(67, 45, rng);
    setenv("RAS_NUM_THREADS", "1", 1);
    Matrix one = gemm(a, b);
    setenv("RAS_NUM_THREADS", "3", 1);
    Matrix three = gemm(a, b);
    unsetenv("RAS_NUM_THREADS");
    EXPECT_TRUE(bit_equal(one, three));
}

TEST(IndexSetTest, RejectsUnsortedAndDuplicates) {
    EXPECT_THROW(IndexSet({3, 1}), Error);
    EXPECT_THROW(IndexSet({1, 1}), Error);
    IndexSet s({0, 4, 9});
    EXPECT_TRUE(s.fits(10));
    EXPECT_FALSE(s.fits(9));
    EXPECT_TRUE(s.contains(4));
    EXPECT_FALSE(s.contains(5));
    const std::vector<std::uint8_t> flags{1, 0, 0, 1};
    EXPECT_EQ(IndexSet::from_flags(flags), IndexSet({0, 3}));
}

TEST(GatherGemm, FullSetAndEmptySet) {
    Rng rng(4);
    Matrix x = random_matrix(12, 6, rng), w = random_matrix(6, 5, rng);
    EXPECT_TRUE(bit_equal(gather_gemm(x, IndexSet::all(12), w), gemm(x, w)));
    Matrix e = gather_gemm(x, IndexSet{}, w);
    EXPECT_EQ(e.rows(), 0u);
    EXPECT_EQ(e.cols(), 5u);
}

TEST(GatherGemm, SpecExampleMatchesCopyThenMultiply) {
    Rng rng(5);
    Matrix x = random_matrix(16, 8, rng), w = random_matrix(8, 4, rng);
    const std::vector<std::uint32_t> rows{1, 5, 6, 12};
    EXPECT_TRUE(bit_equal(gather_gemm(x, IndexSet(rows), w), naive_gemm(copy_rows(x, rows), w)));
}

TEST(GatherGemm, OutOfRangeRejected) {
    Matrix x(4, 3), w(3, 2);
    EXPECT_THROW(gather_gemm(x, IndexSet({1, 4}), w), Error);
    EXPECT_THROW(gather_gemm(x, IndexSet({0}), Matrix(2, 2)), Error);
}

TEST(GatherGemm, UnsortedSpanKeepsOrder) {
    Rng rng(6);
    Matrix x = random_matrix(10, 7, rng), w = random_matrix(7, 3, rng);
    const std::vector<std::uint32_t> rows{8, 2, 5};
    EXPECT_TRUE(bit_equal(gather_gemm(x, std::span<const std::uint32_t>(rows), w),
                          naive_gemm(copy_rows(x, rows), w)));
}

TEST(GemmScatter, SentinelRowsUntouched) {
    Rng rng(7);
    Matrix xa = random_matrix(2, 5, rng), w = random_matrix(5, 4, rng);
    Matrix dest(10, 4, -1.0f);
    gemm_scatter(xa, w, IndexSet({2, 7}), dest);
    Matrix want = naive_gemm(xa, w);
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            if (r == 2) EXPECT_EQ(dest(r, c), want(0, c));
            else if (r == 7) EXPECT_EQ(dest(r, c), want(1, c));
            else EXPECT_EQ(dest(r, c), -1.0f);
        }
    }
}

TEST(GemmScatter, FullOverwriteAndNoOp) {
    Rng rng(8);
    Matrix xa = random_matrix(6, 3, rng), w = random_matrix(3, 2, rng);
    Matrix dest = random_matrix(6, 2, rng);
    gemm_scatter(xa, w, IndexSet::all(6), dest);
    EXPECT_TRUE(bit_equal(dest, naive_gemm(xa, w)));
    Matrix before = dest;
    gemm_scatter(Matrix(0, 3), w, IndexSet{}, dest);
    EXPECT_TRUE(bit_equal(dest, before));
}

TEST(GemmScatter, ValidatesBeforeWriting) {
    Rng rng(9);
    Matrix xa = random_matrix(3, 3, rng), w = random_matrix(3, 2, rng);
    Matrix dest(5, 2, -1.0f);
    const Matrix before = dest;
    const std::vector<std::uint32_t> bad_range{0, 1, 5};
    EXPECT_THROW(gemm_scatter(xa, w, std::span<const std::uint32_t>(bad_range), dest), Error);
    const std::vector<std::uint32_t> dup{0, 3, 0};
    EXPECT_THROW(gemm_scatter(xa, w, std::span<const std::uint32_t>(dup), dest), Error);
    EXPECT_THROW(gemm_scatter(xa, w, IndexSet({0, 1}), dest), Error);
    Matrix wrong_cols(5, 3, -1.0f);
    EXPECT_THROW(gemm_scatter(xa, w, IndexSet({0, 1, 2}), wrong_cols), Error);
    EXPECT_TRUE(bit_equal(dest, before));
}

TEST(FusedKernels, RandomShapesUpTo64MatchCompositions) {
    Rng rng(10);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.below(64), k = 1 + rng.below(64), m = 1 + rng.below(64);
        Matrix x = random_matrix(n, k, rng), w = random_matrix(k, m, rng);
        const auto rows = random_subset(n, rng);
        ASSERT_TRUE(bit_equal(gather_gemm(x, IndexSet(rows), w), naive_gemm(copy_rows(x, rows), w)));

        Matrix xa = random_matrix(rows.size(), k, rng);
        Matrix dest = random_matrix(n, m, rng);
        Matrix want = dest;
        Matrix prod = naive_gemm(xa, w);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy(prod.row(i).begin(), prod.row(i).end(), want.row(rows[i]).begin());
        gemm_scatter(xa, w, IndexSet(rows), dest);
        ASSERT_TRUE(bit_equal(dest, want)) << "shape " << n << "x" << k << "x" << m;
    }
}

TEST(Softmax, BasicCases) {
    Matrix z(1, 3, {0, 0, 0});
    Matrix s = softmax_rows(z);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s(0, j), 1.0 / 3.0, 1e-7);
    Matrix one = softmax_rows(Matrix(1, 1, {42.0f}));
    EXPECT_EQ(one(0, 0), 1.0f);
    Matrix r = softmax_rows(Matrix(1, 3, {1, 2, 3}));
    const double z3 = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(r(0, j), std::exp(j + 1.0) / z3, 1e-7);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        const std::size_t r = 1 + rng.below(8), c = 1 + rng.below(40);
        Matrix a = random_matrix(r, c, rng, 5.0f);
        Matrix shifted = a;
        for (std::size_t i = 0; i < r; ++i) {
            const float sh = static_cast<float>(rng.uniform(-50.0, 50.0));
            for (float& v : shifted.row(i)) v += sh;
        }
        Matrix s = softmax_rows(a), s2 = softmax_rows(shifted);
        for (std::size_t i = 0; i < r; ++i) {
            double sum = 0.0;
            for (float v : s.row(i)) sum += v;
            EXPECT_NEAR(sum, 1.0, 1e-6);
            const auto am = std::max_element(s.row(i).begin(), s.row(i).end()) - s.row(i).begin();
            const auto am2 = std::max_element(s2.row(i).begin(), s2.row(i).end()) - s2.row(i).begin();
            EXPECT_EQ(am, am2);
            for (std::size_t j = 0; j < c; ++j) EXPECT_NEAR(s(i, j), s2(i, j), 1e-6);
        }
    }
}

TEST(Softmax, RejectsNonFinite) {
    EXPECT_THROW(softmax_rows(Matrix(1, 2, {1.0f, NAN})), Error);
    EXPECT_THROW(softmax_rows(Matrix(1, 2, {INFINITY, 0.0f})), Error);
}

TEST(RngTest, StreamsAreIndependentAndReproducible) {
    Rng a(5, 1), b(5, 1), c(5, 2);
    for (int i = 0; i < 10; ++i) {
        const auto va = a.next_u64();
        EXPECT_EQ(va, b.next_u64());
        EXPECT_NE(va, c.next_u64());
    }
    Rng u(9);
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double x = u.normal();
        mean += x;
        sq += x * x;
    }
    mean /= 20000;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(sq / 20000 - mean * mean, 1.0, 0.05);
}

TEST(RngTest, PinnedFirstDraws) {
    // splitmix64 reference values; guards against accidental algorithm drift.
    EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull);
    Rng r(0, 0);
    const std::uint64_t key = splitmix64(0 ^ splitmix64(0));
    EXPECT_EQ(r.next_u64(), splitmix64(key));
    EXPECT_EQ(r.next_u64(), splitmix64(key + 0x9E3779B97F4A7C15ull));
}

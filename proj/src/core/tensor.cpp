#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>
#include <thread>

#include "error.hpp"

namespace ras {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows * cols, ErrorKind::Shape, "matrix data length != rows*cols");
}

void Matrix::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

IndexSet::IndexSet(std::vector<std::uint32_t> indices) : indices_(std::move(indices)) {
    for (std::size_t i = 1; i < indices_.size(); ++i) {
        require(indices_[i - 1] < indices_[i], ErrorKind::InvalidArgument,
                "index set must be strictly increasing");
    }
}

IndexSet IndexSet::all(std::size_t n) {
    std::vector<std::uint32_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint32_t>(i);
    return IndexSet(std::move(v));
}

IndexSet IndexSet::from_flags(std::span<const std::uint8_t> flags) {
    std::vector<std::uint32_t> v;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (flags[i]) v.push_back(static_cast<std::uint32_t>(i));
    }
    return IndexSet(std::move(v));
}

bool IndexSet::contains(std::uint32_t idx) const noexcept {
    return std::binary_search(indices_.begin(), indices_.end(), idx);
}

unsigned kernel_threads() {
    static const unsigned n = [] {
        const char* env = std::getenv("RAS_NUM_THREADS");
        if (!env) return 1u;
        const long v = std::strtol(env, nullptr, 10);
        return v > 0 ? static_cast<unsigned>(std::min<long>(v, 256)) : 1u;
    }();
    return n;
}

namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 32;

// Computes out_row(i)[j] (+)= sum_k a_row(i)[k] * b[k][j] for i in [i0, i1).
// The k loop is innermost per output element and always ascending, so every
// element sees the same summation order whatever the tiling.
template <class ARow, class ORow>
void gemm_block(std::size_t i0, std::size_t i1, std::size_t k, std::size_t n, ARow a_row,
                const float* b, ORow out_row, bool accumulate) {
    std::size_t i = i0;
    for (; i + kMr <= i1; i += kMr) {
        const float* a[kMr];
        float* o[kMr];
        for (std::size_t r = 0; r < kMr; ++r) {
            a[r] = a_row(i + r);
            o[r] = out_row(i + r);
        }
        std::size_t j = 0;
        for (; j + kNr <= n; j += kNr) {
            float acc[kMr][kNr];
            for (std::size_t r = 0; r < kMr; ++r) {
                for (std::size_t jj = 0; jj < kNr; ++jj) {
                    acc[r][jj] = accumulate ? o[r][j + jj] : 0.0f;
                }
            }
            for (std::size_t kk = 0; kk < k; ++kk) {
                const float* brow = b + kk * n + j;
                for (std::size_t r = 0; r < kMr; ++r) {
                    const float av = a[r][kk];
                    for (std::size_t jj = 0; jj < kNr; ++jj) {
                        acc[r][jj] = acc[r][jj] + av * brow[jj];
                    }
                }
            }
            for (std::size_t r = 0; r < kMr; ++r) {
                std::memcpy(o[r] + j, acc[r], sizeof(acc[r]));
            }
        }
        if (j < n) {
            const std::size_t w = n - j;
            float acc[kMr][kNr];
            for (std::size_t r = 0; r < kMr; ++r) {
                for (std::size_t jj = 0; jj < w; ++jj) {
                    acc[r][jj] = accumulate ? o[r][j + jj] : 0.0f;
                }
            }
            for (std::size_t kk = 0; kk < k; ++kk) {
                const float* brow = b + kk * n + j;
                for (std::size_t r = 0; r < kMr; ++r) {
                    const float av = a[r][kk];
                    for (std::size_t jj = 0; jj < w; ++jj) {
                        acc[r][jj] = acc[r][jj] + av * brow[jj];
                    }
                }
            }
            for (std::size_t r = 0; r < kMr; ++r) {
                std::memcpy(o[r] + j, acc[r], w * sizeof(float));
            }
        }
    }
    for (; i < i1; ++i) {
        const float* a = a_row(i);
        float* o = out_row(i);
        for (std::size_t j = 0; j < n; j += kNr) {
            const std::size_t w = std::min(kNr, n - j);
            float acc[kNr];
            for (std::size_t jj = 0; jj < w; ++jj) acc[jj] = accumulate ? o[j + jj] : 0.0f;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const float av = a[kk];
                const float* brow = b + kk * n + j;
                for (std::size_t jj = 0; jj < w; ++jj) acc[jj] = acc[jj] + av * brow[jj];
            }
            std::memcpy(o + j, acc, w * sizeof(float));
        }
    }
}

// Splits output rows across worker threads; each row is owned by exactly one
// thread so results do not depend on the thread count.
template <class ARow, class ORow>
void gemm_rows(std::size_t m, std::size_t k, std::size_t n, ARow a_row, const float* b,
               ORow out_row, bool accumulate) {
    const unsigned threads = kernel_threads();
    const double work = static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n);
    if (threads <= 1 || m < 2 * kMr || work < 1e6) {
        gemm_block(0, m, k, n, a_row, b, out_row, accumulate);
        return;
    }
    const std::size_t blocks = (m + kMr - 1) / kMr;
    const std::size_t used = std::min<std::size_t>(threads, blocks);
    std::vector<std::thread> pool;
    pool.reserve(used - 1);
    auto range = [&](std::size_t t) {
        const std::size_t b0 = blocks * t / used;
        const std::size_t b1 = blocks * (t + 1) / used;
        return std::pair{std::min(m, b0 * kMr), std::min(m, b1 * kMr)};
    };
    for (std::size_t t = 1; t < used; ++t) {
        pool.emplace_back([&, t] {
            auto [lo, hi] = range(t);
            gemm_block(lo, hi, k, n, a_row, b, out_row, accumulate);
        });
    }
    auto [lo, hi] = range(0);
    gemm_block(lo, hi, k, n, a_row, b, out_row, accumulate);
    for (auto& th : pool) th.join();
}

void check_rows(std::span<const std::uint32_t> rows, std::size_t limit) {
    for (auto r : rows) {
        if (r >= limit) {
            fail(ErrorKind::InvalidArgument,
                 "row index " + std::to_string(r) + " out of range (" + std::to_string(limit) + ")");
        }
    }
}

}  // namespace

Matrix gemm(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorKind::Shape, "gemm: a.cols != b.rows");
    Matrix c(a.rows(), b.cols());
    const std::size_t k = a.cols();
    gemm_rows(
        a.rows(), k, b.cols(), [&](std::size_t i) { return a.data() + i * k; }, b.data(),
        [&](std::size_t i) { return c.data() + i * c.cols(); }, false);
    return c;
}

Matrix gemm(const Matrix& a, const Matrix& b, const Matrix& accumulate_into) {
    require(a.cols() == b.rows(), ErrorKind::Shape, "gemm: a.cols != b.rows");
    require(accumulate_into.rows() == a.rows() && accumulate_into.cols() == b.cols(),
            ErrorKind::Shape, "gemm: accumulator shape mismatch");
    Matrix c = accumulate_into;
    const std::size_t k = a.cols();
    gemm_rows(
        a.rows(), k, b.cols(), [&](std::size_t i) { return a.data() + i * k; }, b.data(),
        [&](std::size_t i) { return c.data() + i * c.cols(); }, true);
    return c;
}

Matrix gather_gemm(const Matrix& x_full, const IndexSet& active, const Matrix& w) {
    return gather_gemm(x_full, active.span(), w);
}

Matrix gather_gemm(const Matrix& x_full, std::span<const std::uint32_t> rows, const Matrix& w) {
    require(x_full.cols() == w.rows(), ErrorKind::Shape, "gather_gemm: x.cols != w.rows");
    check_rows(rows, x_full.rows());
    Matrix c(rows.size(), w.cols());
    const std::size_t k = x_full.cols();
    gemm_rows(
        rows.size(), k, w.cols(), [&](std::size_t i) { return x_full.data() + rows[i] * k; },
        w.data(), [&](std::size_t i) { return c.data() + i * c.cols(); }, false);
    return c;
}

void gemm_scatter(const Matrix& x_active, const Matrix& w, const IndexSet& active,
                  Matrix& dest_full) {
    gemm_scatter(x_active, w, active.span(), dest_full);
}

void gemm_scatter(const Matrix& x_active, const Matrix& w, std::span<const std::uint32_t> rows,
                  Matrix& dest_full) {
    require(x_active.cols() == w.rows(), ErrorKind::Shape, "gemm_scatter: x.cols != w.rows");
    require(x_active.rows() == rows.size(), ErrorKind::Shape,
            "gemm_scatter: x rows != number of indices");
    require(dest_full.cols() == w.cols(), ErrorKind::Shape, "gemm_scatter: dest.cols != w.cols");
    check_rows(rows, dest_full.rows());
    {
        std::vector<std::uint32_t> sorted(rows.begin(), rows.end());
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                ErrorKind::InvalidArgument, "gemm_scatter: duplicate destination row");
    }
    const std::size_t k = x_active.cols();
    const std::size_t n = w.cols();
    gemm_rows(
        rows.size(), k, n, [&](std::size_t i) { return x_active.data() + i * k; }, w.data(),
        [&](std::size_t i) { return dest_full.data() + rows[i] * n; }, false);
}

void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    float mx = row[0];
    for (float v : row) mx = std::max(mx, v);
    float sum = 0.0f;
    for (float& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    const float inv = 1.0f / sum;
    for (float& v : row) v *= inv;
}

Matrix softmax_rows(const Matrix& a) {
    require(all_finite(a.flat()), ErrorKind::Numeric, "softmax_rows: non-finite input");
    Matrix out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    }
    return t;
}

Matrix select_rows(const Matrix& a, std::span<const std::uint32_t> rows) {
    check_rows(rows, a.rows());
    Matrix out(rows.size(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(a.data() + rows[i] * a.cols(), a.cols(), out.data() + i * a.cols());
    }
    return out;
}

void add_row_bias(Matrix& out, const Matrix& bias) {
    require(bias.size() == out.cols(), ErrorKind::Shape, "bias length != cols");
    for (std::size_t r = 0; r < out.rows(); ++r) {
        float* o = out.data() + r * out.cols();
        for (std::size_t c = 0; c < out.cols(); ++c) o[c] += bias.data()[c];
    }
}

}  // namespace ras

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ras {

// Row-major float32 matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    std::span<float> row(std::size_t r) noexcept {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<const float> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept {
        return data_[r * cols_ + c];
    }

    std::span<float> flat() noexcept { return data_; }
    std::span<const float> flat() const noexcept { return data_; }

    void fill(float v);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// Byte-level equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bit_equal(const Matrix& a, const Matrix& b);
bool all_finite(std::span<const float> v);

// Strictly increasing list of row positions into a full-length sequence.
class IndexSet {
public:
    IndexSet() = default;

    // Throws InvalidArgument unless `indices` is strictly increasing.
    explicit IndexSet(std::vector<std::uint32_t> indices);

    static IndexSet all(std::size_t n);
    static IndexSet from_flags(std::span<const std::uint8_t> flags);

    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    std::uint32_t operator[](std::size_t i) const noexcept { return indices_[i]; }
    auto begin() const noexcept { return indices_.begin(); }
    auto end() const noexcept { return indices_.end(); }
    std::span<const std::uint32_t> span() const noexcept { return indices_; }

    // True when every index is < n.
    bool fits(std::size_t n) const noexcept {
        return indices_.empty() || indices_.back() < n;
    }
    bool contains(std::uint32_t idx) const noexcept;

    bool operator==(const IndexSet&) const = default;

private:
    std::vector<std::uint32_t> indices_;
};

// Number of worker threads kernels may use (RAS_NUM_THREADS, default 1).
unsigned kernel_threads();

// c = a*b, or c = c0 + a*b when `accumulate_into` is given. Every output
// element is summed left to right over k, starting from 0 or from c0,
// independent of blocking or threads.
Matrix gemm(const Matrix& a, const Matrix& b);
Matrix gemm(const Matrix& a, const Matrix& b, const Matrix& accumulate_into);

// gemm(select_rows(x_full, rows), w) without materializing the selection.
Matrix gather_gemm(const Matrix& x_full, const IndexSet& active, const Matrix& w);
Matrix gather_gemm(const Matrix& x_full, std::span<const std::uint32_t> rows, const Matrix& w);

// dest_full[rows[i]] = x_active[i] * w; rows not listed are left untouched.
// All checks run before the first write.
void gemm_scatter(const Matrix& x_active, const Matrix& w, const IndexSet& active,
                  Matrix& dest_full);
void gemm_scatter(const Matrix& x_active, const Matrix& w, std::span<const std::uint32_t> rows,
                  Matrix& dest_full);

Matrix softmax_rows(const Matrix& a);
// In-place stabilized softmax of one row.
void softmax_inplace(std::span<float> row);

Matrix transpose(const Matrix& a);
Matrix select_rows(const Matrix& a, std::span<const std::uint32_t> rows);

// out[i, :] += bias for every row.
void add_row_bias(Matrix& out, const Matrix& bias);

}  // namespace ras

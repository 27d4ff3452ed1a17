#pragma once

// Row-wise building blocks shared by the subset (inference) forward and the
// dense batched (training) forward. Both paths call exactly these routines so
// that a full-grid subset forward is bit-identical to the dense one.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace ras::ops {

inline constexpr float kRmsEps = 1e-6f;

// n = x / sqrt(mean(x^2) + eps); returns the reciprocal rms.
float rms_norm(std::span<const float> x, std::span<float> out);
// Gradient of rms_norm given the stored input and reciprocal rms.
void rms_norm_backward(std::span<const float> x, float inv_rms, std::span<const float> dn,
                       std::span<float> dx);

// out = n * (1 + scale) + shift
inline void modulate(std::span<const float> n, const float* shift, const float* scale,
                     std::span<float> out) {
    for (std::size_t j = 0; j < n.size(); ++j) out[j] = n[j] * (1.0f + scale[j]) + shift[j];
}

// h += gate * a
inline void gated_residual(std::span<float> h, const float* gate, std::span<const float> a) {
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = h[j] + gate[j] * a[j];
}

float silu(float x);
float silu_grad(float x);
float gelu(float x);
float gelu_grad(float x);

// Sinusoidal features of 1000*sigma: [cos(t f_i), sin(t f_i)], f_i = 10000^(-i/half).
std::vector<float> timestep_features(float sigma, std::size_t dim);

struct GridPos {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
};

// 2D rotary tables: the first half of each head rotates with the row index,
// the second half with the column index.
class Rope2d {
public:
    Rope2d() = default;
    Rope2d(std::size_t head_dim, std::size_t grid_h, std::size_t grid_w, double base = 10000.0);

    // Rotates every head slice of `row` (length heads*head_dim) in place.
    void apply(std::span<float> row, GridPos pos, bool inverse = false) const;

    std::size_t head_dim() const noexcept { return head_dim_; }

private:
    std::size_t head_dim_ = 0;
    std::size_t pairs_ = 0;  // rotation pairs per axis
    std::vector<float> cos_row_, sin_row_, cos_col_, sin_col_;
};

// Scaled dot-product attention for one head. q: nq rows, k/v: nk rows, each
// row is `dh` floats at the given stride. Writes nq x dh into out. When
// `probs` is non-null the nq x nk softmax matrix is stored there.
void attend(const float* q, std::size_t q_stride, std::size_t nq, const float* k, const float* v,
            std::size_t kv_stride, std::size_t nk, std::size_t dh, float scale, float* out,
            std::size_t out_stride, float* probs = nullptr);

}  // namespace ras::ops

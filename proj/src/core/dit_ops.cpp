#include "dit_ops.hpp"

#include <cmath>

#include "error.hpp"

namespace ras::ops {

float rms_norm(std::span<const float> x, std::span<float> out) {
    float ss = 0.0f;
    for (float v : x) ss += v * v;
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + kRmsEps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
    return inv;
}

void rms_norm_backward(std::span<const float> x, float inv_rms, std::span<const float> dn,
                       std::span<float> dx) {
    float dot = 0.0f;
    for (std::size_t i = 0; i < x.size(); ++i) dot += dn[i] * x[i];
    const float coef = inv_rms * inv_rms * inv_rms * dot / static_cast<float>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += inv_rms * dn[i] - coef * x[i];
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

float silu_grad(float x) {
    const float s = 1.0f / (1.0f + std::exp(-x));
    return s * (1.0f + x * (1.0f - s));
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

// exp form, noticeably cheaper than std::tanh here
static float fast_tanh(float u) { return 1.0f - 2.0f / (std::exp(2.0f * u) + 1.0f); }

float gelu(float x) {
    const float u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5f * x * (1.0f + fast_tanh(u));
}

float gelu_grad(float x) {
    const float u = kGeluC * (x + kGeluA * x * x * x);
    const float t = fast_tanh(u);
    const float du = kGeluC * (1.0f + 3.0f * kGeluA * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

std::vector<float> timestep_features(float sigma, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<float> out(dim, 0.0f);
    const double t = 1000.0 * static_cast<double>(sigma);
    for (std::size_t i = 0; i < half; ++i) {
        const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = static_cast<float>(std::cos(t * f));
        out[half + i] = static_cast<float>(std::sin(t * f));
    }
    return out;
}

Rope2d::Rope2d(std::size_t head_dim, std::size_t grid_h, std::size_t grid_w, double base)
    : head_dim_(head_dim), pairs_(head_dim / 4) {
    require(head_dim % 4 == 0, ErrorKind::InvalidArgument,
            "2D RoPE needs head_dim divisible by 4");
    auto table = [&](std::size_t n, std::vector<float>& c, std::vector<float>& s) {
        c.resize(n * pairs_);
        s.resize(n * pairs_);
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t i = 0; i < pairs_; ++i) {
                const double theta = std::pow(base, -static_cast<double>(i) / static_cast<double>(pairs_));
                const double ang = static_cast<double>(p) * theta;
                c[p * pairs_ + i] = static_cast<float>(std::cos(ang));
                s[p * pairs_ + i] = static_cast<float>(std::sin(ang));
            }
        }
    };
    table(grid_h, cos_row_, sin_row_);
    table(grid_w, cos_col_, sin_col_);
}

void Rope2d::apply(std::span<float> row, GridPos pos, bool inverse) const {
    const float sign = inverse ? -1.0f : 1.0f;
    const float* cr = cos_row_.data() + pos.row * pairs_;
    const float* sr = sin_row_.data() + pos.row * pairs_;
    const float* cc = cos_col_.data() + pos.col * pairs_;
    const float* sc = sin_col_.data() + pos.col * pairs_;
    for (std::size_t h0 = 0; h0 < row.size(); h0 += head_dim_) {
        float* x = row.data() + h0;
        for (std::size_t i = 0; i < pairs_; ++i) {
            const float c = cr[i], s = sign * sr[i];
            const float a = x[2 * i], b = x[2 * i + 1];
            x[2 * i] = a * c - b * s;
            x[2 * i + 1] = a * s + b * c;
        }
        float* y = x + head_dim_ / 2;
        for (std::size_t i = 0; i < pairs_; ++i) {
            const float c = cc[i], s = sign * sc[i];
            const float a = y[2 * i], b = y[2 * i + 1];
            y[2 * i] = a * c - b * s;
            y[2 * i + 1] = a * s + b * c;
        }
    }
}

void attend(const float* q, std::size_t q_stride, std::size_t nq, const float* k, const float* v,
            std::size_t kv_stride, std::size_t nk, std::size_t dh, float scale, float* out,
            std::size_t out_stride, float* probs) {
    std::vector<float> local;
    if (!probs) local.resize(nk);
    // keys transposed so the score loop runs across j; per-score order over e is unchanged
    std::vector<float> kt(dh * nk);
    for (std::size_t j = 0; j < nk; ++j)
        for (std::size_t e = 0; e < dh; ++e) kt[e * nk + j] = k[j * kv_stride + e];
    for (std::size_t i = 0; i < nq; ++i) {
        const float* qi = q + i * q_stride;
        float* p = probs ? probs + i * nk : local.data();
        for (std::size_t j = 0; j < nk; ++j) p[j] = 0.0f;
        for (std::size_t e = 0; e < dh; ++e) {
            const float qe = qi[e];
            const float* row = kt.data() + e * nk;
            for (std::size_t j = 0; j < nk; ++j) p[j] += qe * row[j];
        }
        for (std::size_t j = 0; j < nk; ++j) p[j] *= scale;
        softmax_inplace({p, nk});
        float* oi = out + i * out_stride;
        for (std::size_t e = 0; e < dh; ++e) oi[e] = 0.0f;
        for (std::size_t j = 0; j < nk; ++j) {
            const float pj = p[j];
            const float* vj = v + j * kv_stride;
            for (std::size_t e = 0; e < dh; ++e) oi[e] += pj * vj[e];
        }
    }
}

}  // namespace ras::ops

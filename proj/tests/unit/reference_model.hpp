#pragma once
// Naive double-precision DiT used as an oracle. Written with plain loops and
// none of the library kernels; shares only the weight container.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "dit.hpp"

namespace reftest {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat to_mat(const ras::Matrix& m) {
    Mat out = zeros(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
}

inline Mat matmul(const Mat& a, const ras::Matrix& w) {
    Mat out = zeros(a.size(), w.cols());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < w.rows(); ++k)
            for (std::size_t j = 0; j < w.cols(); ++j) out[i][j] += a[i][k] * w(k, j);
    return out;
}

inline void add_bias(Mat& a, const ras::Matrix& b) {
    for (auto& row : a)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b(0, j);
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline std::vector<double> rms(const std::vector<double>& x) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / x.size() + 1e-6);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
    return out;
}

// Rotates each head: first half by grid row, second half by grid column.
inline void rope(std::vector<double>& x, std::size_t heads, std::uint32_t row, std::uint32_t col) {
    const std::size_t dh = x.size() / heads, pairs = dh / 4;
    for (std::size_t h = 0; h < heads; ++h) {
        for (int half = 0; half < 2; ++half) {
            const double pos = half == 0 ? row : col;
            double* v = x.data() + h * dh + half * (dh / 2);
            for (std::size_t i = 0; i < pairs; ++i) {
                const double ang = pos * std::pow(10000.0, -double(i) / double(pairs));
                const double a = v[2 * i], b = v[2 * i + 1];
                v[2 * i] = a * std::cos(ang) - b * std::sin(ang);
                v[2 * i + 1] = a * std::sin(ang) + b * std::cos(ang);
            }
        }
    }
}

struct RefKV {
    std::vector<Mat> k, v;  // per layer, num_patches x d, post-rotation
};

struct RefOptions {
    // Attend only among `active` tokens (no recovery).
    bool active_only_attention = false;
    // Replace K/V rows of tokens not in `active` with these before attention.
    const RefKV* substitute = nullptr;
};

struct RefResult {
    Mat out;    // num_patches x patch_dim, grid order
    RefKV kv;   // K/V actually computed from the current input, every row
};

// Runs every patch of `sample` through the model. Rows outside `active`
// are only meaningful when nothing is substituted.
inline RefResult reference_forward(const ras::DitModel& model, const ras::Image& sample, double sigma,
                                   std::optional<std::uint32_t> cls,
                                   const std::vector<std::uint32_t>& active, RefOptions opt = {}) {
    const auto& cfg = model.config();
    const auto& w = model.weights();
    const std::size_t P = cfg.num_patches(), d = cfg.hidden_dim, ps = cfg.patch_size,
                      C = cfg.channels, H = cfg.heads, dh = cfg.head_dim();
    std::vector<char> is_active(P, 0);
    for (auto p : active) is_active[p] = 1;

    Mat x = zeros(P, cfg.patch_dim());
    for (std::size_t p = 0; p < P; ++p) {
        const std::size_t y0 = (p / cfg.grid_w()) * ps, x0 = (p % cfg.grid_w()) * ps;
        std::size_t e = 0;
        for (std::size_t yy = 0; yy < ps; ++yy)
            for (std::size_t xx = 0; xx < ps; ++xx)
                for (std::size_t c = 0; c < C; ++c) x[p][e++] = sample.at(y0 + yy, x0 + xx, c);
    }
    Mat h = matmul(x, w.embed_w);
    add_bias(h, w.embed_b);

    Mat feats = zeros(1, 256);
    for (std::size_t i = 0; i < 128; ++i) {
        const double f = std::pow(10000.0, -double(i) / 128.0);
        feats[0][i] = std::cos(1000.0 * sigma * f);
        feats[0][128 + i] = std::sin(1000.0 * sigma * f);
    }
    Mat t = matmul(feats, w.t1_w);
    add_bias(t, w.t1_b);
    for (double& v : t[0]) v = silu(v);
    Mat c = matmul(t, w.t2_w);
    add_bias(c, w.t2_b);
    if (cls) for (std::size_t j = 0; j < d; ++j) c[0][j] += w.class_embed(*cls, j);
    for (double& v : c[0]) v = silu(v);

    RefResult res;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& lw = w.layers[l];
        Mat mod = matmul(c, lw.ada_w);
        add_bias(mod, lw.ada_b);
        auto m = [&](int chunk, std::size_t j) { return mod[0][chunk * d + j]; };

        Mat u = zeros(P, d);
        for (std::size_t p = 0; p < P; ++p) {
            auto n = rms(h[p]);
            for (std::size_t j = 0; j < d; ++j) u[p][j] = n[j] * (1.0 + m(1, j)) + m(0, j);
        }
        Mat q = matmul(u, lw.wq), k = matmul(u, lw.wk), v = matmul(u, lw.wv);
        for (std::size_t p = 0; p < P; ++p) {
            const std::uint32_t r = p / cfg.grid_w(), col = p % cfg.grid_w();
            rope(q[p], H, r, col);
            rope(k[p], H, r, col);
        }
        res.kv.k.push_back(k);
        res.kv.v.push_back(v);
        if (opt.substitute) {
            for (std::size_t p = 0; p < P; ++p) {
                if (is_active[p]) continue;
                k[p] = opt.substitute->k[l][p];
                v[p] = opt.substitute->v[l][p];
            }
        }
        Mat o = zeros(P, d);
        for (std::size_t i = 0; i < P; ++i) {
            for (std::size_t hd = 0; hd < H; ++hd) {
                std::vector<double> s(P, -INFINITY);
                double mx = -INFINITY;
                for (std::size_t j = 0; j < P; ++j) {
                    if (opt.active_only_attention && !is_active[j]) continue;
                    double dot = 0.0;
                    for (std::size_t e = 0; e < dh; ++e) dot += q[i][hd * dh + e] * k[j][hd * dh + e];
                    s[j] = dot / std::sqrt(double(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& sj : s) z += (sj = std::exp(sj - mx));
                for (std::size_t j = 0; j < P; ++j)
                    for (std::size_t e = 0; e < dh; ++e) o[i][hd * dh + e] += s[j] / z * v[j][hd * dh + e];
            }
        }
        Mat a = matmul(o, lw.proj_w);
        add_bias(a, lw.proj_b);
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t j = 0; j < d; ++j) h[p][j] += m(2, j) * a[p][j];

        for (std::size_t p = 0; p < P; ++p) {
            auto n = rms(h[p]);
            for (std::size_t j = 0; j < d; ++j) u[p][j] = n[j] * (1.0 + m(4, j)) + m(3, j);
        }
        Mat z1 = matmul(u, lw.mlp1_w);
        add_bias(z1, lw.mlp1_b);
        for (auto& row : z1) for (double& vv : row) vv = gelu(vv);
        Mat z2 = matmul(z1, lw.mlp2_w);
        add_bias(z2, lw.mlp2_b);
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t j = 0; j < d; ++j) h[p][j] += m(5, j) * z2[p][j];
    }
    Mat fm = matmul(c, w.final_ada_w);
    add_bias(fm, w.final_ada_b);
    Mat u = zeros(P, d);
    for (std::size_t p = 0; p < P; ++p) {
        auto n = rms(h[p]);
        for (std::size_t j = 0; j < d; ++j) u[p][j] = n[j] * (1.0 + fm[0][d + j]) + fm[0][j];
    }
    res.out = matmul(u, w.final_w);
    add_bias(res.out, w.final_b);
    return res;
}

inline RefKV to_ref(const ras::KVCache& cache) {
    RefKV r;
    for (const auto& m : cache.k) r.k.push_back(to_mat(m));
    for (const auto& m : cache.v) r.v.push_back(to_mat(m));
    return r;
}

}  // namespace reftest

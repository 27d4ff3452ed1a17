#include "dit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace ras {

void ModelConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::InvalidArgument, "model config: " + m); };
    if (patch_size == 0 || image_h == 0 || image_w == 0 || channels == 0) bad("zero dimension");
    if (image_h % patch_size || image_w % patch_size) bad("image size not divisible by patch_size");
    if (hidden_dim == 0 || heads == 0 || hidden_dim % heads) bad("hidden_dim not divisible by heads");
    if (head_dim() % 4) bad("head_dim must be divisible by 4 for 2D RoPE");
    if (layers == 0 || mlp_ratio == 0) bad("layers and mlp_ratio must be positive");
}

Image image_for(const ModelConfig& cfg, float fill) {
    return Image(cfg.image_h, cfg.image_w, cfg.channels, fill);
}

DitWeights DitWeights::zeros(const ModelConfig& cfg) {
    const std::size_t d = cfg.hidden_dim, pd = cfg.patch_dim(), m = cfg.mlp_dim();
    DitWeights w;
    w.embed_w = Matrix(pd, d);
    w.embed_b = Matrix(1, d);
    w.t1_w = Matrix(ModelConfig::kTimestepFeatures, d);
    w.t1_b = Matrix(1, d);
    w.t2_w = Matrix(d, d);
    w.t2_b = Matrix(1, d);
    w.class_embed = Matrix(cfg.num_classes, d);
    w.layers.resize(cfg.layers);
    for (auto& l : w.layers) {
        l.ada_w = Matrix(d, 6 * d);
        l.ada_b = Matrix(1, 6 * d);
        l.wq = Matrix(d, d);
        l.wk = Matrix(d, d);
        l.wv = Matrix(d, d);
        l.proj_w = Matrix(d, d);
        l.proj_b = Matrix(1, d);
        l.mlp1_w = Matrix(d, m);
        l.mlp1_b = Matrix(1, m);
        l.mlp2_w = Matrix(m, d);
        l.mlp2_b = Matrix(1, d);
    }
    w.final_ada_w = Matrix(d, 2 * d);
    w.final_ada_b = Matrix(1, 2 * d);
    w.final_w = Matrix(d, pd);
    w.final_b = Matrix(1, pd);
    return w;
}

namespace {

template <class Self, class Fn>
void visit(Self& w, Fn&& fn) {
    fn("embed.w", w.embed_w);
    fn("embed.b", w.embed_b);
    fn("t_mlp1.w", w.t1_w);
    fn("t_mlp1.b", w.t1_b);
    fn("t_mlp2.w", w.t2_w);
    fn("t_mlp2.b", w.t2_b);
    fn("class_embed", w.class_embed);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        auto& l = w.layers[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        fn(p + "adaln.w", l.ada_w);
        fn(p + "adaln.b", l.ada_b);
        fn(p + "attn.q", l.wq);
        fn(p + "attn.k", l.wk);
        fn(p + "attn.v", l.wv);
        fn(p + "attn.proj.w", l.proj_w);
        fn(p + "attn.proj.b", l.proj_b);
        fn(p + "mlp.fc1.w", l.mlp1_w);
        fn(p + "mlp.fc1.b", l.mlp1_b);
        fn(p + "mlp.fc2.w", l.mlp2_w);
        fn(p + "mlp.fc2.b", l.mlp2_b);
    }
    fn("final.adaln.w", w.final_ada_w);
    fn("final.adaln.b", w.final_ada_b);
    fn("final.w", w.final_w);
    fn("final.b", w.final_b);
}

void fill_normal(Matrix& m, Rng& rng, float stddev) {
    for (float& v : m.flat()) v = rng.normal() * stddev;
}

void fill_xavier(Matrix& m, Rng& rng) {
    fill_normal(m, rng, std::sqrt(2.0f / static_cast<float>(m.rows() + m.cols())));
}

}  // namespace

void DitWeights::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    visit(*this, fn);
}

void DitWeights::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    visit(*this, fn);
}

std::size_t DitWeights::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

DitModel::DitModel(ModelConfig cfg, DitWeights weights) : cfg_(cfg), w_(std::move(weights)) {
    cfg_.validate();
    const DitWeights ref = DitWeights::zeros(cfg_);
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    ref.for_each([&](const std::string&, const Matrix& m) { shapes.emplace_back(m.rows(), m.cols()); });
    std::size_t i = 0;
    bool ok = w_.layers.size() == cfg_.layers;
    if (ok) {
        w_.for_each([&](const std::string& name, const Matrix& m) {
            if (i >= shapes.size() || shapes[i] != std::pair{m.rows(), m.cols()}) {
                fail(ErrorKind::Shape, "weight '" + name + "' does not match model config");
            }
            ++i;
        });
    }
    require(ok && i == shapes.size(), ErrorKind::Shape, "weight set does not match model config");
    rope_ = ops::Rope2d(cfg_.head_dim(), cfg_.grid_h(), cfg_.grid_w());
}

DitModel DitModel::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DitWeights w = DitWeights::zeros(cfg);
    Rng rng(seed, 0x1D17);
    fill_xavier(w.embed_w, rng);
    fill_normal(w.t1_w, rng, 0.02f);
    fill_normal(w.t2_w, rng, 0.02f);
    fill_normal(w.class_embed, rng, 0.02f);
    for (auto& l : w.layers) {
        fill_xavier(l.wq, rng);
        fill_xavier(l.wk, rng);
        fill_xavier(l.wv, rng);
        fill_xavier(l.proj_w, rng);
        fill_xavier(l.mlp1_w, rng);
        fill_xavier(l.mlp2_w, rng);
    }
    return DitModel(cfg, std::move(w));
}

KVCache KVCache::for_model(const ModelConfig& cfg) {
    KVCache c;
    c.k.assign(cfg.layers, Matrix(cfg.num_patches(), cfg.hidden_dim));
    c.v.assign(cfg.layers, Matrix(cfg.num_patches(), cfg.hidden_dim));
    return c;
}

FlopCounter analytic_forward_flops(const ModelConfig& cfg, std::uint64_t active, std::uint64_t keys) {
    const std::uint64_t d = cfg.hidden_dim, pd = cfg.patch_dim(), m = cfg.mlp_dim(), L = cfg.layers;
    FlopCounter f;
    f.token_linear = 2 * active * (pd * d + L * (4 * d * d + 2 * d * m) + d * pd);
    f.attention = L * 4 * active * keys * d;
    f.conditioning = 2 * (ModelConfig::kTimestepFeatures * d + d * d + L * 6 * d * d + 2 * d * d);
    return f;
}

Matrix extract_patches(const ModelConfig& cfg, const Image& sample,
                       std::span<const std::uint32_t> patches) {
    require(sample.h == cfg.image_h && sample.w == cfg.image_w && sample.c == cfg.channels,
            ErrorKind::Shape, "sample shape does not match model config");
    const std::uint32_t ps = cfg.patch_size, gw = cfg.grid_w(), np = cfg.num_patches();
    Matrix out(patches.size(), cfg.patch_dim());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const std::uint32_t p = patches[i];
        require(p < np, ErrorKind::InvalidArgument, "patch index out of range");
        const std::uint32_t y0 = (p / gw) * ps, x0 = (p % gw) * ps;
        float* dst = out.data() + i * out.cols();
        for (std::uint32_t py = 0; py < ps; ++py) {
            const float* src = &sample.data[(static_cast<std::size_t>(y0 + py) * cfg.image_w + x0) * cfg.channels];
            std::copy_n(src, ps * cfg.channels, dst + py * ps * cfg.channels);
        }
    }
    return out;
}

TokenSequence patchify(const DitModel& model, const Image& sample, const IndexSet& active) {
    return patchify(model, sample, active.span());
}

TokenSequence patchify(const DitModel& model, const Image& sample,
                       std::span<const std::uint32_t> patch_ids) {
    const auto& w = model.weights();
    TokenSequence seq;
    seq.tokens = gemm(extract_patches(model.config(), sample, patch_ids), w.embed_w);
    add_row_bias(seq.tokens, w.embed_b);
    seq.patch_ids.assign(patch_ids.begin(), patch_ids.end());
    for (auto p : patch_ids) seq.positions.push_back(model.position(p));
    return seq;
}

Matrix condition_vector(const DitModel& model, float sigma, std::optional<std::uint32_t> class_id) {
    const auto& cfg = model.config();
    const auto& w = model.weights();
    Matrix feats(1, ModelConfig::kTimestepFeatures,
                 ops::timestep_features(sigma, ModelConfig::kTimestepFeatures));
    Matrix t1 = gemm(feats, w.t1_w);
    add_row_bias(t1, w.t1_b);
    for (float& v : t1.flat()) v = ops::silu(v);
    Matrix c = gemm(t1, w.t2_w);
    add_row_bias(c, w.t2_b);
    if (cfg.num_classes > 0) {
        require(class_id.has_value() && *class_id < cfg.num_classes, ErrorKind::InvalidArgument,
                "class id missing or out of range for a class-conditional model");
        const float* e = w.class_embed.data() + *class_id * cfg.hidden_dim;
        for (std::size_t j = 0; j < cfg.hidden_dim; ++j) c.data()[j] += e[j];
    }
    return c;
}

Matrix forward(const DitModel& model, const TokenSequence& x, float sigma,
               std::optional<std::uint32_t> class_id, KVCache& cache, bool use_recovery,
               FlopCounter* flops) {
    const auto& cfg = model.config();
    const auto& w = model.weights();
    const std::size_t d = cfg.hidden_dim, dh = cfg.head_dim(), np = cfg.num_patches();
    const std::size_t n = x.tokens.rows();
    require(x.tokens.cols() == d && x.patch_ids.size() == n && x.positions.size() == n,
            ErrorKind::Shape, "token sequence shape mismatch");
    require(cache.k.size() == cfg.layers && cache.v.size() == cfg.layers, ErrorKind::Shape,
            "kv cache does not match model");
    if (use_recovery && n < np && !cache.valid) {
        fail(ErrorKind::State, "attention recovery requested but the kv cache was never filled");
    }
    const std::span<const std::uint32_t> ids = x.patch_ids;

    Matrix cvec = condition_vector(model, sigma, class_id);
    Matrix sc = cvec;
    for (float& v : sc.flat()) v = ops::silu(v);

    const std::size_t nk = use_recovery ? np : n;
    // Instrumented per kernel call; checked against analytic_forward_flops in tests.
    FlopCounter fc;
    auto mm = [](std::uint64_t& slot, std::size_t rows, const Matrix& wt) {
        slot += 2ull * rows * wt.rows() * wt.cols();
    };
    mm(fc.token_linear, n, w.embed_w);
    mm(fc.conditioning, 1, w.t1_w);
    mm(fc.conditioning, 1, w.t2_w);

    Matrix h = x.tokens;
    Matrix nrm(1, d);
    Matrix u(n, d);
    Matrix o(n, d);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const LayerWeights& lw = w.layers[l];
        Matrix mod = gemm(sc, lw.ada_w);
        add_row_bias(mod, lw.ada_b);
        mm(fc.conditioning, 1, lw.ada_w);
        const float* shift_a = mod.data();
        const float* scale_a = shift_a + d;
        const float* gate_a = scale_a + d;
        const float* shift_m = gate_a + d;
        const float* scale_m = shift_m + d;
        const float* gate_m = scale_m + d;

        for (std::size_t i = 0; i < n; ++i) {
            ops::rms_norm(h.row(i), nrm.row(0));
            ops::modulate(nrm.row(0), shift_a, scale_a, u.row(i));
        }
        Matrix q = gemm(u, lw.wq);
        for (std::size_t i = 0; i < n; ++i) model.rope().apply(q.row(i), x.positions[i]);
        Matrix& kfull = cache.k[l];
        Matrix& vfull = cache.v[l];
        gemm_scatter(u, lw.wk, ids, kfull);
        gemm_scatter(u, lw.wv, ids, vfull);
        mm(fc.token_linear, n, lw.wq);
        mm(fc.token_linear, n, lw.wk);
        mm(fc.token_linear, n, lw.wv);
        for (std::size_t i = 0; i < n; ++i) model.rope().apply(kfull.row(ids[i]), x.positions[i]);

        Matrix kact, vact;
        const float* kp = kfull.data();
        const float* vp = vfull.data();
        if (!use_recovery) {
            kact = select_rows(kfull, ids);
            vact = select_rows(vfull, ids);
            kp = kact.data();
            vp = vact.data();
        }
        for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
            ops::attend(q.data() + hd * dh, d, n, kp + hd * dh, vp + hd * dh, d, nk, dh, scale,
                        o.data() + hd * dh, d);
            fc.attention += 2ull * 2ull * n * nk * dh;
        }
        Matrix a = gemm(o, lw.proj_w);
        add_row_bias(a, lw.proj_b);
        mm(fc.token_linear, n, lw.proj_w);
        for (std::size_t i = 0; i < n; ++i) ops::gated_residual(h.row(i), gate_a, a.row(i));

        for (std::size_t i = 0; i < n; ++i) {
            ops::rms_norm(h.row(i), nrm.row(0));
            ops::modulate(nrm.row(0), shift_m, scale_m, u.row(i));
        }
        Matrix z = gemm(u, lw.mlp1_w);
        add_row_bias(z, lw.mlp1_b);
        for (float& v : z.flat()) v = ops::gelu(v);
        Matrix m = gemm(z, lw.mlp2_w);
        add_row_bias(m, lw.mlp2_b);
        mm(fc.token_linear, n, lw.mlp1_w);
        mm(fc.token_linear, n, lw.mlp2_w);
        for (std::size_t i = 0; i < n; ++i) ops::gated_residual(h.row(i), gate_m, m.row(i));

        if (!all_finite(h.flat())) {
            fail(ErrorKind::Numeric, "non-finite activation in layer " + std::to_string(l));
        }
    }
    if (n == np) {
        cache.valid = true;
    }

    Matrix fm = gemm(sc, w.final_ada_w);
    add_row_bias(fm, w.final_ada_b);
    mm(fc.conditioning, 1, w.final_ada_w);
    for (std::size_t i = 0; i < n; ++i) {
        ops::rms_norm(h.row(i), nrm.row(0));
        ops::modulate(nrm.row(0), fm.data(), fm.data() + d, u.row(i));
    }
    Matrix out = gemm(u, w.final_w);
    add_row_bias(out, w.final_b);
    mm(fc.token_linear, n, w.final_w);
    if (flops) *flops += fc;
    return out;
}

void unpatchify(const ModelConfig& cfg, const Matrix& noise_tokens,
                std::span<const std::uint32_t> patch_ids, Image& dest) {
    require(dest.h == cfg.image_h && dest.w == cfg.image_w && dest.c == cfg.channels,
            ErrorKind::Shape, "unpatchify: destination shape mismatch");
    require(noise_tokens.rows() == patch_ids.size() && noise_tokens.cols() == cfg.patch_dim(),
            ErrorKind::Shape, "unpatchify: token matrix shape mismatch");
    const std::uint32_t np = cfg.num_patches();
    for (auto p : patch_ids) {
        require(p < np, ErrorKind::InvalidArgument, "unpatchify: patch index out of range");
    }
    const std::uint32_t ps = cfg.patch_size, gw = cfg.grid_w();
    for (std::size_t i = 0; i < patch_ids.size(); ++i) {
        const std::uint32_t p = patch_ids[i];
        const std::uint32_t y0 = (p / gw) * ps, x0 = (p % gw) * ps;
        const float* src = noise_tokens.data() + i * noise_tokens.cols();
        for (std::uint32_t py = 0; py < ps; ++py) {
            float* dst = &dest.data[(static_cast<std::size_t>(y0 + py) * cfg.image_w + x0) * cfg.channels];
            std::copy_n(src + py * ps * cfg.channels, ps * cfg.channels, dst);
        }
    }
}

}  // namespace ras

#include "flow_training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dit_dense.hpp"
#include "error.hpp"

namespace ras {

const char* shape_name(ShapeClass c) {
    switch (c) {
        case ShapeClass::Circle: return "circle";
        case ShapeClass::Square: return "square";
        case ShapeClass::Triangle: return "triangle";
        case ShapeClass::Ring: return "ring";
    }
    return "?";
}

ShapesDataset::ShapesDataset(std::uint32_t h, std::uint32_t w, std::uint32_t channels,
                             std::uint64_t seed)
    : h_(h), w_(w), c_(channels), seed_(seed) {
    require(h > 0 && w > 0 && channels > 0, ErrorKind::InvalidArgument, "empty dataset geometry");
}

ShapeParams ShapesDataset::params(std::uint64_t index) const {
    Rng rng(seed_, index);
    const float scale = static_cast<float>(std::min(h_, w_)) / 32.0f;
    ShapeParams p;
    p.cls = static_cast<ShapeClass>(rng.below(kNumShapeClasses));
    p.cx = 0.5f * w_ + static_cast<float>(rng.uniform(-3.0, 3.0)) * scale;
    p.cy = 0.5f * h_ + static_cast<float>(rng.uniform(-3.0, 3.0)) * scale;
    switch (p.cls) {
        case ShapeClass::Circle: p.size = static_cast<float>(rng.uniform(6.0, 10.0)) * scale; break;
        case ShapeClass::Square: p.size = static_cast<float>(rng.uniform(5.0, 8.5)) * scale; break;
        case ShapeClass::Triangle: p.size = static_cast<float>(rng.uniform(8.0, 12.0)) * scale; break;
        case ShapeClass::Ring: p.size = static_cast<float>(rng.uniform(8.0, 11.0)) * scale; break;
    }
    p.thickness = 3.0f * scale;
    p.intensity.resize(c_);
    for (auto& v : p.intensity) v = static_cast<float>(rng.uniform(0.5, 1.0));
    return p;
}

float ShapesDataset::coverage(const ShapeParams& p, float x, float y) {
    const float dx = x - p.cx, dy = y - p.cy;
    float sd = 0.0f;
    switch (p.cls) {
        case ShapeClass::Circle: sd = std::sqrt(dx * dx + dy * dy) - p.size; break;
        case ShapeClass::Square: sd = std::max(std::fabs(dx), std::fabs(dy)) - p.size; break;
        case ShapeClass::Triangle: {
            // Upward-pointing equilateral triangle (image y grows downward);
            // outward edge normals at 90, 210 and 330 degrees, inradius R/2.
            const float s = 0.8660254037844386f;
            const float d0 = dy;
            const float d1 = -s * dx - 0.5f * dy;
            const float d2 = s * dx - 0.5f * dy;
            sd = std::max({d0, d1, d2}) - 0.5f * p.size;
            break;
        }
        case ShapeClass::Ring: {
            const float r = std::sqrt(dx * dx + dy * dy);
            const float mid = p.size - 0.5f * p.thickness;
            sd = std::fabs(r - mid) - 0.5f * p.thickness;
            break;
        }
    }
    return std::clamp(0.5f - sd, 0.0f, 1.0f);
}

Image ShapesDataset::render(const ShapeParams& p) const {
    Image img(h_, w_, c_);
    for (std::uint32_t y = 0; y < h_; ++y) {
        for (std::uint32_t x = 0; x < w_; ++x) {
            const float cov = coverage(p, x + 0.5f, y + 0.5f);
            for (std::uint32_t c = 0; c < c_; ++c) img.at(y, x, c) = cov * p.intensity[c];
        }
    }
    return img;
}

Image ShapesDataset::sample(std::uint64_t index) const {
    Image img = render(params(index));
    for (float& v : img.data) v = 2.0f * v - 1.0f;
    return img;
}

std::uint32_t classify_shape(const Image& img) {
    // Foreground: channel mean above the midpoint of background (-1) and the
    // darkest foreground (0).
    std::vector<std::uint8_t> fg(static_cast<std::size_t>(img.h) * img.w);
    for (std::uint32_t y = 0; y < img.h; ++y) {
        for (std::uint32_t x = 0; x < img.w; ++x) {
            float m = 0.0f;
            for (std::uint32_t c = 0; c < img.c; ++c) m += img.at(y, x, c);
            fg[y * img.w + x] = (m / img.c) > -0.5f;
        }
    }
    const float scale = static_cast<float>(std::min(img.h, img.w)) / 32.0f;
    double best = -1.0;
    std::uint32_t best_cls = 0;
    for (std::uint32_t cls = 0; cls < kNumShapeClasses; ++cls) {
        ShapeParams p;
        p.cls = static_cast<ShapeClass>(cls);
        p.thickness = 3.0f * scale;
        for (float oy = -3.0f; oy <= 3.0f; oy += 1.0f) {
            for (float ox = -3.0f; ox <= 3.0f; ox += 1.0f) {
                for (float sz = 4.0f; sz <= 13.0f; sz += 0.5f) {
                    p.cx = 0.5f * img.w + ox * scale;
                    p.cy = 0.5f * img.h + oy * scale;
                    p.size = sz * scale;
                    std::size_t inter = 0, uni = 0;
                    for (std::uint32_t y = 0; y < img.h; ++y) {
                        for (std::uint32_t x = 0; x < img.w; ++x) {
                            const bool t = ShapesDataset::coverage(p, x + 0.5f, y + 0.5f) >= 0.5f;
                            const bool f = fg[y * img.w + x];
                            inter += (t && f);
                            uni += (t || f);
                        }
                    }
                    const double iou = uni ? static_cast<double>(inter) / uni : 0.0;
                    if (iou > best) {
                        best = iou;
                        best_cls = cls;
                    }
                }
            }
        }
    }
    return best_cls;
}

void TrainConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::InvalidArgument, "train config: " + m); };
    if (batch_size == 0) bad("batch size must be positive");
    if (!(learning_rate > 0.0f)) bad("learning rate must be positive");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) bad("betas must be in [0, 1)");
    if (!(adam_eps > 0.0f)) bad("adam eps must be positive");
    if (!(weight_decay >= 0.0f)) bad("weight decay must be >= 0");
    if (!(ema_decay >= 0.0f && ema_decay < 1.0f)) bad("ema decay must be in [0, 1)");
}

LossResult flow_matching_loss(const DitModel& model, std::span<const Image> x0,
                              std::span<const Image> x1, std::span<const float> sigmas,
                              std::span<const std::int32_t> classes, bool with_grads) {
    const ModelConfig& cfg = model.config();
    const std::size_t B = x0.size(), P = cfg.num_patches(), pd = cfg.patch_dim();
    require(x1.size() == B && sigmas.size() == B && classes.size() == B && B > 0, ErrorKind::Shape,
            "loss: batch components disagree in size");
    const IndexSet all = IndexSet::all(P);
    Matrix inputs(B * P, pd), targets(B * P, pd);
    for (std::size_t b = 0; b < B; ++b) {
        require(x0[b].same_shape(x1[b]), ErrorKind::Shape, "loss: x0/x1 shape mismatch");
        const float s = sigmas[b];
        Image xs = x0[b];
        Image v = x0[b];
        for (std::size_t i = 0; i < xs.data.size(); ++i) {
            xs.data[i] = (1.0f - s) * x0[b].data[i] + s * x1[b].data[i];
            v.data[i] = x1[b].data[i] - x0[b].data[i];
        }
        Matrix pi = extract_patches(cfg, xs, all.span());
        Matrix pt = extract_patches(cfg, v, all.span());
        std::copy(pi.flat().begin(), pi.flat().end(), inputs.data() + b * P * pd);
        std::copy(pt.flat().begin(), pt.flat().end(), targets.data() + b * P * pd);
    }
    DenseTape tape;
    Matrix out = dense_forward(model, inputs, sigmas, classes, with_grads ? &tape : nullptr);
    LossResult res;
    const double n = static_cast<double>(out.size());
    double acc = 0.0;
    Matrix d_out(out.rows(), out.cols());
    const float g = static_cast<float>(2.0 / n);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float e = out.data()[i] - targets.data()[i];
        acc += static_cast<double>(e) * e;
        d_out.data()[i] = g * e;
    }
    res.loss = acc / n;
    if (!std::isfinite(res.loss)) fail(ErrorKind::Numeric, "non-finite flow matching loss");
    if (with_grads) {
        res.grads = DitWeights::zeros(cfg);
        dense_backward(model, tape, d_out, res.grads);
    }
    return res;
}

LossResult flow_matching_loss(const DitModel& model, std::span<const Image> x0,
                              std::span<const std::int32_t> classes, Rng& rng, bool with_grads) {
    std::vector<float> sigmas(x0.size());
    std::vector<Image> x1(x0.begin(), x0.end());
    for (std::size_t b = 0; b < x0.size(); ++b) {
        sigmas[b] = static_cast<float>(rng.uniform());
        for (float& v : x1[b].data) v = rng.normal();
    }
    return flow_matching_loss(model, x0, x1, sigmas, classes, with_grads);
}

namespace {

std::vector<Matrix*> tensors(DitWeights& w) {
    std::vector<Matrix*> out;
    w.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
}

}  // namespace

TrainResult train(const DitModel& init, const TrainConfig& cfg, const LossCallback& on_step) {
    cfg.validate();
    const ModelConfig& mc = init.config();
    DitModel model = init;
    DitWeights ema = init.weights();
    DitWeights m1 = DitWeights::zeros(mc), m2 = DitWeights::zeros(mc);
    const auto params = tensors(model.mutable_weights());
    const auto p_ema = tensors(ema);
    const auto p_m1 = tensors(m1);
    const auto p_m2 = tensors(m2);
    ShapesDataset data(mc.image_h, mc.image_w, mc.channels, cfg.data_seed);

    TrainResult res;
    res.losses.reserve(cfg.steps);
    double first_loss = 0.0;
    double b1_pow = 1.0, b2_pow = 1.0;
    for (std::uint32_t s = 0; s < cfg.steps; ++s) {
        std::vector<Image> x0;
        std::vector<std::int32_t> classes;
        x0.reserve(cfg.batch_size);
        for (std::uint32_t b = 0; b < cfg.batch_size; ++b) {
            const std::uint64_t idx = static_cast<std::uint64_t>(s) * cfg.batch_size + b;
            x0.push_back(data.sample(idx));
            classes.push_back(mc.num_classes > 0
                                  ? static_cast<std::int32_t>(data.label(idx) % mc.num_classes)
                                  : -1);
        }
        Rng rng(cfg.seed, 0x7A11ull + s);
        LossResult lr = flow_matching_loss(model, x0, classes, rng, true);
        if (s == 0) first_loss = lr.loss;
        if (lr.loss > 10.0 * first_loss) {
            fail(ErrorKind::Numeric, "training diverged at step " + std::to_string(s) +
                                         ": loss " + std::to_string(lr.loss) + " > 10x initial " +
                                         std::to_string(first_loss));
        }
        const auto grads = tensors(lr.grads);

        const float warm = cfg.warmup_steps == 0
                               ? 1.0f
                               : std::min(1.0f, static_cast<float>(s + 1) / cfg.warmup_steps);
        const float lr_t = cfg.learning_rate * warm;
        b1_pow *= cfg.beta1;
        b2_pow *= cfg.beta2;
        const float c1 = static_cast<float>(1.0 / (1.0 - b1_pow));
        const float c2 = static_cast<float>(1.0 / (1.0 - b2_pow));
        for (std::size_t t = 0; t < params.size(); ++t) {
            float* w = params[t]->data();
            float* mm = p_m1[t]->data();
            float* vv = p_m2[t]->data();
            const float* g = grads[t]->data();
            float* e = p_ema[t]->data();
            for (std::size_t i = 0; i < params[t]->size(); ++i) {
                mm[i] = cfg.beta1 * mm[i] + (1.0f - cfg.beta1) * g[i];
                vv[i] = cfg.beta2 * vv[i] + (1.0f - cfg.beta2) * g[i] * g[i];
                const float mhat = mm[i] * c1;
                const float vhat = vv[i] * c2;
                w[i] -= lr_t * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w[i]);
                e[i] = cfg.ema_decay * e[i] + (1.0f - cfg.ema_decay) * w[i];
            }
        }
        const float lf = static_cast<float>(lr.loss);
        res.losses.push_back(lf);
        if (on_step) on_step(s, lf);
    }
    res.model = DitModel(mc, std::move(ema));
    return res;
}

}  // namespace ras

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dit_ops.hpp"
#include "tensor.hpp"

namespace ras {

struct ModelConfig {
    std::uint32_t image_h = 32;
    std::uint32_t image_w = 32;
    std::uint32_t channels = 4;
    std::uint32_t patch_size = 4;
    std::uint32_t hidden_dim = 64;
    std::uint32_t layers = 4;
    std::uint32_t heads = 4;
    std::uint32_t mlp_ratio = 4;
    std::uint32_t num_classes = 4;  // 0 = unconditional

    static constexpr std::uint32_t kTimestepFeatures = 256;

    std::uint32_t grid_h() const { return image_h / patch_size; }
    std::uint32_t grid_w() const { return image_w / patch_size; }
    std::uint32_t num_patches() const { return grid_h() * grid_w(); }
    std::uint32_t patch_dim() const { return patch_size * patch_size * channels; }
    std::uint32_t head_dim() const { return hidden_dim / heads; }
    std::uint32_t mlp_dim() const { return hidden_dim * mlp_ratio; }

    // Throws InvalidArgument on inconsistent geometry.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Channel-last image tensor: value (y, x, c) lives at (y*w + x)*channels + c.
struct Image {
    std::uint32_t h = 0, w = 0, c = 0;
    std::vector<float> data;

    Image() = default;
    Image(std::uint32_t h_, std::uint32_t w_, std::uint32_t c_, float fill = 0.0f)
        : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    float& at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    float at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

Image image_for(const ModelConfig& cfg, float fill = 0.0f);

struct LayerWeights {
    Matrix ada_w, ada_b;  // d x 6d: shift/scale/gate for attention, then for MLP
    Matrix wq, wk, wv;    // d x d each, no bias
    Matrix proj_w, proj_b;
    Matrix mlp1_w, mlp1_b;
    Matrix mlp2_w, mlp2_b;
};

// Parameter container; also used to hold gradients and optimizer moments.
struct DitWeights {
    Matrix embed_w, embed_b;
    Matrix t1_w, t1_b, t2_w, t2_b;
    Matrix class_embed;  // num_classes x d (empty when unconditional)
    std::vector<LayerWeights> layers;
    Matrix final_ada_w, final_ada_b;  // d x 2d: shift, scale
    Matrix final_w, final_b;

    static DitWeights zeros(const ModelConfig& cfg);

    // Visits every tensor with a stable dotted name, in a fixed order.
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
    std::size_t parameter_count() const;
};

class DitModel {
public:
    DitModel() = default;
    DitModel(ModelConfig cfg, DitWeights weights);

    // Fresh model: xavier-normal linears, N(0, 0.02) embeddings, zero adaLN
    // modulation and zero output layer.
    static DitModel init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }
    const DitWeights& weights() const noexcept { return w_; }
    DitWeights& mutable_weights() noexcept { return w_; }
    const ops::Rope2d& rope() const noexcept { return rope_; }

    ops::GridPos position(std::uint32_t patch) const {
        return {patch / cfg_.grid_w(), patch % cfg_.grid_w()};
    }

private:
    ModelConfig cfg_;
    DitWeights w_;
    ops::Rope2d rope_;
};

// Per-layer full-length key/value caches (num_patches x d each). Stored keys
// already carry their rotary phase.
struct KVCache {
    std::vector<Matrix> k, v;
    bool valid = false;
    std::int64_t last_full_write = -1;

    static KVCache for_model(const ModelConfig& cfg);
};

struct TokenSequence {
    Matrix tokens;                        // n x d embedded tokens
    std::vector<std::uint32_t> patch_ids;  // sequence order; distinct
    std::vector<ops::GridPos> positions;  // grid coordinates of each token
};

// FLOPs (multiply + add counted as 2) by category.
struct FlopCounter {
    std::uint64_t token_linear = 0;  // projections, MLP, patch embed / unembed
    std::uint64_t attention = 0;     // QK^T and PV
    std::uint64_t conditioning = 0;  // timestep MLP and adaLN modulation (per sample)

    std::uint64_t total() const { return token_linear + attention + conditioning; }
    FlopCounter& operator+=(const FlopCounter& o) {
        token_linear += o.token_linear;
        attention += o.attention;
        conditioning += o.conditioning;
        return *this;
    }
};

// Closed-form FLOPs of one forward over `active` of the model's patches with
// `keys` attended keys per query.
FlopCounter analytic_forward_flops(const ModelConfig& cfg, std::uint64_t active, std::uint64_t keys);

// Raw (un-embedded) patch rows, (|patches| x patch_dim), in the given order.
Matrix extract_patches(const ModelConfig& cfg, const Image& sample,
                       std::span<const std::uint32_t> patches);

TokenSequence patchify(const DitModel& model, const Image& sample, const IndexSet& active);
TokenSequence patchify(const DitModel& model, const Image& sample,
                       std::span<const std::uint32_t> patch_ids);

// Conditioning vector c = MLP(timestep features) + class embedding (1 x d).
Matrix condition_vector(const DitModel& model, float sigma, std::optional<std::uint32_t> class_id);

// Noise prediction for the sequence's tokens, (n x patch_dim). K/V rows of the
// active tokens are scattered into `cache`; with `use_recovery` attention runs
// against the full cached K/V, otherwise against the active tokens only.
Matrix forward(const DitModel& model, const TokenSequence& x, float sigma,
               std::optional<std::uint32_t> class_id, KVCache& cache, bool use_recovery,
               FlopCounter* flops = nullptr);

// Writes prediction rows into `dest` at the listed patches only.
void unpatchify(const ModelConfig& cfg, const Matrix& noise_tokens,
                std::span<const std::uint32_t> patch_ids, Image& dest);
inline void unpatchify(const ModelConfig& cfg, const Matrix& noise_tokens, const IndexSet& active,
                       Image& dest) {
    unpatchify(cfg, noise_tokens, active.span(), dest);
}

}  // namespace ras

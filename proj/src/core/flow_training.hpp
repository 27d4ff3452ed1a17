#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dit.hpp"
#include "rng.hpp"

namespace ras {

enum class ShapeClass : std::uint32_t { Circle = 0, Square = 1, Triangle = 2, Ring = 3 };
inline constexpr std::uint32_t kNumShapeClasses = 4;
const char* shape_name(ShapeClass c);

struct ShapeParams {
    ShapeClass cls = ShapeClass::Circle;
    float cx = 0.0f, cy = 0.0f;  // pixel coordinates of the center
    float size = 0.0f;           // radius / half-side / circumradius
    float thickness = 0.0f;      // ring only
    std::vector<float> intensity;  // per channel, in [0.5, 1]
};

// Procedural centered shapes on a zero background. sample(i) depends only on
// (seed, i): parameters come from Rng(seed, i) and coverage is rasterized
// analytically (signed distance at pixel centers, one-pixel linear ramp).
class ShapesDataset {
public:
    ShapesDataset(std::uint32_t h, std::uint32_t w, std::uint32_t channels, std::uint64_t seed);

    ShapeParams params(std::uint64_t index) const;
    std::uint32_t label(std::uint64_t index) const {
        return static_cast<std::uint32_t>(params(index).cls);
    }
    // Pixel values in [0, 1].
    Image render(const ShapeParams& p) const;
    // Training tensor: render(params(index)) mapped to [-1, 1].
    Image sample(std::uint64_t index) const;

    // Coverage in [0, 1] of a shape at pixel (x, y); shared with the
    // template matcher.
    static float coverage(const ShapeParams& p, float x, float y);

private:
    std::uint32_t h_, w_, c_;
    std::uint64_t seed_;
};

// Nearest-template classifier: binarizes an image in [-1, 1] by channel mean
// and picks the class whose rendered template (over a grid of centers and
// sizes) has the highest IoU with it.
std::uint32_t classify_shape(const Image& img);

struct TrainConfig {
    std::uint32_t steps = 3000;
    std::uint32_t batch_size = 32;
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float weight_decay = 0.01f;
    std::uint32_t warmup_steps = 500;
    float ema_decay = 0.999f;
    std::uint64_t seed = 0;
    std::uint64_t data_seed = 1234;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct LossResult {
    double loss = 0.0;
    DitWeights grads;
};

// Deterministic core: x_sigma = (1 - sigma) x0 + sigma x1, target x1 - x0,
// loss = mean squared error over every output element.
LossResult flow_matching_loss(const DitModel& model, std::span<const Image> x0,
                              std::span<const Image> x1, std::span<const float> sigmas,
                              std::span<const std::int32_t> classes, bool with_grads = true);

// Draws sigma ~ U(0, 1) and x1 ~ N(0, I) from `rng`, then calls the above.
LossResult flow_matching_loss(const DitModel& model, std::span<const Image> x0,
                              std::span<const std::int32_t> classes, Rng& rng,
                              bool with_grads = true);

struct TrainResult {
    DitModel model;  // EMA weights
    std::vector<float> losses;
};

using LossCallback = std::function<void(std::uint32_t step, float loss)>;

// AdamW with linear warmup; batch k of step s uses dataset indices
// s*batch .. s*batch+batch-1 and noise from Rng(seed, s). Aborts with a
// Numeric error if the loss turns non-finite or exceeds 10x the first loss.
TrainResult train(const DitModel& init, const TrainConfig& cfg, const LossCallback& on_step = {});

}  // namespace ras

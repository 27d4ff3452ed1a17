#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dit.hpp"
#include "region_selector.hpp"

namespace ras {

// Descending noise levels sigma_0 = 1 > ... > sigma_T = 0.
struct SigmaSchedule {
    std::vector<float> sigmas;

    // Uniform grid 1 - i/T, optionally shifted: s' = mu*s / (1 + (mu-1)*s).
    static SigmaSchedule make(std::uint32_t steps, double shift = 1.0);
    std::uint32_t steps() const { return sigmas.empty() ? 0 : static_cast<std::uint32_t>(sigmas.size() - 1); }
    void validate() const;
};

struct NoiseCache {
    Image noise;
    bool initialized = false;
};

struct RasState {
    Image sample;
    NoiseCache cached_noise;
    DropCounter drops;
    std::uint32_t step = 0;
    PatchMask mask;
};

// Fresh values on active patches, cached values elsewhere.
Image merge_noise(const ModelConfig& cfg, const NoiseCache& cached, const Image& fresh,
                  const PatchMask& mask);

// S' = S + (sigma_next - sigma_t) * noise. Faults on non-finite output.
Image euler_step(const Image& sample, const Image& noise, float sigma_t, float sigma_next,
                 std::uint32_t step = 0);

struct StepRecord {
    std::uint32_t step = 0;
    float sigma = 0.0f;
    float sigma_next = 0.0f;
    double ratio = 1.0;
    bool dense = true;
    std::vector<std::uint32_t> active;  // patches computed fresh this step
    std::vector<float> scores;          // cache scores computed after this step
    FlopCounter flops;
    double wall_ms = 0.0;
};

struct RunTrace {
    std::uint32_t num_patches = 0;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint64_t seed = 0;
    std::int32_t class_id = -1;
    std::string metric = "std";
    float starvation_k = 0.0f;
    std::vector<StepRecord> steps;

    FlopCounter total_flops() const;
};

// One JSON object per line: a header record followed by one record per step.
void write_trace(const RunTrace& trace, const std::string& path);
RunTrace read_trace(const std::string& path);
std::string trace_to_string(const RunTrace& trace, bool include_timing = true);
RunTrace trace_from_string(const std::string& text);

struct StepObservation {
    std::uint32_t step;
    const PatchMask& mask;
    const Image& fresh;   // model output, meaningful on active patches only
    const Image& merged;  // the noise used for the update (new cached noise)
    const Image& sample;  // sample after the update
};
using StepObserver = std::function<void(const StepObservation&)>;

struct SampleOptions {
    bool use_recovery = true;
    StepObserver observer;
};

struct SampleResult {
    Image image;
    RunTrace trace;
};

// Initial x_T ~ N(0, I), drawn in storage order from (seed, fixed stream).
Image initial_noise(const ModelConfig& cfg, std::uint64_t seed);

SampleResult sample_ras(const DitModel& model, const SigmaSchedule& sigmas,
                        const RatioSchedule& schedule, std::uint64_t seed,
                        std::optional<std::uint32_t> class_id, const SampleOptions& options = {});

// Plain Euler sampler over the dense reference forward.
SampleResult sample_dense(const DitModel& model, const SigmaSchedule& sigmas, std::uint64_t seed,
                          std::optional<std::uint32_t> class_id, const StepObserver& observer = {});

}  // namespace ras

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dit.hpp"
#include "tensor.hpp"

namespace ras {

enum class MetricKind { Std, L2Norm, Random };
enum class CurveKind { Linear, Flat };

const char* metric_name(MetricKind k);
MetricKind parse_metric(const std::string& s);
const char* curve_name(CurveKind k);
CurveKind parse_curve(const std::string& s);

// Per-patch active flags; true = fast-update region.
struct PatchMask {
    std::vector<std::uint8_t> flags;

    static PatchMask all_active(std::size_t num_patches);
    std::size_t num_patches() const { return flags.size(); }
    std::size_t active_count() const;
    bool all() const { return active_count() == flags.size(); }
    IndexSet active() const { return IndexSet::from_flags(flags); }
};

struct DropCounter {
    std::vector<std::uint32_t> counts;

    explicit DropCounter(std::size_t num_patches = 0) : counts(num_patches, 0) {}
    void reset() { std::fill(counts.begin(), counts.end(), 0u); }
};

// Higher score = more cacheable.
struct CacheScoreField {
    std::vector<float> scores;
};

inline constexpr float kL2Epsilon = 1e-8f;

// Per-token statistic across channels (population std, or L2 norm), averaged
// within each patch, turned into a cacheability m_p (std itself, or
// 1/(norm + eps)), then damped: s_p = m_p * exp(-k * D_p). `random` draws
// i.i.d. uniform scores from (seed, step).
CacheScoreField compute_cache_scores(const ModelConfig& cfg, const Image& noise,
                                     const DropCounter& drops, float k, MetricKind metric,
                                     std::uint64_t seed = 0, std::uint64_t step = 0);

// Same statistic over a patch-major token field: patch p owns tokens
// [p*tokens_per_patch, (p+1)*tokens_per_patch), each `channels` values.
CacheScoreField compute_cache_scores(std::span<const float> tokens, std::size_t tokens_per_patch,
                                     std::size_t channels, const DropCounter& drops, float k,
                                     MetricKind metric, std::uint64_t seed = 0,
                                     std::uint64_t step = 0);
// Number of active patches for ratio rho: ceil(rho * P) clamped to [1, P].
std::size_t active_count_for(double ratio, std::size_t num_patches);

// The ceil(rho * P) patches with the lowest scores; ties go to the lower index.
PatchMask select_active(const CacheScoreField& scores, double ratio);

// counts[p] += 1 for every inactive patch.
void update_drops(DropCounter& drops, const PatchMask& mask);

// Patch order by ascending score (ties by index).
std::vector<std::uint32_t> rank_by_score(std::span<const float> scores);

struct RatioSchedule {
    std::uint32_t total_steps = 30;
    std::uint32_t warmup_steps = 4;
    std::vector<std::uint32_t> dense_reset_steps{12, 20};
    std::vector<double> ratio_curve;  // one entry per step
    float starvation_k = 0.3f;
    MetricKind metric = MetricKind::Std;
    bool reset_drops_on_dense = false;

    // Builds the curve: 1 on warmup/dense steps; selective steps follow a
    // linear ramp from avg+delta down to avg-delta (delta = min(avg, 1-avg)/2)
    // or a flat line, so the selective-step mean equals `average_ratio`.
    static RatioSchedule make(std::uint32_t total_steps, std::uint32_t warmup_steps,
                              std::vector<std::uint32_t> dense_resets, double average_ratio,
                              CurveKind curve, float k, MetricKind metric);

    bool is_dense(std::uint32_t t) const;
    std::uint32_t selective_steps() const;
    void validate() const;
};

double ratio_for_step(const RatioSchedule& schedule, std::uint32_t t);

}  // namespace ras

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dit.hpp"
#include "ras_scheduler.hpp"
#include "region_selector.hpp"

namespace ras {

// NDCG of `next` against `prev`, both permutations of 0..P-1 listing patches
// by ascending cache score. Linear gains rel(p) = P - position of p in prev,
// log2(i + 2) discount; the ideal ordering is `prev` itself.
double ndcg_adjacent(std::span<const std::uint32_t> prev, std::span<const std::uint32_t> next);

struct BaselineStats {
    double mean = 0.0;
    double stddev = 0.0;
};

// NDCG of a fixed ranking against uniformly random permutations.
BaselineStats ndcg_random_baseline(std::size_t num_patches, std::size_t samples, std::uint64_t seed);

// NDCG between the score rankings of every pair of consecutive steps
// (dense steps included; every step records scores of its full noise field).
std::vector<double> continuity_curve(const RunTrace& trace);

// Per-patch number of steps in which the patch was computed fresh.
std::vector<std::uint32_t> drop_count_map(const RunTrace& trace);

// Closed-form FLOPs of a whole run under `schedule`.
FlopCounter analytic_run_flops(const ModelConfig& cfg, const RatioSchedule& schedule,
                               bool use_recovery = true);
FlopCounter analytic_dense_run_flops(const ModelConfig& cfg, std::uint32_t steps);

double mse(const Image& a, const Image& b);
// Peak-to-peak range 2 (images live in [-1, 1]); +inf for identical images.
double psnr(double mse_value);

// Patches whose mean (over pixels and channels) exceeds `threshold`.
std::vector<std::uint8_t> foreground_patches(const ModelConfig& cfg, const Image& img,
                                             float threshold = -0.5f);

struct QualityConfig {
    std::uint32_t steps = 30;
    double average_ratio = 1.0;  // 1 = plain dense sampler
    std::uint32_t warmup = 4;
    std::vector<std::uint32_t> dense_resets{12, 20};
    CurveKind curve = CurveKind::Linear;
    float starvation_k = 0.3f;
    MetricKind metric = MetricKind::Std;
    double shift = 1.0;
    bool use_recovery = true;

    std::string label() const;
};

struct QualityRow {
    QualityConfig config;
    std::vector<double> mse_per_seed;
    double mse_mean = 0.0;
    double psnr_mean = 0.0;  // PSNR of the mean MSE
    FlopCounter flops;           // measured, summed over seeds
    FlopCounter analytic_flops;  // closed form, summed over seeds
    double wall_ms = 0.0;
};

struct QualityReport {
    std::uint32_t reference_steps = 30;
    std::vector<std::uint64_t> seeds;
    std::vector<QualityRow> rows;
};

// Generates every config for every seed (class = seed mod num_classes) and
// scores it against the dense `reference_steps` sample of the same seed.
QualityReport quality_vs_dense(const DitModel& model, const std::vector<QualityConfig>& configs,
                               const std::vector<std::uint64_t>& seeds,
                               std::uint32_t reference_steps = 30);

// Timing is opt-in so the default CSV is reproducible bit-for-bit.
std::string quality_report_csv(const QualityReport& report, bool include_timing = false);

}  // namespace ras

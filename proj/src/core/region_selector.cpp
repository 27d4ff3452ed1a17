#include "region_selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "rng.hpp"

namespace ras {

const char* metric_name(MetricKind k) {
    switch (k) {
        case MetricKind::Std: return "std";
        case MetricKind::L2Norm: return "l2norm";
        case MetricKind::Random: return "random";
    }
    return "?";
}

MetricKind parse_metric(const std::string& s) {
    if (s == "std") return MetricKind::Std;
    if (s == "l2norm") return MetricKind::L2Norm;
    if (s == "random") return MetricKind::Random;
    fail(ErrorKind::InvalidArgument, "unknown metric kind '" + s + "'");
}

const char* curve_name(CurveKind k) { return k == CurveKind::Linear ? "linear" : "flat"; }

CurveKind parse_curve(const std::string& s) {
    if (s == "linear") return CurveKind::Linear;
    if (s == "flat") return CurveKind::Flat;
    fail(ErrorKind::InvalidArgument, "unknown ratio curve '" + s + "'");
}

PatchMask PatchMask::all_active(std::size_t num_patches) {
    PatchMask m;
    m.flags.assign(num_patches, 1);
    return m;
}

std::size_t PatchMask::active_count() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
}

CacheScoreField compute_cache_scores(std::span<const float> tokens, std::size_t tokens_per_patch,
                                     std::size_t channels, const DropCounter& drops, float k,
                                     MetricKind metric, std::uint64_t seed, std::uint64_t step) {
    require(tokens_per_patch > 0 && channels > 0, ErrorKind::Shape, "empty patch geometry");
    require(tokens.size() % (tokens_per_patch * channels) == 0, ErrorKind::Shape,
            "token field is not a whole number of patches");
    const std::size_t np = tokens.size() / (tokens_per_patch * channels);
    require(drops.counts.size() == np, ErrorKind::Shape, "drop counter size != num_patches");
    require(k >= 0.0f && std::isfinite(k), ErrorKind::InvalidArgument, "starvation scale k must be >= 0");
    require(all_finite(tokens), ErrorKind::Numeric, "noise field contains non-finite values");

    CacheScoreField out;
    out.scores.resize(np);
    if (metric == MetricKind::Random) {
        Rng rng(seed, 0x5C0BEull ^ (step << 20));
        for (auto& s : out.scores) s = rng.uniform_float();
        return out;
    }

    const std::size_t C = channels;
    for (std::size_t p = 0; p < np; ++p) {
        double acc = 0.0;
        for (std::size_t t = 0; t < tokens_per_patch; ++t) {
            const float* v = tokens.data() + (p * tokens_per_patch + t) * C;
            double stat = 0.0;
            if (metric == MetricKind::Std) {
                double mean = 0.0;
                for (std::size_t c = 0; c < C; ++c) mean += v[c];
                mean /= static_cast<double>(C);
                double var = 0.0;
                for (std::size_t c = 0; c < C; ++c) var += (v[c] - mean) * (v[c] - mean);
                stat = std::sqrt(var / static_cast<double>(C));
            } else {
                double ss = 0.0;
                for (std::size_t c = 0; c < C; ++c) ss += static_cast<double>(v[c]) * v[c];
                stat = std::sqrt(ss);
            }
            acc += stat;
        }
        const double patch_stat = acc / static_cast<double>(tokens_per_patch);
        const double m = metric == MetricKind::Std ? patch_stat : 1.0 / (patch_stat + kL2Epsilon);
        out.scores[p] = static_cast<float>(m * std::exp(-static_cast<double>(k) * drops.counts[p]));
    }
    return out;
}

CacheScoreField compute_cache_scores(const ModelConfig& cfg, const Image& noise,
                                     const DropCounter& drops, float k, MetricKind metric,
                                     std::uint64_t seed, std::uint64_t step) {
    require(noise.h == cfg.image_h && noise.w == cfg.image_w && noise.c == cfg.channels,
            ErrorKind::Shape, "noise field shape does not match model config");
    std::vector<std::uint32_t> all(cfg.num_patches());
    std::iota(all.begin(), all.end(), 0u);
    const Matrix rows = extract_patches(cfg, noise, all);
    return compute_cache_scores(rows.flat(), static_cast<std::size_t>(cfg.patch_size) * cfg.patch_size,
                                cfg.channels, drops, k, metric, seed, step);
}

std::size_t active_count_for(double ratio, std::size_t num_patches) {
    require(ratio > 0.0 && ratio <= 1.0, ErrorKind::InvalidArgument, "ratio must lie in (0, 1]");
    // The small slack keeps ratios like 0.25 from rounding up through
    // representation error in the ramp arithmetic.
    const double want = std::ceil(ratio * static_cast<double>(num_patches) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, num_patches);
}

std::vector<std::uint32_t> rank_by_score(std::span<const float> scores) {
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
    return order;
}

PatchMask select_active(const CacheScoreField& scores, double ratio) {
    const std::size_t np = scores.scores.size();
    require(np > 0, ErrorKind::InvalidArgument, "empty score field");
    const std::size_t n = active_count_for(ratio, np);
    PatchMask mask;
    mask.flags.assign(np, 0);
    const auto order = rank_by_score(scores.scores);
    for (std::size_t i = 0; i < n; ++i) mask.flags[order[i]] = 1;
    return mask;
}

void update_drops(DropCounter& drops, const PatchMask& mask) {
    require(drops.counts.size() == mask.flags.size(), ErrorKind::Shape,
            "drop counter and mask sizes differ");
    for (std::size_t p = 0; p < mask.flags.size(); ++p) {
        if (!mask.flags[p]) ++drops.counts[p];
    }
}

RatioSchedule RatioSchedule::make(std::uint32_t total_steps, std::uint32_t warmup_steps,
                                  std::vector<std::uint32_t> dense_resets, double average_ratio,
                                  CurveKind curve, float k, MetricKind metric) {
    RatioSchedule s;
    s.total_steps = total_steps;
    s.warmup_steps = warmup_steps;
    std::sort(dense_resets.begin(), dense_resets.end());
    dense_resets.erase(std::unique(dense_resets.begin(), dense_resets.end()), dense_resets.end());
    s.dense_reset_steps = std::move(dense_resets);
    s.starvation_k = k;
    s.metric = metric;
    require(average_ratio > 0.0 && average_ratio <= 1.0, ErrorKind::InvalidArgument,
            "average ratio must lie in (0, 1]");
    s.ratio_curve.assign(total_steps, 1.0);
    const std::uint32_t n = s.selective_steps();
    const double delta = curve == CurveKind::Linear ? 0.5 * std::min(average_ratio, 1.0 - average_ratio) : 0.0;
    const double hi = average_ratio + delta, lo = average_ratio - delta;
    std::uint32_t j = 0;
    for (std::uint32_t t = 0; t < total_steps; ++t) {
        if (s.is_dense(t)) continue;
        s.ratio_curve[t] = n <= 1 ? average_ratio : hi + (lo - hi) * static_cast<double>(j) / (n - 1);
        ++j;
    }
    s.validate();
    return s;
}

bool RatioSchedule::is_dense(std::uint32_t t) const {
    return t < warmup_steps ||
           std::binary_search(dense_reset_steps.begin(), dense_reset_steps.end(), t);
}

std::uint32_t RatioSchedule::selective_steps() const {
    std::uint32_t n = 0;
    for (std::uint32_t t = 0; t < total_steps; ++t) n += is_dense(t) ? 0 : 1;
    return n;
}

void RatioSchedule::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::InvalidArgument, "schedule: " + m); };
    if (total_steps == 0) bad("total steps must be positive");
    if (warmup_steps > total_steps) bad("warmup longer than the run");
    for (auto r : dense_reset_steps) {
        if (r < warmup_steps) {
            bad("dense reset step " + std::to_string(r) + " < warmup " + std::to_string(warmup_steps));
        }
        if (r >= total_steps) bad("dense reset step " + std::to_string(r) + " >= total steps");
    }
    if (!std::is_sorted(dense_reset_steps.begin(), dense_reset_steps.end())) bad("reset steps unsorted");
    if (ratio_curve.size() != total_steps) bad("ratio curve length != total steps");
    for (std::uint32_t t = 0; t < total_steps; ++t) {
        const double r = ratio_curve[t];
        if (!(r > 0.0 && r <= 1.0)) bad("ratio outside (0, 1] at step " + std::to_string(t));
        if (is_dense(t) && r != 1.0) bad("dense step with ratio != 1");
    }
    if (!(starvation_k >= 0.0f) || !std::isfinite(starvation_k)) bad("k must be >= 0");
}

double ratio_for_step(const RatioSchedule& schedule, std::uint32_t t) {
    require(t < schedule.total_steps, ErrorKind::InvalidArgument, "step index out of range");
    return schedule.is_dense(t) ? 1.0 : schedule.ratio_curve[t];
}

}  // namespace ras

#include "analysis.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "error.hpp"
#include "rng.hpp"

namespace ras {

namespace {

void check_permutation(std::span<const std::uint32_t> r) {
    std::vector<std::uint8_t> seen(r.size(), 0);
    for (auto v : r) {
        require(v < r.size() && !seen[v], ErrorKind::InvalidArgument,
                "ranking is not a permutation of 0..P-1");
        seen[v] = 1;
    }
}

}  // namespace

double ndcg_adjacent(std::span<const std::uint32_t> prev, std::span<const std::uint32_t> next) {
    require(prev.size() == next.size() && !prev.empty(), ErrorKind::InvalidArgument,
            "rankings must be non-empty and of equal length");
    check_permutation(prev);
    check_permutation(next);
    const std::size_t P = prev.size();
    std::vector<double> rel(P);
    for (std::size_t i = 0; i < P; ++i) rel[prev[i]] = static_cast<double>(P - i);
    double dcg = 0.0, idcg = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        const double disc = std::log2(static_cast<double>(i) + 2.0);
        dcg += rel[next[i]] / disc;
        idcg += rel[prev[i]] / disc;
    }
    return dcg / idcg;
}

BaselineStats ndcg_random_baseline(std::size_t num_patches, std::size_t samples, std::uint64_t seed) {
    std::vector<std::uint32_t> ident(num_patches), perm(num_patches);
    std::iota(ident.begin(), ident.end(), 0u);
    Rng rng(seed, 0xBA5Eull);
    double sum = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        perm = ident;
        for (std::size_t i = num_patches; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        const double v = ndcg_adjacent(ident, perm);
        sum += v;
        sq += v * v;
    }
    BaselineStats b;
    b.mean = sum / samples;
    b.stddev = std::sqrt(std::max(0.0, sq / samples - b.mean * b.mean));
    return b;
}

std::vector<double> continuity_curve(const RunTrace& trace) {
    std::vector<const StepRecord*> scored;
    for (const auto& s : trace.steps) {
        if (!s.scores.empty()) scored.push_back(&s);
    }
    require(scored.size() >= 2, ErrorKind::InvalidArgument,
            "continuity curve needs at least two scored steps");
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < scored.size(); ++i) {
        require(scored[i]->scores.size() == trace.num_patches &&
                    scored[i + 1]->scores.size() == trace.num_patches,
                ErrorKind::Corrupt, "score field length != num_patches");
        const auto a = rank_by_score(scored[i]->scores);
        const auto b = rank_by_score(scored[i + 1]->scores);
        out.push_back(ndcg_adjacent(a, b));
    }
    return out;
}

std::vector<std::uint32_t> drop_count_map(const RunTrace& trace) {
    std::vector<std::uint32_t> counts(trace.num_patches, 0);
    for (const auto& s : trace.steps) {
        for (auto p : s.active) {
            require(p < trace.num_patches, ErrorKind::Corrupt, "active index out of range");
            ++counts[p];
        }
    }
    return counts;
}

FlopCounter analytic_run_flops(const ModelConfig& cfg, const RatioSchedule& schedule,
                               bool use_recovery) {
    FlopCounter f;
    const std::size_t np = cfg.num_patches();
    for (std::uint32_t t = 0; t < schedule.total_steps; ++t) {
        const std::size_t n = active_count_for(ratio_for_step(schedule, t), np);
        f += analytic_forward_flops(cfg, n, use_recovery ? np : n);
    }
    return f;
}

FlopCounter analytic_dense_run_flops(const ModelConfig& cfg, std::uint32_t steps) {
    FlopCounter f;
    for (std::uint32_t t = 0; t < steps; ++t) {
        f += analytic_forward_flops(cfg, cfg.num_patches(), cfg.num_patches());
    }
    return f;
}

double mse(const Image& a, const Image& b) {
    require(a.same_shape(b), ErrorKind::Shape, "mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return a.data.empty() ? 0.0 : acc / a.data.size();
}

double psnr(double mse_value) {
    if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse_value);
}

std::vector<std::uint8_t> foreground_patches(const ModelConfig& cfg, const Image& img,
                                             float threshold) {
    const std::uint32_t ps = cfg.patch_size, gw = cfg.grid_w();
    std::vector<std::uint8_t> fg(cfg.num_patches(), 0);
    for (std::uint32_t p = 0; p < cfg.num_patches(); ++p) {
        const std::uint32_t y0 = (p / gw) * ps, x0 = (p % gw) * ps;
        double acc = 0.0;
        for (std::uint32_t y = 0; y < ps; ++y) {
            for (std::uint32_t x = 0; x < ps; ++x) {
                for (std::uint32_t c = 0; c < img.c; ++c) acc += img.at(y0 + y, x0 + x, c);
            }
        }
        fg[p] = acc / (static_cast<double>(ps) * ps * img.c) > threshold;
    }
    return fg;
}

std::string QualityConfig::label() const {
    std::ostringstream os;
    if (average_ratio >= 1.0) {
        os << "dense-" << steps;
    } else {
        os << "ras-" << steps << "@" << average_ratio;
        if (!use_recovery) os << "-norecovery";
    }
    return os.str();
}

namespace {

template <class Fn>
void for_each_index(std::size_t n, Fn&& fn) {
    const unsigned threads = std::min<std::size_t>(kernel_threads(), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

std::optional<std::uint32_t> class_for_seed(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.num_classes == 0) return std::nullopt;
    return static_cast<std::uint32_t>(seed % cfg.num_classes);
}

}  // namespace

QualityReport quality_vs_dense(const DitModel& model, const std::vector<QualityConfig>& configs,
                               const std::vector<std::uint64_t>& seeds,
                               std::uint32_t reference_steps) {
    const ModelConfig& cfg = model.config();
    QualityReport rep;
    rep.reference_steps = reference_steps;
    rep.seeds = seeds;
    std::vector<Image> refs(seeds.size());
    for_each_index(seeds.size(), [&](std::size_t i) {
        refs[i] = sample_dense(model, SigmaSchedule::make(reference_steps), seeds[i],
                               class_for_seed(cfg, seeds[i]))
                      .image;
    });
    for (const auto& qc : configs) {
        QualityRow row;
        row.config = qc;
        row.mse_per_seed.assign(seeds.size(), 0.0);
        std::vector<FlopCounter> flops(seeds.size());
        std::vector<double> wall(seeds.size(), 0.0);
        const SigmaSchedule sig = SigmaSchedule::make(qc.steps, qc.shift);
        const bool dense = qc.average_ratio >= 1.0;
        RatioSchedule sched;
        if (!dense) {
            sched = RatioSchedule::make(qc.steps, qc.warmup, qc.dense_resets, qc.average_ratio,
                                        qc.curve, qc.starvation_k, qc.metric);
        }
        for_each_index(seeds.size(), [&](std::size_t i) {
            const auto cls = class_for_seed(cfg, seeds[i]);
            SampleOptions opt;
            opt.use_recovery = qc.use_recovery;
            SampleResult r = dense ? sample_dense(model, sig, seeds[i], cls)
                                   : sample_ras(model, sig, sched, seeds[i], cls, opt);
            row.mse_per_seed[i] = mse(r.image, refs[i]);
            flops[i] = r.trace.total_flops();
            for (const auto& s : r.trace.steps) wall[i] += s.wall_ms;
        });
        double acc = 0.0;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            acc += row.mse_per_seed[i];
            row.flops += flops[i];
            row.wall_ms += wall[i];
            row.analytic_flops += dense ? analytic_dense_run_flops(cfg, qc.steps)
                                        : analytic_run_flops(cfg, sched, qc.use_recovery);
        }
        row.mse_mean = seeds.empty() ? 0.0 : acc / seeds.size();
        row.psnr_mean = psnr(row.mse_mean);
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

std::string quality_report_csv(const QualityReport& report, bool include_timing) {
    std::ostringstream os;
    os.precision(9);
    os << "config,steps,avg_ratio,seeds,mse,psnr_db,flops_token_linear,flops_attention,"
          "flops_total,analytic_flops_token_linear,analytic_flops_total";
    os << (include_timing ? ",wall_ms\n" : "\n");
    for (const auto& r : report.rows) {
        os << r.config.label() << ',' << r.config.steps << ',' << r.config.average_ratio << ','
           << report.seeds.size() << ',' << r.mse_mean << ',';
        if (std::isinf(r.psnr_mean)) {
            os << "inf";
        } else {
            os << r.psnr_mean;
        }
        os << ',' << r.flops.token_linear << ',' << r.flops.attention << ',' << r.flops.total() << ','
           << r.analytic_flops.token_linear << ',' << r.analytic_flops.total();
        if (include_timing) os << ',' << r.wall_ms;
        os << '\n';
    }
    return os.str();
}

}  // namespace ras

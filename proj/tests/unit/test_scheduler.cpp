#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "analysis.hpp"
#include "error.hpp"
#include "ras_scheduler.hpp"
#include "test_support.hpp"

using namespace ras;
using testing_support::random_model;
using testing_support::small_config;

namespace {

RatioSchedule default_schedule(std::uint32_t T = 30, double avg = 0.5,
                               MetricKind metric = MetricKind::Std) {
    return RatioSchedule::make(T, 4, {12, 20}, avg, CurveKind::Linear, 0.3f, metric);
}

PatchMask checkerboard(const ModelConfig& cfg) {
    PatchMask m;
    for (std::uint32_t p = 0; p < cfg.num_patches(); ++p)
        m.flags.push_back(((p / cfg.grid_w()) + (p % cfg.grid_w())) % 2 == 0);
    return m;
}

}  // namespace

TEST(SigmaScheduleTest, EndpointsAndShift) {
    auto s = SigmaSchedule::make(10);
    EXPECT_EQ(s.steps(), 10u);
    EXPECT_EQ(s.sigmas.front(), 1.0f);
    EXPECT_EQ(s.sigmas.back(), 0.0f);
    EXPECT_FLOAT_EQ(s.sigmas[3], 0.7f);
    auto sh = SigmaSchedule::make(4, 3.0);
    // 3 * 0.5 / (1 + 2 * 0.5) = 0.75
    EXPECT_FLOAT_EQ(sh.sigmas[2], 0.75f);
    for (std::size_t i = 1; i < sh.sigmas.size(); ++i) EXPECT_LT(sh.sigmas[i], sh.sigmas[i - 1]);
    EXPECT_THROW(SigmaSchedule::make(0), Error);
    SigmaSchedule bad{{1.0f, 0.5f, 0.6f, 0.0f}};
    EXPECT_THROW(bad.validate(), Error);
}

TEST(MergeNoise, AllNoneAndCheckerboard) {
    ModelConfig cfg = small_config();
    NoiseCache cached{image_for(cfg, -1.0f), true};
    Image fresh = image_for(cfg, 1.0f);
    EXPECT_EQ(merge_noise(cfg, cached, fresh, PatchMask::all_active(16)).data, fresh.data);
    PatchMask none;
    none.flags.assign(16, 0);
    EXPECT_EQ(merge_noise(cfg, cached, fresh, none).data, cached.noise.data);

    Image merged = merge_noise(cfg, cached, fresh, checkerboard(cfg));
    for (std::uint32_t y = 0; y < cfg.image_h; ++y)
        for (std::uint32_t x = 0; x < cfg.image_w; ++x) {
            const bool on = ((y / cfg.patch_size) + (x / cfg.patch_size)) % 2 == 0;
            for (std::uint32_t c = 0; c < cfg.channels; ++c) EXPECT_EQ(merged.at(y, x, c), on ? 1.0f : -1.0f);
        }
}

TEST(MergeNoise, UninitializedCacheAtSelectiveStepRejected) {
    ModelConfig cfg = small_config();
    NoiseCache empty;
    try {
        merge_noise(cfg, empty, image_for(cfg), checkerboard(cfg));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::State);
    }
    EXPECT_NO_THROW(merge_noise(cfg, empty, image_for(cfg), PatchMask::all_active(16)));
}

TEST(EulerStep, Arithmetic) {
    Image s(1, 1, 1, 0.0f), n(1, 1, 1, 1.0f), z(1, 1, 1, 0.0f);
    EXPECT_NEAR(euler_step(s, n, 1.0f, 0.9f).data[0], -0.1f, 1e-6);
    Image r(1, 1, 1, 0.42f);
    EXPECT_EQ(euler_step(r, z, 1.0f, 0.9f).data[0], 0.42f);
    Image inf(1, 1, 1, INFINITY);
    try {
        euler_step(s, inf, 0.5f, 0.4f, 17);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Numeric);
        EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
    }
    EXPECT_THROW(euler_step(s, n, 0.4f, 0.5f), Error);
}

// Data x0 ~ N(c, s^2) per pixel, x1 ~ N(0, 1). The exact velocity is
// E[x1 - x0 | x_sigma] = -c + (sigma - a s^2) / var * (x - a c) with a = 1 - sigma,
// var = a^2 s^2 + sigma^2, and the ODE maps z at sigma = 1 to c + s z at 0.
TEST(EulerStep, ClosedFormStraightPathConvergesAtFirstOrder) {
    const double c = 0.6, s = 0.5;
    Rng rng(21);
    Image z(4, 4, 1);
    for (float& v : z.data) v = rng.normal();
    auto terminal_error = [&](std::uint32_t T) {
        const auto sig = SigmaSchedule::make(T);
        Image x = z;
        for (std::uint32_t t = 0; t < T; ++t) {
            const double sg = sig.sigmas[t], a = 1.0 - sg, var = a * a * s * s + sg * sg;
            Image v = x;
            for (std::size_t i = 0; i < v.data.size(); ++i)
                v.data[i] = static_cast<float>(-c + (sg - a * s * s) / var * (x.data[i] - a * c));
            x = euler_step(x, v, sig.sigmas[t], sig.sigmas[t + 1], t);
        }
        double err = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i)
            err = std::max(err, std::abs(x.data[i] - (c + s * z.data[i])));
        return err;
    };
    double prev = terminal_error(10);
    EXPECT_LT(prev, 2.0 / 10);  // e(T) ~ 1.6 / T for this problem
    for (std::uint32_t T : {20u, 40u, 80u}) {
        const double e = terminal_error(T);
        EXPECT_LT(e, 2.0 / T) << "T=" << T;
        const double ratio = prev / e;  // halving T multiplies error by ~2
        EXPECT_GE(ratio, 2.0 / 1.5) << "T=" << T;
        EXPECT_LE(ratio, 2.0 * 1.5) << "T=" << T;
        prev = e;
    }
}

TEST(SampleRas, RatioOneEqualsDenseSampler) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 30);
    for (std::uint32_t T : {10u, 30u}) {
        for (std::uint64_t seed : {0, 1, 2}) {
            auto sched = RatioSchedule::make(T, 4, {}, 1.0, CurveKind::Linear, 0.3f, MetricKind::Std);
            auto ras_out = sample_ras(m, SigmaSchedule::make(T), sched, seed, 1);
            auto dense_out = sample_dense(m, SigmaSchedule::make(T), seed, 1);
            EXPECT_LE(testing_support::max_rel_err(ras_out.image.data, dense_out.image.data), 1e-6);
            EXPECT_EQ(ras_out.image.data, dense_out.image.data);
        }
    }
}

TEST(SampleRas, ScheduleConformanceAndAccounting) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 31);
    const auto sched = default_schedule();
    auto r = sample_ras(m, SigmaSchedule::make(30), sched, 5, 2);
    ASSERT_EQ(r.trace.steps.size(), 30u);
    std::vector<std::uint32_t> dense_steps;
    std::size_t total_active = 0, expected_total = 0;
    for (const auto& s : r.trace.steps) {
        if (s.active.size() == cfg.num_patches()) dense_steps.push_back(s.step);
        const std::size_t want = active_count_for(ratio_for_step(sched, s.step), cfg.num_patches());
        EXPECT_EQ(s.active.size(), want) << "step " << s.step;
        EXPECT_EQ(s.dense, sched.is_dense(s.step));
        total_active += s.active.size();
        expected_total += want;
    }
    EXPECT_EQ(dense_steps, (std::vector<std::uint32_t>{0, 1, 2, 3, 12, 20}));
    EXPECT_EQ(total_active, expected_total);
    const auto counts = drop_count_map(r.trace);
    EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), expected_total);
}

TEST(SampleRas, FirstSelectiveMaskComesFromLastWarmupScores) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 32);
    const auto sched = default_schedule();
    auto r = sample_ras(m, SigmaSchedule::make(30), sched, 6, 0);
    for (std::uint32_t t = 4; t < 30; ++t) {
        const auto& prev = r.trace.steps[t - 1];
        const auto mask = select_active(CacheScoreField{prev.scores}, ratio_for_step(sched, t));
        const auto idx = mask.active();
        EXPECT_EQ(r.trace.steps[t].active, std::vector<std::uint32_t>(idx.begin(), idx.end())) << t;
    }
}

TEST(SampleRas, CachedNoiseStaysFreshAndEulerIsConsistent) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 33);
    const auto sched = default_schedule();
    const auto sig = SigmaSchedule::make(30);
    Image replica, prev_sample = initial_noise(cfg, 7);
    bool init = false;
    std::size_t checked = 0;
    SampleOptions opt;
    opt.observer = [&](const StepObservation& o) {
        if (!init) {
            replica = o.fresh;
            init = true;
        }
        // Independent replay: overwrite covered pixels with this step's prediction.
        for (std::uint32_t y = 0; y < cfg.image_h; ++y)
            for (std::uint32_t x = 0; x < cfg.image_w; ++x) {
                const std::uint32_t p = (y / cfg.patch_size) * cfg.grid_w() + x / cfg.patch_size;
                if (!o.mask.flags[p]) continue;
                for (std::uint32_t c = 0; c < cfg.channels; ++c) replica.at(y, x, c) = o.fresh.at(y, x, c);
            }
        ASSERT_EQ(o.merged.data, replica.data) << "step " << o.step;
        const float dt = sig.sigmas[o.step + 1] - sig.sigmas[o.step];
        for (std::size_t i = 0; i < prev_sample.data.size(); ++i)
            ASSERT_EQ(o.sample.data[i], prev_sample.data[i] + dt * o.merged.data[i]);
        prev_sample = o.sample;
        ++checked;
    };
    sample_ras(m, sig, sched, 7, 1, opt);
    EXPECT_EQ(checked, 30u);
}

TEST(SampleRas, RandomMetricMasksReproducible) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 34);
    const auto sched = default_schedule(30, 0.5, MetricKind::Random);
    auto a = sample_ras(m, SigmaSchedule::make(30), sched, 9, 0);
    auto b = sample_ras(m, SigmaSchedule::make(30), sched, 9, 0);
    for (std::size_t t = 0; t < 30; ++t) EXPECT_EQ(a.trace.steps[t].active, b.trace.steps[t].active);
    EXPECT_EQ(a.image.data, b.image.data);
}

TEST(SampleRas, RecoveryOffStillRuns) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 35);
    SampleOptions opt;
    opt.use_recovery = false;
    auto r = sample_ras(m, SigmaSchedule::make(30), default_schedule(), 3, 0, opt);
    EXPECT_TRUE(all_finite(r.image.data));
    const auto f = analytic_run_flops(cfg, default_schedule(), false);
    EXPECT_EQ(r.trace.total_flops().total(), f.total());
}

TEST(SampleRas, MismatchedSchedulesRejected) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 36);
    EXPECT_THROW(sample_ras(m, SigmaSchedule::make(20), default_schedule(30), 0, 0), Error);
}

TEST(Trace, RoundTripAndCorruption) {
    ModelConfig cfg = small_config(32);
    DitModel m = random_model(cfg, 37);
    auto r = sample_ras(m, SigmaSchedule::make(30), default_schedule(), 4, 2);
    const std::string text = trace_to_string(r.trace, false);
    const RunTrace back = trace_from_string(text);
    EXPECT_EQ(trace_to_string(back, false), text);
    EXPECT_EQ(back.num_patches, 16u);
    EXPECT_EQ(back.class_id, 2);
    EXPECT_EQ(back.steps.size(), 30u);
    EXPECT_EQ(back.steps[7].scores, r.trace.steps[7].scores);

    try {
        trace_from_string(text.substr(0, text.size() / 2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Corrupt);
    }
    EXPECT_THROW(trace_from_string(""), Error);
    const auto nl = text.find('\n');
    EXPECT_THROW(trace_from_string(text.substr(nl + 1)), Error);  // header removed
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "analysis.hpp"
#include "error.hpp"
#include "image_io.hpp"
#include "test_support.hpp"

#include <zlib.h>

using namespace ras;

namespace {

std::vector<std::uint32_t> perm3(int a, int b, int c) {
    return {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
}

}  // namespace

TEST(Ndcg, IdenticalRankingsScoreOne) {
    Rng rng(1);
    for (std::size_t P : {1u, 2u, 16u, 256u}) {
        std::vector<std::uint32_t> r(P);
        std::iota(r.begin(), r.end(), 0u);
        for (std::size_t i = P; i > 1; --i) std::swap(r[i - 1], r[rng.below(i)]);
        EXPECT_DOUBLE_EQ(ndcg_adjacent(r, r), 1.0);
    }
}

TEST(Ndcg, ExhaustiveThreeElementOracle) {
    // tests/oracles/ndcg.py, rank_t = (0, 1, 2).
    const auto prev = perm3(0, 1, 2);
    EXPECT_DOUBLE_EQ(ndcg_adjacent(prev, perm3(0, 1, 2)), 1.0);
    EXPECT_DOUBLE_EQ(ndcg_adjacent(prev, perm3(0, 2, 1)), 0.9725044904464192);
    EXPECT_DOUBLE_EQ(ndcg_adjacent(prev, perm3(1, 0, 2)), 0.9224945116765986);
    EXPECT_DOUBLE_EQ(ndcg_adjacent(prev, perm3(1, 2, 0)), 0.8675034925694372);
    EXPECT_DOUBLE_EQ(ndcg_adjacent(prev, perm3(2, 0, 1)), 0.8174935137996165);
    EXPECT_DOUBLE_EQ(ndcg_adjacent(prev, perm3(2, 1, 0)), 0.7899980042460358);
}

TEST(Ndcg, MalformedPermutationsRejected) {
    EXPECT_THROW(ndcg_adjacent(perm3(0, 1, 1), perm3(0, 1, 2)), Error);
    EXPECT_THROW(ndcg_adjacent(perm3(0, 1, 2), perm3(0, 1, 3)), Error);
    EXPECT_THROW(ndcg_adjacent(perm3(0, 1, 2), std::vector<std::uint32_t>{0, 1}), Error);
    EXPECT_THROW(ndcg_adjacent(std::vector<std::uint32_t>{}, std::vector<std::uint32_t>{}), Error);
}

TEST(Ndcg, BoundedAndRelabelingInvariant) {
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        const std::size_t P = 2 + rng.below(40);
        std::vector<std::uint32_t> a(P), b(P), relabel(P);
        std::iota(a.begin(), a.end(), 0u);
        b = a;
        relabel = a;
        for (auto* v : {&a, &b, &relabel})
            for (std::size_t i = P; i > 1; --i) std::swap((*v)[i - 1], (*v)[rng.below(i)]);
        const double x = ndcg_adjacent(a, b);
        EXPECT_GT(x, 0.0);
        EXPECT_LE(x, 1.0);
        if (a != b) {
            EXPECT_LT(x, 1.0);
        }
        std::vector<std::uint32_t> ra(P), rb(P);
        for (std::size_t i = 0; i < P; ++i) {
            ra[i] = relabel[a[i]];
            rb[i] = relabel[b[i]];
        }
        EXPECT_DOUBLE_EQ(ndcg_adjacent(ra, rb), x);
    }
}

TEST(Ndcg, RandomBaselineMatchesMonteCarloOracle) {
    // tests/oracles/ndcg.py: 100k-sample mean at P = 16.
    const double oracle = 0.8266482283185983;
    const auto b = ndcg_random_baseline(16, 100000, 11);
    EXPECT_NEAR(b.mean, oracle, 0.005 * oracle);
    EXPECT_NEAR(b.stddev, 0.05743860208287181, 0.05 * 0.0574);
}

TEST(Continuity, RandomMetricLooksLikeBaseline) {
    ModelConfig cfg = testing_support::small_config(16, 16);  // 256 patches
    DitModel m = testing_support::random_model(cfg, 3);
    const auto sched = RatioSchedule::make(30, 4, {12, 20}, 0.5, CurveKind::Linear, 0.3f, MetricKind::Random);
    auto r = sample_ras(m, SigmaSchedule::make(30), sched, 8, 0);
    const auto curve = continuity_curve(r.trace);
    ASSERT_EQ(curve.size(), 29u);
    const auto base = ndcg_random_baseline(256, 20000, 4);
    const double mean = std::accumulate(curve.begin(), curve.end(), 0.0) / curve.size();
    const double z = (mean - base.mean) / (base.stddev / std::sqrt(static_cast<double>(curve.size())));
    EXPECT_LT(std::abs(z), 3.0) << "mean " << mean << " baseline " << base.mean;
}

TEST(Continuity, NeedsTwoScoredSteps) {
    RunTrace t;
    t.num_patches = 4;
    StepRecord s;
    s.scores = {1, 2, 3, 4};
    t.steps.push_back(s);
    EXPECT_THROW(continuity_curve(t), Error);
    t.steps.push_back(s);
    EXPECT_EQ(continuity_curve(t), std::vector<double>{1.0});
}

TEST(DropCountMap, DenseRunIsUniform) {
    ModelConfig cfg = testing_support::small_config(32);
    DitModel m = testing_support::random_model(cfg, 4);
    auto sched = RatioSchedule::make(12, 4, {}, 1.0, CurveKind::Linear, 0.3f, MetricKind::Std);
    auto r = sample_ras(m, SigmaSchedule::make(12), sched, 1, 0);
    for (auto c : drop_count_map(r.trace)) EXPECT_EQ(c, 12u);
}

TEST(Flops, AnalyticRatioForTheDefaultSchedule) {
    ModelConfig cfg;
    const auto dense = analytic_dense_run_flops(cfg, 30);
    // Flat curve: exactly (6 + 24 * 0.5) / 30 of the token-linear work.
    const auto flat = analytic_run_flops(
        cfg, RatioSchedule::make(30, 4, {12, 20}, 0.5, CurveKind::Flat, 0.3f, MetricKind::Std));
    EXPECT_NEAR(static_cast<double>(flat.token_linear) / dense.token_linear, 0.6, 0.6 * 1e-3);
    // Linear ramp: per-step ceil(rho_t * P) rounds up, a fraction of a patch per step.
    const auto ramp = RatioSchedule::make(30, 4, {12, 20}, 0.5, CurveKind::Linear, 0.3f, MetricKind::Std);
    const auto lin = analytic_run_flops(cfg, ramp);
    std::uint64_t tokens = 0;
    for (std::uint32_t t = 0; t < 30; ++t) tokens += active_count_for(ratio_for_step(ramp, t), 64);
    EXPECT_EQ(lin.token_linear * (30 * 64), dense.token_linear * tokens);
    EXPECT_NEAR(static_cast<double>(lin.token_linear) / dense.token_linear, 0.6, 0.6 * 0.02);
}

TEST(Flops, SampledCountersMatchClosedForm) {
    ModelConfig cfg = testing_support::small_config(32);
    DitModel m = testing_support::random_model(cfg, 5);
    for (auto curve : {CurveKind::Flat, CurveKind::Linear}) {
        auto sched = RatioSchedule::make(30, 4, {12, 20}, 0.5, curve, 0.3f, MetricKind::Std);
        auto r = sample_ras(m, SigmaSchedule::make(30), sched, 2, 1);
        const auto got = r.trace.total_flops(), want = analytic_run_flops(cfg, sched);
        EXPECT_EQ(got.token_linear, want.token_linear);
        EXPECT_EQ(got.attention, want.attention);
        EXPECT_EQ(got.conditioning, want.conditioning);
    }
}

TEST(Quality, MseAndPsnr) {
    Image a(2, 2, 1, 0.0f), b(2, 2, 1, 0.0f);
    EXPECT_EQ(mse(a, b), 0.0);
    EXPECT_TRUE(std::isinf(psnr(0.0)));
    b.data = {1, 1, 1, 1};
    EXPECT_EQ(mse(a, b), 1.0);
    EXPECT_NEAR(psnr(1.0), 10.0 * std::log10(4.0), 1e-12);
    EXPECT_THROW(mse(a, Image(3, 2, 1)), Error);
}

TEST(Quality, ForegroundPatches) {
    ModelConfig cfg;
    Image img = image_for(cfg, -1.0f);
    for (std::uint32_t y = 12; y < 20; ++y)
        for (std::uint32_t x = 12; x < 20; ++x)
            for (std::uint32_t c = 0; c < cfg.channels; ++c) img.at(y, x, c) = 0.8f;
    const auto fg = foreground_patches(cfg, img);
    std::vector<std::uint32_t> on;
    for (std::uint32_t p = 0; p < fg.size(); ++p)
        if (fg[p]) on.push_back(p);
    EXPECT_EQ(on, (std::vector<std::uint32_t>{27, 28, 35, 36}));
}

TEST(Quality, CompareGridShapeAndSelfReference) {
    ModelConfig cfg = testing_support::small_config(32);
    DitModel m = testing_support::random_model(cfg, 6);
    std::vector<QualityConfig> grid(3);
    grid[0].steps = 30;
    grid[1].steps = 30;
    grid[1].average_ratio = 0.5;
    grid[2].steps = 15;
    auto rep = quality_vs_dense(m, grid, {0, 1, 2});
    ASSERT_EQ(rep.rows.size(), 3u);
    EXPECT_EQ(rep.rows[0].mse_mean, 0.0);
    EXPECT_TRUE(std::isinf(rep.rows[0].psnr_mean));
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.flops.token_linear, r.analytic_flops.token_linear);
        EXPECT_EQ(r.flops.total(), r.analytic_flops.total());
    }
    EXPECT_GT(rep.rows[1].mse_mean, 0.0);
    const std::string csv = quality_report_csv(rep);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(csv.find("wall_ms"), std::string::npos);
    EXPECT_EQ(csv, quality_report_csv(quality_vs_dense(m, grid, {0, 1, 2})));
    EXPECT_NE(quality_report_csv(rep, true).find("wall_ms"), std::string::npos);
}

TEST(Quality, RecoveryFlagReachesSampler) {
    ModelConfig cfg = testing_support::small_config(32);
    DitModel m = testing_support::random_model(cfg, 6);
    std::vector<QualityConfig> grid(2);
    grid[0].average_ratio = 0.5;
    grid[1].average_ratio = 0.5;
    grid[1].use_recovery = false;
    auto rep = quality_vs_dense(m, grid, {0, 1});
    EXPECT_NE(rep.rows[0].mse_mean, rep.rows[1].mse_mean);
    EXPECT_LT(rep.rows[1].flops.attention, rep.rows[0].flops.attention);
    EXPECT_EQ(rep.rows[1].flops.total(), rep.rows[1].analytic_flops.total());
    EXPECT_EQ(rep.rows[1].config.label(), "ras-30@0.5-norecovery");
}

TEST(ImageIo, PgmBytes) {
    Image img(1, 2, 2);
    img.data = {-1, -1, 1, 1};
    const auto g = to_gray(img);
    EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{0, 255}));
    const auto pgm = encode_pgm(g);
    const std::string head = "P5\n2 1\n255\n";
    ASSERT_EQ(pgm.size(), head.size() + 2);
    EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + head.size()), head);
    EXPECT_EQ(pgm.back(), 255);
}

TEST(ImageIo, HeatmapScalesAndTiles) {
    const std::vector<std::uint32_t> counts{0, 5, 10, 10};
    const auto h = heatmap(counts, 2, 2, 10, 2);
    EXPECT_EQ(h.w, 4u);
    EXPECT_EQ(h.h, 4u);
    EXPECT_EQ(h.pixels[0], 0);
    EXPECT_EQ(h.pixels[2], 128);
    EXPECT_EQ(h.pixels[15], 255);
    const auto t = tile({h, h, h}, 2);
    EXPECT_EQ(t.w, 9u);
    EXPECT_EQ(t.h, 9u);
    EXPECT_THROW(heatmap(counts, 3, 2, 10), Error);
}

TEST(ImageIo, PngChunksAndPixels) {
    GrayImage g{5, 3, {}};
    for (int i = 0; i < 15; ++i) g.pixels.push_back(static_cast<std::uint8_t>(i * 17));
    const auto png = encode_png(g);
    const std::uint8_t sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    ASSERT_TRUE(std::equal(sig, sig + 8, png.begin()));
    std::size_t pos = 8;
    std::vector<std::uint8_t> idat;
    std::vector<std::string> names;
    while (pos < png.size()) {
        const std::uint32_t len = png[pos] << 24 | png[pos + 1] << 16 | png[pos + 2] << 8 | png[pos + 3];
        const std::string type(png.begin() + pos + 4, png.begin() + pos + 8);
        names.push_back(type);
        const uLong crc = crc32(0L, png.data() + pos + 4, len + 4);
        const std::size_t c = pos + 8 + len;
        const std::uint32_t stored = png[c] << 24 | png[c + 1] << 16 | png[c + 2] << 8 | png[c + 3];
        EXPECT_EQ(stored, static_cast<std::uint32_t>(crc)) << type;
        if (type == "IDAT") idat.insert(idat.end(), png.begin() + pos + 8, png.begin() + c);
        pos = c + 4;
    }
    EXPECT_EQ(names, (std::vector<std::string>{"IHDR", "IDAT", "IEND"}));
    std::vector<std::uint8_t> raw(3 * 6);
    uLongf n = raw.size();
    ASSERT_EQ(uncompress(raw.data(), &n, idat.data(), idat.size()), Z_OK);
    ASSERT_EQ(n, raw.size());
    for (int y = 0; y < 3; ++y) {
        EXPECT_EQ(raw[y * 6], 0);
        for (int x = 0; x < 5; ++x) EXPECT_EQ(raw[y * 6 + 1 + x], g.pixels[y * 5 + x]);
    }
}

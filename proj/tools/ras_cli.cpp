// ras: train, sample, compare, analyze and bench front end over the C API.
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ras/ras.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliError {
    std::string kind;
    std::string message;
};

[[noreturn]] void bad_config(const std::string& msg) { throw CliError{"invalid_argument", msg}; }

void check(ras_status s) {
    if (s != RAS_OK) throw CliError{ras_status_name(s), ras_last_error()};
}

struct ModelDeleter {
    void operator()(ras_model* m) const { ras_model_free(m); }
};
struct ImageDeleter {
    void operator()(ras_image* m) const { ras_image_free(m); }
};
struct TraceDeleter {
    void operator()(ras_trace* m) const { ras_trace_free(m); }
};
using ModelPtr = std::unique_ptr<ras_model, ModelDeleter>;
using ImagePtr = std::unique_ptr<ras_image, ImageDeleter>;
using TracePtr = std::unique_ptr<ras_trace, TraceDeleter>;

// ---- run config ----

// Shortest decimal that reads back as the same float.
double tidy(float f) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, f);
    return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

json sampler_defaults() {
    return {{"steps", 30},        {"warmup", 4},       {"dense_resets", {12, 20}},
            {"ratio", 0.5},       {"curve", "linear"}, {"k", 0.3},
            {"metric", "std"},    {"shift", 1.0},      {"recovery", true},
            {"dense_path", false}};
}

json defaults_for(const std::string& cmd) {
    json j{{"subcommand", cmd}, {"seed", 0}, {"output", "runs/" + cmd}};
    if (cmd == "train") {
        ras_model_config mc;
        ras_model_config_default(&mc);
        ras_train_config tc;
        ras_train_config_default(&tc);
        j["architecture"] = {{"image_h", mc.image_h},       {"image_w", mc.image_w},
                             {"channels", mc.channels},     {"patch_size", mc.patch_size},
                             {"hidden_dim", mc.hidden_dim}, {"layers", mc.layers},
                             {"heads", mc.heads},           {"mlp_ratio", mc.mlp_ratio},
                             {"num_classes", mc.num_classes}};
        j["train"] = {{"steps", tc.steps},
                      {"batch_size", tc.batch_size},
                      {"learning_rate", tidy(tc.learning_rate)},
                      {"beta1", tidy(tc.beta1)},
                      {"beta2", tidy(tc.beta2)},
                      {"adam_eps", tidy(tc.adam_eps)},
                      {"weight_decay", tidy(tc.weight_decay)},
                      {"warmup_steps", tc.warmup_steps},
                      {"ema_decay", tidy(tc.ema_decay)},
                      {"data_seed", tc.data_seed},
                      {"log_every", 50}};
        return j;
    }
    if (cmd == "bench") {
        j["model"] = nullptr;
        j["bench"] = {{"shapes", {{4096, 1024, 1024}}},
                      {"active_fractions", {0.25, 0.5, 1.0}},
                      {"repeats", 3},
                      {"sample_ratios", {1.0, 0.5, 0.25}},
                      {"sample_runs", 2}};
        j["sampler"] = sampler_defaults();
        return j;
    }
    j["model"] = "models/toy.rasf";
    j["sampler"] = sampler_defaults();
    if (cmd == "sample") {
        j["class_id"] = nullptr;
        j["png"] = true;
        j["timing"] = false;
    } else if (cmd == "compare") {
        j["compare"] = {{"grid", json::array({{{"steps", 30}, {"ratio", 1.0}},
                                              {{"steps", 30}, {"ratio", 0.5}},
                                              {{"steps", 15}, {"ratio", 1.0}}})},
                        {"num_seeds", 8},
                        {"reference_steps", 30},
                        {"timing", false}};
    } else if (cmd == "analyze") {
        j["analyze"] = {{"num_seeds", 8}, {"baseline_samples", 4000}, {"foreground_threshold", -0.5}};
    }
    return j;
}

// Overlays `patch` onto `base`; every key must already exist in `base`.
void overlay(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) bad_config(where + " must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) bad_config("unknown config key '" + path + "'");
        json& dst = base[it.key()];
        if (dst.is_object() && it.value().is_object()) {
            overlay(dst, it.value(), path);
        } else {
            dst = it.value();
        }
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) bad_config("missing config key '" + where + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        bad_config("config key '" + where + key + "' has the wrong type");
    }
}

// Integers in JSON that must be non-negative.
std::uint64_t get_count(const json& j, const char* key, const std::string& where) {
    const auto v = get<std::int64_t>(j, key, where);
    if (v < 0) bad_config("config key '" + where + key + "' must be >= 0");
    return static_cast<std::uint64_t>(v);
}

ras_metric parse_metric(const std::string& s) {
    if (s == "std") return RAS_METRIC_STD;
    if (s == "l2norm") return RAS_METRIC_L2NORM;
    if (s == "random") return RAS_METRIC_RANDOM;
    bad_config("unknown metric '" + s + "' (std, l2norm, random)");
}

ras_curve parse_curve(const std::string& s) {
    if (s == "linear") return RAS_CURVE_LINEAR;
    if (s == "flat") return RAS_CURVE_FLAT;
    bad_config("unknown ratio curve '" + s + "' (linear, flat)");
}

struct SamplerSpec {
    ras_sample_config cfg{};
    std::vector<std::uint32_t> resets;

    // cfg points into resets; keep the pair together.
    SamplerSpec() = default;
    SamplerSpec(const SamplerSpec& o) : cfg(o.cfg), resets(o.resets) { cfg.dense_resets = resets.data(); }
    SamplerSpec& operator=(const SamplerSpec& o) {
        cfg = o.cfg;
        resets = o.resets;
        cfg.dense_resets = resets.data();
        return *this;
    }
};

SamplerSpec parse_sampler(const json& s, std::uint64_t seed) {
    const std::string w = "sampler.";
    SamplerSpec out;
    ras_sample_config_default(&out.cfg);
    out.cfg.steps = static_cast<std::uint32_t>(get_count(s, "steps", w));
    out.cfg.warmup = static_cast<std::uint32_t>(get_count(s, "warmup", w));
    const json& r = s.at("dense_resets");
    if (!r.is_array()) bad_config("config key 'sampler.dense_resets' must be a list");
    for (const auto& v : r) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
            bad_config("config key 'sampler.dense_resets' must hold step indices");
        out.resets.push_back(v.get<std::uint32_t>());
    }
    out.cfg.dense_resets = out.resets.data();
    out.cfg.num_dense_resets = out.resets.size();
    out.cfg.average_ratio = get<double>(s, "ratio", w);
    out.cfg.curve = parse_curve(get<std::string>(s, "curve", w));
    out.cfg.starvation_k = get<float>(s, "k", w);
    out.cfg.metric = parse_metric(get<std::string>(s, "metric", w));
    out.cfg.shift = get<double>(s, "shift", w);
    out.cfg.use_recovery = get<bool>(s, "recovery", w) ? 1 : 0;
    out.cfg.dense_path = get<bool>(s, "dense_path", w) ? 1 : 0;
    out.cfg.seed = seed;
    out.cfg.class_id = -1;
    return out;
}

// ---- output helpers ----

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CliError{"io", "cannot open " + path.string() + " for writing"};
    f << text;
    if (!f.flush()) throw CliError{"io", "failed writing " + path.string()};
}

fs::path prepare_output(const json& cfg) {
    const fs::path dir = cfg.at("output").get<std::string>();
    if (dir.empty()) bad_config("output directory must not be empty");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw CliError{"io", "cannot create output directory " + dir.string()};
    write_file(dir / "run_config.json", cfg.dump(2) + "\n");
    return dir;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

ModelPtr load_model(const json& cfg) {
    if (!cfg.at("model").is_string()) bad_config("a model checkpoint path is required");
    const std::string path = cfg.at("model").get<std::string>();
    if (!fs::exists(path)) throw CliError{"io", "checkpoint not found: " + path};
    ras_model* m = nullptr;
    check(ras_model_load(path.c_str(), &m));
    return ModelPtr(m);
}

ras_model_config config_of(const ras_model* m) {
    ras_model_config mc;
    check(ras_model_get_config(m, &mc));
    return mc;
}

std::int32_t class_for(const json& cfg, const ras_model_config& mc, std::uint64_t seed) {
    const json& c = cfg.at("class_id");
    if (c.is_null()) return mc.num_classes ? static_cast<std::int32_t>(seed % mc.num_classes) : -1;
    if (!c.is_number_integer()) bad_config("config key 'class_id' must be an integer or null");
    return c.get<std::int32_t>();
}

std::vector<std::uint32_t> activation_counts(const ras_trace* t) {
    std::size_t n = 0;
    check(ras_activation_counts(t, nullptr, 0, &n));
    std::vector<std::uint32_t> v(n);
    check(ras_activation_counts(t, v.data(), v.size(), &n));
    return v;
}

std::vector<double> continuity(const ras_trace* t) {
    std::size_t n = 0;
    check(ras_continuity_curve(t, nullptr, 0, &n));
    std::vector<double> v(n);
    if (n) check(ras_continuity_curve(t, v.data(), v.size(), &n));
    return v;
}

// ---- subcommands ----

void on_loss(uint32_t step, float loss, void* user) {
    const auto every = *static_cast<std::uint32_t*>(user);
    if (every > 0 && step % every == 0) std::printf("step %u loss %.6f\n", step, loss);
    std::fflush(stdout);
}

json cmd_train(const json& cfg) {
    const json& a = cfg.at("architecture");
    const json& t = cfg.at("train");
    const std::string wa = "architecture.", wt = "train.";
    ras_model_config mc;
    mc.image_h = static_cast<std::uint32_t>(get_count(a, "image_h", wa));
    mc.image_w = static_cast<std::uint32_t>(get_count(a, "image_w", wa));
    mc.channels = static_cast<std::uint32_t>(get_count(a, "channels", wa));
    mc.patch_size = static_cast<std::uint32_t>(get_count(a, "patch_size", wa));
    mc.hidden_dim = static_cast<std::uint32_t>(get_count(a, "hidden_dim", wa));
    mc.layers = static_cast<std::uint32_t>(get_count(a, "layers", wa));
    mc.heads = static_cast<std::uint32_t>(get_count(a, "heads", wa));
    mc.mlp_ratio = static_cast<std::uint32_t>(get_count(a, "mlp_ratio", wa));
    mc.num_classes = static_cast<std::uint32_t>(get_count(a, "num_classes", wa));
    ras_train_config tc;
    tc.steps = static_cast<std::uint32_t>(get_count(t, "steps", wt));
    tc.batch_size = static_cast<std::uint32_t>(get_count(t, "batch_size", wt));
    tc.learning_rate = get<float>(t, "learning_rate", wt);
    tc.beta1 = get<float>(t, "beta1", wt);
    tc.beta2 = get<float>(t, "beta2", wt);
    tc.adam_eps = get<float>(t, "adam_eps", wt);
    tc.weight_decay = get<float>(t, "weight_decay", wt);
    tc.warmup_steps = static_cast<std::uint32_t>(get_count(t, "warmup_steps", wt));
    tc.ema_decay = get<float>(t, "ema_decay", wt);
    tc.data_seed = get_count(t, "data_seed", wt);
    tc.seed = get_count(cfg, "seed", "");
    std::uint32_t log_every = static_cast<std::uint32_t>(get_count(t, "log_every", wt));
    check(ras_model_config_validate(&mc));
    check(ras_train_config_validate(&tc));

    const fs::path dir = prepare_output(cfg);
    ras_model* init_raw = nullptr;
    check(ras_model_init(&mc, tc.seed, &init_raw));
    ModelPtr init(init_raw);
    std::vector<float> losses(tc.steps);
    ras_model* out_raw = nullptr;
    check(ras_train(init.get(), &tc, on_loss, &log_every, &out_raw, losses.data()));
    ModelPtr trained(out_raw);

    const std::string ckpt = join(dir, "model.rasf");
    check(ras_model_save(trained.get(), ckpt.c_str(), ras_model_config_json(trained.get())));
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) csv += std::to_string(i) + "," + fmt(losses[i]) + "\n";
    write_file(dir / "losses.csv", csv);
    json summary{{"checkpoint", ckpt}, {"steps", tc.steps}};
    if (!losses.empty()) summary["final_loss"] = losses.back();
    return summary;
}

json cmd_sample(json cfg) {
    const auto seed = get_count(cfg, "seed", "");
    SamplerSpec spec = parse_sampler(cfg.at("sampler"), seed);
    check(ras_sample_config_validate(&spec.cfg, nullptr));
    ModelPtr model = load_model(cfg);
    spec.cfg.class_id = class_for(cfg, config_of(model.get()), seed);
    check(ras_sample_config_validate(&spec.cfg, model.get()));
    cfg["class_id"] = spec.cfg.class_id;
    const bool png = get<bool>(cfg, "png", "");
    const bool timing = get<bool>(cfg, "timing", "");

    const fs::path dir = prepare_output(cfg);
    ras_image* img_raw = nullptr;
    ras_trace* trace_raw = nullptr;
    check(ras_sample(model.get(), &spec.cfg, &img_raw, &trace_raw));
    ImagePtr img(img_raw);
    TracePtr trace(trace_raw);

    check(ras_image_write_pgm(img.get(), join(dir, "sample.pgm").c_str()));
    if (png) check(ras_image_write_png(img.get(), join(dir, "sample.png").c_str()));
    check(ras_trace_write(trace.get(), join(dir, "trace.jsonl").c_str(), timing ? 1 : 0));

    ras_flops f;
    check(ras_trace_total_flops(trace.get(), &f));
    return {{"image", join(dir, "sample.pgm")},
            {"trace", join(dir, "trace.jsonl")},
            {"class_id", spec.cfg.class_id},
            {"flops_total", f.token_linear + f.attention + f.conditioning}};
}

json cmd_compare(const json& cfg) {
    const json& c = cfg.at("compare");
    const std::string w = "compare.";
    const auto seed0 = get_count(cfg, "seed", "");
    const json& grid = c.at("grid");
    if (!grid.is_array() || grid.empty()) bad_config("config key 'compare.grid' must be a non-empty list");
    std::vector<SamplerSpec> specs;
    for (const auto& g : grid) {
        json s = cfg.at("sampler");
        overlay(s, g, "compare.grid[]");
        specs.push_back(parse_sampler(s, 0));
        // ratio 1 means the plain sampler; its schedule is irrelevant
        if (specs.back().cfg.average_ratio < 1.0) check(ras_sample_config_validate(&specs.back().cfg, nullptr));
    }
    const auto num_seeds = get_count(c, "num_seeds", w);
    if (num_seeds == 0) bad_config("config key 'compare.num_seeds' must be positive");
    const auto ref = static_cast<std::uint32_t>(get_count(c, "reference_steps", w));
    if (ref == 0) bad_config("config key 'compare.reference_steps' must be positive");
    const bool timing = get<bool>(c, "timing", w);
    ModelPtr model = load_model(cfg);

    const fs::path dir = prepare_output(cfg);
    std::vector<ras_sample_config> cfgs;
    for (const auto& s : specs) cfgs.push_back(s.cfg);
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < num_seeds; ++i) seeds.push_back(seed0 + i);
    char* csv = nullptr;
    check(ras_compare(model.get(), cfgs.data(), cfgs.size(), seeds.data(), seeds.size(), ref,
                      timing ? 1 : 0, &csv));
    std::string text(csv);
    ras_string_free(csv);
    write_file(dir / "report.csv", text);
    return {{"report", join(dir, "report.csv")}, {"rows", specs.size()}};
}

json cmd_analyze(const json& cfg) {
    const json& a = cfg.at("analyze");
    const std::string w = "analyze.";
    const auto seed0 = get_count(cfg, "seed", "");
    SamplerSpec spec = parse_sampler(cfg.at("sampler"), seed0);
    check(ras_sample_config_validate(&spec.cfg, nullptr));
    if (spec.cfg.dense_path) bad_config("analyze needs the RAS sampler (sampler.dense_path = false)");
    const auto num_seeds = get_count(a, "num_seeds", w);
    if (num_seeds == 0) bad_config("config key 'analyze.num_seeds' must be positive");
    const auto baseline_samples = get_count(a, "baseline_samples", w);
    if (baseline_samples < 2) bad_config("config key 'analyze.baseline_samples' must be >= 2");
    const float threshold = get<float>(a, "foreground_threshold", w);
    ModelPtr model = load_model(cfg);
    const ras_model_config mc = config_of(model.get());
    spec.cfg.class_id = mc.num_classes ? static_cast<std::int32_t>(seed0 % mc.num_classes) : -1;
    check(ras_sample_config_validate(&spec.cfg, model.get()));

    const fs::path dir = prepare_output(cfg);
    const std::uint32_t P = (mc.image_h / mc.patch_size) * (mc.image_w / mc.patch_size);
    const std::uint32_t gh = mc.image_h / mc.patch_size, gw = mc.image_w / mc.patch_size;

    std::vector<std::vector<double>> curves;
    std::vector<std::uint64_t> sum_counts(P, 0);
    std::vector<ImagePtr> images;
    std::string focus_csv = "seed,class_id,foreground_patches,foreground_mean,background_mean\n";
    std::size_t focused = 0, focus_valid = 0;
    std::uint32_t max_count = 1;
    for (std::uint64_t i = 0; i < num_seeds; ++i) {
        SamplerSpec s = spec;
        s.cfg.seed = seed0 + i;
        s.cfg.class_id = mc.num_classes ? static_cast<std::int32_t>(s.cfg.seed % mc.num_classes) : -1;
        ras_image* img_raw = nullptr;
        ras_trace* trace_raw = nullptr;
        check(ras_sample(model.get(), &s.cfg, &img_raw, &trace_raw));
        ImagePtr img(img_raw);
        TracePtr trace(trace_raw);
        curves.push_back(continuity(trace.get()));
        const auto counts = activation_counts(trace.get());
        std::vector<std::uint8_t> fg(P);
        check(ras_foreground_patches(&mc, img.get(), threshold, fg.data()));
        double fs_sum = 0, bs_sum = 0;
        std::size_t nf = 0, nb = 0;
        for (std::uint32_t p = 0; p < P; ++p) {
            sum_counts[p] += counts[p];
            max_count = std::max(max_count, counts[p]);
            (fg[p] ? fs_sum : bs_sum) += counts[p];
            (fg[p] ? nf : nb) += 1;
        }
        const double fm = nf ? fs_sum / nf : NAN, bm = nb ? bs_sum / nb : NAN;
        if (nf && nb) {
            ++focus_valid;
            if (fm > bm) ++focused;
        }
        focus_csv += std::to_string(s.cfg.seed) + "," + std::to_string(s.cfg.class_id) + "," +
                     std::to_string(nf) + "," + fmt(fm) + "," + fmt(bm) + "\n";
        check(ras_write_heatmap(counts.data(), gh, gw, spec.cfg.steps, 8,
                                join(dir, "activations_seed" + std::to_string(s.cfg.seed) + ".pgm").c_str(), 0));
        images.push_back(std::move(img));
    }

    // Curves share a length because every seed runs the same schedule.
    const std::size_t L = curves.front().size();
    std::string ndcg_csv = "transition,mean";
    for (std::uint64_t i = 0; i < num_seeds; ++i) ndcg_csv += ",seed" + std::to_string(seed0 + i);
    ndcg_csv += "\n";
    double all_sum = 0;
    std::vector<double> per_transition(L, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        for (const auto& c : curves) per_transition[t] += c[t];
        per_transition[t] /= static_cast<double>(curves.size());
        all_sum += per_transition[t];
        ndcg_csv += std::to_string(t) + "," + fmt(per_transition[t]);
        for (const auto& c : curves) ndcg_csv += "," + fmt(c[t]);
        ndcg_csv += "\n";
    }
    write_file(dir / "ndcg.csv", ndcg_csv);
    write_file(dir / "focus.csv", focus_csv);

    double base_mean = 0, base_std = 0;
    check(ras_ndcg_random_baseline(P, baseline_samples, seed0, &base_mean, &base_std));
    const double n_values = static_cast<double>(L * curves.size());
    const double mean = all_sum / static_cast<double>(L);
    const double se = base_std / std::sqrt(n_values);
    const std::size_t third = L / 3;
    double first = 0, last = 0;
    for (std::size_t t = 0; t < third; ++t) {
        first += per_transition[t];
        last += per_transition[L - third + t];
    }
    if (third) {
        first /= third;
        last /= third;
    }

    std::vector<std::uint32_t> mean_counts(P);
    for (std::uint32_t p = 0; p < P; ++p)
        mean_counts[p] = static_cast<std::uint32_t>(std::lround(static_cast<double>(sum_counts[p]) / num_seeds));
    check(ras_write_heatmap(mean_counts.data(), gh, gw, spec.cfg.steps, 8, join(dir, "activations_mean.pgm").c_str(), 0));
    check(ras_write_heatmap(mean_counts.data(), gh, gw, spec.cfg.steps, 8, join(dir, "activations_mean.png").c_str(), 1));
    std::vector<const ras_image*> tiles;
    for (const auto& im : images) tiles.push_back(im.get());
    check(ras_image_write_grid(tiles.data(), tiles.size(), 8, join(dir, "samples.pgm").c_str(), 0));

    json summary{{"ndcg_mean", mean},
                 {"ndcg_first_third", first},
                 {"ndcg_last_third", last},
                 {"baseline_mean", base_mean},
                 {"baseline_std", base_std},
                 {"standard_errors_above_baseline", se > 0 ? (mean - base_mean) / se : 0.0},
                 {"focus_fraction", focus_valid ? static_cast<double>(focused) / focus_valid : 0.0},
                 {"focus_seeds", focus_valid},
                 {"max_activation_count", max_count}};
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    return summary;
}

json cmd_bench(const json& cfg) {
    const json& b = cfg.at("bench");
    const std::string w = "bench.";
    const auto seed = get_count(cfg, "seed", "");
    const json& shapes = b.at("shapes");
    if (!shapes.is_array()) bad_config("config key 'bench.shapes' must be a list of [m, k, n]");
    std::vector<std::array<std::uint32_t, 3>> dims;
    for (const auto& s : shapes) {
        if (!s.is_array() || s.size() != 3) bad_config("each bench shape must be [m, k, n]");
        std::array<std::uint32_t, 3> d{};
        for (int i = 0; i < 3; ++i) {
            if (!s[i].is_number_integer() || s[i].get<std::int64_t>() <= 0)
                bad_config("bench shape entries must be positive integers");
            d[i] = s[i].get<std::uint32_t>();
        }
        dims.push_back(d);
    }
    const auto fractions = get<std::vector<double>>(b, "active_fractions", w);
    for (double f : fractions)
        if (!(f > 0.0 && f <= 1.0)) bad_config("bench active fractions must lie in (0, 1]");
    const auto repeats = static_cast<std::uint32_t>(get_count(b, "repeats", w));
    if (repeats == 0) bad_config("config key 'bench.repeats' must be positive");
    const auto ratios = get<std::vector<double>>(b, "sample_ratios", w);
    const auto runs = static_cast<std::uint32_t>(get_count(b, "sample_runs", w));
    SamplerSpec spec = parse_sampler(cfg.at("sampler"), seed);
    ModelPtr model;
    if (!cfg.at("model").is_null()) {
        model = load_model(cfg);
        const ras_model_config mc = config_of(model.get());
        spec.cfg.class_id = mc.num_classes ? static_cast<std::int32_t>(seed % mc.num_classes) : -1;
        for (double r : ratios) {
            SamplerSpec s = spec;
            s.cfg.average_ratio = r;
            s.cfg.dense_path = 0;
            check(ras_sample_config_validate(&s.cfg, model.get()));
        }
    }

    const fs::path dir = prepare_output(cfg);
    std::string kcsv = "m,k,n,active_fraction,dense_ms,gather_gemm_ms,gemm_scatter_ms,naive_ms,gather_over_dense,gflops_dense\n";
    json rows = json::array();
    for (const auto& d : dims) {
        for (double f : fractions) {
            ras_gemm_bench r;
            check(ras_bench_gemm(d[0], d[1], d[2], f, repeats, seed, &r));
            kcsv += std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + "," +
                    fmt(f) + "," + fmt(r.dense_ms) + "," + fmt(r.gather_gemm_ms) + "," +
                    fmt(r.gemm_scatter_ms) + "," + fmt(r.naive_ms) + "," + fmt(r.gather_gemm_ms / r.dense_ms) +
                    "," + fmt(r.gflops_dense) + "\n";
            std::printf("gemm %ux%ux%u active %.2f: dense %.2f ms, gather %.2f ms (%.3fx)\n", d[0], d[1],
                        d[2], f, r.dense_ms, r.gather_gemm_ms, r.gather_gemm_ms / r.dense_ms);
            rows.push_back({{"shape", d}, {"active_fraction", f}, {"gather_over_dense", r.gather_gemm_ms / r.dense_ms}});
        }
    }
    write_file(dir / "bench_kernels.csv", kcsv);

    json summary{{"kernels", rows}, {"threads", ras_num_threads()}};
    if (model) {
        std::string ecsv = "mode,avg_ratio,steps,median_ms,flops_total\n";
        auto run = [&](SamplerSpec s, const std::string& mode) {
            std::vector<double> ms;
            std::uint64_t flops = 0;
            for (std::uint32_t i = 0; i < std::max(runs, 1u); ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                ras_trace* tr = nullptr;
                check(ras_sample(model.get(), &s.cfg, nullptr, &tr));
                TracePtr trace(tr);
                ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
                ras_flops f;
                check(ras_trace_total_flops(trace.get(), &f));
                flops = f.token_linear + f.attention + f.conditioning;
            }
            std::sort(ms.begin(), ms.end());
            ecsv += mode + "," + fmt(s.cfg.average_ratio) + "," + std::to_string(s.cfg.steps) + "," +
                    fmt(ms[ms.size() / 2]) + "," + std::to_string(flops) + "\n";
            std::printf("sample %s ratio %.2f: %.1f ms\n", mode.c_str(), s.cfg.average_ratio, ms[ms.size() / 2]);
        };
        SamplerSpec dense = spec;
        dense.cfg.dense_path = 1;
        dense.cfg.average_ratio = 1.0;
        run(dense, "dense");
        for (double r : ratios) {
            SamplerSpec s = spec;
            s.cfg.average_ratio = r;
            s.cfg.dense_path = 0;
            run(s, "ras");
        }
        write_file(dir / "bench_sample.csv", ecsv);
    }
    return summary;
}

// ---- flag plumbing ----

struct Override {
    CLI::Option* opt;
    std::string pointer;
    std::function<json()> value;
};

template <class T>
void flag(CLI::App* app, std::vector<Override>& ovs, const std::string& name, const std::string& pointer,
          const std::string& help) {
    auto holder = std::make_shared<T>();
    auto* opt = app->add_option(name, *holder, help);
    ovs.push_back({opt, pointer, [holder] { return json(*holder); }});
}

void switch_flag(CLI::App* app, std::vector<Override>& ovs, const std::string& name,
                 const std::string& pointer, bool value, const std::string& help) {
    auto* opt = app->add_flag(name, help);
    ovs.push_back({opt, pointer, [value] { return json(value); }});
}

void sampler_flags(CLI::App* app, std::vector<Override>& ovs) {
    flag<std::uint32_t>(app, ovs, "--steps", "/sampler/steps", "sampling steps T");
    flag<std::uint32_t>(app, ovs, "--warmup", "/sampler/warmup", "dense warmup steps");
    auto resets = std::make_shared<std::vector<std::uint32_t>>();
    auto* ro = app->add_option("--dense-resets", *resets, "dense reset steps (comma separated)")->delimiter(',');
    ovs.push_back({ro, "/sampler/dense_resets", [resets] { return json(*resets); }});
    switch_flag(app, ovs, "--no-dense-resets", "/sampler/dense_resets", false, "no dense reset steps");
    ovs.back().value = [] { return json::array(); };
    flag<double>(app, ovs, "--ratio", "/sampler/ratio", "average active ratio on selective steps");
    flag<std::string>(app, ovs, "--curve", "/sampler/curve", "ratio curve: linear or flat");
    flag<float>(app, ovs, "--k", "/sampler/k", "starvation damping k");
    flag<std::string>(app, ovs, "--metric", "/sampler/metric", "cache score metric: std, l2norm, random");
    flag<double>(app, ovs, "--shift", "/sampler/shift", "sigma schedule shift");
    switch_flag(app, ovs, "--no-recovery", "/sampler/recovery", false, "attend over active tokens only");
    switch_flag(app, ovs, "--dense-path", "/sampler/dense_path", true, "plain Euler over the dense forward");
}

void print_result(const json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-adaptive sampling for a toy diffusion transformer"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    struct Sub {
        CLI::App* app;
        std::string config_path;
        std::vector<Override> ovs;
    };
    std::vector<std::unique_ptr<Sub>> subs;
    auto add_sub = [&](const std::string& name, const std::string& help) {
        auto s = std::make_unique<Sub>();
        s->app = app.add_subcommand(name, help);
        s->app->add_option("-c,--config", s->config_path, "JSON run config; flags override it")
            ->check(CLI::ExistingFile);
        flag<std::string>(s->app, s->ovs, "-o,--out", "/output", "output directory");
        flag<std::uint64_t>(s->app, s->ovs, "--seed", "/seed", "seed");
        subs.push_back(std::move(s));
        return subs.back().get();
    };

    Sub* train = add_sub("train", "train the toy model; writes model.rasf and losses.csv");
    flag<std::uint32_t>(train->app, train->ovs, "--steps", "/train/steps", "optimizer steps");
    flag<std::uint32_t>(train->app, train->ovs, "--batch-size", "/train/batch_size", "batch size");
    flag<float>(train->app, train->ovs, "--lr", "/train/learning_rate", "peak learning rate");
    flag<std::uint32_t>(train->app, train->ovs, "--warmup-steps", "/train/warmup_steps", "learning-rate warmup");
    flag<std::uint64_t>(train->app, train->ovs, "--data-seed", "/train/data_seed", "dataset seed");
    flag<std::uint32_t>(train->app, train->ovs, "--log-every", "/train/log_every", "loss print interval (0 = quiet)");

    Sub* sample = add_sub("sample", "generate one image; writes sample.pgm/png and trace.jsonl");
    flag<std::string>(sample->app, sample->ovs, "-m,--model", "/model", "checkpoint path");
    flag<std::int32_t>(sample->app, sample->ovs, "--class", "/class_id", "class id (default seed mod num_classes; -1 only for unconditional models)");
    switch_flag(sample->app, sample->ovs, "--timing", "/timing", true, "record wall time in the trace");
    sampler_flags(sample->app, sample->ovs);

    Sub* compare = add_sub("compare", "dense vs RAS quality sweep; writes report.csv");
    flag<std::string>(compare->app, compare->ovs, "-m,--model", "/model", "checkpoint path");
    flag<std::uint64_t>(compare->app, compare->ovs, "--num-seeds", "/compare/num_seeds", "paired seeds");
    flag<std::uint32_t>(compare->app, compare->ovs, "--reference-steps", "/compare/reference_steps",
                        "dense reference steps");
    auto grid = std::make_shared<std::vector<std::string>>();
    auto* go = compare->app->add_option("--grid", *grid, "grid entries steps:ratio, comma separated")->delimiter(',');
    compare->ovs.push_back({go, "/compare/grid", [grid] {
                                json g = json::array();
                                for (const auto& e : *grid) {
                                    const auto colon = e.find(':');
                                    if (colon == std::string::npos) bad_config("grid entry '" + e + "' is not steps:ratio");
                                    try {
                                        g.push_back({{"steps", std::stoul(e.substr(0, colon))},
                                                     {"ratio", std::stod(e.substr(colon + 1))}});
                                    } catch (const std::exception&) {
                                        bad_config("grid entry '" + e + "' is not steps:ratio");
                                    }
                                }
                                return g;
                            }});
    switch_flag(compare->app, compare->ovs, "--timing", "/compare/timing", true, "add a wall time column");
    sampler_flags(compare->app, compare->ovs);

    Sub* analyze = add_sub("analyze", "NDCG continuity and activation heatmaps over several seeds");
    flag<std::string>(analyze->app, analyze->ovs, "-m,--model", "/model", "checkpoint path");
    flag<std::uint64_t>(analyze->app, analyze->ovs, "--num-seeds", "/analyze/num_seeds", "seeds to sample");
    flag<std::uint64_t>(analyze->app, analyze->ovs, "--baseline-samples", "/analyze/baseline_samples",
                        "random permutations for the NDCG baseline");
    sampler_flags(analyze->app, analyze->ovs);

    Sub* bench = add_sub("bench", "kernel and end-to-end timing tables");
    flag<std::string>(bench->app, bench->ovs, "-m,--model", "/model", "checkpoint for end-to-end timing");
    flag<std::uint32_t>(bench->app, bench->ovs, "--repeats", "/bench/repeats", "timed repeats per kernel");
    sampler_flags(bench->app, bench->ovs);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_result({{"status", "error"}, {"kind", "invalid_argument"}, {"message", e.what()}});
        return 2;
    }

    for (const auto& s : subs) {
        if (!s->app->parsed()) continue;
        const std::string cmd = s->app->get_name();
        try {
            json cfg = defaults_for(cmd);
            if (!s->config_path.empty()) {
                std::ifstream f(s->config_path);
                json file;
                try {
                    file = json::parse(f);
                } catch (const json::exception& e) {
                    bad_config("cannot parse " + s->config_path + ": " + e.what());
                }
                if (file.contains("subcommand") && file["subcommand"] != cmd)
                    bad_config("config file is for '" + file["subcommand"].dump() + "', not '" + cmd + "'");
                overlay(cfg, file, "");
            }
            for (const auto& o : s->ovs)
                if (o.opt->count() > 0) cfg[json::json_pointer(o.pointer)] = o.value();

            json result;
            if (cmd == "train") result = cmd_train(cfg);
            else if (cmd == "sample") result = cmd_sample(cfg);
            else if (cmd == "compare") result = cmd_compare(cfg);
            else if (cmd == "analyze") result = cmd_analyze(cfg);
            else result = cmd_bench(cfg);
            result["status"] = "ok";
            result["output"] = cfg.at("output");
            print_result(result);
            return 0;
        } catch (const CliError& e) {
            print_result({{"status", "error"}, {"kind", e.kind}, {"message", e.message}});
            return e.kind == "invalid_argument" ? 2 : 1;
        } catch (const std::exception& e) {
            print_result({{"status", "error"}, {"kind", "internal"}, {"message", e.what()}});
            return 1;
        }
    }
    return 0;
}

#include "ras_scheduler.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dit_dense.hpp"
#include "error.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace ras {

SigmaSchedule SigmaSchedule::make(std::uint32_t steps, double shift) {
    require(steps > 0, ErrorKind::InvalidArgument, "sigma schedule needs at least one step");
    require(shift > 0.0 && std::isfinite(shift), ErrorKind::InvalidArgument, "shift must be positive");
    SigmaSchedule s;
    s.sigmas.resize(steps + 1);
    for (std::uint32_t i = 0; i <= steps; ++i) {
        const double base = 1.0 - static_cast<double>(i) / steps;
        s.sigmas[i] = static_cast<float>(shift * base / (1.0 + (shift - 1.0) * base));
    }
    s.sigmas.front() = 1.0f;
    s.sigmas.back() = 0.0f;
    s.validate();
    return s;
}

void SigmaSchedule::validate() const {
    require(sigmas.size() >= 2, ErrorKind::InvalidArgument, "sigma schedule too short");
    require(sigmas.front() == 1.0f && sigmas.back() == 0.0f, ErrorKind::InvalidArgument,
            "sigma schedule must run from 1 to 0");
    for (std::size_t i = 1; i < sigmas.size(); ++i) {
        require(sigmas[i] < sigmas[i - 1], ErrorKind::InvalidArgument,
                "sigma schedule must be strictly decreasing");
    }
}

Image merge_noise(const ModelConfig& cfg, const NoiseCache& cached, const Image& fresh,
                  const PatchMask& mask) {
    const std::size_t np = cfg.num_patches();
    require(mask.flags.size() == np, ErrorKind::Shape, "mask size != num_patches");
    require(fresh.h == cfg.image_h && fresh.w == cfg.image_w && fresh.c == cfg.channels,
            ErrorKind::Shape, "fresh noise shape mismatch");
    const bool everything = mask.all();
    if (!everything) {
        require(cached.initialized, ErrorKind::State,
                "cached noise is uninitialized at a selective step");
        require(cached.noise.same_shape(fresh), ErrorKind::Shape, "cached noise shape mismatch");
    }
    Image out = everything ? fresh : cached.noise;
    if (everything) return out;
    const std::uint32_t ps = cfg.patch_size, gw = cfg.grid_w(), C = cfg.channels;
    for (std::uint32_t p = 0; p < np; ++p) {
        if (!mask.flags[p]) continue;
        const std::uint32_t y0 = (p / gw) * ps, x0 = (p % gw) * ps;
        for (std::uint32_t py = 0; py < ps; ++py) {
            const std::size_t off = (static_cast<std::size_t>(y0 + py) * cfg.image_w + x0) * C;
            std::copy_n(fresh.data.begin() + off, ps * C, out.data.begin() + off);
        }
    }
    return out;
}

Image euler_step(const Image& sample, const Image& noise, float sigma_t, float sigma_next,
                 std::uint32_t step) {
    require(sample.same_shape(noise), ErrorKind::Shape, "euler_step: shape mismatch");
    require(sigma_next < sigma_t, ErrorKind::InvalidArgument, "euler_step: sigma must decrease");
    Image out = sample;
    const float dt = sigma_next - sigma_t;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sample.data[i] + dt * noise.data[i];
    if (!all_finite(out.data)) {
        fail(ErrorKind::Numeric, "non-finite sample after step " + std::to_string(step));
    }
    return out;
}

FlopCounter RunTrace::total_flops() const {
    FlopCounter f;
    for (const auto& s : steps) f += s.flops;
    return f;
}

namespace {

using nlohmann::json;

json step_json(const StepRecord& s, bool include_timing) {
    json j;
    j["type"] = "step";
    j["step"] = s.step;
    j["sigma"] = s.sigma;
    j["sigma_next"] = s.sigma_next;
    j["ratio"] = s.ratio;
    j["dense"] = s.dense;
    j["active"] = s.active;
    j["scores"] = s.scores;
    j["flops"] = {{"token_linear", s.flops.token_linear},
                  {"attention", s.flops.attention},
                  {"conditioning", s.flops.conditioning}};
    if (include_timing) j["wall_ms"] = s.wall_ms;
    return j;
}

}  // namespace

std::string trace_to_string(const RunTrace& trace, bool include_timing) {
    std::ostringstream os;
    json h;
    h["type"] = "header";
    h["format"] = "ras-trace";
    h["version"] = 1;
    h["num_patches"] = trace.num_patches;
    h["grid_h"] = trace.grid_h;
    h["grid_w"] = trace.grid_w;
    h["seed"] = trace.seed;
    h["class_id"] = trace.class_id;
    h["metric"] = trace.metric;
    h["starvation_k"] = trace.starvation_k;
    h["steps"] = trace.steps.size();
    os << h.dump() << '\n';
    for (const auto& s : trace.steps) os << step_json(s, include_timing).dump() << '\n';
    return os.str();
}

RunTrace trace_from_string(const std::string& text) {
    RunTrace t;
    std::istringstream is(text);
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    try {
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            const json j = json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                t.num_patches = j.at("num_patches").get<std::uint32_t>();
                t.grid_h = j.at("grid_h").get<std::uint32_t>();
                t.grid_w = j.at("grid_w").get<std::uint32_t>();
                t.seed = j.at("seed").get<std::uint64_t>();
                t.class_id = j.value("class_id", -1);
                t.metric = j.value("metric", std::string("std"));
                t.starvation_k = j.value("starvation_k", 0.0f);
                have_header = true;
            } else if (type == "step") {
                require(have_header, ErrorKind::Corrupt, "trace: step record before header");
                StepRecord s;
                s.step = j.at("step").get<std::uint32_t>();
                s.sigma = j.at("sigma").get<float>();
                s.sigma_next = j.at("sigma_next").get<float>();
                s.ratio = j.at("ratio").get<double>();
                s.dense = j.at("dense").get<bool>();
                s.active = j.at("active").get<std::vector<std::uint32_t>>();
                s.scores = j.at("scores").get<std::vector<float>>();
                const auto& f = j.at("flops");
                s.flops.token_linear = f.at("token_linear").get<std::uint64_t>();
                s.flops.attention = f.at("attention").get<std::uint64_t>();
                s.flops.conditioning = f.at("conditioning").get<std::uint64_t>();
                s.wall_ms = j.value("wall_ms", 0.0);
                for (auto a : s.active) {
                    require(a < t.num_patches, ErrorKind::Corrupt, "trace: active index out of range");
                }
                t.steps.push_back(std::move(s));
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Corrupt, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
    require(have_header, ErrorKind::Corrupt, "trace: missing header record");
    return t;
}

void write_trace(const RunTrace& trace, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
    f << trace_to_string(trace);
    if (!f) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

RunTrace read_trace(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return trace_from_string(ss.str());
}

Image initial_noise(const ModelConfig& cfg, std::uint64_t seed) {
    Image img = image_for(cfg);
    Rng rng(seed, 0x1A7E5EEDull);
    for (float& v : img.data) v = rng.normal();
    return img;
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

RunTrace trace_header(const ModelConfig& cfg, std::uint64_t seed,
                      std::optional<std::uint32_t> class_id) {
    RunTrace tr;
    tr.num_patches = cfg.num_patches();
    tr.grid_h = cfg.grid_h();
    tr.grid_w = cfg.grid_w();
    tr.seed = seed;
    tr.class_id = class_id ? static_cast<std::int32_t>(*class_id) : -1;
    return tr;
}

}  // namespace

SampleResult sample_ras(const DitModel& model, const SigmaSchedule& sigmas,
                        const RatioSchedule& schedule, std::uint64_t seed,
                        std::optional<std::uint32_t> class_id, const SampleOptions& options) {
    const ModelConfig& cfg = model.config();
    sigmas.validate();
    schedule.validate();
    require(sigmas.steps() == schedule.total_steps, ErrorKind::InvalidArgument,
            "sigma schedule and ratio schedule disagree on the number of steps");
    const std::uint32_t T = schedule.total_steps;
    const std::size_t np = cfg.num_patches();

    RasState st;
    st.sample = initial_noise(cfg, seed);
    st.cached_noise.noise = image_for(cfg);
    st.drops = DropCounter(np);
    st.mask = PatchMask::all_active(np);
    KVCache cache = KVCache::for_model(cfg);

    SampleResult res;
    res.trace = trace_header(cfg, seed, class_id);
    res.trace.metric = metric_name(schedule.metric);
    res.trace.starvation_k = schedule.starvation_k;

    for (std::uint32_t t = 0; t < T; ++t) {
        st.step = t;
        const auto t0 = std::chrono::steady_clock::now();
        const double ratio = ratio_for_step(schedule, t);
        const bool dense = schedule.is_dense(t);
        if (dense) st.mask = PatchMask::all_active(np);
        require(st.mask.active_count() == active_count_for(ratio, np), ErrorKind::State,
                "mask cardinality does not match the step ratio");

        StepRecord rec;
        rec.step = t;
        rec.sigma = sigmas.sigmas[t];
        rec.sigma_next = sigmas.sigmas[t + 1];
        rec.ratio = ratio;
        rec.dense = dense;

        const IndexSet active = st.mask.active();
        TokenSequence x = patchify(model, st.sample, active);
        Matrix pred = forward(model, x, rec.sigma, class_id, cache, options.use_recovery, &rec.flops);
        if (active.size() == np) cache.last_full_write = t;
        Image fresh = image_for(cfg);
        unpatchify(cfg, pred, active, fresh);
        Image merged = merge_noise(cfg, st.cached_noise, fresh, st.mask);
        st.cached_noise.noise = merged;
        st.cached_noise.initialized = true;
        st.sample = euler_step(st.sample, merged, rec.sigma, rec.sigma_next, t);

        CacheScoreField scores = compute_cache_scores(cfg, merged, st.drops, schedule.starvation_k,
                                                      schedule.metric, seed, t);
        if (!dense) update_drops(st.drops, st.mask);
        if (dense && schedule.reset_drops_on_dense && t >= schedule.warmup_steps) st.drops.reset();
        const double next_ratio = t + 1 < T ? ratio_for_step(schedule, t + 1) : 1.0;

        rec.active.assign(active.begin(), active.end());
        rec.scores = scores.scores;
        if (options.observer) {
            options.observer(StepObservation{t, st.mask, fresh, merged, st.sample});
        }
        st.mask = select_active(scores, next_ratio);
        rec.wall_ms = elapsed_ms(t0);
        res.trace.steps.push_back(std::move(rec));
    }
    res.image = std::move(st.sample);
    return res;
}

SampleResult sample_dense(const DitModel& model, const SigmaSchedule& sigmas, std::uint64_t seed,
                          std::optional<std::uint32_t> class_id, const StepObserver& observer) {
    const ModelConfig& cfg = model.config();
    sigmas.validate();
    const std::uint32_t T = sigmas.steps();
    const std::size_t np = cfg.num_patches();
    const std::int32_t cls = class_id ? static_cast<std::int32_t>(*class_id) : -1;
    const PatchMask all = PatchMask::all_active(np);
    const IndexSet all_idx = IndexSet::all(np);

    SampleResult res;
    res.trace = trace_header(cfg, seed, class_id);
    res.trace.metric = "none";
    Image sample = initial_noise(cfg, seed);
    for (std::uint32_t t = 0; t < T; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        StepRecord rec;
        rec.step = t;
        rec.sigma = sigmas.sigmas[t];
        rec.sigma_next = sigmas.sigmas[t + 1];
        Image pred = dense_predict(model, sample, rec.sigma, cls);
        rec.flops = analytic_forward_flops(cfg, np, np);
        sample = euler_step(sample, pred, rec.sigma, rec.sigma_next, t);
        rec.active.assign(all_idx.begin(), all_idx.end());
        if (observer) observer(StepObservation{t, all, pred, pred, sample});
        rec.wall_ms = elapsed_ms(t0);
        res.trace.steps.push_back(std::move(rec));
    }
    res.image = std::move(sample);
    return res;
}

}  // namespace ras

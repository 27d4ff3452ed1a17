#include "ras/ras.h"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "checkpoint_io.hpp"
#include "error.hpp"
#include "flow_training.hpp"
#include "image_io.hpp"
#include "ras_scheduler.hpp"
#include "rng.hpp"

struct ras_model {
    ras::DitModel model;
    std::string config_blob;
};

struct ras_image {
    ras::Image image;
};

struct ras_trace {
    ras::RunTrace trace;
};

namespace {

thread_local std::string g_last_error;

ras_status status_for(ras::ErrorKind kind) {
    switch (kind) {
        case ras::ErrorKind::InvalidArgument: return RAS_E_INVALID_ARGUMENT;
        case ras::ErrorKind::Shape: return RAS_E_SHAPE;
        case ras::ErrorKind::Io: return RAS_E_IO;
        case ras::ErrorKind::BadMagic: return RAS_E_BAD_MAGIC;
        case ras::ErrorKind::BadVersion: return RAS_E_BAD_VERSION;
        case ras::ErrorKind::Truncated: return RAS_E_TRUNCATED;
        case ras::ErrorKind::Corrupt: return RAS_E_CORRUPT;
        case ras::ErrorKind::Numeric: return RAS_E_NUMERIC;
        case ras::ErrorKind::State: return RAS_E_STATE;
    }
    return RAS_E_INTERNAL;
}

struct BufferTooSmall {
    std::string what;
};

template <class F>
ras_status guarded(F&& body) {
    g_last_error.clear();
    try {
        body();
        return RAS_OK;
    } catch (const ras::Error& e) {
        g_last_error = e.what();
        return status_for(e.kind());
    } catch (const BufferTooSmall& e) {
        g_last_error = e.what;
        return RAS_E_BUFFER_TOO_SMALL;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return RAS_E_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return RAS_E_INTERNAL;
    } catch (...) {
        g_last_error = "unknown exception";
        return RAS_E_INTERNAL;
    }
}

void need(const void* p, const char* name) {
    if (!p) ras::fail(ras::ErrorKind::InvalidArgument, std::string(name) + " is null");
}

ras::ModelConfig to_core(const ras_model_config& c) {
    ras::ModelConfig m;
    m.image_h = c.image_h;
    m.image_w = c.image_w;
    m.channels = c.channels;
    m.patch_size = c.patch_size;
    m.hidden_dim = c.hidden_dim;
    m.layers = c.layers;
    m.heads = c.heads;
    m.mlp_ratio = c.mlp_ratio;
    m.num_classes = c.num_classes;
    return m;
}

ras_model_config from_core(const ras::ModelConfig& m) {
    ras_model_config c;
    c.image_h = m.image_h;
    c.image_w = m.image_w;
    c.channels = m.channels;
    c.patch_size = m.patch_size;
    c.hidden_dim = m.hidden_dim;
    c.layers = m.layers;
    c.heads = m.heads;
    c.mlp_ratio = m.mlp_ratio;
    c.num_classes = m.num_classes;
    return c;
}

ras::TrainConfig to_core(const ras_train_config& c) {
    ras::TrainConfig t;
    t.steps = c.steps;
    t.batch_size = c.batch_size;
    t.learning_rate = c.learning_rate;
    t.beta1 = c.beta1;
    t.beta2 = c.beta2;
    t.adam_eps = c.adam_eps;
    t.weight_decay = c.weight_decay;
    t.warmup_steps = c.warmup_steps;
    t.ema_decay = c.ema_decay;
    t.seed = c.seed;
    t.data_seed = c.data_seed;
    return t;
}

ras::MetricKind to_core(ras_metric m) {
    switch (m) {
        case RAS_METRIC_STD: return ras::MetricKind::Std;
        case RAS_METRIC_L2NORM: return ras::MetricKind::L2Norm;
        case RAS_METRIC_RANDOM: return ras::MetricKind::Random;
    }
    ras::fail(ras::ErrorKind::InvalidArgument, "unknown metric " + std::to_string(static_cast<int>(m)));
}

ras::CurveKind to_core(ras_curve c) {
    switch (c) {
        case RAS_CURVE_LINEAR: return ras::CurveKind::Linear;
        case RAS_CURVE_FLAT: return ras::CurveKind::Flat;
    }
    ras::fail(ras::ErrorKind::InvalidArgument, "unknown ratio curve " + std::to_string(static_cast<int>(c)));
}

std::vector<std::uint32_t> resets_of(const ras_sample_config& c) {
    if (c.num_dense_resets > 0) need(c.dense_resets, "dense_resets");
    return {c.dense_resets, c.dense_resets + c.num_dense_resets};
}

ras::RatioSchedule schedule_of(const ras_sample_config& c) {
    if (!(c.average_ratio > 0.0 && c.average_ratio <= 1.0))
        ras::fail(ras::ErrorKind::InvalidArgument,
                  "average ratio " + std::to_string(c.average_ratio) + " outside (0, 1]");
    auto s = ras::RatioSchedule::make(c.steps, c.warmup, resets_of(c), c.average_ratio,
                                      to_core(c.curve), c.starvation_k, to_core(c.metric));
    s.validate();
    return s;
}

ras::SigmaSchedule sigmas_of(const ras_sample_config& c) {
    if (!(c.shift > 0.0)) ras::fail(ras::ErrorKind::InvalidArgument, "sigma shift must be positive");
    auto s = ras::SigmaSchedule::make(c.steps, c.shift);
    s.validate();
    return s;
}

std::optional<std::uint32_t> class_of(const ras_sample_config& c, const ras::ModelConfig* m) {
    if (c.class_id < -1) ras::fail(ras::ErrorKind::InvalidArgument, "class id must be >= -1");
    if (m) {
        if (m->num_classes == 0 && c.class_id != -1)
            ras::fail(ras::ErrorKind::InvalidArgument, "model is unconditional; class id must be -1");
        if (m->num_classes > 0 && c.class_id == -1)
            ras::fail(ras::ErrorKind::InvalidArgument, "model is class-conditional; a class id is required");
        if (c.class_id >= 0 && static_cast<std::uint32_t>(c.class_id) >= m->num_classes)
            ras::fail(ras::ErrorKind::InvalidArgument,
                      "class id " + std::to_string(c.class_id) + " >= num_classes " +
                          std::to_string(m->num_classes));
    }
    if (c.class_id < 0) return std::nullopt;
    return static_cast<std::uint32_t>(c.class_id);
}

void validate_sample(const ras_sample_config& c, const ras::ModelConfig* m) {
    sigmas_of(c);
    schedule_of(c);
    class_of(c, m);
}

ras_flops from_core(const ras::FlopCounter& f) {
    return {f.token_linear, f.attention, f.conditioning};
}

template <class T>
void copy_out(const std::vector<T>& v, T* out, std::size_t capacity, std::size_t* count) {
    need(count, "count");
    *count = v.size();
    if (v.empty() || !out) return;  // size query
    if (capacity < v.size())
        throw BufferTooSmall{"buffer holds " + std::to_string(capacity) + ", need " +
                             std::to_string(v.size())};
    std::copy(v.begin(), v.end(), out);
}

const ras::StepRecord& step_at(const ras_trace* t, std::uint32_t index) {
    need(t, "trace");
    if (index >= t->trace.steps.size())
        ras::fail(ras::ErrorKind::InvalidArgument,
                  "step index " + std::to_string(index) + " out of range");
    return t->trace.steps[index];
}

char* dup_string(const std::string& s) {
    char* p = new char[s.size() + 1];
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class F>
double time_ms(F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

extern "C" {

const char* ras_status_name(ras_status status) {
    switch (status) {
        case RAS_OK: return "ok";
        case RAS_E_INVALID_ARGUMENT: return "invalid_argument";
        case RAS_E_SHAPE: return "shape";
        case RAS_E_IO: return "io";
        case RAS_E_BAD_MAGIC: return "bad_magic";
        case RAS_E_BAD_VERSION: return "bad_version";
        case RAS_E_TRUNCATED: return "truncated";
        case RAS_E_CORRUPT: return "corrupt";
        case RAS_E_NUMERIC: return "numeric";
        case RAS_E_STATE: return "state";
        case RAS_E_INTERNAL: return "internal";
        case RAS_E_BUFFER_TOO_SMALL: return "buffer_too_small";
    }
    return "unknown";
}

const char* ras_last_error(void) { return g_last_error.c_str(); }

const char* ras_version(void) { return "1.0.0"; }

void ras_model_config_default(ras_model_config* cfg) {
    if (cfg) *cfg = from_core(ras::ModelConfig{});
}

ras_status ras_model_config_validate(const ras_model_config* cfg) {
    return guarded([&] {
        need(cfg, "cfg");
        to_core(*cfg).validate();
    });
}

ras_status ras_model_init(const ras_model_config* cfg, uint64_t seed, ras_model** out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        const auto mc = to_core(*cfg);
        mc.validate();
        auto* m = new ras_model{ras::DitModel::init(mc, seed), {}};
        m->config_blob = nlohmann::json{{"model", ras::to_json(mc)}}.dump();
        *out = m;
    });
}

ras_status ras_model_load(const char* path, ras_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        auto ck = ras::load_checkpoint(path);
        *out = new ras_model{std::move(ck.model), std::move(ck.config_blob)};
    });
}

ras_status ras_model_save(const ras_model* model, const char* path, const char* config_json) {
    return guarded([&] {
        need(model, "model");
        need(path, "path");
        ras::save_checkpoint(model->model, path, config_json ? config_json : "");
    });
}

ras_status ras_model_get_config(const ras_model* model, ras_model_config* out) {
    return guarded([&] {
        need(model, "model");
        need(out, "out");
        *out = from_core(model->model.config());
    });
}

ras_status ras_model_parameter_count(const ras_model* model, uint64_t* out) {
    return guarded([&] {
        need(model, "model");
        need(out, "out");
        *out = model->model.weights().parameter_count();
    });
}

const char* ras_model_config_json(const ras_model* model) {
    return model ? model->config_blob.c_str() : "";
}

void ras_model_free(ras_model* model) { delete model; }

void ras_train_config_default(ras_train_config* cfg) {
    if (!cfg) return;
    const ras::TrainConfig t;
    *cfg = {t.steps,       t.batch_size,   t.learning_rate, t.beta1,
            t.beta2,       t.adam_eps,     t.weight_decay,  t.warmup_steps,
            t.ema_decay,   t.seed,         t.data_seed};
}

ras_status ras_train_config_validate(const ras_train_config* cfg) {
    return guarded([&] {
        need(cfg, "cfg");
        to_core(*cfg).validate();
    });
}

ras_status ras_train(const ras_model* init, const ras_train_config* cfg, ras_loss_callback on_step,
                     void* user, ras_model** out, float* losses) {
    return guarded([&] {
        need(init, "init");
        need(cfg, "cfg");
        need(out, "out");
        const auto tc = to_core(*cfg);
        tc.validate();
        ras::LossCallback cb;
        if (on_step) cb = [&](std::uint32_t s, float l) { on_step(s, l, user); };
        auto r = ras::train(init->model, tc, cb);
        if (losses) std::copy(r.losses.begin(), r.losses.end(), losses);
        const auto& mc = r.model.config();
        auto* m = new ras_model{std::move(r.model), {}};
        m->config_blob = nlohmann::json{{"model", ras::to_json(mc)}, {"train", ras::to_json(tc)}}.dump();
        *out = m;
    });
}

ras_status ras_train_config_json(const ras_model_config* model_cfg, const ras_train_config* cfg,
                                 char** out) {
    return guarded([&] {
        need(model_cfg, "model_cfg");
        need(cfg, "cfg");
        need(out, "out");
        nlohmann::json j{{"model", ras::to_json(to_core(*model_cfg))},
                         {"train", ras::to_json(to_core(*cfg))}};
        *out = dup_string(j.dump());
    });
}

void ras_sample_config_default(ras_sample_config* cfg) {
    if (!cfg) return;
    static const uint32_t kResets[] = {12, 20};
    cfg->steps = 30;
    cfg->warmup = 4;
    cfg->dense_resets = kResets;
    cfg->num_dense_resets = 2;
    cfg->average_ratio = 0.5;
    cfg->curve = RAS_CURVE_LINEAR;
    cfg->starvation_k = 0.3f;
    cfg->metric = RAS_METRIC_STD;
    cfg->shift = 1.0;
    cfg->seed = 0;
    cfg->class_id = -1;
    cfg->use_recovery = 1;
    cfg->dense_path = 0;
}

ras_status ras_sample_config_validate(const ras_sample_config* cfg, const ras_model* model) {
    return guarded([&] {
        need(cfg, "cfg");
        validate_sample(*cfg, model ? &model->model.config() : nullptr);
    });
}

ras_status ras_sample(const ras_model* model, const ras_sample_config* cfg, ras_image** out_image,
                      ras_trace** out_trace) {
    return guarded([&] {
        need(model, "model");
        need(cfg, "cfg");
        const auto& mc = model->model.config();
        validate_sample(*cfg, &mc);
        const auto sigmas = sigmas_of(*cfg);
        const auto cls = class_of(*cfg, &mc);
        ras::SampleResult r;
        if (cfg->dense_path) {
            r = ras::sample_dense(model->model, sigmas, cfg->seed, cls);
        } else {
            ras::SampleOptions opt;
            opt.use_recovery = cfg->use_recovery != 0;
            r = ras::sample_ras(model->model, sigmas, schedule_of(*cfg), cfg->seed, cls, opt);
        }
        if (out_image) *out_image = new ras_image{std::move(r.image)};
        if (out_trace) *out_trace = new ras_trace{std::move(r.trace)};
    });
}

ras_status ras_ratio_curve(const ras_sample_config* cfg, double* out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        const auto s = schedule_of(*cfg);
        for (std::uint32_t t = 0; t < s.total_steps; ++t) out[t] = ras::ratio_for_step(s, t);
    });
}

ras_status ras_analytic_run_flops(const ras_model_config* model_cfg, const ras_sample_config* cfg,
                                  ras_flops* out) {
    return guarded([&] {
        need(model_cfg, "model_cfg");
        need(cfg, "cfg");
        need(out, "out");
        const auto mc = to_core(*model_cfg);
        mc.validate();
        *out = from_core(cfg->dense_path ? ras::analytic_dense_run_flops(mc, cfg->steps)
                                         : ras::analytic_run_flops(mc, schedule_of(*cfg),
                                                                   cfg->use_recovery != 0));
    });
}

ras_status ras_image_create(uint32_t h, uint32_t w, uint32_t c, const float* data, ras_image** out) {
    return guarded([&] {
        need(out, "out");
        if (h == 0 || w == 0 || c == 0) ras::fail(ras::ErrorKind::Shape, "image dimensions must be positive");
        auto* img = new ras_image{ras::Image(h, w, c)};
        if (data) std::copy(data, data + img->image.data.size(), img->image.data.begin());
        *out = img;
    });
}

void ras_image_shape(const ras_image* img, uint32_t* h, uint32_t* w, uint32_t* c) {
    if (h) *h = img ? img->image.h : 0;
    if (w) *w = img ? img->image.w : 0;
    if (c) *c = img ? img->image.c : 0;
}

const float* ras_image_data(const ras_image* img) { return img ? img->image.data.data() : nullptr; }

ras_status ras_image_write_pgm(const ras_image* img, const char* path) {
    return guarded([&] {
        need(img, "img");
        need(path, "path");
        ras::write_pgm(path, ras::to_gray(img->image));
    });
}

ras_status ras_image_write_png(const ras_image* img, const char* path) {
    return guarded([&] {
        need(img, "img");
        need(path, "path");
        ras::write_png(path, ras::to_gray(img->image));
    });
}

ras_status ras_image_mse(const ras_image* a, const ras_image* b, double* out) {
    return guarded([&] {
        need(a, "a");
        need(b, "b");
        need(out, "out");
        *out = ras::mse(a->image, b->image);
    });
}

ras_status ras_image_write_grid(const ras_image* const* images, size_t count, uint32_t columns,
                                const char* path, int png) {
    return guarded([&] {
        need(images, "images");
        need(path, "path");
        if (count == 0 || columns == 0) ras::fail(ras::ErrorKind::InvalidArgument, "empty image grid");
        std::vector<ras::GrayImage> tiles;
        for (std::size_t i = 0; i < count; ++i) {
            need(images[i], "images[i]");
            tiles.push_back(ras::to_gray(images[i]->image));
        }
        const auto g = ras::tile(tiles, columns);
        png ? ras::write_png(path, g) : ras::write_pgm(path, g);
    });
}

void ras_image_free(ras_image* img) { delete img; }

ras_status ras_dataset_sample(const ras_model_config* cfg, uint64_t data_seed, uint64_t index,
                              ras_image** out, uint32_t* label) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        const ras::ShapesDataset ds(cfg->image_h, cfg->image_w, cfg->channels, data_seed);
        auto img = ds.sample(index);
        if (label) *label = ds.label(index);
        *out = new ras_image{std::move(img)};
    });
}

ras_status ras_foreground_patches(const ras_model_config* cfg, const ras_image* img, float threshold,
                                  uint8_t* out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(img, "img");
        need(out, "out");
        const auto mc = to_core(*cfg);
        mc.validate();
        const auto fg = ras::foreground_patches(mc, img->image, threshold);
        std::copy(fg.begin(), fg.end(), out);
    });
}

ras_status ras_trace_write(const ras_trace* trace, const char* path, int include_timing) {
    return guarded([&] {
        need(trace, "trace");
        need(path, "path");
        ras::write_text(path, ras::trace_to_string(trace->trace, include_timing != 0));
    });
}

ras_status ras_trace_read(const char* path, ras_trace** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new ras_trace{ras::read_trace(path)};
    });
}

ras_status ras_trace_shape(const ras_trace* trace, uint32_t* num_steps, uint32_t* num_patches,
                           uint32_t* grid_h, uint32_t* grid_w) {
    return guarded([&] {
        need(trace, "trace");
        const auto& t = trace->trace;
        if (num_steps) *num_steps = static_cast<std::uint32_t>(t.steps.size());
        if (num_patches) *num_patches = t.num_patches;
        if (grid_h) *grid_h = t.grid_h;
        if (grid_w) *grid_w = t.grid_w;
    });
}

ras_status ras_trace_step(const ras_trace* trace, uint32_t index, ras_step_info* out) {
    return guarded([&] {
        need(out, "out");
        const auto& s = step_at(trace, index);
        out->step = s.step;
        out->sigma = s.sigma;
        out->sigma_next = s.sigma_next;
        out->ratio = s.ratio;
        out->dense = s.dense ? 1 : 0;
        out->active_count = static_cast<std::uint32_t>(s.active.size());
        out->flops = from_core(s.flops);
        out->wall_ms = s.wall_ms;
    });
}

ras_status ras_trace_step_active(const ras_trace* trace, uint32_t index, uint32_t* out,
                                 size_t capacity, size_t* count) {
    return guarded([&] { copy_out(step_at(trace, index).active, out, capacity, count); });
}

ras_status ras_trace_step_scores(const ras_trace* trace, uint32_t index, float* out, size_t capacity,
                                 size_t* count) {
    return guarded([&] { copy_out(step_at(trace, index).scores, out, capacity, count); });
}

ras_status ras_trace_total_flops(const ras_trace* trace, ras_flops* out) {
    return guarded([&] {
        need(trace, "trace");
        need(out, "out");
        *out = from_core(trace->trace.total_flops());
    });
}

void ras_trace_free(ras_trace* trace) { delete trace; }

ras_status ras_ndcg_adjacent(const uint32_t* prev, const uint32_t* next, size_t n, double* out) {
    return guarded([&] {
        need(prev, "prev");
        need(next, "next");
        need(out, "out");
        *out = ras::ndcg_adjacent({prev, n}, {next, n});
    });
}

ras_status ras_ndcg_random_baseline(size_t num_patches, size_t samples, uint64_t seed, double* mean,
                                    double* stddev) {
    return guarded([&] {
        const auto b = ras::ndcg_random_baseline(num_patches, samples, seed);
        if (mean) *mean = b.mean;
        if (stddev) *stddev = b.stddev;
    });
}

ras_status ras_continuity_curve(const ras_trace* trace, double* out, size_t capacity, size_t* count) {
    return guarded([&] {
        need(trace, "trace");
        copy_out(ras::continuity_curve(trace->trace), out, capacity, count);
    });
}

ras_status ras_activation_counts(const ras_trace* trace, uint32_t* out, size_t capacity,
                                 size_t* count) {
    return guarded([&] {
        need(trace, "trace");
        copy_out(ras::drop_count_map(trace->trace), out, capacity, count);
    });
}

ras_status ras_write_heatmap(const uint32_t* values, uint32_t grid_h, uint32_t grid_w,
                             uint32_t max_value, uint32_t cell_px, const char* path, int png) {
    return guarded([&] {
        need(values, "values");
        need(path, "path");
        const auto g = ras::heatmap({values, static_cast<std::size_t>(grid_h) * grid_w}, grid_h,
                                    grid_w, max_value, cell_px);
        png ? ras::write_png(path, g) : ras::write_pgm(path, g);
    });
}

ras_status ras_compare(const ras_model* model, const ras_sample_config* configs, size_t num_configs,
                       const uint64_t* seeds, size_t num_seeds, uint32_t reference_steps,
                       int include_timing, char** out_csv) {
    return guarded([&] {
        need(model, "model");
        need(configs, "configs");
        need(seeds, "seeds");
        need(out_csv, "out_csv");
        std::vector<ras::QualityConfig> qs;
        for (std::size_t i = 0; i < num_configs; ++i) {
            const auto& c = configs[i];
            ras::QualityConfig q;
            q.steps = c.steps;
            q.average_ratio = c.dense_path ? 1.0 : c.average_ratio;
            q.warmup = c.warmup;
            q.dense_resets = resets_of(c);
            q.curve = to_core(c.curve);
            q.starvation_k = c.starvation_k;
            q.metric = to_core(c.metric);
            q.shift = c.shift;
            q.use_recovery = c.use_recovery != 0;
            if (q.average_ratio < 1.0) schedule_of(c);
            sigmas_of(c);
            qs.push_back(std::move(q));
        }
        const auto report = ras::quality_vs_dense(model->model, qs, {seeds, seeds + num_seeds},
                                                  reference_steps);
        *out_csv = dup_string(ras::quality_report_csv(report, include_timing != 0));
    });
}

void ras_string_free(char* s) { delete[] s; }

ras_status ras_bench_gemm(uint32_t m, uint32_t k, uint32_t n, double active_fraction,
                          uint32_t repeats, uint64_t seed, ras_gemm_bench* out) {
    return guarded([&] {
        need(out, "out");
        if (m == 0 || k == 0 || n == 0 || repeats == 0)
            ras::fail(ras::ErrorKind::InvalidArgument, "bench dimensions and repeats must be positive");
        if (!(active_fraction > 0.0 && active_fraction <= 1.0))
            ras::fail(ras::ErrorKind::InvalidArgument, "active fraction outside (0, 1]");
        ras::Rng rng(seed, 7);
        ras::Matrix x(m, k), w(k, n);
        for (auto& v : x.flat()) v = rng.normal();
        for (auto& v : w.flat()) v = rng.normal();
        std::vector<std::uint32_t> perm(m);
        std::iota(perm.begin(), perm.end(), 0u);
        for (std::uint32_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        const auto active_n = ras::active_count_for(active_fraction, m);
        perm.resize(active_n);
        std::sort(perm.begin(), perm.end());
        const ras::IndexSet active(perm);
        const ras::Matrix x_active = ras::select_rows(x, active.span());
        ras::Matrix dest(m, n);

        std::vector<double> dense, gather, scatter, naive;
        for (std::uint32_t r = 0; r < repeats; ++r) {
            dense.push_back(time_ms([&] { (void)ras::gemm(x, w); }));
            gather.push_back(time_ms([&] { (void)ras::gather_gemm(x, active, w); }));
            scatter.push_back(time_ms([&] { ras::gemm_scatter(x_active, w, active, dest); }));
            naive.push_back(time_ms([&] { (void)ras::gemm(ras::select_rows(x, active.span()), w); }));
        }
        out->dense_ms = median(dense);
        out->gather_gemm_ms = median(gather);
        out->gemm_scatter_ms = median(scatter);
        out->naive_ms = median(naive);
        out->gflops_dense = 2.0 * m * k * n / (out->dense_ms * 1e6);
    });
}

uint32_t ras_num_threads(void) { return ras::kernel_threads(); }

}  // extern "C"

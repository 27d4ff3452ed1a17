#ifndef RAS_RAS_H
#define RAS_RAS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RAS_API __declspec(dllexport)
#else
#define RAS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every function returns a status; on failure a message is available from
   ras_last_error() until the next call on the same thread. Output handles are
   only written on success. */
typedef enum ras_status {
    RAS_OK = 0,
    RAS_E_INVALID_ARGUMENT = 1,
    RAS_E_SHAPE = 2,
    RAS_E_IO = 3,
    RAS_E_BAD_MAGIC = 4,
    RAS_E_BAD_VERSION = 5,
    RAS_E_TRUNCATED = 6,
    RAS_E_CORRUPT = 7,
    RAS_E_NUMERIC = 8,
    RAS_E_STATE = 9,
    RAS_E_INTERNAL = 10,
    RAS_E_BUFFER_TOO_SMALL = 11
} ras_status;

RAS_API const char* ras_status_name(ras_status status);
RAS_API const char* ras_last_error(void);
RAS_API const char* ras_version(void);

typedef struct ras_model ras_model;
typedef struct ras_image ras_image;
typedef struct ras_trace ras_trace;

typedef enum ras_metric { RAS_METRIC_STD = 0, RAS_METRIC_L2NORM = 1, RAS_METRIC_RANDOM = 2 } ras_metric;
typedef enum ras_curve { RAS_CURVE_LINEAR = 0, RAS_CURVE_FLAT = 1 } ras_curve;

typedef struct ras_flops {
    uint64_t token_linear;
    uint64_t attention;
    uint64_t conditioning;
} ras_flops;

/* ---- model ---- */

typedef struct ras_model_config {
    uint32_t image_h, image_w, channels, patch_size;
    uint32_t hidden_dim, layers, heads, mlp_ratio;
    uint32_t num_classes; /* 0 = unconditional */
} ras_model_config;

RAS_API void ras_model_config_default(ras_model_config* cfg);
RAS_API ras_status ras_model_config_validate(const ras_model_config* cfg);

RAS_API ras_status ras_model_init(const ras_model_config* cfg, uint64_t seed, ras_model** out);
RAS_API ras_status ras_model_load(const char* path, ras_model** out);
/* config_json may be NULL; otherwise it must be a JSON object whose "model"
   entry matches the model. It is stored verbatim. */
RAS_API ras_status ras_model_save(const ras_model* model, const char* path, const char* config_json);
RAS_API ras_status ras_model_get_config(const ras_model* model, ras_model_config* out);
RAS_API ras_status ras_model_parameter_count(const ras_model* model, uint64_t* out);
/* Config blob stored in (or generated for) the checkpoint. Valid while the model lives. */
RAS_API const char* ras_model_config_json(const ras_model* model);
RAS_API void ras_model_free(ras_model* model);

/* ---- training ---- */

typedef struct ras_train_config {
    uint32_t steps;
    uint32_t batch_size;
    float learning_rate;
    float beta1, beta2, adam_eps;
    float weight_decay;
    uint32_t warmup_steps;
    float ema_decay;
    uint64_t seed;
    uint64_t data_seed;
} ras_train_config;

typedef void (*ras_loss_callback)(uint32_t step, float loss, void* user);

RAS_API void ras_train_config_default(ras_train_config* cfg);
RAS_API ras_status ras_train_config_validate(const ras_train_config* cfg);
/* Trains from `init` and returns the EMA model. `losses` may be NULL or hold
   cfg->steps floats. */
RAS_API ras_status ras_train(const ras_model* init, const ras_train_config* cfg,
                             ras_loss_callback on_step, void* user, ras_model** out,
                             float* losses);
/* JSON object describing the training config, as stored in checkpoints. */
RAS_API ras_status ras_train_config_json(const ras_model_config* model_cfg,
                                         const ras_train_config* cfg, char** out);

/* ---- sampling ---- */

typedef struct ras_sample_config {
    uint32_t steps;
    uint32_t warmup;
    const uint32_t* dense_resets;
    size_t num_dense_resets;
    double average_ratio;
    ras_curve curve;
    float starvation_k;
    ras_metric metric;
    double shift;
    uint64_t seed;
    int32_t class_id;  /* -1 = unconditional; required >= 0 for conditional models */
    int use_recovery;  /* nonzero: attend over cached K/V */
    int dense_path;    /* nonzero: plain Euler over the dense forward */
} ras_sample_config;

RAS_API void ras_sample_config_default(ras_sample_config* cfg);
/* model may be NULL; then only model-independent checks run. */
RAS_API ras_status ras_sample_config_validate(const ras_sample_config* cfg, const ras_model* model);
RAS_API ras_status ras_sample(const ras_model* model, const ras_sample_config* cfg,
                              ras_image** out_image, ras_trace** out_trace);
/* Per-step ratio curve; `out` holds cfg->steps doubles. */
RAS_API ras_status ras_ratio_curve(const ras_sample_config* cfg, double* out);
RAS_API ras_status ras_analytic_run_flops(const ras_model_config* model_cfg,
                                          const ras_sample_config* cfg, ras_flops* out);

/* ---- images ---- */

RAS_API ras_status ras_image_create(uint32_t h, uint32_t w, uint32_t c, const float* data,
                                    ras_image** out);
RAS_API void ras_image_shape(const ras_image* img, uint32_t* h, uint32_t* w, uint32_t* c);
/* Channel-last floats in [-1, 1]. */
RAS_API const float* ras_image_data(const ras_image* img);
RAS_API ras_status ras_image_write_pgm(const ras_image* img, const char* path);
RAS_API ras_status ras_image_write_png(const ras_image* img, const char* path);
RAS_API ras_status ras_image_mse(const ras_image* a, const ras_image* b, double* out);
/* Writes a row-major tiling of images (1px gray separators). */
RAS_API ras_status ras_image_write_grid(const ras_image* const* images, size_t count,
                                        uint32_t columns, const char* path, int png);
RAS_API void ras_image_free(ras_image* img);

RAS_API ras_status ras_dataset_sample(const ras_model_config* cfg, uint64_t data_seed,
                                      uint64_t index, ras_image** out, uint32_t* label);
/* out holds num_patches flags: 1 where the patch mean exceeds threshold. */
RAS_API ras_status ras_foreground_patches(const ras_model_config* cfg, const ras_image* img,
                                          float threshold, uint8_t* out);

/* ---- traces ---- */

typedef struct ras_step_info {
    uint32_t step;
    float sigma, sigma_next;
    double ratio;
    int dense;
    uint32_t active_count;
    ras_flops flops;
    double wall_ms;
} ras_step_info;

RAS_API ras_status ras_trace_write(const ras_trace* trace, const char* path, int include_timing);
RAS_API ras_status ras_trace_read(const char* path, ras_trace** out);
RAS_API ras_status ras_trace_shape(const ras_trace* trace, uint32_t* num_steps,
                                   uint32_t* num_patches, uint32_t* grid_h, uint32_t* grid_w);
RAS_API ras_status ras_trace_step(const ras_trace* trace, uint32_t index, ras_step_info* out);
/* Array getters: *count always receives the full size; pass out = NULL to
   query it. A short buffer gives RAS_E_BUFFER_TOO_SMALL. */
/* Active patch ids of a step. */
RAS_API ras_status ras_trace_step_active(const ras_trace* trace, uint32_t index, uint32_t* out,
                                         size_t capacity, size_t* count);
RAS_API ras_status ras_trace_step_scores(const ras_trace* trace, uint32_t index, float* out,
                                         size_t capacity, size_t* count);
RAS_API ras_status ras_trace_total_flops(const ras_trace* trace, ras_flops* out);
RAS_API void ras_trace_free(ras_trace* trace);

/* ---- analysis ---- */

RAS_API ras_status ras_ndcg_adjacent(const uint32_t* prev, const uint32_t* next, size_t n,
                                     double* out);
RAS_API ras_status ras_ndcg_random_baseline(size_t num_patches, size_t samples, uint64_t seed,
                                            double* mean, double* stddev);
/* NDCG between consecutive scored steps; num_steps - 1 values. */
RAS_API ras_status ras_continuity_curve(const ras_trace* trace, double* out, size_t capacity,
                                        size_t* count);
/* Per-patch number of steps in which the patch was computed fresh. */
RAS_API ras_status ras_activation_counts(const ras_trace* trace, uint32_t* out, size_t capacity,
                                         size_t* count);
/* Cell values scaled so max_value maps to white. */
RAS_API ras_status ras_write_heatmap(const uint32_t* values, uint32_t grid_h, uint32_t grid_w,
                                     uint32_t max_value, uint32_t cell_px, const char* path, int png);

/* Dense-vs-RAS quality sweep. Each config's seed and class fields are ignored;
   seed s uses class s mod num_classes. Result is CSV text, freed with
   ras_string_free. */
RAS_API ras_status ras_compare(const ras_model* model, const ras_sample_config* configs,
                               size_t num_configs, const uint64_t* seeds, size_t num_seeds,
                               uint32_t reference_steps, int include_timing, char** out_csv);
RAS_API void ras_string_free(char* s);

/* ---- kernels ---- */

typedef struct ras_gemm_bench {
    double dense_ms;        /* full m x k times k x n */
    double gather_gemm_ms;  /* active rows only, fused gather */
    double gemm_scatter_ms; /* active rows only, fused scatter */
    double naive_ms;        /* explicit select_rows then gemm */
    double gflops_dense;
} ras_gemm_bench;

/* Median over `repeats` runs; active rows are a seeded random subset. */
RAS_API ras_status ras_bench_gemm(uint32_t m, uint32_t k, uint32_t n, double active_fraction,
                                  uint32_t repeats, uint64_t seed, ras_gemm_bench* out);
RAS_API uint32_t ras_num_threads(void);

#ifdef __cplusplus
}
#endif

#endif

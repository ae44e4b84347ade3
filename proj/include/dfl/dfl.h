/* C interface to the two-stream forgery detector.
 *
 * Every function returns a dfl_status. On failure, dfl_last_error() returns a
 * message for the calling thread, valid until that thread's next call.
 * Handles are opaque and owned by the caller once returned.
 */
#ifndef DFL_DFL_H
#define DFL_DFL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DFL_API __declspec(dllexport)
#else
#define DFL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dfl_status {
    DFL_OK = 0,
    DFL_ERR_INVALID_ARGUMENT = 1,
    DFL_ERR_SHAPE = 2,
    DFL_ERR_IO = 3,
    DFL_ERR_FORMAT = 4,
    DFL_ERR_VERSION = 5,
    DFL_ERR_CONFIG = 6,
    DFL_ERR_NUMERIC = 7,
    DFL_ERR_RUNTIME = 8,
    DFL_ERR_INTERNAL = 9
} dfl_status;

DFL_API const char* dfl_last_error(void);
DFL_API const char* dfl_status_name(dfl_status status);
DFL_API const char* dfl_version(void);

/* Receives progress lines from long-running calls. NULL disables logging. */
typedef void (*dfl_log_fn)(const char* line, void* user);
DFL_API void dfl_set_log(dfl_log_fn fn, void* user);

/* ---- datasets ---------------------------------------------------------- */

typedef struct dfl_dataset_spec {
    size_t image_size;
    size_t real_count;
    size_t fake_a;
    size_t fake_b;
    size_t fake_c;
    size_t frames_per_video;
    uint64_t seed;
} dfl_dataset_spec;

/* Defaults: 64 px, 100 real, 100 family-B fakes, 4 frames per video, seed 1. */
DFL_API void dfl_dataset_spec_default(dfl_dataset_spec* spec);
/* Writes index.json plus image/mask TNSR blobs under out_dir. */
DFL_API dfl_status dfl_generate_dataset(const dfl_dataset_spec* spec, const char* out_dir);
/* Loads and validates a dataset directory; reports its sample counts. */
DFL_API dfl_status dfl_dataset_info(const char* dir, size_t* count, size_t* real_count, size_t* image_size);

/* ---- run configuration ------------------------------------------------- */

typedef struct dfl_config dfl_config;

/* path == NULL gives the defaults. */
DFL_API dfl_status dfl_config_load(const char* path, dfl_config** out);
DFL_API dfl_status dfl_config_from_json(const char* json, dfl_config** out);
/* Keys: seed (also seeds the model), mode, region, out, train_data,
 * eval_data, epochs, threads, batch_size, lr. */
DFL_API dfl_status dfl_config_set(dfl_config* cfg, const char* key, const char* value);
/* Copies the JSON text into buf (NUL-terminated) if cap is large enough;
 * *needed receives the required size including the terminator. */
DFL_API dfl_status dfl_config_to_json(const dfl_config* cfg, char* buf, size_t cap, size_t* needed);
DFL_API void dfl_config_free(dfl_config* cfg);

/* ---- training and evaluation ------------------------------------------- */

/* Trains on cfg.train_data and writes <out>/checkpoint, <out>/loss.csv and,
 * when cfg.eval_data is set, an evaluation report in <out>/eval. A non-NULL
 * resume_from continues from that checkpoint instead of a fresh model. */
DFL_API dfl_status dfl_train(const dfl_config* cfg, const char* resume_from);

typedef struct dfl_metrics {
    double frame_auc;
    double frame_acc;
    double video_auc;
    double loc_accuracy; /* -1 when no sample carries a mask */
    size_t samples;
} dfl_metrics;

/* Evaluates a checkpoint on a dataset; writes metrics.json, roc.csv, roc.svg
 * and per-sample maps under out_dir when it is not NULL. */
DFL_API dfl_status dfl_evaluate(const char* checkpoint_dir, const char* data_dir, const char* out_dir,
                                dfl_metrics* metrics);

/* Runs every ablation variant of cfg and writes a CSV (csv_path NULL means
 * <out>/ablation.csv). Variant failures are recorded in the CSV; *failed
 * receives their number. */
DFL_API dfl_status dfl_ablate(const dfl_config* cfg, const char* csv_path, size_t* rows, size_t* failed);

/* Finite-difference checks of all ops and the full micro-model loss. Each
 * check is reported through the log callback. */
DFL_API dfl_status dfl_gradcheck(uint64_t seed, double tolerance, double* max_rel_error, size_t* checks,
                                 size_t* failures);

/* ---- model handle ------------------------------------------------------ */

typedef struct dfl_model dfl_model;

DFL_API dfl_status dfl_model_load(const char* checkpoint_dir, dfl_model** out);
DFL_API void dfl_model_free(dfl_model* model);
DFL_API dfl_status dfl_model_shape(const dfl_model* model, size_t* image_size, size_t* grid);

/* image: 3*S*S values in [0,1], channel-major. map: grid*grid outputs. */
DFL_API dfl_status dfl_model_predict(const dfl_model* model, const double* image, size_t image_len,
                                     double* probability, double* map, size_t map_len);
/* Reads a [3,S,S] TNSR image (u8 0..255 or float in [0,1]) into buf. */
DFL_API dfl_status dfl_read_image(const char* path, double* buf, size_t cap, size_t* len);

/* Grad-CAM of the classification logit at a named tap. cam receives h*w
 * values; *h and *w are always set when the tap exists. */
DFL_API dfl_status dfl_model_grad_cam(const dfl_model* model, const double* image, size_t image_len, const char* tap,
                                      double* cam, size_t cam_len, size_t* h, size_t* w);

/* 8-bit PGM of a rows x cols map with values in [0,1]. */
DFL_API dfl_status dfl_write_pgm(const char* path, const double* map, size_t rows, size_t cols);

#ifdef __cplusplus
}
#endif

#endif

/*
 * sasnet: single-object vehicle tracker built on a semantic-attention
 * fully-convolutional Siamese network.
 *
 * C API of the shared engine library. All functions return a status code;
 * sasnet_last_error() carries the message of the most recent failure on the
 * calling thread. Handles are opaque and owned by the caller via the matching
 * _free function.
 */
#ifndef SASNET_H
#define SASNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef SASNET_API
#define SASNET_API __attribute__((visibility("default")))
#endif

typedef enum sasnet_status {
    SASNET_OK = 0,
    SASNET_ERR_INVALID_ARGUMENT = 1, /* bad handle, flag, or precondition */
    SASNET_ERR_SHAPE = 2,            /* tensor/geometry violation */
    SASNET_ERR_IO = 3,               /* filesystem failure */
    SASNET_ERR_FORMAT = 4,           /* structurally invalid file contents */
    SASNET_ERR_VERIFY = 5,           /* a verification suite failed */
    SASNET_ERR_RUNTIME = 6           /* anything else */
} sasnet_status;

SASNET_API const char* sasnet_status_name(sasnet_status s);

/* Message of the last failure on this thread; empty string if none. */
SASNET_API const char* sasnet_last_error(void);

/* Internal parallelism cap (GEMM threads). Defaults to SASNET_THREADS or the
 * hardware count. */
SASNET_API void sasnet_set_threads(int n);
SASNET_API int sasnet_get_threads(void);

/* Single-precision GEMM internals for speed; tensors stay 64-bit. */
SASNET_API void sasnet_set_fast32(int enable);

SASNET_API void sasnet_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Model parameters                                                    */

typedef struct sasnet_params sasnet_params;

SASNET_API sasnet_status sasnet_params_init(uint64_t seed, sasnet_params** out);
SASNET_API sasnet_status sasnet_params_load(const char* path, sasnet_params** out);
SASNET_API sasnet_status sasnet_params_save(const sasnet_params* p, const char* path);
SASNET_API void sasnet_params_free(sasnet_params* p);

/* ------------------------------------------------------------------ */
/* Gradient verification                                               */

/* Runs the finite-difference suite (per-op plus an end-to-end shrunken
 * replica). Writes the human-readable report to *report_out (caller frees via
 * sasnet_string_free) and sets *pass_out to 1 iff every max relative error is
 * below 1e-5. inject_fault_op optionally corrupts one op's backward pass
 * ("sigmoid") so the failure path can be exercised. */
SASNET_API sasnet_status sasnet_gradcheck(uint64_t seed, const char* inject_fault_op,
                                          char** report_out, int* pass_out);

/* ------------------------------------------------------------------ */
/* Synthetic data                                                      */

typedef struct sasnet_synth_config {
    int frame_w, frame_h;
    double min_target, max_target; /* target long side, px */
    double aspect_min, aspect_max; /* box w/h */
    double speed_min, speed_max;   /* px per frame */
    int n_distractors;
    double occluder_prob;
    double texture_amp;
    double noise_amp;
    double bg_noise;
    int bg_blobs;
} sasnet_synth_config;

SASNET_API void sasnet_synth_config_default(sasnet_synth_config* cfg);

/* Writes N training pairs (pair_%06d_{z,zs,x}.ppm + index.csv). */
SASNET_API sasnet_status sasnet_synth_pairs(uint64_t seed, int n_pairs,
                                            const sasnet_synth_config* cfg,
                                            const char* out_dir);

/* Writes seq_%04d/ directories of numbered PPM frames + groundtruth.txt. */
SASNET_API sasnet_status sasnet_synth_sequences(uint64_t seed, int n_sequences,
                                                int n_frames,
                                                const sasnet_synth_config* cfg,
                                                const char* out_dir);

/* ------------------------------------------------------------------ */
/* Training                                                            */

typedef struct sasnet_train_config {
    int stage; /* 1 or 2 */
    int batch_pairs;
    double lr_stage1;
    double lr_theta_s_stage2;
    double lr_theta_att_stage2;
    double rmsprop_decay;
    double rmsprop_epsilon;
    double affine_lr; /* adaptive step for the two readout scalars */
    int iterations;
    uint64_t seed;
    double label_sigma;
    int log_every;
    int checkpoint_every;
    int fast32;
} sasnet_train_config;

SASNET_API void sasnet_train_config_default(sasnet_train_config* cfg, int stage);

typedef void (*sasnet_progress_fn)(int iter, double loss, void* user);

/* Trains on the pair files under data_dir. init may be NULL for stage 1 (a
 * seed-initialized model is used); stage 2 requires it. When resume is
 * non-zero and out_dir holds checkpoints, continues from the latest one.
 * Writes train_log.csv and checkpoints into out_dir, and the final weights to
 * out_dir/params_final.sasn. */
SASNET_API sasnet_status sasnet_train(const char* data_dir, const sasnet_params* init,
                                      const sasnet_train_config* cfg,
                                      const char* out_dir, int resume,
                                      sasnet_progress_fn progress, void* user,
                                      sasnet_params** final_out);

/* ------------------------------------------------------------------ */
/* Tracking                                                            */

typedef struct sasnet_track_config {
    double scale_factors[8];
    int n_scales;
    double scale_penalty;
    double scale_damping;
    int upsample_factor;
    int hann_window;
    double hann_weight;
} sasnet_track_config;

SASNET_API void sasnet_track_config_default(sasnet_track_config* cfg);

/* One-pass tracking over the PPM sequence in seq_dir. init_tlwh is the
 * first-frame box (x, y, w, h, top-left anchored); pass NULL to take line 1
 * of groundtruth.txt. Writes the results CSV; *fps_out (optional) gets the
 * frames-per-second over all steps after initialization. */
SASNET_API sasnet_status sasnet_track(const sasnet_params* p, const char* seq_dir,
                                      const double* init_tlwh,
                                      const sasnet_track_config* cfg,
                                      const char* results_csv, double* fps_out);

/* ------------------------------------------------------------------ */
/* Evaluation and benchmark                                            */

/* Compares a results CSV against groundtruth.txt (or a sequence directory
 * containing it) and writes the report CSV. fps is recorded in the summary
 * row (pass 0 when unknown). */
SASNET_API sasnet_status sasnet_eval(const char* results_csv, const char* gt_path,
                                     double fps, const char* report_csv,
                                     double* auc_out, double* precision20_out);

/* Cross-correlation cost table over exemplar-feature aspect ratios (>= 1).
 * Returns the formatted table via *table_out (caller frees). ratio_out
 * (optional, length 2) receives the {flop, time} ratios of the last aspect. */
SASNET_API sasnet_status sasnet_bench(const double* aspects, int n_aspects, int repeats,
                                      char** table_out, double* ratio_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SASNET_H */

/* Copyright 2026 The MLFF-Net Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface of the mlffnet shared library. Every fallible call returns an
 * mlff_status; on failure mlff_last_error() describes the cause. The message
 * is thread-local and valid until the next failing call on that thread.
 * Handles are opaque and owned by the caller.
 */

#ifndef MLFFNET_H
#define MLFFNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(MLFF_BUILDING_LIBRARY)
#define MLFF_API __attribute__((visibility("default")))
#else
#define MLFF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mlff_status {
  MLFF_OK = 0,
  MLFF_ERR_CONTRACT = 1,     /* invalid argument, shape or configuration */
  MLFF_ERR_IO = 2,           /* missing, unreadable or malformed file */
  MLFF_ERR_CHECK_FAILED = 3, /* gradient check above tolerance */
  MLFF_ERR_NUMERIC = 4,      /* non-finite loss during training */
  MLFF_ERR_INTERNAL = 5
} mlff_status;

typedef struct mlff_dataset mlff_dataset;
typedef struct mlff_model mlff_model;

MLFF_API const char* mlff_last_error(void);
MLFF_API const char* mlff_version(void);
/* Nonzero when PNG files can be read and written. */
MLFF_API int mlff_png_supported(void);

/* ---- datasets ---------------------------------------------------------- */

MLFF_API mlff_status mlff_dataset_synth(uint64_t seed, int count, int height, int width,
                                        mlff_dataset** out);
/* height = width = 0 keeps each file's size. */
MLFF_API mlff_status mlff_dataset_load(const char* manifest_path, int height, int width,
                                       mlff_dataset** out);
/* Writes <id>.ppm, <id>_mask.pgm and manifest.tsv into dir. */
MLFF_API mlff_status mlff_dataset_save(const mlff_dataset* ds, const char* dir, const char* name);
MLFF_API int mlff_dataset_size(const mlff_dataset* ds);
MLFF_API const char* mlff_dataset_name(const mlff_dataset* ds);
/* Extents of the first sample. */
MLFF_API mlff_status mlff_dataset_shape(const mlff_dataset* ds, int* height, int* width);
/* NULL when index is out of range. */
MLFF_API const char* mlff_dataset_id(const mlff_dataset* ds, int index);
MLFF_API void mlff_dataset_free(mlff_dataset* ds);

/* ---- models ------------------------------------------------------------ */

typedef struct mlff_train_config {
  const char* variant; /* bas | mam | mam_hfem | full */
  int widths[4];
  int blocks_per_stage;
  int hfem_width;
  int attn_width;
  int decoder_width;
  double lr;
  double weight_decay;
  double grad_clip; /* <= 0 disables clipping */
  int steps;
  int batch;
  uint64_t seed;
} mlff_train_config;

MLFF_API void mlff_train_config_default(mlff_train_config* cfg);

typedef struct mlff_model_info {
  char variant[16];
  size_t param_count;
  uint64_t step;
  int train_height; /* 0 before training */
  int train_width;
} mlff_model_info;

/* Fresh weights drawn from cfg->seed. */
MLFF_API mlff_status mlff_model_create(const mlff_train_config* cfg, mlff_model** out);
MLFF_API mlff_status mlff_model_load(const char* path, mlff_model** out);
MLFF_API mlff_status mlff_model_save(const mlff_model* model, const char* path);
MLFF_API mlff_status mlff_model_info_get(const mlff_model* model, mlff_model_info* out);
MLFF_API void mlff_model_free(mlff_model* model);

/* ---- training and evaluation ------------------------------------------ */

typedef void (*mlff_step_callback)(uint64_t step, double total_loss, void* user);

typedef struct mlff_train_result {
  double initial_loss;
  double final_loss;
  int steps;
} mlff_train_result;

/* Uses the optimizer fields of cfg; the architecture comes from the model.
 * log_csv, callback and result may be NULL. On a non-finite loss the steps
 * completed so far are still written to log_csv. */
MLFF_API mlff_status mlff_train(mlff_model* model, const mlff_train_config* cfg,
                                const mlff_dataset* data, const char* log_csv,
                                mlff_step_callback callback, void* user,
                                mlff_train_result* result);

typedef struct mlff_metrics {
  double m_dice;
  double m_iou;
  double wfm;
  double s_measure;
  double mean_e;
  double max_e;
  double mae;
  int images;
  int degenerate;
} mlff_metrics;

/* Scores P1 in eval mode. csv_path may be NULL; otherwise a header and one
 * row labeled with dataset_name (or the dataset's own name when NULL). */
MLFF_API mlff_status mlff_evaluate(mlff_model* model, const mlff_dataset* data,
                                   const char* dataset_name, const char* csv_path,
                                   mlff_metrics* out);

/* Writes <id>_p1.pgm per sample, plus _p2 and _p3 when all_heads != 0. */
MLFF_API mlff_status mlff_predict(mlff_model* model, const mlff_dataset* data, const char* out_dir,
                                  int all_heads);

/* Copies head (1..3) of sample index as H*W row-major values into out. */
MLFF_API mlff_status mlff_predict_map(mlff_model* model, const mlff_dataset* data, int index,
                                      int head, double* out, size_t capacity);

typedef struct mlff_gradcheck_result {
  double max_rel_error;
  int checked;
  int failed;
  char worst[128];
} mlff_gradcheck_result;

/* Returns MLFF_ERR_CHECK_FAILED (with out filled) when any sampled relative
 * error exceeds 1e-4. */
MLFF_API mlff_status mlff_gradcheck(const char* variant, uint64_t seed,
                                    mlff_gradcheck_result* out);

typedef struct mlff_ablation_row {
  char label[32];
  size_t param_count;
  double initial_loss;
  double final_loss;
} mlff_ablation_row;

/* Trains the four variants under cfg and writes the ablation grid to
 * csv_path (may be NULL). rows receives four entries when non-NULL. */
MLFF_API mlff_status mlff_ablate(const mlff_train_config* cfg, const mlff_dataset* train,
                                 const mlff_dataset* const* eval_sets, int eval_count,
                                 const char* csv_path, mlff_ablation_row* rows);

#ifdef __cplusplus
}
#endif

#endif /* MLFFNET_H */

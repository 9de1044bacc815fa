/*
 * Copyright 2026 The OSMD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * C interface to the one-stage modality-distillation training library.
 * All entry points are exception-free; failures come back as a status code
 * and a thread-local message readable through osmd_last_error().
 */
#ifndef OSMD_H_
#define OSMD_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define OSMD_API __declspec(dllexport)
#else
#define OSMD_API __attribute__((visibility("default")))
#endif

/* Status codes double as process exit codes for the bundled CLI. */
typedef enum osmd_status {
  OSMD_OK = 0,
  OSMD_ERR_CONFIG = 2, /* malformed or structurally invalid configuration */
  OSMD_ERR_DATA = 3,   /* dataset missing, degenerate, or mislabeled */
  OSMD_ERR_TRAIN = 4,  /* optimization failure (divergence, collapse) */
  OSMD_ERR_IO = 5,     /* filesystem or serialization failure */
  OSMD_ERR_INVALID = 6 /* API misuse (null handle, bad argument) */
} osmd_status;

/* Opaque experiment configuration handle. */
typedef struct osmd_config osmd_config;

OSMD_API const char* osmd_version(void);

/* Message for the most recent failing call on this thread ("" if none). */
OSMD_API const char* osmd_last_error(void);

/* ===== configuration ===== */

OSMD_API osmd_status osmd_config_load(const char* path, osmd_config** out);
OSMD_API osmd_status osmd_config_parse(const char* json_text, osmd_config** out);
OSMD_API void osmd_config_free(osmd_config* cfg);

OSMD_API osmd_status osmd_config_set_variant(osmd_config* cfg, const char* name);
OSMD_API osmd_status osmd_config_set_seed(osmd_config* cfg, uint64_t seed);
OSMD_API osmd_status osmd_config_set_out_root(osmd_config* cfg, const char* path);

/* Hex digest of the canonicalized configuration (key order independent). */
OSMD_API osmd_status osmd_config_digest(const osmd_config* cfg, char* buf, size_t buf_len);

/* ===== pipeline ===== */

/* modality: "ordinary" or "privileged". Reuses an existing snapshot unless
 * force != 0; the snapshot path is written into the buffer. */
OSMD_API osmd_status osmd_pretrain(const osmd_config* cfg, const char* modality, int force,
                                   char* snapshot_path_buf, size_t buf_len);

typedef struct osmd_run_stats {
  double final_error;
  double final_accuracy;
  double best_error;
  int32_t best_epoch;
  int64_t steps;
  int32_t resumed;
  int32_t already_complete;
} osmd_run_stats;

OSMD_API osmd_status osmd_train(const osmd_config* cfg, int resume, int force,
                                char* run_dir_buf, size_t run_dir_len, osmd_run_stats* stats);

/* Evaluates the latest checkpoint of a run (run_dir NULL/"" = derived from
 * the config) and writes a JSON metrics object into the buffer. */
OSMD_API osmd_status osmd_evaluate_run(const osmd_config* cfg, const char* run_dir,
                                       char* metrics_json_buf, size_t buf_len);

/* Runs every model variant across the configured seeds and writes the
 * results table; the table path is written into the buffer. */
OSMD_API osmd_status osmd_ablate(const osmd_config* cfg, char* table_path_buf, size_t buf_len);

/* Renders SVG plots for whatever artifacts exist (run curves, ablation
 * bars). Writes a newline-separated list of produced files; an empty list
 * with OSMD_OK means there was nothing to draw. */
OSMD_API osmd_status osmd_plot(const osmd_config* cfg, char* written_paths_buf, size_t buf_len);

/* ===== math probes (black-box access to the loss primitives) ===== */

OSMD_API osmd_status osmd_gaussian_kernel(const double* u, const double* v, int64_t dim,
                                          double sigma, double* out);

/* rep_s, rep_p: row-major [b x d]. use_median != 0 selects the pairwise
 * median bandwidth; otherwise sigma is used as given. */
OSMD_API osmd_status osmd_mmd_marginal(const double* rep_s, const double* rep_p, int64_t b,
                                       int64_t d, int use_median, double sigma,
                                       double* out_value, double* out_sigma);

/* logits_p, logits_s: row-major [rows x cols]; teacher rows come first. */
OSMD_API osmd_status osmd_conditional_kl(const double* logits_p, const double* logits_s,
                                         int64_t rows, int64_t cols, double* out);

#ifdef __cplusplus
}
#endif

#endif /* OSMD_H_ */

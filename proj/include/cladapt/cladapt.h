/*
 * Copyright 2026 The cladapt Authors
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
 */
#ifndef CLADAPT_CLADAPT_H_
#define CLADAPT_CLADAPT_H_

/* C interface to the cladapt library.
 *
 * Every fallible call returns a cla_status. On failure the message is
 * available from cla_last_error() on the same thread until the next call.
 * Objects are opaque handles released with their _free function; passing
 * NULL to a _free function is a no-op.
 *
 * Functions that return text take (buf, cap, needed): the text including its
 * terminating NUL is copied when it fits in cap bytes, and *needed always
 * receives the required size. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CLA_API __declspec(dllexport)
#else
#define CLA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cla_status {
  CLA_OK = 0,
  CLA_ERR_ARGUMENT = 1,  /* NULL handle, index out of range, bad enum name */
  CLA_ERR_CONFIG = 2,    /* rejected configuration; see cla_last_error_field() */
  CLA_ERR_RUNTIME = 3,   /* failure while running */
  CLA_ERR_FORMAT = 4,    /* malformed dataset or checkpoint file */
  CLA_ERR_BUFFER = 5     /* output buffer too small; *needed holds the size */
} cla_status;

typedef struct cla_config cla_config;
typedef struct cla_dataset cla_dataset;
typedef struct cla_run cla_run;

CLA_API const char* cla_version(void);
CLA_API const char* cla_last_error(void);
/* Config key named by the last CLA_ERR_CONFIG, or "" otherwise. */
CLA_API const char* cla_last_error_field(void);
CLA_API const char* cla_status_name(cla_status status);

/* ---- configuration ---- */
CLA_API cla_status cla_config_new(cla_config** out);
CLA_API cla_status cla_config_load(const char* path, cla_config** out);
CLA_API cla_status cla_config_set(cla_config* config, const char* key, const char* value);
CLA_API cla_status cla_config_validate(const cla_config* config);
CLA_API cla_status cla_config_json(const cla_config* config, char* buf, size_t cap, size_t* needed);
CLA_API void cla_config_free(cla_config* config);

/* ---- commands ---- */
/* Runs one sequence and writes its artifacts under the configured out dir. */
CLA_API cla_status cla_run_sequence(const cla_config* config, cla_run** out);
CLA_API size_t cla_run_stages(const cla_run* run);
CLA_API cla_status cla_run_accuracy(const cla_run* run, size_t stage, size_t domain, double* out);
/* bwt and fwt are NaN for single-domain runs. */
CLA_API cla_status cla_run_metrics(const cla_run* run, double* acc, double* bwt, double* fwt);
CLA_API cla_status cla_run_param_counts(const cla_run* run, uint64_t* backbone, uint64_t* trainable,
                                        uint64_t* total);
CLA_API void cla_run_free(cla_run* run);

/* axis: "k", "rank", "sequence", "gating" or "size". */
CLA_API cla_status cla_ablate(const cla_config* config, const char* axis);
CLA_API cla_status cla_compare(const cla_config* config, size_t timing_repeats);
CLA_API cla_status cla_report(const char* dir, char* buf, size_t cap, size_t* needed);

/* ---- datasets ---- */
/* kind: "generic", "finegrained" or "texture"; split: "train" or "val". */
CLA_API cla_status cla_dataset_generate(const char* kind, size_t num_classes,
                                        size_t samples_per_class, double noise, uint64_t seed,
                                        const char* split, cla_dataset** out);
CLA_API cla_status cla_dataset_load(const char* path, cla_dataset** out);
CLA_API cla_status cla_dataset_save(const cla_dataset* dataset, const char* path);
CLA_API size_t cla_dataset_size(const cla_dataset* dataset);
CLA_API size_t cla_dataset_num_classes(const cla_dataset* dataset);
/* Channels × height × width of one image. */
CLA_API size_t cla_dataset_image_numel(const cla_dataset* dataset);
CLA_API cla_status cla_dataset_label(const cla_dataset* dataset, size_t index, uint32_t* out);
CLA_API cla_status cla_dataset_pixels(const cla_dataset* dataset, size_t index, double* out,
                                      size_t cap);
CLA_API void cla_dataset_free(cla_dataset* dataset);

/* ---- metrics ---- */
/* matrix is T×T row-major (stage, domain); chance has T entries. bwt and
 * fwt are NaN when T = 1. */
CLA_API cla_status cla_compute_metrics(const double* matrix, size_t stages, const double* chance,
                                       double* acc, double* bwt, double* fwt);

#ifdef __cplusplus
}
#endif

#endif /* CLADAPT_CLADAPT_H_ */

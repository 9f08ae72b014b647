/* Copyright 2026 The cfcredit Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the cfcredit library: synthetic arithmetic corpora, a tiny
 * policy model, counterfactual token weighting for group policy-gradient
 * training, and offline analysis of span importance logs.
 *
 * Every call returns a cfc_status. On failure cfc_last_error() describes the
 * problem; the message is per thread and valid until the next failing call
 * on that thread. Strings returned through char** are owned by the caller
 * and released with cfc_string_free.
 */

#ifndef CFCREDIT_H_
#define CFCREDIT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(CFCREDIT_BUILDING_LIBRARY)
#define CFC_API __declspec(dllexport)
#else
#define CFC_API __declspec(dllimport)
#endif
#else
#define CFC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cfc_status {
  CFC_OK = 0,
  CFC_ERR_INVALID_ARGUMENT = 1,
  CFC_ERR_IO = 2,
  CFC_ERR_PARSE = 3,
  CFC_ERR_GATE = 4, /* warm-started model below the accuracy gate */
  CFC_ERR_NUMERIC = 5,
  CFC_ERR_EXISTS = 6, /* output exists and overwriting was not requested */
  CFC_ERR_INTERNAL = 7
} cfc_status;

typedef struct cfc_config cfc_config;
typedef struct cfc_policy cfc_policy;

CFC_API const char* cfc_version(void);
CFC_API const char* cfc_source_hash(void);
CFC_API const char* cfc_last_error(void);
CFC_API const char* cfc_status_name(cfc_status status);
CFC_API void cfc_string_free(char* s);

/* trace, debug, info, warn, error, off. */
CFC_API cfc_status cfc_set_log_level(const char* level);

/* Configuration: defaults, optionally patched by a JSON file. */
CFC_API cfc_status cfc_config_create(const char* path_or_null, cfc_config** out);
CFC_API void cfc_config_free(cfc_config* config);
/* Dotted path, e.g. "train.learning_rate". The value is parsed as JSON and
 * used as a string when it is not valid JSON. */
CFC_API cfc_status cfc_config_set(cfc_config* config, const char* key, const char* value);
/* Comma-separated lists: "cf,uniform,inverted,random" and "1,2,3". */
CFC_API cfc_status cfc_config_set_modes(cfc_config* config, const char* modes_csv);
CFC_API cfc_status cfc_config_set_seeds(cfc_config* config, const char* seeds_csv);
CFC_API cfc_status cfc_config_to_json(const cfc_config* config, char** out_json);
/* Integer value at a dotted path. */
CFC_API cfc_status cfc_config_get_int(const cfc_config* config, const char* key, int64_t* out);

/* Writes n problems as JSON lines. min_steps/max_steps of 0 take the
 * configured range. */
CFC_API cfc_status cfc_generate_dataset(const char* path, uint64_t n, uint64_t seed,
                                        int min_steps, int max_steps, int force);

typedef struct cfc_warmstart_result {
  double heldout_accuracy;
  double final_loss; /* mean nats per completion token in the last epoch */
  uint64_t updates;
  double seconds;
} cfc_warmstart_result;

/* Supervised warm start on a dataset file, then greedy held-out evaluation.
 * The checkpoint is written even when the accuracy gate fails, in which case
 * CFC_ERR_GATE is returned and result is filled in. */
CFC_API cfc_status cfc_warmstart(const cfc_config* config, const char* dataset_path,
                                 const char* checkpoint_path, int force,
                                 cfc_warmstart_result* result);

typedef struct cfc_train_options {
  int resume;
  int force;
  const char* command; /* recorded in the run manifest; may be NULL */
} cfc_train_options;

typedef struct cfc_train_result {
  uint64_t arms;
  double wall_seconds;
  double heldout_accuracy; /* of the warm start, on the evaluation set */
} cfc_train_result;

/* One RL arm per (mode, seed). Writes per-arm metrics CSVs, results,
 * optional span/weight logs, report.json and manifest.json into out_dir. */
CFC_API cfc_status cfc_train(const cfc_config* config, const char* dataset_path,
                             const char* checkpoint_path, const char* out_dir,
                             const cfc_train_options* options, cfc_train_result* result);

typedef struct cfc_analyze_options {
  int quantile_bins;
  double w_min;
  double w_max;
  uint64_t top_distractors;
  uint64_t qualitative_limit;
  int force;
} cfc_analyze_options;

CFC_API void cfc_analyze_options_default(cfc_analyze_options* options);

/* Reads span and weight logs and writes analysis.json plus CSV tables and a
 * qualitative table into out_dir. Empty logs produce empty but valid reports. */
CFC_API cfc_status cfc_analyze(const char* span_dump, const char* weight_dump,
                               const char* out_dir, const cfc_analyze_options* options);

CFC_API cfc_status cfc_policy_load(const char* path, cfc_policy** out);
CFC_API void cfc_policy_free(cfc_policy* policy);
CFC_API size_t cfc_policy_num_params(const cfc_policy* policy);
/* Greedy completion of a prompt. */
CFC_API cfc_status cfc_policy_complete(const cfc_policy* policy, const char* prompt,
                                       size_t max_new_tokens, char** out_text);

#ifdef __cplusplus
}
#endif

#endif /* CFCREDIT_H_ */

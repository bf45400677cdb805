/* Copyright 2026 The coa Authors
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

/* C interface to the coa library. Every call returns a coa_status; on
 * failure coa_last_error() holds a message for the calling thread until its
 * next call. Handles are opaque and owned by the caller. Strings returned
 * through char** are freed with coa_string_free. */

#ifndef COA_COA_H_
#define COA_COA_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define COA_API __declspec(dllexport)
#else
#define COA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum coa_status {
  COA_OK = 0,
  COA_ERR_SHAPE = 1,
  COA_ERR_NON_FINITE = 2,
  COA_ERR_DOMAIN = 3,
  COA_ERR_IO = 4,
  COA_ERR_FORMAT = 5,
  COA_ERR_CHECKSUM = 6,
  COA_ERR_CONFIG = 7,
  COA_ERR_INVALID_ARGUMENT = 8,
  COA_ERR_INTERNAL = 9
} coa_status;

typedef struct coa_config coa_config;
typedef struct coa_policy coa_policy;

/* Progress lines from long-running calls. May be NULL. */
typedef void (*coa_log_fn)(const char* line, void* user);

COA_API const char* coa_version(void);
COA_API const char* coa_last_error(void);
COA_API const char* coa_status_name(coa_status s);
COA_API void coa_string_free(char* s);

/* path may be NULL (profile defaults only). overrides are "key=value"
 * strings using the dotted config keys, applied above the file. */
COA_API coa_status coa_config_load(const char* path,
                                   const char* const* overrides,
                                   size_t n_overrides, coa_config** out);
COA_API void coa_config_free(coa_config* c);
/* Resolved configuration as TOML, including provenance. */
COA_API coa_status coa_config_to_toml(const coa_config* c, char** out);
/* Value of one key rendered as TOML, e.g. "model.mtp_heads" -> "5". */
COA_API coa_status coa_config_get(const coa_config* c, const char* key,
                                  char** out);

/* Subcommand bodies. Output paths are directories unless noted. */
COA_API coa_status coa_gen_data(const coa_config* c, const char* out,
                                char** dataset_path);
COA_API coa_status coa_train(const coa_config* c, const char* dataset,
                             const char* out, coa_log_fn log, void* user,
                             char** checkpoint_path);
COA_API coa_status coa_eval(const coa_config* c, const char* checkpoint,
                            const char* out, double* success_rate);
COA_API coa_status coa_ablate(const coa_config* c, const char* out,
                              coa_log_fn log, void* user);
COA_API coa_status coa_analyze(const coa_config* c, const char* out,
                               coa_log_fn log, void* user);
COA_API coa_status coa_attn_dump(const coa_config* c, const char* checkpoint,
                                 const char* out);
/* *all_pass is 1 when every check is within tolerance; report lists them. */
COA_API coa_status coa_grad_check(uint64_t seed, int* all_pass, char** report);

/* Trained policy from a checkpoint (file, file without ".ckpt", or a
 * directory holding final.ckpt). */
COA_API coa_status coa_policy_load(const char* checkpoint, coa_policy** out);
COA_API void coa_policy_free(coa_policy* p);
/* One evaluation episode at the training spread. */
COA_API coa_status coa_policy_rollout(const coa_policy* p, uint64_t seed,
                                      int* success, size_t* length);

#ifdef __cplusplus
}
#endif

#endif /* COA_COA_H_ */

// Copyright 2026 The cellcircuit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to libcellcircuit. Every function returns a cc_status; on
 * failure cc_last_error() describes the problem (thread-local, valid until
 * the next call on the same thread). Strings returned through char** are
 * owned by the caller and released with cc_string_free. */
#ifndef CELLCIRCUIT_H_
#define CELLCIRCUIT_H_

#include <stddef.h>

#if defined(_WIN32)
#define CC_API __declspec(dllexport)
#else
#define CC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cc_status {
  CC_OK = 0,
  CC_ERR_CONFIG = 1,
  CC_ERR_INPUT = 2,
  CC_ERR_PARSE = 3,
  CC_ERR_FORMAT = 4,
  CC_ERR_STATE = 5, /* a prerequisite artifact is missing */
  CC_ERR_NUMERIC = 6,
  CC_ERR_TRAINING = 7,
  CC_ERR_GUARD = 8,
  CC_ERR_IO = 9,
  CC_ERR_INTERNAL = 10,
} cc_status;

typedef struct cc_config cc_config;
typedef struct cc_tracer cc_tracer;
typedef struct cc_server cc_server;

CC_API const char* cc_version(void);
CC_API const char* cc_last_error(void);
CC_API const char* cc_status_name(cc_status status);
CC_API void cc_string_free(char* s);

/* Configuration. Keys are addressed as (section, key); the top-level keys
 * seed and workdir use an empty section. */
CC_API cc_status cc_config_new(cc_config** out);
CC_API cc_status cc_config_load(const char* path, cc_config** out);
CC_API cc_status cc_config_set(cc_config* config, const char* section, const char* key,
                               const char* value);
CC_API cc_status cc_config_get(const cc_config* config, const char* section, const char* key,
                               char** out);
CC_API cc_status cc_config_format(const cc_config* config, char** out);
CC_API void cc_config_free(cc_config* config);

/* Pipeline stages, reading and writing under the configured workdir. */
typedef void (*cc_progress_fn)(long step, double loss, void* user);

CC_API cc_status cc_gen_corpus(const cc_config* config);
CC_API cc_status cc_train_bpe(const cc_config* config);
CC_API cc_status cc_train_lm(const cc_config* config, cc_progress_fn progress, void* user);
CC_API cc_status cc_train_tc(const cc_config* config);
/* Writes the eval tables; *modes_table receives the loss/KL table. */
CC_API cc_status cc_eval(const cc_config* config, char** modes_table);
/* n_ids == 0: every live feature. */
CC_API cc_status cc_features(const cc_config* config, const int* ids, size_t n_ids);
/* Writes <workdir>/traces/<name>.txt and .dot; *txt_path receives the first. */
CC_API cc_status cc_trace(const cc_config* config, const char* prompt, const char* target,
                          const char* name, char** txt_path);

/* Loaded model and transcoders for repeated in-process tracing. */
CC_API cc_status cc_tracer_open(const cc_config* config, cc_tracer** out);
CC_API cc_status cc_tracer_trace(const cc_tracer* tracer, const char* prompt, const char* target,
                                 char** predicted, char** circuit_text, char** dot);
CC_API void cc_tracer_free(cc_tracer* tracer);

/* HTTP trace service on a background thread. port 0 picks a free port. */
CC_API cc_status cc_server_start(const cc_config* config, const char* host, int port,
                                 cc_server** out, int* bound_port);
CC_API cc_status cc_server_wait(cc_server* server); /* blocks until stopped */
CC_API cc_status cc_server_stop(cc_server* server);
CC_API void cc_server_free(cc_server* server);

#ifdef __cplusplus
}
#endif

#endif /* CELLCIRCUIT_H_ */

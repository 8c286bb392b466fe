#ifndef HANDOVER_HANDOVER_H
#define HANDOVER_HANDOVER_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HO_API __declspec(dllexport)
#else
#define HO_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. HO_ERR_CONFIG and HO_ERR_RUNTIME double as CLI exit codes. */
typedef enum ho_status {
  HO_OK = 0,
  HO_ERR_CONFIG = 2,
  HO_ERR_RUNTIME = 3,
  HO_ERR_INVALID_ARGUMENT = 4,
  HO_ERR_NOT_FOUND = 5,
  HO_ERR_IO = 6,
  HO_ERR_CONFLICT = 7
} ho_status;

typedef struct ho_config ho_config;
typedef struct ho_trial ho_trial;
typedef struct ho_server ho_server;

HO_API const char* ho_version(void);

/* Message of the last failed call on this thread; "" after a success.
   Valid until the next call on the same thread. */
HO_API const char* ho_last_error(void);
/* For ho_status HO_ERR_CONFIG: the offending field path, else "". */
HO_API const char* ho_last_error_field(void);

/* Frees any string returned through a char** out-parameter. */
HO_API void ho_free(char* s);

/* HANDOVER_OUT_ROOT if set and non-empty, else "runs". */
HO_API ho_status ho_default_output_root(char** path);

/* ---- trial configuration ---- */

HO_API ho_status ho_config_default(ho_config** out);
HO_API ho_status ho_config_load(const char* path, ho_config** out);
HO_API ho_status ho_config_parse(const char* json, ho_config** out);
HO_API ho_status ho_config_set_seed(ho_config* cfg, uint64_t seed);
HO_API ho_status ho_config_seed(const ho_config* cfg, uint64_t* seed);
HO_API ho_status ho_config_to_json(const ho_config* cfg, char** json);
HO_API void ho_config_free(ho_config* cfg);

/* ---- oracle-mode trials ---- */

/* Runs a full trial into a fresh directory under out_root (NULL: the
   HANDOVER_OUT_ROOT variable, else "runs"). Existing directories are never
   reused; a numeric suffix is added. *trial_dir is set as soon as the
   directory exists, so a failed trial still reports where its partial
   logs are; free it in either case. */
HO_API ho_status ho_run(const ho_config* cfg, const char* out_root, char** trial_dir, char** summary_json);

/* Step-wise driving without writing files. */
HO_API ho_status ho_trial_create(const ho_config* cfg, ho_trial** out);
HO_API int ho_trial_done(const ho_trial* trial);
/* Runs one update; *log_json receives its log line. */
HO_API ho_status ho_trial_step(ho_trial* trial, char** log_json);
HO_API ho_status ho_trial_policy(const ho_trial* trial, char** snapshot);
HO_API void ho_trial_free(ho_trial* trial);

/* Reruns a trial directory and byte-compares its artifacts. */
HO_API ho_status ho_replay(const char* trial_dir, int* identical, char** report_json);

/* Aggregates learning curves over n trial directories into a tab-separated
   table (one row per update, mean and 95% band). warnings_json receives a
   JSON array of strings; either out-parameter may be NULL. */
HO_API ho_status ho_export_curve(const char* const* trial_dirs, size_t n, char** table, char** warnings_json);

/* Per-context statistics of a policy snapshot file over seeded rollouts.
   sample != 0 draws params from the policy, otherwise its clamped mean is
   used. rollouts == 0 yields a header-only table. */
HO_API ho_status ho_eval(const ho_config* cfg, const char* policy_path, const double* contexts,
                         size_t n_contexts, int rollouts, int sample, char** table);

/* ---- feedback service ---- */

/* base: default config for sessions created with an empty body (may be
   NULL). persist_dir: where session snapshots live (NULL: in memory). */
HO_API ho_status ho_server_create(const ho_config* base, const char* persist_dir, ho_server** out);
/* Restarts unfinished sessions found in persist_dir. */
HO_API ho_status ho_server_resume(ho_server* server, size_t* resumed);
/* Handles one request in-process, without a socket. */
HO_API ho_status ho_server_handle(ho_server* server, const char* method, const char* path, const char* body,
                                  int* http_status, char** response);
/* port 0 picks a free port; *bound_port may be NULL. */
HO_API ho_status ho_server_bind(ho_server* server, const char* host, int port, int* bound_port);
/* Blocks until ho_server_stop is called from another thread. */
HO_API ho_status ho_server_listen(ho_server* server);
HO_API void ho_server_stop(ho_server* server);
HO_API void ho_server_free(ho_server* server);

#ifdef __cplusplus
}
#endif

#endif

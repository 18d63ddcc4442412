#ifndef REPLAY_LAB_H
#define REPLAY_LAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RLAB_API __declspec(dllexport)
#else
#define RLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rlab_status {
    RLAB_OK = 0,
    RLAB_ERR_DIMENSION = 1,
    RLAB_ERR_DOMAIN = 2,
    RLAB_ERR_CONTRACT = 3,
    RLAB_ERR_REPLAY_CONTRACT = 4,
    RLAB_ERR_FORMAT = 5,
    RLAB_ERR_CONFIG = 6,
    RLAB_ERR_DATA = 7,
    RLAB_ERR_EXPORT = 8,
    RLAB_ERR_IO = 9,
    RLAB_ERR_INVALID_ARGUMENT = 10,
    /* At least one run of the matrix failed; results are still returned. */
    RLAB_ERR_RUN_FAILED = 11,
    RLAB_ERR_INTERNAL = 12
} rlab_status;

typedef struct rlab_config rlab_config;
typedef struct rlab_results rlab_results;
typedef struct rlab_checkpoint rlab_checkpoint;

typedef void (*rlab_log_fn)(const char* message, void* user_data);

/* Message of the last failure on the calling thread ("" if none). */
RLAB_API const char* rlab_last_error(void);
RLAB_API const char* rlab_status_name(rlab_status status);
RLAB_API void rlab_string_free(char* s);

RLAB_API rlab_status rlab_config_load(const char* path, rlab_config** out);
/* base_dir resolves relative dataset paths; may be NULL. */
RLAB_API rlab_status rlab_config_parse(const char* json_text, const char* base_dir,
                                       rlab_config** out);
RLAB_API rlab_status rlab_config_set_output_dir(rlab_config* config, const char* dir);
/* "" when the config leaves the output directory unset. */
RLAB_API const char* rlab_config_output_dir(const rlab_config* config);
/* Keeps only the named variants, in config order. */
RLAB_API rlab_status rlab_config_select_variants(rlab_config* config, const char* const* names,
                                                 size_t count);
RLAB_API rlab_status rlab_config_set_seeds(rlab_config* config, const uint64_t* seeds,
                                           size_t count);
/* Canonical JSON echo; release with rlab_string_free. */
RLAB_API rlab_status rlab_config_to_json(const rlab_config* config, char** out);
RLAB_API void rlab_config_free(rlab_config* config);

RLAB_API rlab_status rlab_run_matrix(const rlab_config* config, rlab_log_fn log, void* user_data,
                                     rlab_results** out);
RLAB_API const char* rlab_results_output_dir(const rlab_results* results);
RLAB_API size_t rlab_results_run_count(const rlab_results* results);
/* Pointers stay valid until rlab_results_free. error is "" for successful runs. */
RLAB_API rlab_status rlab_results_run_info(const rlab_results* results, size_t index,
                                           const char** variant, uint64_t* seed, int* ok,
                                           const char** error);
RLAB_API void rlab_results_free(rlab_results* results);

RLAB_API rlab_status rlab_export_plot_data(const char* results_dir, size_t* files_written);

RLAB_API rlab_status rlab_checkpoint_open(const char* path, rlab_checkpoint** out);
RLAB_API uint32_t rlab_checkpoint_version(const rlab_checkpoint* checkpoint);
RLAB_API const char* rlab_checkpoint_config_json(const rlab_checkpoint* checkpoint);
RLAB_API size_t rlab_checkpoint_group_count(const rlab_checkpoint* checkpoint);
RLAB_API rlab_status rlab_checkpoint_group_info(const rlab_checkpoint* checkpoint, size_t index,
                                                const char** name, size_t* rank,
                                                const size_t** shape);
RLAB_API void rlab_checkpoint_close(rlab_checkpoint* checkpoint);

#ifdef __cplusplus
}
#endif

#endif

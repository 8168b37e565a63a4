/* C interface to the explora library. Every function returns a status;
 * on failure explora_last_error() describes the problem (thread-local,
 * valid until the next call on the same thread). Strings returned through
 * out-parameters are owned by the caller and released with
 * explora_string_free(). */
#ifndef EXPLORA_H
#define EXPLORA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define EXPLORA_API __declspec(dllexport)
#else
#define EXPLORA_API __attribute__((visibility("default")))
#endif

typedef enum explora_status {
  EXPLORA_OK = 0,
  EXPLORA_INVALID_ARGUMENT = 1,
  EXPLORA_IO = 2,
  EXPLORA_PARSE = 3,
  EXPLORA_NOT_FOUND = 4,
  EXPLORA_DIVERGENCE = 5,
  EXPLORA_STATE = 6,
  EXPLORA_INTERNAL = 7
} explora_status;

typedef struct explora_world explora_world;
typedef struct explora_bank explora_bank;

EXPLORA_API const char* explora_last_error(void);
EXPLORA_API const char* explora_version(void);
EXPLORA_API void explora_string_free(char* s);

/* Configuration as a flat JSON object (see README). `patch_json` may be
 * NULL; its keys override the defaults. The result is canonical JSON. */
EXPLORA_API explora_status explora_config_resolve(const char* patch_json, char** config_json);
EXPLORA_API explora_status explora_config_hash(const char* config_json, char** hex);

/* World generation and files. */
EXPLORA_API explora_status explora_world_generate(const char* config_json, explora_world** out);
EXPLORA_API explora_status explora_world_save(const explora_world* world, const char* dir);
EXPLORA_API explora_status explora_world_load(const char* dir, explora_world** out);
EXPLORA_API void explora_world_free(explora_world* world);
/* Counts of cases, lesions and observed labels per split, as JSON. */
EXPLORA_API explora_status explora_world_summary(const explora_world* world, char** json);
EXPLORA_API int explora_world_equal(const explora_world* a, const explora_world* b);

/* Runs the configured comparison arm for every seed; writes artifacts
 * under out_dir and returns eval.csv contents. */
EXPLORA_API explora_status explora_run(const char* config_json, const explora_world* world, const char* out_dir,
                                       char** eval_csv);

/* Prediction bank snapshots. */
EXPLORA_API explora_status explora_bank_load(const char* path, explora_bank** out);
EXPLORA_API explora_status explora_bank_parse(const char* bytes, size_t len, explora_bank** out);
EXPLORA_API void explora_bank_free(explora_bank* bank);
EXPLORA_API explora_status explora_bank_serialize(const explora_bank* bank, char** bytes);
EXPLORA_API explora_status explora_bank_inspect(const explora_bank* bank, char** text);
EXPLORA_API explora_status explora_bank_select(const explora_bank* bank, size_t epsilon, char** jsonl);
EXPLORA_API explora_status explora_bank_stats(const explora_bank* bank, char** text);
EXPLORA_API explora_status explora_bank_counts(const explora_bank* bank, size_t* mined_total, size_t* mined_latest);

/* Evaluation of a predictions JSONL file against latent truth. `split` is
 * "train", "validation" or "test". Returns a header line and one row. */
EXPLORA_API explora_status explora_eval(const char* predictions_path, const char* latent_path, const char* split,
                                        char** csv);

/* Aggregates eval.csv over run directories after verifying manifests. */
EXPLORA_API explora_status explora_report(const char* const* run_dirs, size_t count, char** csv);
EXPLORA_API explora_status explora_verify(const char* dir);

#ifdef __cplusplus
}
#endif

#endif /* EXPLORA_H */

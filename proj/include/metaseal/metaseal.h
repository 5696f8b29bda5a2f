/* metaseal C API: stable ABI over the watermarking toolkit.
 *
 * Conventions:
 *   - Every function returns 0 on success and a nonzero code on failure;
 *     ms_last_error() returns a thread-local description of the most recent
 *     failure on the calling thread.
 *   - Strings returned through char** out-parameters are heap-allocated;
 *     release them with ms_string_free().
 *   - A toolkit handle is not thread-safe; use one handle per thread.
 */
#ifndef METASEAL_METASEAL_H
#define METASEAL_METASEAL_H

#include <stdint.h>

#if defined(_WIN32)
#define METASEAL_API __declspec(dllexport)
#else
#define METASEAL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct ms_toolkit ms_toolkit;

/* Description of the most recent error on this thread; never NULL. */
METASEAL_API const char* ms_last_error(void);

METASEAL_API const char* ms_version(void);

/* Creates a toolkit from an optional JSON config file (NULL or "" for
 * defaults). METASEAL_* environment variables override file values. */
METASEAL_API int ms_toolkit_create(const char* config_path, ms_toolkit** out);

METASEAL_API void ms_toolkit_destroy(ms_toolkit* toolkit);

/* Applies a single configuration override on top of file/env values, e.g.
 * ("paths.checkpoint", "assets/checkpoints/main_v9.ckpt") or
 * ("train.steps", "3000"). Keys mirror the JSON config structure with dots
 * for nesting. Values are parsed per field type. Overrides are validated
 * when the toolkit is next used. */
METASEAL_API int ms_set_option(ms_toolkit* toolkit, const char* key,
                               const char* value);

/* Generates a P-256 key pair under keys_dir and records the public half in
 * the registry. */
METASEAL_API int ms_keygen(ms_toolkit* toolkit, const char* key_id,
                           const char* owner);

/* Watermarks image_path under key_id and writes a lossless raster to
 * out_path (must end in .png) plus a JSON report at <out_path>.embed.json.
 * report_json, when non-NULL, receives the same report. */
METASEAL_API int ms_embed(ms_toolkit* toolkit, const char* image_path,
                          const char* key_id, const char* out_path,
                          char** report_json);

/* Verifies image_path against key_id. Unverifiable content yields success
 * (0) with a report whose signature_valid is false; only a missing key,
 * checkpoint, or unreadable file fails. */
METASEAL_API int ms_verify(ms_toolkit* toolkit, const char* image_path,
                           const char* key_id, char** report_json);

/* Writes `count` deterministic synthetic covers into directory. */
METASEAL_API int ms_make_corpus(ms_toolkit* toolkit, const char* directory,
                                int count, int resolution, uint64_t seed);

/* Trains per the toolkit's train block on the images under corpus_dir,
 * writing the checkpoint to paths.checkpoint and step metrics (NDJSON) to
 * metrics_path. */
METASEAL_API int ms_train(ms_toolkit* toolkit, const char* corpus_dir,
                          const char* metrics_path);

/* Resolution sweep plus robustness curves; writes bench.json,
 * robustness_curve.csv, and bench_table.txt into out_dir. table_text, when
 * non-NULL, receives the aligned summary table. */
METASEAL_API int ms_bench(ms_toolkit* toolkit, const char* corpus_dir,
                          const char* key_id, const char* out_dir,
                          char** table_text);

/* Runs forgery attacks against the toolkit's verifier. kinds is "all" or a
 * comma-separated subset of: replay, residual_mixup, blend_mixup, pgd,
 * weighted_mixup, substitute_inn. substitute_checkpoint supplies the
 * adversary's weights (required for replay / weighted_mixup /
 * substitute_inn). detector_checkpoint is required when pgd is requested:
 * if the file exists it is loaded; otherwise a strawman detector is trained
 * to >= 95% holdout accuracy and saved there. Writes attack_report.json and
 * first-trial forgeries into out_dir; report_json, when non-NULL, receives
 * the report. */
METASEAL_API int ms_attack(ms_toolkit* toolkit, const char* corpus_dir,
                           const char* key_id, const char* kinds, int trials,
                           const char* substitute_checkpoint,
                           const char* detector_checkpoint,
                           const char* out_dir, char** report_json);

METASEAL_API void ms_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* METASEAL_METASEAL_H */

#ifndef ICXLT_H
#define ICXLT_H

/* C interface to the cross-lingual transfer harness. Every entry point
 * returns a status code; on failure, icxlt_last_error() holds a message for
 * the calling thread. Handles are opaque and must be released with their
 * matching _free function. JSON schemas for the config strings are
 * documented in the project README. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum icxlt_status {
  ICXLT_OK = 0,
  ICXLT_E_INVALID = 1,  /* bad arguments, malformed spec or config */
  ICXLT_E_DATA = 2,     /* dataset, results, or covariate problems */
  ICXLT_E_BACKEND = 3,  /* generation backend failure */
  ICXLT_E_IO = 4,       /* file system trouble */
  ICXLT_E_INTERNAL = 5
} icxlt_status;

const char* icxlt_version(void);

/* Message for the most recent failing call on this thread ("" if none). The
 * pointer stays valid until the next icxlt_* call on the same thread. */
const char* icxlt_last_error(void);

/* ---------- datasets ---------- */

typedef struct icxlt_dataset icxlt_dataset;

icxlt_status icxlt_dataset_open(const char* manifest_path, icxlt_dataset** out);
void icxlt_dataset_free(icxlt_dataset* ds);

size_t icxlt_dataset_label_count(const icxlt_dataset* ds);
const char* icxlt_dataset_label(const icxlt_dataset* ds, size_t index);
size_t icxlt_dataset_language_count(const icxlt_dataset* ds);
const char* icxlt_dataset_language(const icxlt_dataset* ds, size_t index);
const char* icxlt_dataset_source_language(const icxlt_dataset* ds);
/* split is "train", "test", or "dev"; 0 for an unknown language or split. */
size_t icxlt_dataset_split_size(const icxlt_dataset* ds, const char* language, const char* split);

/* ---------- synthetic corpora ---------- */

/* Writes a manifest, per-language JSONL splits, mapping.json, and
 * covariates.csv under out_dir. */
icxlt_status icxlt_synth_generate(const char* config_json, const char* out_dir);

/* ---------- models ---------- */

typedef struct icxlt_model icxlt_model;

icxlt_status icxlt_model_open(const char* model_dir, icxlt_model** out);
void icxlt_model_free(icxlt_model* model);

/* Greedy completion for a rendered prompt. *out is heap-allocated; release
 * it with icxlt_string_free. */
icxlt_status icxlt_model_generate(const icxlt_model* model, const char* prompt,
                                  int max_new_tokens, char** out);
void icxlt_string_free(char* s);

/* ---------- workflows ---------- */

/* Trains on the source language per the experiment spec (first finetune and
 * shot_src seeds) and saves a model bundle into model_out_dir. */
icxlt_status icxlt_train(const char* spec_json, const char* model_out_dir);

/* Gradient adaptation (grad / grad_macro spec modes) of a saved model toward
 * one target language; writes the adapted bundle to model_out_dir. */
icxlt_status icxlt_adapt(const char* spec_json, const char* model_in_dir, const char* language,
                         const char* model_out_dir);

/* Evaluates one language split under the spec's adaptation mode and writes a
 * JSON summary (plus per-instance predictions) to results_out_path.
 * model_dir may be NULL or empty when the spec names a remote backend. */
icxlt_status icxlt_evaluate(const char* spec_json, const char* model_dir, const char* language,
                            const char* results_out_path);

/* Runs the full declared seed cross-product of a spec file; outputs land in
 * the spec's output directory. resume != 0 continues a partial run. */
icxlt_status icxlt_run_experiment(const char* spec_path, int resume);

/* Same, but the spec is passed inline as JSON text. */
icxlt_status icxlt_run_experiment_json(const char* spec_json, int resume);

/* options_json: {"results": [paths], "covariates": path?, "per_run": bool?,
 * "permutation_seed": int?, "n_permutations": int?}. Writes report.json and
 * tables/*.csv under out_dir. */
icxlt_status icxlt_report(const char* options_json, const char* out_dir);

/* Lint without running anything. */
icxlt_status icxlt_validate_dataset(const char* manifest_path);
icxlt_status icxlt_validate_spec(const char* spec_path);

#ifdef __cplusplus
}
#endif

#endif /* ICXLT_H */

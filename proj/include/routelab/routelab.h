/* routelab C API.
 *
 * Every function returns an rl_status. On failure the message is available
 * from rl_last_error() on the calling thread until the next API call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with rl_string_free(). Handles are released with their *_free.
 * JSON outputs have lexicographically sorted keys.
 */
#ifndef ROUTELAB_ROUTELAB_H
#define ROUTELAB_ROUTELAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(ROUTELAB_BUILDING_LIBRARY)
#define RL_API __attribute__((visibility("default")))
#else
#define RL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rl_status {
  RL_OK = 0,
  RL_ERR_INVALID_ARGUMENT = 1,
  RL_ERR_IO = 2,
  RL_ERR_FORMAT = 3,
  RL_ERR_CHECKSUM = 4,
  RL_ERR_TRUNCATED = 5,
  RL_ERR_VERSION = 6,
  RL_ERR_NON_FINITE = 7,
  RL_ERR_EMPTY_SELECTION = 8,
  RL_ERR_DIMENSION_MISMATCH = 9,
  RL_ERR_SINGLE_CLASS = 10,
  RL_ERR_DEGENERATE = 11,
  RL_ERR_LEAKAGE = 12,
  RL_ERR_CONSUMED = 13,
  RL_ERR_MISSING_LAYER = 14,
  RL_ERR_EMPTY_BAND = 15,
  RL_ERR_INTERNAL = 99
} rl_status;

typedef enum rl_outcome {
  RL_OUTCOME_REFUSE = 0,
  RL_OUTCOME_ANSWER_ACCURATE = 1,
  RL_OUTCOME_ANSWER_CONFABULATED = 2
} rl_outcome;

typedef struct rl_set rl_set;             /* immutable activation set */
typedef struct rl_direction rl_direction; /* unit direction with provenance */
typedef struct rl_oracle rl_oracle;       /* behavior oracle */

RL_API const char* rl_version(void);
RL_API const char* rl_last_error(void);
RL_API const char* rl_status_name(rl_status status);
RL_API void rl_string_free(char* s);

/* ---- activation sets ---------------------------------------------------- */

RL_API rl_status rl_set_read(const char* path, rl_set** out);
/* summary_json (nullable) receives per-block checksums. */
RL_API rl_status rl_set_write(const rl_set* set, const char* path, char** summary_json);
/* data holds n_layers blocks of n*d row-major floats in `layers` order;
 * manifest_json is an array of prompt records; metadata_json may be NULL. */
RL_API rl_status rl_set_create(const char* model_id, const char* manifest_json, const int* layers,
                               size_t n_layers, size_t n, size_t d, const float* data,
                               const char* metadata_json, rl_set** out);
RL_API void rl_set_free(rl_set* set);
/* {"model_id", "n", "d", "layers", "metadata", "manifest"?}. */
RL_API rl_status rl_set_info(const rl_set* set, int include_manifest, char** out_json);
/* Borrowed pointer valid while `set` lives. */
RL_API rl_status rl_set_layer(const rl_set* set, int layer, const float** data, size_t* n, size_t* d);
/* Rows matching a prompt filter; errors on an empty result. */
RL_API rl_status rl_set_select(const rl_set* set, const char* filter_json, rl_set** out);
/* Relabel from a JSON-lines manifest sidecar without touching payloads. */
RL_API rl_status rl_set_relabel(const rl_set* set, const char* manifest_jsonl_path, rl_set** out);
RL_API rl_status rl_set_equal(const rl_set* a, const rl_set* b, int* equal);

/* ---- directions ---------------------------------------------------------- */

RL_API rl_status rl_direction_read(const char* path, rl_direction** out);
RL_API rl_status rl_direction_write(const rl_direction* dir, const char* path);
/* info_json: {"layer", "kind", "corpus_id", "n_pos", "n_neg", "model_id"}, all optional. */
RL_API rl_status rl_direction_create(const double* values, size_t d, const char* info_json, rl_direction** out);
RL_API rl_status rl_direction_random(size_t d, uint64_t seed, int layer, rl_direction** out);
RL_API void rl_direction_free(rl_direction* dir);
RL_API rl_status rl_direction_info(const rl_direction* dir, char** out_json);
RL_API rl_status rl_direction_values(const rl_direction* dir, const double** values, size_t* d);
RL_API rl_status rl_cosine(const rl_direction* a, const rl_direction* b, double* out);
RL_API rl_status rl_transfer_check(const rl_direction* foreign_dir, const rl_direction* native_dir,
                                   char** out_json);

/* ---- oracles ------------------------------------------------------------- */

RL_API rl_status rl_oracle_from_truth(const char* truth_path, rl_oracle** out);
/* JSON-lines outcome table. */
RL_API rl_status rl_oracle_from_labels(const char* jsonl_path, rl_oracle** out);
RL_API void rl_oracle_free(rl_oracle* oracle);
/* prompt_json: a prompt record; h has length d. */
RL_API rl_status rl_oracle_label(const rl_oracle* oracle, const char* prompt_json, int layer, double alpha,
                                 const float* h, size_t d, rl_outcome* out);

/* ---- analyses: JSON configuration in, JSON report out ------------------- */

/* {"layers"?, "lambda"?, "scheme": "stratified"|"loco", "k"?, "permutations"?, "seed",
 *  "jobs"?, "positive"?: filter, "band"?: {"low", "high", "model_depth"?}} */
RL_API rl_status rl_probe(const rl_set* set, const char* config_json, char** out_json);

/* {"layer", "positive": filter, "negative": filter, "kind"?, "corpus_id"?} */
RL_API rl_status rl_caa(const rl_set* set, const char* config_json, rl_direction** out);

/* {"layers"?, "a": contrast, "b": contrast, "n_iter"?, "level"?, "seed", "jobs"?, "n_layers"?}
 * where contrast = {"positive": filter, "negative": filter} */
RL_API rl_status rl_cosine_series(const rl_set* set, const char* config_json, char** out_json);

/* {"layer", "reference": contrast, "pairs": contrast, "sizes"?, "n_iter"?, "n_subsamples"?,
 *  "level"?, "seed", "jobs"?} */
RL_API rl_status rl_converge(const rl_set* set, const char* config_json, char** out_json);

/* {"layer", "positive", "negative", "n_iter"?, "level"?, "seed", "jobs"?} */
RL_API rl_status rl_stability(const rl_set* set, const char* config_json, char** out_json);

/* {"layers", "alpha"} */
RL_API rl_status rl_ablate_set(const rl_set* set, const rl_direction* dir, const char* config_json, rl_set** out);

/* {"layers", "alpha", "eval"?: filter, "eval_layer"?} */
RL_API rl_status rl_ablation_run(const rl_set* set, const rl_direction* dir, const rl_oracle* oracle,
                                 const char* config_json, char** out_json);

/* Directions form a bank: one direction for every layer or one per layer.
 * {"layers", "alphas"?, "eval"?: filter, "jobs"?} */
RL_API rl_status rl_alpha_sweep(const rl_set* set, const rl_direction* const* dirs, size_t n_dirs,
                                const rl_oracle* oracle, const char* config_json, char** out_json);

/* {"layers", "alphas"?} ; fails with RL_ERR_LEAKAGE on shared prompt ids. */
RL_API rl_status rl_alpha_select(const rl_set* selection, const rl_set* evaluation, const rl_set* adversarial,
                                 const rl_direction* const* dirs, size_t n_dirs, const rl_oracle* oracle,
                                 const char* config_json, char** out_json);

/* {"layer", "concepts": [{"name", "filter"}], "seed", "lambda_r"?} */
RL_API rl_status rl_residualize(const rl_set* set, const rl_direction* dirty, const char* config_json,
                                rl_direction** clean, char** out_json);

/* Directions are grouped into banks by kind; the political bank is the
 * treatment and every other kind a control.
 * {"layers", "alphas"?, "eval"?: filter, "jobs"?} */
RL_API rl_status rl_controls(const rl_set* set, const rl_direction* const* dirs, size_t n_dirs,
                             const rl_oracle* oracle, const char* config_json, char** out_json);

/* Synthetic spec JSON; truth_path (nullable) receives the planted ground truth. */
RL_API rl_status rl_synth(const char* spec_json, rl_set** out_set, rl_oracle** out_oracle, const char* truth_path);
/* Planted direction (kind: political|safety|sentiment|formality) from a truth file. */
RL_API rl_status rl_truth_direction(const char* truth_path, int layer, const char* kind, rl_direction** out);

/* Behavior statistics over a JSON-lines record file.
 * {"filter"?, "refusal"?: bool, "steering"?: bool, "flags"?: bool,
 *  "discrimination"?: {"ccp": record filter, "parallel": record filter},
 *  "agreement"?: {"reference"?, "coarse_map"?}, "group_by"?: "model_id"} */
RL_API rl_status rl_stats(const char* records_path, const char* config_json, char** out_json);
/* {"a": [labels], "b": [labels], "category"?} */
RL_API rl_status rl_kappa(const char* config_json, double* out);
RL_API rl_status rl_classify_discrimination(double delta_pp, char** out_json);
/* {"train_sep", "heldout_cv", "causal_intervention", "failure_mode"} */
RL_API rl_status rl_grade(const char* flags_json, char** out_json);

/* Plain-text table. kind: probe | band | depth | controls | steering |
 * refusal_steering | agreement | sweep | alpha_select. */
RL_API rl_status rl_report(const char* kind, const char* input_json, char** out_text);

#ifdef __cplusplus
}
#endif

#endif /* ROUTELAB_ROUTELAB_H */

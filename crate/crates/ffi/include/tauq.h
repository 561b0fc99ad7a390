#ifndef TAUQ_H
#define TAUQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Selects the DGP's behavior policy.
 */
#define TAUQ_POLICY_BEHAVIOR 0

/**
 * Selects the DGP's evaluation policy.
 */
#define TAUQ_POLICY_EVALUATION 1

/**
 * Result code of every fallible call.
 */
typedef enum TauqStatus {
  TAUQ_STATUS_OK = 0,
  TAUQ_STATUS_NULL_POINTER = 1,
  TAUQ_STATUS_INVALID_UTF8 = 2,
  TAUQ_STATUS_CONFIG = 3,
  TAUQ_STATUS_INVALID_ARGUMENT = 4,
  TAUQ_STATUS_OVERLAP = 5,
  TAUQ_STATUS_NUMERICAL = 6,
  TAUQ_STATUS_IO = 7,
  TAUQ_STATUS_PANIC = 8,
} TauqStatus;

typedef struct TauqDataset TauqDataset;

typedef struct TauqDgp TauqDgp;

typedef struct TauqModel TauqModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tauq_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *tauq_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void tauq_string_free(char *s);

/**
 * Builds a DGP from a JSON spec.
 *
 * # Safety
 * `json` must be a valid C string and `out` valid for writes.
 */
enum TauqStatus tauq_dgp_from_json(const char *json, struct TauqDgp **out);

/**
 * Builds a DGP of a named kind (e.g. `"reward-filtered"`) with default settings.
 *
 * # Safety
 * `kind` must be a valid C string and `out` valid for writes.
 */
enum TauqStatus tauq_dgp_from_kind(const char *kind, uint64_t seed, struct TauqDgp **out);

/**
 * # Safety
 * `dgp` must be null or a live handle; it is invalid afterwards.
 */
void tauq_dgp_free(struct TauqDgp *dgp);

/**
 * Writes state dimension, horizon and action count; any out pointer may be null.
 *
 * # Safety
 * `dgp` must be a live handle; non-null out pointers must be valid for writes.
 */
enum TauqStatus tauq_dgp_dims(const struct TauqDgp *dgp,
                              size_t *state_dim,
                              size_t *horizon,
                              size_t *n_actions);

/**
 * JSON of the behavior or evaluation policy.
 *
 * # Safety
 * `dgp` must be a live handle and `out` valid for writes.
 */
enum TauqStatus tauq_dgp_policy_json(const struct TauqDgp *dgp, uint32_t which, char **out);

/**
 * Simulates `n` trajectories under the selected policy.
 *
 * # Safety
 * `dgp` must be a live handle and `out` valid for writes.
 */
enum TauqStatus tauq_dgp_simulate(const struct TauqDgp *dgp,
                                  uint32_t which,
                                  size_t n,
                                  uint64_t seed,
                                  struct TauqDataset **out);

/**
 * # Safety
 * `json` must be a valid C string and `out` valid for writes.
 */
enum TauqStatus tauq_dataset_from_json(const char *json, struct TauqDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `out` valid for writes.
 */
enum TauqStatus tauq_dataset_to_json(const struct TauqDataset *ds, char **out);

/**
 * Number of trajectories, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t tauq_dataset_len(const struct TauqDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle; it is invalid afterwards.
 */
void tauq_dataset_free(struct TauqDataset *ds);

/**
 * Cross-fitted contrast estimate of a target policy (JSON). A null config
 * uses the defaults.
 *
 * # Safety
 * `ds` must be a live handle, the strings valid or (for `config_json`) null,
 * and `out` valid for writes.
 */
enum TauqStatus tauq_evaluate(const struct TauqDataset *ds,
                              const char *policy_json,
                              const char *config_json,
                              struct TauqModel **out);

/**
 * Learns a greedy policy with the three-fold procedure. `model_out` and
 * `policy_json_out` may each be null if not wanted.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` null or a valid C string, and
 * non-null out pointers valid for writes.
 */
enum TauqStatus tauq_optimize(const struct TauqDataset *ds,
                              const char *config_json,
                              struct TauqModel **model_out,
                              char **policy_json_out);

/**
 * # Safety
 * `json` must be a valid C string and `out` valid for writes.
 */
enum TauqStatus tauq_model_from_json(const char *json, struct TauqModel **out);

/**
 * # Safety
 * `model` must be a live handle and `out` valid for writes.
 */
enum TauqStatus tauq_model_to_json(const struct TauqModel *model, char **out);

/**
 * `τ̂_t(s, action)` relative to the reference action.
 *
 * # Safety
 * `model` must be a live handle, `state` must point to `len` doubles and
 * `out` must be valid for writes.
 */
enum TauqStatus tauq_model_contrast(const struct TauqModel *model,
                                    size_t t,
                                    const double *state,
                                    size_t len,
                                    size_t action,
                                    double *out);

/**
 * Greedy action at `(t, s)`.
 *
 * # Safety
 * As for [`tauq_model_contrast`].
 */
enum TauqStatus tauq_model_greedy_action(const struct TauqModel *model,
                                         size_t t,
                                         const double *state,
                                         size_t len,
                                         size_t *out);

/**
 * # Safety
 * `model` must be null or a live handle; it is invalid afterwards.
 */
void tauq_model_free(struct TauqModel *model);

/**
 * Runs an experiment config (JSON) and returns the report as JSON.
 *
 * # Safety
 * `config_json` must be a valid C string and `out` valid for writes.
 */
enum TauqStatus tauq_experiment_run(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAUQ_H */

#ifndef BIBLDR_H
#define BIBLDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum BibldrStatus {
  BIBLDR_STATUS_OK = 0,
  BIBLDR_STATUS_NULL_POINTER = 1,
  BIBLDR_STATUS_INVALID_ARGUMENT = 2,
  BIBLDR_STATUS_DIMENSION = 3,
  BIBLDR_STATUS_IO = 4,
  BIBLDR_STATUS_PARSE = 5,
  BIBLDR_STATUS_VALIDATION = 6,
  BIBLDR_STATUS_TRAINING = 7,
  BIBLDR_STATUS_METRIC_UNDEFINED = 8,
  BIBLDR_STATUS_CHECKPOINT = 9,
  BIBLDR_STATUS_PANIC = 99,
} BibldrStatus;

/**
 * Loaded dataset.
 */
typedef struct BibldrDataset BibldrDataset;

/**
 * Trained sequence model with the split it was trained on.
 */
typedef struct BibldrModel BibldrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bibldr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bibldr_version(void);

/**
 * Loads a dataset from text matrices. `drug_ids` and `disease_ids` may be null.
 *
 * # Safety
 * Path arguments must be null or NUL-terminated strings; `out` must be
 * writable.
 */
enum BibldrStatus bibldr_dataset_load(const char *association,
                                      const char *drug_similarity,
                                      const char *disease_similarity,
                                      const char *drug_ids,
                                      const char *disease_ids,
                                      struct BibldrDataset **out_dataset);

/**
 * Builds a dataset from row-major arrays: `association` holds
 * `n_drugs * n_diseases` values, the similarity arrays are square.
 *
 * # Safety
 * Each array must hold the stated number of readable values; `out` must be
 * writable.
 */
enum BibldrStatus bibldr_dataset_from_arrays(size_t n_drugs,
                                             size_t n_diseases,
                                             const double *association,
                                             const double *drug_similarity,
                                             const double *disease_similarity,
                                             struct BibldrDataset **out_dataset);

/**
 * Writes the drug count, disease count and number of positives.
 *
 * # Safety
 * `dataset` must be a live handle; output pointers must be writable.
 */
enum BibldrStatus bibldr_dataset_shape(const struct BibldrDataset *dataset,
                                       size_t *out_drugs,
                                       size_t *out_diseases,
                                       size_t *out_positives);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void bibldr_dataset_free(struct BibldrDataset *dataset);

/**
 * Area under the ROC curve, ties counting one half.
 *
 * # Safety
 * `scores` and `labels` must hold `len` readable values; `out` must be
 * writable.
 */
enum BibldrStatus bibldr_auroc(const double *scores,
                               const uint8_t *labels,
                               size_t len,
                               double *out_value);

/**
 * Average precision with ties broken by ascending index.
 *
 * # Safety
 * As for [`bibldr_auroc`].
 */
enum BibldrStatus bibldr_auprc(const double *scores,
                               const uint8_t *labels,
                               size_t len,
                               double *out_value);

/**
 * Loads a model from a run directory written by the `train` command
 * (`model/` plus `split.txt`), checked against `dataset`.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated string, `dataset` a live handle and
 * `out_model` writable.
 */
enum BibldrStatus bibldr_model_load(const char *run_dir,
                                    const struct BibldrDataset *dataset,
                                    struct BibldrModel **out_model);

/**
 * Ranks candidate drugs for `disease`. Writes up to `k` drug indices and
 * probabilities and the number written. When fewer than `k` candidates
 * exist all are written and `out_truncated` is set to 1.
 *
 * # Safety
 * Handles must be live; `out_drugs` and `out_scores` must have room for `k`
 * values; the count and flag pointers must be writable.
 */
enum BibldrStatus bibldr_model_rank(const struct BibldrModel *model,
                                    const struct BibldrDataset *dataset,
                                    size_t disease,
                                    size_t k,
                                    size_t *out_drugs,
                                    double *out_scores,
                                    size_t *out_written,
                                    uint8_t *out_truncated);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void bibldr_model_free(struct BibldrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIBLDR_H */

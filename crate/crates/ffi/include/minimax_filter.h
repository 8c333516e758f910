#ifndef MINIMAX_FILTER_H
#define MINIMAX_FILTER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmfStatus {
  MMF_STATUS_OK = 0,
  MMF_STATUS_NULL_POINTER = 1,
  MMF_STATUS_INVALID_ARGUMENT = 2,
  MMF_STATUS_SHAPE = 3,
  MMF_STATUS_NUMERIC = 4,
  MMF_STATUS_IO = 5,
  MMF_STATUS_PARSE = 6,
  MMF_STATUS_PANIC = 7,
} MmfStatus;

typedef enum MmfBound {
  MMF_BOUND_CLIP = 0,
  MMF_BOUND_SQUASH = 1,
  MMF_BOUND_NORMALIZE = 2,
} MmfBound;

// Opaque dataset handle.
typedef struct MmfDataset MmfDataset;

// Opaque filter handle.
typedef struct MmfFilter MmfFilter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mmf_last_error(void);

// Linear filter from a row-major `input_dim x output_dim` matrix `U`
// (`g(x) = U^T x`).
//
// # Safety
// `u` must point to `input_dim * output_dim` doubles; `out` must be writable.
enum MmfStatus mmf_filter_linear(const double *u,
                                 size_t input_dim,
                                 size_t output_dim,
                                 struct MmfFilter **out);

// Linear filter with entries uniform in `[-1/sqrt(input_dim), 1/sqrt(input_dim)]`.
//
// # Safety
// `out` must be writable.
enum MmfStatus mmf_filter_random_linear(size_t input_dim,
                                        size_t output_dim,
                                        uint64_t seed,
                                        struct MmfFilter **out);

// Loads a filter record written by `mmf_filter_save` or the `mmf train` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MmfStatus mmf_filter_load(const char *path, struct MmfFilter **out);

// # Safety
// `filter` must be a live handle; `path` a NUL-terminated string.
enum MmfStatus mmf_filter_save(const struct MmfFilter *filter, const char *path);

// Input dimension, or 0 for a NULL handle.
//
// # Safety
// `filter` must be NULL or a live handle.
size_t mmf_filter_input_dim(const struct MmfFilter *filter);

// Output dimension, or 0 for a NULL handle.
//
// # Safety
// `filter` must be NULL or a live handle.
size_t mmf_filter_output_dim(const struct MmfFilter *filter);

// Applies the filter to `rows` row-major samples of width `input_dim`,
// writing `rows * output_dim` values to `out`.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum MmfStatus mmf_filter_apply(const struct MmfFilter *filter,
                                const double *x,
                                size_t rows,
                                size_t cols,
                                double *out,
                                size_t out_len);

// # Safety
// `filter` must be NULL or a handle not yet freed.
void mmf_filter_free(struct MmfFilter *filter);

// Dataset from row-major features and zero-based labels. `target_labels`
// may be NULL when there is no target task.
//
// # Safety
// `features` must hold `rows * cols` doubles; each label array `rows` entries.
enum MmfStatus mmf_dataset_new(const double *features,
                               size_t rows,
                               size_t cols,
                               const size_t *private_labels,
                               const size_t *target_labels,
                               const size_t *subject_ids,
                               struct MmfDataset **out);

// Loads a CSV with columns `f0..f{D-1}, y, z, subject`. `has_target = 0`
// ignores any `z` column.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MmfStatus mmf_dataset_load_csv(const char *path, int32_t has_target, struct MmfDataset **out);

// Number of samples, or 0 for a NULL handle.
//
// # Safety
// `data` must be NULL or a live handle.
size_t mmf_dataset_len(const struct MmfDataset *data);

// Feature dimension, or 0 for a NULL handle.
//
// # Safety
// `data` must be NULL or a live handle.
size_t mmf_dataset_dim(const struct MmfDataset *data);

// # Safety
// `data` must be NULL or a handle not yet freed.
void mmf_dataset_free(struct MmfDataset *data);

// Trains a filter from `init` against a softmax adversary on the private
// labels and a softmax analyst on the target labels (reconstruction when
// the dataset has none). Writes the trained filter to `out` and the final
// objective to `final_phi` when it is not NULL.
//
// # Safety
// Handles must be live; `out` must be writable.
enum MmfStatus mmf_train_minimax(const struct MmfFilter *init,
                                 const struct MmfDataset *data,
                                 double rho,
                                 double reg_lambda,
                                 size_t max_iter,
                                 struct MmfFilter **out,
                                 double *final_phi);

// Bounds one vector of length `d` into the unit ball.
//
// # Safety
// `h` and `out` must each hold `d` doubles.
enum MmfStatus mmf_bound(enum MmfBound kind, double scale, const double *h, size_t d, double *out);

// Preprocessing release `b(g(x)) + xi` for `rows` samples. `epsilon_inverse
// = 0` bounds without adding noise. Noise is drawn from a generator seeded
// with `seed`.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum MmfStatus mmf_release_pre(const struct MmfFilter *filter,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               double epsilon_inverse,
                               enum MmfBound kind,
                               double scale,
                               uint64_t seed,
                               double *out,
                               size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINIMAX_FILTER_H */

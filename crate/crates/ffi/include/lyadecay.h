#ifndef LYADECAY_H
#define LYADECAY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdStatus {
  LD_STATUS_OK = 0,
  LD_STATUS_NULL_POINTER = 1,
  LD_STATUS_INVALID_ARGUMENT = 2,
  LD_STATUS_SHAPE = 3,
  LD_STATUS_DIMENSION_MISMATCH = 4,
  LD_STATUS_NON_FINITE = 5,
  LD_STATUS_NOT_HERMITIAN = 6,
  LD_STATUS_NO_CONVERGENCE = 7,
  LD_STATUS_RANK_PROFILE = 8,
  LD_STATUS_NOT_POSITIVE_STABLE = 9,
  LD_STATUS_SINGULAR = 10,
  LD_STATUS_IO = 11,
  LD_STATUS_JSON = 12,
  LD_STATUS_PANIC = 13,
} LdStatus;

/**
 * Decay envelope for the squared propagator norm: `C e^{-2 mu t}` for `M = 1`,
 * `C (1 + t^{2(M-1)}) e^{-2 mu t}` otherwise.
 */
typedef struct LdEnvelope LdEnvelope;

/**
 * Square complex matrix.
 */
typedef struct LdMatrix LdMatrix;

typedef struct LdEnvelopeParams {
  double c_const;
  double mu;
  size_t m;
} LdEnvelopeParams;

typedef struct LdDominance {
  double max_ratio;
  bool dominated;
} LdDominance;

typedef struct LdFpConstants {
  double c12;
  double c3;
  double c4;
  double global;
} LdFpConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ld_last_error_message(char *buf, size_t len);

/**
 * Builds a `dim x dim` matrix from row-major real and imaginary parts; `im` may be null.
 *
 * # Safety
 * `re` (and `im` if non-null) must point to `dim * dim` doubles; `out` must be writable.
 */
enum LdStatus ld_matrix_new(size_t dim, const double *re, const double *im, struct LdMatrix **out);

/**
 * Parses `{"dim": d, "entries": [[re, im], ...]}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum LdStatus ld_matrix_from_json(const char *json, struct LdMatrix **out);

/**
 * Dimension of the matrix, 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle from `ld_matrix_new`/`ld_matrix_from_json`.
 */
size_t ld_matrix_dim(const struct LdMatrix *m);

/**
 * # Safety
 * `m` must be null or a live handle; it is invalid afterwards.
 */
void ld_matrix_free(struct LdMatrix *m);

/**
 * Jordan analysis with default weights; `rel_tol <= 0` selects the default tolerance.
 *
 * # Safety
 * `m` must be a live matrix handle; `out` must be writable.
 */
enum LdStatus ld_analyze(const struct LdMatrix *m, double rel_tol, struct LdEnvelope **out);

/**
 * Envelope from explicit parameters.
 *
 * # Safety
 * `out` must be writable.
 */
enum LdStatus ld_envelope_new(struct LdEnvelopeParams params, struct LdEnvelope **out);

/**
 * # Safety
 * `e` must be a live envelope handle; `out` must be writable.
 */
enum LdStatus ld_envelope_params(const struct LdEnvelope *e, struct LdEnvelopeParams *out);

/**
 * # Safety
 * `e` must be a live envelope handle; `out` must be writable.
 */
enum LdStatus ld_envelope_eval(const struct LdEnvelope *e, double t, double *out);

/**
 * # Safety
 * `e` must be null or a live handle; it is invalid afterwards.
 */
void ld_envelope_free(struct LdEnvelope *e);

/**
 * `|e^{-C t}|_2^2`.
 *
 * # Safety
 * `m` must be a live matrix handle; `out` must be writable.
 */
enum LdStatus ld_propagator_norm_sq(const struct LdMatrix *m, double t, double *out);

/**
 * Compares the envelope with the exact squared propagator norm on `n_times` evenly
 * spaced times in `[0, t_max]`.
 *
 * # Safety
 * `m` and `e` must be live handles; `out` must be writable.
 */
enum LdStatus ld_check_dominance(const struct LdMatrix *m,
                                 const struct LdEnvelope *e,
                                 double t_max,
                                 size_t n_times,
                                 struct LdDominance *out);

/**
 * Fokker-Planck constants for a drift with infimum `a0` and `sup |a_z| = sup_da`.
 *
 * # Safety
 * `out` must be writable.
 */
enum LdStatus ld_fp_constants(double a0, double sup_da, struct LdFpConstants *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LYADECAY_H */

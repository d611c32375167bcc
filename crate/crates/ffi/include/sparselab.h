#ifndef SPARSELAB_H
#define SPARSELAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_SHAPE_MISMATCH = 2,
  SL_STATUS_INVALID_ARGUMENT = 3,
  SL_STATUS_IO = 4,
  SL_STATUS_PARSE = 5,
  SL_STATUS_NUMERICAL = 6,
  SL_STATUS_BUDGET_EXCEEDED = 7,
  SL_STATUS_MISSING_CHECKPOINT = 8,
  SL_STATUS_PANIC = 9,
} SlStatus;

/**
 * Opaque dictionary handle.
 */
typedef struct SlDictionary SlDictionary;

/**
 * Opaque network handle.
 */
typedef struct SlNetwork SlNetwork;

/**
 * Solver limits. Zero fields take the library defaults.
 */
typedef struct SlSolverOptions {
  size_t max_iterations;
  double tolerance;
  /**
   * IHT step size; zero selects `1 / ‖Φ‖₂²`.
   */
  double step_size;
} SlSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length in bytes, excluding the terminator.
 */
size_t sl_last_error_message(char *buf, size_t len);

/**
 * Gaussian dictionary with unit-norm columns.
 */
enum SlStatus sl_dictionary_gaussian(size_t n, size_t m, uint64_t seed, struct SlDictionary **out);

/**
 * Dictionary with a geometrically decaying spectrum and unit columns.
 */
enum SlStatus sl_dictionary_decaying(size_t n, size_t m, uint64_t seed, struct SlDictionary **out);

/**
 * Wraps a caller-supplied row-major `n × m` matrix. The data is copied.
 */
enum SlStatus sl_dictionary_from_rows(const double *data,
                                      size_t n,
                                      size_t m,
                                      struct SlDictionary **out);

enum SlStatus sl_dictionary_shape(const struct SlDictionary *dict, size_t *n, size_t *m);

/**
 * Copies the dictionary into `out` in row-major order; `len` must be
 * `n * m`.
 */
enum SlStatus sl_dictionary_copy(const struct SlDictionary *dict, double *out, size_t len);

void sl_dictionary_free(struct SlDictionary *dict);

/**
 * Exhaustive restricted isometry constant `δ_k`.
 */
enum SlStatus sl_delta_k(const struct SlDictionary *dict, size_t k, double *delta);

/**
 * Iterative hard thresholding to sparsity `k`. `options` may be null;
 * `iterations` may be null.
 */
enum SlStatus sl_iht(const struct SlDictionary *dict,
                     const double *y,
                     size_t y_len,
                     size_t k,
                     const struct SlSolverOptions *options,
                     double *x_out,
                     size_t x_len,
                     size_t *iterations);

/**
 * ISTA with penalty `lambda`.
 */
enum SlStatus sl_ista(const struct SlDictionary *dict,
                      const double *y,
                      size_t y_len,
                      double lambda,
                      const struct SlSolverOptions *options,
                      double *x_out,
                      size_t x_len,
                      size_t *iterations);

/**
 * Orthogonal matching pursuit with `k` atoms.
 */
enum SlStatus sl_omp(const struct SlDictionary *dict,
                     const double *y,
                     size_t y_len,
                     size_t k,
                     double *x_out,
                     size_t x_len,
                     size_t *iterations);

/**
 * Loads a network checkpoint file. `path` is a NUL-terminated UTF-8
 * string.
 */
enum SlStatus sl_network_load(const char *path, struct SlNetwork **out);

/**
 * Parses a checkpoint held in memory (`len` bytes of UTF-8 JSON).
 */
enum SlStatus sl_network_parse(const uint8_t *text, size_t len, struct SlNetwork **out);

enum SlStatus sl_network_shape(const struct SlNetwork *net, size_t *input_dim, size_t *output_dim);

/**
 * Per-atom support probabilities for one observation, in inference mode.
 */
enum SlStatus sl_network_predict(const struct SlNetwork *net,
                                 const double *y,
                                 size_t y_len,
                                 double *probs_out,
                                 size_t probs_len);

void sl_network_free(struct SlNetwork *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSELAB_H */

#ifndef SIMATTR_H
#define SIMATTR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SimattrStatus {
  SIMATTR_STATUS_OK = 0,
  SIMATTR_STATUS_NULL_POINTER = 1,
  SIMATTR_STATUS_INVALID_ARGUMENT = 2,
  SIMATTR_STATUS_IO = 3,
  SIMATTR_STATUS_FORMAT = 4,
  SIMATTR_STATUS_COMPUTE = 5,
  SIMATTR_STATUS_BUFFER_TOO_SMALL = 6,
  SIMATTR_STATUS_PANIC = 7,
} SimattrStatus;

typedef enum SimattrMethod {
  SIMATTR_METHOD_L2 = 0,
  SIMATTR_METHOD_COSINE = 1,
  SIMATTR_METHOD_ESVM = 2,
  SIMATTR_METHOD_GRAD_COS = 3,
  SIMATTR_METHOD_SIGNED_SPARSE = 4,
  SIMATTR_METHOD_RANDOM = 5,
} SimattrMethod;

typedef enum SimattrFilter {
  SIMATTR_FILTER_SAME_CLASS = 0,
  SIMATTR_FILTER_ALL = 1,
} SimattrFilter;

// Opaque embedding store.
typedef struct SimattrEmbeddings SimattrEmbeddings;

// Returns `C_avg` in `[0, 1]` for the top-`m` prefix, or a negative value
// to abort the search.
typedef double (*SimattrProbeFn)(void *user_data, size_t m);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread; empty after success.
// The pointer stays valid until the next `simattr_*` call on this thread.
const char *simattr_last_error(void);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SimattrStatus simattr_embeddings_load(const char *path, struct SimattrEmbeddings **out);

// # Safety
// `set` must be a live handle and `path` a NUL-terminated string.
enum SimattrStatus simattr_embeddings_save(const struct SimattrEmbeddings *set, const char *path);

// Builds a store from caller memory: `features` is `n × d` row-major.
//
// # Safety
// Each pointer must reference at least the stated number of elements.
enum SimattrStatus simattr_embeddings_new(const float *features,
                                          const uint32_t *labels,
                                          const uint64_t *ids,
                                          size_t n,
                                          size_t d,
                                          size_t num_classes,
                                          struct SimattrEmbeddings **out);

// Gaussian-mixture store; ids equal row indices, rows are class-major.
//
// # Safety
// `out` must be writable.
enum SimattrStatus simattr_embeddings_generate(size_t num_classes,
                                               size_t samples_per_class,
                                               size_t d,
                                               double cluster_spread,
                                               double inter_class_distance,
                                               uint64_t seed,
                                               struct SimattrEmbeddings **out);

// # Safety
// `set` must be null or a handle not yet freed.
void simattr_embeddings_free(struct SimattrEmbeddings *set);

// # Safety
// `set` must be null or a live handle. Null yields 0.
size_t simattr_embeddings_n(const struct SimattrEmbeddings *set);

// # Safety
// `set` must be null or a live handle. Null yields 0.
size_t simattr_embeddings_d(const struct SimattrEmbeddings *set);

// # Safety
// `set` must be null or a live handle. Null yields 0.
size_t simattr_embeddings_num_classes(const struct SimattrEmbeddings *set);

// Fills `out[0..n]` with one attribution score per training sample.
// ESVM uses default parameters; GradCos trains a default softmax model
// seeded with `seed`; Random draws its permutation from `seed`.
//
// # Safety
// `feature` must hold `d` floats and `out` must hold `out_len` doubles.
enum SimattrStatus simattr_scores(const struct SimattrEmbeddings *set,
                                  enum SimattrMethod method,
                                  const float *feature,
                                  size_t d,
                                  uint32_t label,
                                  uint64_t id,
                                  uint64_t seed,
                                  double *out,
                                  size_t out_len);

// Top-`k` training indices by descending score, ties broken by index.
// `*out_len` receives the number written (at most `min(k, out_cap)`).
//
// # Safety
// `scores` must hold `n` doubles where `n` is the store size; `out` must
// hold `out_cap` elements.
enum SimattrStatus simattr_rank(const struct SimattrEmbeddings *set,
                                const double *scores,
                                size_t n,
                                uint32_t target_label,
                                enum SimattrFilter filter,
                                size_t k,
                                size_t *out,
                                size_t out_cap,
                                size_t *out_len);

// Spearman correlation with average ranks. `*degenerate` is set to 1 when
// either input is constant (and `*rho` to 0).
//
// # Safety
// `a` and `b` must hold `len` doubles; the outputs must be writable.
enum SimattrStatus simattr_spearman(const double *a,
                                    const double *b,
                                    size_t len,
                                    double *rho,
                                    int32_t *degenerate);

// Normalized area under the support CDF over `[0, k]`. Negative entries
// of `supports` mean "not found".
//
// # Safety
// `supports` must hold `count` values and `auc` must be writable.
enum SimattrStatus simattr_cdf_auc(const int64_t *supports, size_t count, size_t k, double *auc);

// Budgeted bisection over prefix sizes `0..=k`, asking `probe` for
// `C_avg(M)`. `*support` receives the smallest misclassifying size found
// or -1; `*probes_used` the number of distinct callback invocations.
//
// # Safety
// `probe` must be safe to call with `user_data`; outputs must be writable.
enum SimattrStatus simattr_compute_support(SimattrProbeFn probe,
                                           void *user_data,
                                           size_t k,
                                           size_t budget,
                                           int64_t *support,
                                           size_t *probes_used);

// Library version as a static NUL-terminated string.
const char *simattr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMATTR_H */

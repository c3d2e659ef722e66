#ifndef MOBNET_H
#define MOBNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MOBNET_TELEPORT_UNIFORM 0

#define MOBNET_TELEPORT_IN_STRENGTH 1

#define MOBNET_MODEL_EXPONENTIAL 0

#define MOBNET_MODEL_STRETCHED_EXPONENTIAL 1

#define MOBNET_MODEL_POWER_LAW 2

#define MOBNET_MODEL_TRUNCATED_POWER_LAW 3

typedef enum MobnetStatus {
  MOBNET_STATUS_OK = 0,
  MOBNET_STATUS_NULL_POINTER = 1,
  MOBNET_STATUS_INVALID_ARGUMENT = 2,
  MOBNET_STATUS_INSUFFICIENT_DATA = 3,
  MOBNET_STATUS_NO_CONVERGENCE = 4,
  MOBNET_STATUS_OUT_OF_RANGE = 5,
  MOBNET_STATUS_INTERNAL = 6,
  MOBNET_STATUS_PANIC = 7,
} MobnetStatus;

/**
 * Directed weighted graph under construction.
 */
typedef struct MobnetGraph MobnetGraph;

/**
 * Optimized partition and its codelength.
 */
typedef struct MobnetPartition MobnetPartition;

/**
 * Fit parameters; absent parameters are NaN.
 */
typedef struct MobnetFit {
  double alpha;
  double lambda;
  double beta;
  double x_min;
  double log_likelihood;
  double fraction_of_population;
  uint64_t n_samples;
} MobnetFit;

typedef struct MobnetGravityFit {
  double beta;
  double k;
  double r_squared;
  double p_value;
  uint64_t n_pairs;
  uint64_t excluded_pairs;
} MobnetGravityFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *mobnet_last_error(void);

/**
 * Build identifier, a static NUL-terminated string.
 */
const char *mobnet_version(void);

/**
 * New graph with `n` nodes and no arcs. Returns null when `n == 0`.
 */
struct MobnetGraph *mobnet_graph_new(size_t n);

/**
 * # Safety
 * `graph` must come from [`mobnet_graph_new`] and not be used afterwards.
 */
void mobnet_graph_free(struct MobnetGraph *graph);

/**
 * Adds arc `from -> to`; repeated arcs accumulate.
 *
 * # Safety
 * `graph` must be a live handle.
 */
enum MobnetStatus mobnet_graph_add_edge(struct MobnetGraph *graph,
                                        size_t from,
                                        size_t to,
                                        double weight);

/**
 * Minimizes the map equation over `graph`. On success `*out` owns a new
 * partition handle.
 *
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
enum MobnetStatus mobnet_optimize(const struct MobnetGraph *graph,
                                  double tau,
                                  uint32_t teleport,
                                  bool recorded_teleport,
                                  uint64_t seed,
                                  size_t restarts,
                                  struct MobnetPartition **out);

/**
 * # Safety
 * `partition` must come from [`mobnet_optimize`] and not be used afterwards.
 */
void mobnet_partition_free(struct MobnetPartition *partition);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `partition` must be null or a live handle.
 */
size_t mobnet_partition_len(const struct MobnetPartition *partition);

/**
 * Number of modules, or 0 for a null handle.
 *
 * # Safety
 * `partition` must be null or a live handle.
 */
size_t mobnet_partition_module_count(const struct MobnetPartition *partition);

/**
 * # Safety
 * `partition` must be a live handle and `module` writable.
 */
enum MobnetStatus mobnet_partition_module_of(const struct MobnetPartition *partition,
                                             size_t node,
                                             size_t *module);

/**
 * Codelength in bits; NaN for a null handle. `index_bits` and `module_bits`
 * may be null.
 *
 * # Safety
 * `partition` must be null or a live handle; non-null outputs writable.
 */
double mobnet_partition_codelength(const struct MobnetPartition *partition,
                                   double *index_bits,
                                   double *module_bits);

/**
 * Radius of gyration of `n` planar points given as parallel arrays.
 *
 * # Safety
 * `xs` and `ys` must hold `n` values; `out` writable.
 */
enum MobnetStatus mobnet_radius_of_gyration(const double *xs,
                                            const double *ys,
                                            size_t n,
                                            double *out);

/**
 * Maximum-likelihood fit of `model` to the samples inside `[lo, hi)`;
 * pass infinity for an open upper end.
 *
 * # Safety
 * `samples` must hold `n` values; `out` writable.
 */
enum MobnetStatus mobnet_fit_distribution(const double *samples,
                                          size_t n,
                                          uint32_t model,
                                          double lo,
                                          double hi,
                                          struct MobnetFit *out);

/**
 * Gravity fit `T = k P_i P_j / d^beta` over `n` region pairs given as
 * parallel arrays of distance, both masses and observed flow.
 *
 * # Safety
 * Each array must hold `n` values; `out` writable.
 */
enum MobnetStatus mobnet_gravity_fit(const double *d,
                                     const double *p_i,
                                     const double *p_j,
                                     const double *t_obs,
                                     size_t n,
                                     double beta,
                                     struct MobnetGravityFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOBNET_H */

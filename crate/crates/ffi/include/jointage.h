#ifndef JOINTAGE_H
#define JOINTAGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of a call.
 */
typedef enum JaStatus {
  JA_STATUS_OK = 0,
  /*
   Bad parameters, malformed model or query.
   */
  JA_STATUS_INVALID_ARGUMENT = 2,
  /*
   `s` lies outside the region where the MGF exists.
   */
  JA_STATUS_OUTSIDE_REGION = 3,
  /*
   Unstable system or non-ergodic chain.
   */
  JA_STATUS_UNSTABLE = 4,
  /*
   A numerical guard tripped (diverging MGF estimate).
   */
  JA_STATUS_NUMERICAL_GUARD = 5,
  JA_STATUS_NULL_POINTER = 6,
  /*
   The output buffer is too small; the needed size was written.
   */
  JA_STATUS_BUFFER_TOO_SMALL = 7,
  /*
   Internal error (a panic caught at the boundary).
   */
  JA_STATUS_INTERNAL = 8,
} JaStatus;

/*
 Queueing discipline of the multi-source model.
 */
typedef enum JaDiscipline {
  /*
   LCFS without preemption.
   */
  JA_DISCIPLINE_NP = 0,
  /*
   LCFS with preemption in service.
   */
  JA_DISCIPLINE_PS = 1,
  /*
   LCFS with source-aware preemption in service.
   */
  JA_DISCIPLINE_SA = 2,
} JaDiscipline;

/*
 Kind of a simulated quantity.
 */
typedef enum JaQueryKind {
  /*
   E[x_i]
   */
  JA_QUERY_KIND_MEAN = 0,
  /*
   E[x_i^2]
   */
  JA_QUERY_KIND_SECOND_MOMENT = 1,
  /*
   E[x_i x_j]
   */
  JA_QUERY_KIND_CROSS_MOMENT = 2,
  /*
   Correlation of x_i and x_j.
   */
  JA_QUERY_KIND_CORRELATION = 3,
  /*
   E[exp(sum_k s_k x_{ages_k})]
   */
  JA_QUERY_KIND_MGF = 4,
} JaQueryKind;

/*
 Opaque model handle.
 */
typedef struct JaModel JaModel;

/*
 Simulation settings. `events > 0` selects an event budget, otherwise
 `time` is the simulated-time budget.
 */
typedef struct JaSimConfig {
  uint64_t seed;
  uint64_t events;
  double time;
  /*
   Fraction of the budget discarded as warmup, in [0, 1).
   */
  double warmup_fraction;
  size_t replications;
} JaSimConfig;

/*
 One simulated quantity. `ages`, `s` and `order` are read for `Mgf` only.
 */
typedef struct JaSimQuery {
  enum JaQueryKind kind;
  size_t i;
  size_t j;
  const size_t *ages;
  const double *s;
  size_t order;
} JaSimQuery;

/*
 Estimate with its batch-means standard error.
 */
typedef struct JaEstimate {
  double estimate;
  double std_error;
} JaEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *ja_version(void);

/*
 Message of the last failed call on this thread, empty after a success.
 Valid until the next call on this thread.
 */
const char *ja_last_error(void);

/*
 Parses a model from its JSON description.

 # Safety
 `json` must be a NUL-terminated string and `out` writable.
 */
enum JaStatus ja_model_from_json(const char *json, struct JaModel **out);

/*
 Builds the model of `n` sources with arrival rates `lambdas` and service
 rate `mu` under `discipline`.

 # Safety
 `lambdas` must point to `n` doubles and `out` be writable.
 */
enum JaStatus ja_model_build(enum JaDiscipline discipline,
                             const double *lambdas,
                             size_t n,
                             double mu,
                             struct JaModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void ja_model_free(struct JaModel *model);

/*
 Number of discrete states and age dimension.

 # Safety
 `model` must be a live handle; outputs writable.
 */
enum JaStatus ja_model_dims(const struct JaModel *model, size_t *num_states, size_t *age_dim);

/*
 Writes the model JSON with a trailing NUL into `buf`. `len` receives the
 size needed including the NUL; a null `buf` only queries it.

 # Safety
 `buf` must have room for `cap` bytes when not null.
 */
enum JaStatus ja_model_to_json(const struct JaModel *model, char *buf, size_t cap, size_t *len);

/*
 Stationary distribution of the discrete chain into `out[0..num_states]`.

 # Safety
 `out` must have room for `cap` doubles.
 */
enum JaStatus ja_stationary_distribution(const struct JaModel *model, double *out, size_t cap);

/*
 Stationary joint moment `E[prod_k x_{ages_k}^{m_k}]`.

 # Safety
 `ages` and `m` must point to `order` entries; `out` writable.
 */
enum JaStatus ja_joint_moment(const struct JaModel *model,
                              const size_t *ages,
                              const uint32_t *m,
                              size_t order,
                              double *out);

/*
 Stationary joint MGF `E[exp(sum_k s_k x_{ages_k})]`. `max_eig`, when not
 null, receives the largest real eigenvalue of the systems solved.

 # Safety
 `ages` and `s` must point to `order` entries; `out` writable.
 */
enum JaStatus ja_joint_mgf(const struct JaModel *model,
                           const size_t *ages,
                           const double *s,
                           size_t order,
                           double *out,
                           double *max_eig);

/*
 Stability of the order-`order` moment systems, shifted by `sum(s)` when
 `s` is not null. `stable` receives 1 or 0.

 # Safety
 `s` must point to `order` doubles when not null; outputs writable.
 */
enum JaStatus ja_stability(const struct JaModel *model,
                           size_t order,
                           const double *s,
                           double *max_eig,
                           int *stable);

/*
 Closed-form joint MGF of the sources `k` (1-based) at `s`.

 # Safety
 `lambdas` must point to `n` doubles, `k` and `s` to `len` entries.
 */
enum JaStatus ja_closed_mgf(enum JaDiscipline discipline,
                            const double *lambdas,
                            size_t n,
                            double mu,
                            const size_t *k,
                            const double *s,
                            size_t len,
                            double *out);

/*
 Closed-form mean, second moment of source `i`, cross moment and
 correlation of sources `i` and `j` (1-based). Null outputs are skipped.

 # Safety
 `lambdas` must point to `n` doubles.
 */
enum JaStatus ja_closed_moments(enum JaDiscipline discipline,
                                const double *lambdas,
                                size_t n,
                                double mu,
                                size_t i,
                                size_t j,
                                double *mean,
                                double *second_moment,
                                double *cross_moment,
                                double *correlation);

/*
 Load at which the symmetric two-source NP correlation changes sign.
 */
double ja_rho_threshold_np(void);

/*
 Monte Carlo estimates of `queries` into `out[0..count]`.

 # Safety
 `config` must be readable, `queries` and `out` must hold `count` entries.
 */
enum JaStatus ja_simulate(const struct JaModel *model,
                          const struct JaSimConfig *config,
                          const struct JaSimQuery *queries,
                          size_t count,
                          struct JaEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JOINTAGE_H */

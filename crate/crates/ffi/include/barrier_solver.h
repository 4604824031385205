#ifndef BARRIER_SOLVER_H
#define BARRIER_SOLVER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Parameters violate the model's well-posedness conditions.
   */
  BS_STATUS_VALIDATION = 3,
  /**
   * The recursion did not converge or its HJB check failed.
   */
  BS_STATUS_NO_CONVERGENCE = 4,
  /**
   * Another numerical failure.
   */
  BS_STATUS_NUMERICAL = 5,
  BS_STATUS_BUFFER_TOO_SMALL = 6,
  BS_STATUS_PANIC = 7,
} BsStatus;

typedef enum BsRateState {
  BS_RATE_STATE_LOW = 0,
  BS_RATE_STATE_HIGH = 1,
} BsRateState;

/**
 * A piecewise exponential-polynomial function.
 */
typedef struct BsFunction BsFunction;

/**
 * Validated model parameters.
 */
typedef struct BsParams BsParams;

/**
 * Converged value functions and barrier.
 */
typedef struct BsSolution BsSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *bs_last_error(void);

/**
 * Creates validated parameters. `relaxed` admits `delta1 = delta2`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BsStatus bs_params_new(double mu,
                            double sigma,
                            double delta1,
                            double delta2,
                            double lambda1,
                            double lambda2,
                            bool relaxed,
                            struct BsParams **out);

/**
 * The worked-example parameters.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BsStatus bs_params_example(struct BsParams **out);

/**
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void bs_params_free(struct BsParams *p);

/**
 * `E[exp(-int_0^t r ds)]` started in `state`.
 *
 * # Safety
 * `params` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_expected_discount(const struct BsParams *params,
                                   enum BsRateState state,
                                   double t,
                                   double *out);

/**
 * Value of the minimal-amount strategy in `state`, plus the second
 * derivatives at 0 in both states (either pointer may be null).
 *
 * # Safety
 * `params` must be a live handle; non-null pointers must be valid for writes.
 */
enum BsStatus bs_v0(const struct BsParams *params,
                    enum BsRateState state,
                    struct BsFunction **out,
                    double *d2_low_at_0,
                    double *d2_high_at_0);

/**
 * Explicit optimal low-state barrier; needs `lambda2 = 0`.
 *
 * # Safety
 * `params` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_example_barrier(const struct BsParams *params, double *out);

/**
 * Runs the recursion. `tol <= 0` or `max_iter = 0` selects the default.
 * A converged solution that fails the HJB check returns `NoConvergence`.
 *
 * # Safety
 * `params` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_solve(const struct BsParams *params,
                       double tol,
                       uint32_t max_iter,
                       struct BsSolution **out);

/**
 * # Safety
 * `sol` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_solution_barrier(const struct BsSolution *sol, double *out);

/**
 * # Safety
 * `sol` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_solution_iterations(const struct BsSolution *sol, uint32_t *out);

/**
 * Largest HJB violation over both states on the solver grid.
 *
 * # Safety
 * `sol` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_solution_hjb_violation(const struct BsSolution *sol, double *out);

/**
 * Copies the value function of `state` into a new handle.
 *
 * # Safety
 * `sol` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_solution_function(const struct BsSolution *sol,
                                   enum BsRateState state,
                                   struct BsFunction **out);

/**
 * # Safety
 * `sol` must come from this library and not be used afterwards.
 */
void bs_solution_free(struct BsSolution *sol);

/**
 * Derivative of order `order` (0, 1 or 2) at `x >= 0`.
 *
 * # Safety
 * `f` must be a live handle and `out` valid for writes.
 */
enum BsStatus bs_function_eval(const struct BsFunction *f, double x, uint8_t order, double *out);

/**
 * Writes the JSON form (NUL-terminated) into `buf` of `len` bytes.
 * `needed` receives the required size including the NUL; pass a null
 * `buf` to query it.
 *
 * # Safety
 * `f` must be a live handle, `needed` valid for writes and `buf` (when
 * non-null) valid for `len` bytes.
 */
enum BsStatus bs_function_to_json(const struct BsFunction *f,
                                  char *buf,
                                  uintptr_t len,
                                  uintptr_t *needed);

/**
 * Parses and validates a JSON function.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum BsStatus bs_function_from_json(const char *json, struct BsFunction **out);

/**
 * # Safety
 * `f` must come from this library and not be used afterwards.
 */
void bs_function_free(struct BsFunction *f);

/**
 * Monte Carlo value of a barrier strategy (pathwise estimator, automatic horizon).
 *
 * # Safety
 * `params` must be a live handle; `mean` and `stderr` valid for writes.
 */
enum BsStatus bs_simulate_value(const struct BsParams *params,
                                double barrier_low,
                                double barrier_high,
                                double x0,
                                enum BsRateState state,
                                uint64_t n_paths,
                                uint64_t seed,
                                double dt,
                                double *mean,
                                double *stderr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BARRIER_SOLVER_H */

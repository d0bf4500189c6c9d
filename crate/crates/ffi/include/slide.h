#ifndef SLIDE_H
#define SLIDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlideStatus {
  SLIDE_STATUS_OK = 0,
  SLIDE_STATUS_NULL_POINTER = 1,
  SLIDE_STATUS_INVALID_ARGUMENT = 2,
  SLIDE_STATUS_NOT_FOUND = 3,
  SLIDE_STATUS_IO = 4,
  SLIDE_STATUS_RUNTIME = 5,
  SLIDE_STATUS_PANIC = 6,
} SlideStatus;

// Trained reach-avoid policy.
typedef struct SlidePolicy SlidePolicy;

// Trained trajectory predictor.
typedef struct SlidePredictor SlidePredictor;

// Solved toy reach-avoid game.
typedef struct SlideToyGame SlideToyGame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or valid for `len` writable bytes.
size_t slide_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *slide_version(void);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SlideStatus slide_predictor_load(const char *path, struct SlidePredictor **out);

// # Safety
// `p` must be null or a handle from [`slide_predictor_load`] not yet freed.
void slide_predictor_free(struct SlidePredictor *p);

// Feature length and kind (0 marginal, 1 plan-conditioned).
//
// # Safety
// `p` must be a live handle; the outputs must be writable.
enum SlideStatus slide_predictor_info(const struct SlidePredictor *p,
                                      size_t *input_dim,
                                      uint32_t *kind);

// Human control bound inferred from one prediction: modes with weight at
// least `epsilon`, each cut at `peak_fraction` of its peak density, within
// the default human torque box. Writes two values each to `lo` and `hi`.
//
// # Safety
// `features` must hold `n` values; `lo` and `hi` must hold two each.
enum SlideStatus slide_predictor_bound(const struct SlidePredictor *p,
                                       const double *features,
                                       size_t n,
                                       double epsilon,
                                       double peak_fraction,
                                       double *lo,
                                       double *hi);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SlideStatus slide_policy_load(const char *path, struct SlidePolicy **out);

// # Safety
// `p` must be null or a handle from [`slide_policy_load`] not yet freed.
void slide_policy_free(struct SlidePolicy *p);

// # Safety
// `p` must be a live handle; `out` must be writable.
enum SlideStatus slide_policy_state_dim(const struct SlidePolicy *p, size_t *out);

// Deterministic robot torque for an extended state, within the default
// robot torque box. Writes two values to `torque`.
//
// # Safety
// `state` must hold `n` values; `torque` must hold two.
enum SlideStatus slide_policy_action(const struct SlidePolicy *p,
                                     const double *state,
                                     size_t n,
                                     double *torque);

// Solve the `n × n` toy reach-avoid game by value iteration.
//
// # Safety
// `out` must be writable.
enum SlideStatus slide_toy_solve(size_t n, double gamma, double tol, struct SlideToyGame **out);

// # Safety
// `g` must be null or a handle from [`slide_toy_solve`] not yet freed.
void slide_toy_free(struct SlideToyGame *g);

// Number of cells, sweeps used, and the fraction of cells with `V ≤ 0`.
//
// # Safety
// `g` must be a live handle; the outputs must be writable.
enum SlideStatus slide_toy_summary(const struct SlideToyGame *g,
                                   size_t *cells,
                                   size_t *sweeps,
                                   double *win_fraction);

// Value of cell `index` (position-major).
//
// # Safety
// `g` must be a live handle; `out` must be writable.
enum SlideStatus slide_toy_value(const struct SlideToyGame *g, size_t index, double *out);

// Integrate the default robot arm for `dt` seconds under a constant torque.
// Each pointer holds two values.
//
// # Safety
// All pointers must be valid for two `f64`s.
enum SlideStatus slide_arm_step(const double *q,
                                const double *qdot,
                                const double *torque,
                                double dt,
                                double *q_out,
                                double *qdot_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLIDE_H */

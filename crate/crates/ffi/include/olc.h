#ifndef OLC_H
#define OLC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OlcStatus {
  OLC_STATUS_OK = 0,
  OLC_STATUS_NULL_POINTER = 1,
  OLC_STATUS_INVALID_ARGUMENT = 2,
  OLC_STATUS_CONFIG = 3,
  OLC_STATUS_SOLVER_FAILURE = 4,
  OLC_STATUS_IO = 5,
  OLC_STATUS_PANIC = 6,
} OlcStatus;

// An online learning controller bound to a system.
typedef struct OlcController OlcController;

// A stabilized linear system.
typedef struct OlcSystem OlcSystem;

typedef struct OlcTrsResult {
  double value;
  double multiplier;
  bool on_boundary;
} OlcTrsResult;

typedef struct OlcEpisodeSummary {
  size_t steps;
  size_t collisions;
  size_t obstacles;
  size_t collided_obstacles;
  double collision_fraction;
  double lq_cost;
  double reward;
  size_t pass_left;
  size_t pass_right;
  bool solver_failed;
} OlcEpisodeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating if needed. Returns the full message
// length in bytes excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t olc_last_error(char *buf, size_t len);

// Maximizes `zᵀPz + pᵀz` over `‖z‖ ≤ radius`. `p_mat` is `n×n` row-major,
// `p_vec` and `z_out` have length `n`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum OlcStatus olc_trs_solve(size_t n,
                             const double *p_mat,
                             const double *p_vec,
                             double radius,
                             double tol,
                             double *z_out,
                             struct OlcTrsResult *result);

// Planar double integrator with time step `dt`, stabilized by LQR with
// weights `lqr_q·I` and `lqr_r·I`.
//
// # Safety
// `out` must be a valid pointer.
enum OlcStatus olc_system_double_integrator(double dt,
                                            double lqr_q,
                                            double lqr_r,
                                            struct OlcSystem **out);

// General system `x' = Ax + Bu + Dw` with a caller-supplied gain `K`
// (`u = Kx`). `a` is `dx×dx`, `b` is `dx×du`, `d` is `dx×dx`, `k` is `du×dx`.
//
// # Safety
// Pointers must be valid for the stated shapes.
enum OlcStatus olc_system_new(size_t dx,
                              size_t du,
                              const double *a,
                              const double *b,
                              const double *d,
                              const double *k,
                              struct OlcSystem **out);

// Writes the state and input dimensions.
//
// # Safety
// `sys` must come from an `olc_system_*` constructor.
enum OlcStatus olc_system_dims(const struct OlcSystem *sys, size_t *dx, size_t *du);

// # Safety
// `sys` must be null or come from an `olc_system_*` constructor, and must
// not be used afterwards.
void olc_system_free(struct OlcSystem *sys);

// A gradient-descent controller with memory `h`, policy radius `d_m`,
// learning rate `lr` and horizon `horizon`. Reward weights default to
// `Q = 1e-3·I`, `R = I`. The system handle may be freed afterwards.
//
// # Safety
// `sys` must be a live system handle and `out` a valid pointer.
enum OlcStatus olc_controller_new(const struct OlcSystem *sys,
                                  size_t horizon,
                                  size_t h,
                                  double d_m,
                                  double lr,
                                  uint64_t seed,
                                  struct OlcController **out);

// Input for state `x` (length `dx`), written to `u_out` (length `du`).
//
// # Safety
// `ctrl` must be a live controller; buffers must match its dimensions.
enum OlcStatus olc_controller_act(struct OlcController *ctrl, const double *x, double *u_out);

// Reports the next state and the `k` sensed obstacles (`k×dx` row-major,
// in state coordinates) and updates the policy. Writes the realized
// reward when `reward_out` is non-null.
//
// # Safety
// `ctrl` must be a live controller; buffers must match its dimensions.
enum OlcStatus olc_controller_observe(struct OlcController *ctrl,
                                      const double *x_next,
                                      const double *obstacles,
                                      size_t k,
                                      double *reward_out);

// Current policy gains, `du × H(dw+1)` row-major, into `out` of length
// `len`. Writes the required length to `needed`.
//
// # Safety
// `ctrl` must be a live controller; `out` valid for `len` doubles.
enum OlcStatus olc_controller_gains(const struct OlcController *ctrl,
                                    double *out,
                                    size_t len,
                                    size_t *needed);

// # Safety
// `ctrl` must be null or a controller handle not used afterwards.
void olc_controller_free(struct OlcController *ctrl);

// Runs one benchmark episode described by a TOML configuration (null or
// empty for defaults) with the given seed.
//
// # Safety
// `config_toml` must be null or a NUL-terminated UTF-8 string; `out` valid.
enum OlcStatus olc_run_episode(const char *config_toml,
                               uint64_t seed,
                               struct OlcEpisodeSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OLC_H */

#ifndef DEMIX_H
#define DEMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DemixStatus {
  DEMIX_STATUS_OK = 0,
  DEMIX_STATUS_NULL_POINTER = 1,
  DEMIX_STATUS_INVALID_ARGUMENT = 2,
  DEMIX_STATUS_DIMENSION = 3,
  DEMIX_STATUS_IO = 4,
  DEMIX_STATUS_FORMAT = 5,
  DEMIX_STATUS_DIVERGED = 6,
  DEMIX_STATUS_NUMERICAL = 7,
  DEMIX_STATUS_OUT_OF_RANGE = 8,
  DEMIX_STATUS_PANIC = 9,
} DemixStatus;

// A generated or loaded problem instance.
typedef struct DemixInstance DemixInstance;

// The result of a solver run: final estimate plus recorded trajectory.
typedef struct DemixRun DemixRun;

typedef struct DemixDims {
  size_t s;
  size_t m;
  size_t k;
} DemixDims;

typedef struct DemixSolverConfig {
  double eta;
  size_t max_iters;
  // Relative-error stopping threshold; 0 disables early stopping.
  double stop_tol;
  size_t record_every;
} DemixSolverConfig;

// One trajectory record. Fields that need ground truth are NaN without it.
typedef struct DemixRecord {
  size_t iter;
  double loss;
  double relative_error;
  double dist;
  double inc_a;
  double inc_b;
  double max_alignment_ratio;
} DemixRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Generates an instance with ground truth from a master seed.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum DemixStatus demix_instance_generate(size_t s,
                                         size_t m,
                                         size_t k,
                                         double kappa,
                                         double sigma,
                                         uint64_t seed,
                                         struct DemixInstance **out);

// Loads an instance file written by [`demix_instance_save`] or the CLI.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DemixStatus demix_instance_load(const char *path, struct DemixInstance **out);

// Writes the binary instance file and its JSON sidecar.
//
// # Safety
// `inst` must be a live handle and `path` a NUL-terminated string.
enum DemixStatus demix_instance_save(const struct DemixInstance *inst, const char *path);

// # Safety
// `inst` must be null or a handle not yet freed.
void demix_instance_free(struct DemixInstance *inst);

// # Safety
// `inst` must be a live handle and `out` writable.
enum DemixStatus demix_instance_dims(const struct DemixInstance *inst, struct DemixDims *out);

// Realized SNR in dB; fails with `Numerical` for noiseless instances.
//
// # Safety
// `inst` must be a live handle and `out` writable.
enum DemixStatus demix_instance_snr_db(const struct DemixInstance *inst, double *out);

// Spectral initialization followed by Wirtinger-flow iterations.
//
// When the iteration fails after it started (for example `Diverged`), the
// error status is returned and `*out` still receives the partial run.
//
// # Safety
// `inst` and `cfg` must be valid pointers; `out` must be writable.
enum DemixStatus demix_solve(const struct DemixInstance *inst,
                             const struct DemixSolverConfig *cfg,
                             struct DemixRun **out);

// Number of trajectory records; 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t demix_run_len(const struct DemixRun *run);

// # Safety
// `run` must be a live handle and `out` writable.
enum DemixStatus demix_run_record(const struct DemixRun *run,
                                  size_t index,
                                  struct DemixRecord *out);

// Copies the final `h_i` and `x_i` as interleaved `re, im` pairs; each
// buffer must hold `2 K` doubles.
//
// # Safety
// `run` must be a live handle; `h_out` and `x_out` must each point to `2 K`
// writable doubles.
enum DemixStatus demix_run_estimate(const struct DemixRun *run,
                                    size_t source,
                                    double *h_out,
                                    double *x_out);

// # Safety
// `run` must be null or a handle not yet freed.
void demix_run_free(struct DemixRun *run);

// Message of the last failing call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *demix_last_error(void);

// Library version as a static NUL-terminated string.
const char *demix_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEMIX_H */

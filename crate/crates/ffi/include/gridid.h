#ifndef GRIDID_H
#define GRIDID_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call. Codes 2 to 4 match the exit codes of the
 `gridid` tool.
 */
typedef enum GridStatus {
  GRID_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  GRID_STATUS_NULL_ARGUMENT = 1,
  /*
   Invalid input: configuration, network or argument values.
   */
  GRID_STATUS_CONFIG = 2,
  /*
   The computation failed: divergence, rank deficiency, singular data.
   */
  GRID_STATUS_NUMERICAL = 3,
  /*
   A file could not be read or written.
   */
  GRID_STATUS_IO = 4,
  /*
   An output buffer is smaller than required.
   */
  GRID_STATUS_BUFFER_TOO_SMALL = 5,
  /*
   An unexpected internal failure was caught at the boundary.
   */
  GRID_STATUS_PANIC = 6,
} GridStatus;

/*
 Estimation methods.
 */
typedef enum GridMethod {
  GRID_METHOD_MLE_WITH_PHASE = 0,
  GRID_METHOD_MLE_PHASELESS = 1,
  GRID_METHOD_LASSO_WITH_PHASE = 2,
  GRID_METHOD_LASSO_PHASELESS = 3,
} GridMethod;

/*
 Opaque simulated ground truth: operating points of a network under
 random loads, from which noisy readings are drawn on demand.
 */
typedef struct GridDataset GridDataset;

/*
 Opaque grid description.
 */
typedef struct GridNetwork GridNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *gridid_version(void);

/*
 Copies the last failure message of the calling thread into `buf` (NUL
 terminated, truncated to `len - 1` bytes) and returns the full message
 length in bytes excluding the terminator. An empty message means the
 last call succeeded.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t gridid_last_error(char *buf, size_t len);

/*
 Reads a network description (JSON) from `path`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GridStatus gridid_network_load(const char *path, struct GridNetwork **out);

/*
 The built-in IEEE 33-bus feeder.

 # Safety
 `out` must be writable.
 */
enum GridStatus gridid_network_ieee33(struct GridNetwork **out);

/*
 Releases a network. Null is ignored.

 # Safety
 `net` must come from this library and not be used afterwards.
 */
void gridid_network_free(struct GridNetwork *net);

/*
 Number of buses.

 # Safety
 `net` must be a live handle; `out` must be writable.
 */
enum GridStatus gridid_network_bus_count(const struct GridNetwork *net, size_t *out);

/*
 Writes the per-unit admittance matrix into `g` and `b` (`len` doubles
 each, at least `n * n`).

 # Safety
 `net` must be a live handle; `g` and `b` must hold `len` doubles.
 */
enum GridStatus gridid_network_admittance(const struct GridNetwork *net,
                                          double *g,
                                          double *b,
                                          size_t len);

/*
 Simulates `n_samples` operating points with loads varying by
 `sigma_load_rel` around nominal. Deterministic in `seed`.

 # Safety
 `net` must be a live handle; `out` must be writable.
 */
enum GridStatus gridid_dataset_simulate(const struct GridNetwork *net,
                                        size_t n_samples,
                                        double sigma_load_rel,
                                        uint64_t seed,
                                        struct GridDataset **out);

/*
 Releases a dataset. Null is ignored.

 # Safety
 `ds` must come from this library and not be used afterwards.
 */
void gridid_dataset_free(struct GridDataset *ds);

/*
 Draws meter readings at `noise_level` (fraction, at most 0.1), runs
 `method` and writes the estimated matrix into `g` and `b`. When
 `rrmse_out` is not null it receives the relative error against the true
 matrix. The same dataset and level always give the same readings.

 # Safety
 `ds` must be a live handle; `g` and `b` must hold `len` doubles;
 `rrmse_out` must be null or writable.
 */
enum GridStatus gridid_dataset_estimate(const struct GridDataset *ds,
                                        enum GridMethod method,
                                        double noise_level,
                                        double *g,
                                        double *b,
                                        size_t len,
                                        double *rrmse_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDID_H */

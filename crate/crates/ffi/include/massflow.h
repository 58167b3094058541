#ifndef MASSFLOW_H
#define MASSFLOW_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_ARGUMENT = 2,
  MF_STATUS_INVALID_CONFIG = 3,
  MF_STATUS_GRID_MISMATCH = 4,
  MF_STATUS_NON_FINITE = 5,
  MF_STATUS_IO = 6,
  MF_STATUS_PARSE = 7,
  MF_STATUS_OUT_OF_RANGE = 8,
  MF_STATUS_PANIC = 99,
} MfStatus;

/**
 * Experiment configuration handle.
 */
typedef struct MfConfig MfConfig;

/**
 * Finitely supported probability measure handle.
 */
typedef struct MfMeasure MfMeasure;

/**
 * Simulated path handle.
 */
typedef struct MfPath MfPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *mf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mf_version(void);

/**
 * New configuration with `n` particles on `[0, t_max]` with step `dt` and
 * the library defaults for everything else.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum MfStatus mf_config_new(size_t n, double t_max, double dt, struct MfConfig **out);

/**
 * Read a `key = value` configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MfStatus mf_config_from_file(const char *path, struct MfConfig **out);

/**
 * Set one field by its configuration-file key (`n`, `T`, `dt`, `epsilon`,
 * `beta`, `replicas`, `seed`, `convention`). The result is validated; on
 * failure the configuration is left unchanged.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum MfStatus mf_config_set(struct MfConfig *config, const char *key, const char *value);

/**
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void mf_config_free(struct MfConfig *config);

/**
 * Simulate one path from stream `seed`.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_simulate(const struct MfConfig *config, uint64_t seed, struct MfPath **out);

/**
 * # Safety
 * `path` must be NULL or a handle not yet freed.
 */
void mf_path_free(struct MfPath *path);

/**
 * Number of particles.
 *
 * # Safety
 * `path` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_path_particles(const struct MfPath *path, size_t *out);

/**
 * Number of recorded times (steps + 1).
 *
 * # Safety
 * `path` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_path_times(const struct MfPath *path, size_t *out);

/**
 * Time of record `j`.
 *
 * # Safety
 * `path` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_path_time(const struct MfPath *path, size_t j, double *out);

/**
 * Number of clusters at record `j`.
 *
 * # Safety
 * `path` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_path_cluster_count(const struct MfPath *path, size_t j, size_t *out);

/**
 * Center of mass at record `j`.
 *
 * # Safety
 * `path` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_path_center_of_mass(const struct MfPath *path, size_t j, double *out);

/**
 * Copy the positions of all particles at record `j` into `buf`, which must
 * hold exactly as many entries as there are particles.
 *
 * # Safety
 * `path` must be a live handle and `buf` must point to `len` writable doubles.
 */
enum MfStatus mf_path_positions(const struct MfPath *path, size_t j, double *buf, size_t len);

/**
 * Measure from `len` atoms. Weights must be non-negative and sum to one.
 *
 * # Safety
 * `positions` and `weights` must each point to `len` readable doubles.
 */
enum MfStatus mf_measure_new(const double *positions,
                             const double *weights,
                             size_t len,
                             struct MfMeasure **out);

/**
 * Empirical measure of the particles at record `j`.
 *
 * # Safety
 * `path` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_measure_from_path(const struct MfPath *path, size_t j, struct MfMeasure **out);

/**
 * # Safety
 * `measure` must be NULL or a handle not yet freed.
 */
void mf_measure_free(struct MfMeasure *measure);

/**
 * Quadratic Wasserstein distance between two measures on the line.
 *
 * # Safety
 * `a` and `b` must be live handles and `out` a valid pointer.
 */
enum MfStatus mf_wasserstein2(const struct MfMeasure *a, const struct MfMeasure *b, double *out);

/**
 * Action of the straight line from the initial particle positions of
 * `config` to `target` (one entry per particle) over the configured grid.
 * Lines that cross give infinity.
 *
 * # Safety
 * `config` must be a live handle, `target` must point to `len` readable
 * doubles and `out` must be a valid pointer.
 */
enum MfStatus mf_rate_straight_line(const struct MfConfig *config,
                                    const double *target,
                                    size_t len,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASSFLOW_H */

/* C interface to the urbanphase collective-damage simulator. */

#ifndef URBANPHASE_H
#define URBANPHASE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Nonzero values reuse the CLI exit codes where one
 * exists: invalid input or configuration 2, numeric failure 3, i/o 4.
 */
typedef enum UpStatus {
  UP_STATUS_OK = 0,
  UP_STATUS_NULL_ARGUMENT = 1,
  UP_STATUS_INVALID = 2,
  UP_STATUS_NUMERIC = 3,
  UP_STATUS_IO = 4,
  UP_STATUS_PANIC = 5,
} UpStatus;

/**
 * Completed Monte Carlo sweep; create with [`up_sweep_run`], release
 * with [`up_sweep_free`].
 */
typedef struct UpSweep UpSweep;

/**
 * The two stable branches of the self-consistency relation at one
 * parameter point. Outside the bistable wedge both fields agree.
 */
typedef struct UpBranches {
  double lower;
  double upper;
  bool bistable;
} UpBranches;

/**
 * Susceptibilities at a point on the magnetization curve. `q` is the
 * map slope; both chis diverge as q approaches 1.
 */
typedef struct UpSusceptibility {
  double q;
  double chi_linear;
  double chi_curvature;
} UpSusceptibility;

/**
 * Summary statistics of one grid cell.
 */
typedef struct UpCellStats {
  double mw;
  double sigma;
  double temperature;
  /**
   * Mean and standard deviation of the damage fraction.
   */
  double mean;
  double std;
  /**
   * Most probable damage fraction (histogram mode).
   */
  double mode;
  bool bimodal;
} UpCellStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on the calling thread; the empty
 * string after a success. The pointer stays valid until the next call
 * into this library from the same thread.
 */
const char *up_last_error(void);

/**
 * Disorder width closing the zero-field bistable region, sqrt(2/pi).
 */
double up_critical_disorder(void);

/**
 * Solves the self-consistency relation at (`a1`, `a2`) from both
 * saturated starts and reports the stable branches.
 *
 * # Safety
 * `out` must point to a writable `UpBranches`.
 */
enum UpStatus up_mean_field_solve(double a1, double a2, struct UpBranches *out);

/**
 * Mean-field free energy at magnetization `m`.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum UpStatus up_free_energy(double a1, double a2, double m, double *out);

/**
 * Self-consistency gap m - erf((m + a1) / (sqrt(2) a2)); zero at roots.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum UpStatus up_self_consistency_gap(double a1, double a2, double m, double *out);

/**
 * Susceptibilities at magnetization `m`.
 *
 * # Safety
 * `out` must point to a writable `UpSusceptibility`.
 */
enum UpStatus up_susceptibility(double a1, double a2, double m, struct UpSusceptibility *out);

/**
 * Runs the Monte Carlo grid sweep described by a run-configuration TOML
 * document and returns an owning handle. Results are identical to the
 * CLI `sweep` command with the same document and seed. Relative paths in
 * the document resolve against `base_dir`, or against the process
 * working directory when `base_dir` is null.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated UTF-8 string; `base_dir`, when
 * non-null, likewise. `out` must point to a writable pointer slot. On
 * success the caller owns the handle and must release it with
 * [`up_sweep_free`].
 */
enum UpStatus up_sweep_run(const char *config_toml, const char *base_dir, struct UpSweep **out);

/**
 * Releases a sweep handle. Null is a no-op.
 *
 * # Safety
 * `sweep` must be a handle from [`up_sweep_run`] that has not been freed.
 */
void up_sweep_free(struct UpSweep *sweep);

/**
 * Grid extent of a sweep: temperature, hazard, and diversity axis sizes.
 *
 * # Safety
 * `sweep` must be a live handle; the out pointers must be writable.
 */
enum UpStatus up_sweep_shape(const struct UpSweep *sweep,
                             size_t *n_temperature,
                             size_t *n_mw,
                             size_t *n_sigma);

/**
 * Summary statistics of the cell at (`t_idx`, `mw_idx`, `sigma_idx`).
 *
 * # Safety
 * `sweep` must be a live handle; `out` must point to a writable
 * `UpCellStats`.
 */
enum UpStatus up_sweep_cell(const struct UpSweep *sweep,
                            size_t t_idx,
                            size_t mw_idx,
                            size_t sigma_idx,
                            struct UpCellStats *out);

/**
 * Borrows one cell's per-realization damage fractions (damaged share of
 * buildings). The view lives as long as the handle.
 *
 * # Safety
 * `sweep` must be a live handle; `ptr` and `len` must be writable. The
 * returned pointer must not be read after `up_sweep_free`.
 */
enum UpStatus up_sweep_damage_samples(const struct UpSweep *sweep,
                                      size_t t_idx,
                                      size_t mw_idx,
                                      size_t sigma_idx,
                                      const double **ptr,
                                      size_t *len);

/**
 * Borrows one cell's per-realization cost fractions (repair cost share
 * of replacement value). The view lives as long as the handle.
 *
 * # Safety
 * Same contract as [`up_sweep_damage_samples`].
 */
enum UpStatus up_sweep_cost_samples(const struct UpSweep *sweep,
                                    size_t t_idx,
                                    size_t mw_idx,
                                    size_t sigma_idx,
                                    const double **ptr,
                                    size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URBANPHASE_H */

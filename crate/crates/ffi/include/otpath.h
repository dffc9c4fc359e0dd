/* C interface to the otpath dynamic optimal transport engine. */

#ifndef OTPATH_H
#define OTPATH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of an API call. Non-OK codes mirror the engine's error
// kinds; the human-readable detail is in [`ot_last_error_message`].
typedef enum OtStatus {
  OT_STATUS_OK = 0,
  OT_STATUS_SHAPE_MISMATCH = 1,
  OT_STATUS_INCOMPATIBLE_SIZE = 2,
  OT_STATUS_ZERO_MASS = 3,
  OT_STATUS_NON_POSITIVE_DENSITY = 4,
  OT_STATUS_MASS_MISMATCH = 5,
  OT_STATUS_SOLVER_DIVERGENCE = 6,
  OT_STATUS_DISCONNECTED_DOMAIN = 7,
  OT_STATUS_UNSUPPORTED_FORMAT = 8,
  OT_STATUS_NON_SQUARE = 9,
  OT_STATUS_CORRUPT_HEADER = 10,
  OT_STATUS_IO = 11,
  OT_STATUS_CONFIG = 12,
  // A required pointer argument was NULL.
  OT_STATUS_NULL_ARGUMENT = 13,
  // An internal panic was caught at the boundary.
  OT_STATUS_PANIC = 14,
} OtStatus;

// Boundary condition for the face-gradient stencils.
typedef enum OtBoundaryCondition {
  OT_BOUNDARY_CONDITION_DIRICHLET = 0,
  OT_BOUNDARY_CONDITION_NEUMANN = 1,
  OT_BOUNDARY_CONDITION_PERIODIC = 2,
} OtBoundaryCondition;

// One n×n density slice.
typedef struct OtDensity OtDensity;

// Result of a geodesic optimization.
typedef struct OtGeodesic OtGeodesic;

// Obstacle mask; nonzero cells are blocked.
typedef struct OtMask OtMask;

// Ordered path of T+1 density slices.
typedef struct OtPath OtPath;

// Energy report: total J, per-slice energies.
typedef struct OtReport OtReport;

// Geodesic solver options; fill with [`ot_solver_options_default`] and
// override fields as needed.
typedef struct OtSolverOptions {
  // Time steps T; 0 picks T from the centroid displacement.
  size_t steps;
  // Density floor ε.
  double eps;
  enum OtBoundaryCondition bc;
  // Unbalanced transport; `tau` is read only when set.
  bool unbalanced;
  // Source penalty τ > 0.
  double tau;
  // Mass-loss weight β ≥ 0.
  double beta;
  size_t max_iters;
  // Initial line-search step.
  double step0;
  // Stop when the relative objective decrease falls below this.
  double tol_rel;
  uint64_t seed;
} OtSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ot_version(void);

// Message of the calling thread's most recent failure. Never NULL;
// empty before the first failure. The pointer is invalidated by the
// next failing call on the same thread.
const char *ot_last_error_message(void);

// Build an n×n density from `values` (n² doubles, row-major).
//
// # Safety
// `values` must point to n² readable doubles; `out` must be writable.
enum OtStatus ot_density_create(size_t n, const double *values, struct OtDensity **out);

// New density with every value clamped up to at least `eps`.
//
// # Safety
// `d` must be a live density handle; `out` must be writable.
enum OtStatus ot_density_threshold(const struct OtDensity *d, double eps, struct OtDensity **out);

// Side length, or 0 for a NULL handle.
//
// # Safety
// `d` must be NULL or a live handle from this library.
size_t ot_density_n(const struct OtDensity *d);

// Total mass Σ|v|, or NaN for a NULL handle.
//
// # Safety
// `d` must be NULL or a live handle from this library.
double ot_density_mass(const struct OtDensity *d);

// Copy the values out, row-major; `len` must equal n².
//
// # Safety
// `out` must point to `len` writable doubles.
enum OtStatus ot_density_values(const struct OtDensity *d, double *out, size_t len);

// Release a density handle (NULL is a no-op).
//
// # Safety
// `d` must be NULL or a handle from this library, not yet freed.
void ot_density_free(struct OtDensity *d);

// Build an n×n obstacle mask from n² bytes (row-major, nonzero = blocked).
//
// # Safety
// `cells` must point to n² readable bytes; `out` must be writable.
enum OtStatus ot_mask_create(size_t n, const uint8_t *cells, struct OtMask **out);

// Release a mask handle (NULL is a no-op).
//
// # Safety
// `m` must be NULL or a handle from this library, not yet freed.
void ot_mask_free(struct OtMask *m);

// Build a path from `count` density handles (slices are copied).
//
// # Safety
// `slices` must point to `count` live density handles; `out` writable.
enum OtStatus ot_path_create(const struct OtDensity *const *slices,
                             size_t count,
                             struct OtPath **out);

// Number of time steps T (slices minus one), or 0 for a NULL handle.
//
// # Safety
// `p` must be NULL or a live handle from this library.
size_t ot_path_steps(const struct OtPath *p);

// Side length of the slices, or 0 for a NULL handle.
//
// # Safety
// `p` must be NULL or a live handle from this library.
size_t ot_path_n(const struct OtPath *p);

// Copy slice `t` (0 ≤ t ≤ T) into `out`; `len` must equal n².
//
// # Safety
// `out` must point to `len` writable doubles.
enum OtStatus ot_path_slice_values(const struct OtPath *p, size_t t, double *out, size_t len);

// Release a path handle (NULL is a no-op).
//
// # Safety
// `p` must be NULL or a handle from this library, not yet freed.
void ot_path_free(struct OtPath *p);

// Path energy J of a density path. `obstacle` may be NULL; `tau` is
// read only when `unbalanced` is set.
//
// # Safety
// Handles must be live; `out` must be writable.
enum OtStatus ot_path_energy(const struct OtPath *p,
                             enum OtBoundaryCondition bc,
                             bool unbalanced,
                             double tau,
                             const struct OtMask *obstacle,
                             struct OtReport **out);

// Gradient of J with respect to the interior slices, written as T−1
// consecutive n² blocks (row-major); `len` must equal (T−1)·n².
//
// # Safety
// Handles must be live; `out` must point to `len` writable doubles.
enum OtStatus ot_path_energy_gradient(const struct OtPath *p,
                                      enum OtBoundaryCondition bc,
                                      bool unbalanced,
                                      double tau,
                                      const struct OtMask *obstacle,
                                      double *out,
                                      size_t len);

// Total energy J, or NaN for a NULL handle.
//
// # Safety
// `r` must be NULL or a live handle from this library.
double ot_report_total(const struct OtReport *r);

// Number of time steps T covered by the report, or 0 for NULL.
//
// # Safety
// `r` must be NULL or a live handle from this library.
size_t ot_report_steps(const struct OtReport *r);

// Energy of step `t` (0 ≤ t < T).
//
// # Safety
// `out` must be writable.
enum OtStatus ot_report_slice_energy(const struct OtReport *r, size_t t, double *out);

// Squared-Wasserstein estimate T·J, or NaN for a NULL handle.
//
// # Safety
// `r` must be NULL or a live handle from this library.
double ot_report_w2(const struct OtReport *r);

// Release a report handle (NULL is a no-op).
//
// # Safety
// `r` must be NULL or a handle from this library, not yet freed.
void ot_report_free(struct OtReport *r);

// Fill `out` with the default solver options.
//
// # Safety
// `out` must be writable.
enum OtStatus ot_solver_options_default(struct OtSolverOptions *out);

// Optimize a geodesic path between two densities. `obstacle` may be
// NULL. A run that merely exhausts `max_iters` still succeeds; check
// [`ot_geodesic_converged`].
//
// # Safety
// Handles and `opts` must be live; `out` must be writable.
enum OtStatus ot_geodesic_solve(const struct OtDensity *source,
                                const struct OtDensity *target,
                                const struct OtMask *obstacle,
                                const struct OtSolverOptions *opts,
                                struct OtGeodesic **out);

// Final path energy J, or NaN for a NULL handle.
//
// # Safety
// `g` must be NULL or a live handle from this library.
double ot_geodesic_energy(const struct OtGeodesic *g);

// Accepted optimizer iterations, or 0 for a NULL handle.
//
// # Safety
// `g` must be NULL or a live handle from this library.
size_t ot_geodesic_iterations(const struct OtGeodesic *g);

// Whether the run converged before exhausting its iteration budget.
//
// # Safety
// `g` must be NULL or a live handle from this library.
bool ot_geodesic_converged(const struct OtGeodesic *g);

// Number of time steps T of the optimized path, or 0 for NULL.
//
// # Safety
// `g` must be NULL or a live handle from this library.
size_t ot_geodesic_steps(const struct OtGeodesic *g);

// Side length of the optimized path's slices, or 0 for NULL.
//
// # Safety
// `g` must be NULL or a live handle from this library.
size_t ot_geodesic_n(const struct OtGeodesic *g);

// Copy frame `t` (0 ≤ t ≤ T) of the optimized path; `len` must be n².
//
// # Safety
// `out` must point to `len` writable doubles.
enum OtStatus ot_geodesic_frame(const struct OtGeodesic *g, size_t t, double *out, size_t len);

// Release a geodesic handle (NULL is a no-op).
//
// # Safety
// `g` must be NULL or a handle from this library, not yet freed.
void ot_geodesic_free(struct OtGeodesic *g);

// Structural-similarity index of two densities (default parameters).
//
// # Safety
// Handles must be live; `out` must be writable.
enum OtStatus ot_ssim(const struct OtDensity *a, const struct OtDensity *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTPATH_H */

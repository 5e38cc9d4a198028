/* C interface for the hsvae Power Spherical distribution layer. */

#ifndef HSVAE_H
#define HSVAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible entry point.
typedef enum HsvaeStatus {
  HSVAE_STATUS_OK = 0,
  // A required pointer argument was null.
  HSVAE_STATUS_NULL_POINTER = 1,
  // Sizes or flags are structurally invalid (dimension < 2, length
  // mismatch, zero samples).
  HSVAE_STATUS_INVALID_ARGUMENT = 2,
  // Values are outside the mathematical domain (non-unit direction,
  // negative concentration, antipodal interpolation endpoints).
  HSVAE_STATUS_DOMAIN_ERROR = 3,
  // The output buffer is smaller than the documented requirement.
  HSVAE_STATUS_BUFFER_TOO_SMALL = 4,
  // Unexpected internal failure; never expected in normal use.
  HSVAE_STATUS_INTERNAL_ERROR = 5,
} HsvaeStatus;

// Opaque Power Spherical parameter handle (direction plus
// concentration).
typedef struct HsvaePowerSpherical HsvaePowerSpherical;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a distribution handle from a unit direction of length `dim`
// and concentration `kappa >= 0`. On success writes the handle to
// `out`; free it with `hsvae_power_spherical_free`.
//
// # Safety
// `mu` must point to `dim` readable doubles and `out` to a writable
// pointer slot.
enum HsvaeStatus hsvae_power_spherical_new(const double *mu,
                                           size_t dim,
                                           double kappa,
                                           struct HsvaePowerSpherical **out);

// Frees a handle; a null pointer is a no-op.
//
// # Safety
// `p` must be null or a pointer previously returned by
// `hsvae_power_spherical_new` that has not been freed.
void hsvae_power_spherical_free(struct HsvaePowerSpherical *p);

// Ambient dimension of the handle's sphere.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum HsvaeStatus hsvae_dim(const struct HsvaePowerSpherical *p, size_t *out);

// log C_d(kappa), the log normalizing constant, without a handle.
//
// # Safety
// `out` must point to a writable double.
enum HsvaeStatus hsvae_log_normalizer(size_t dim, double kappa, double *out);

// Log density at a unit point `z` of length `dim` (must match the
// handle's dimension).
//
// # Safety
// `p` must be a live handle, `z` must point to `dim` readable
// doubles, `out` to a writable double.
enum HsvaeStatus hsvae_log_prob(const struct HsvaePowerSpherical *p,
                                const double *z,
                                size_t dim,
                                double *out);

// Differential entropy of the distribution.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum HsvaeStatus hsvae_entropy(const struct HsvaePowerSpherical *p, double *out);

// KL divergence to the uniform distribution on the same sphere.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum HsvaeStatus hsvae_kl_to_uniform(const struct HsvaePowerSpherical *p, double *out);

// Expected alignment E[mu . z] = kappa / (kappa + d - 1).
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum HsvaeStatus hsvae_mean_resultant(const struct HsvaePowerSpherical *p, double *out);

// Draws `n` reparameterized samples into `out` (row-major, `n x dim`
// doubles). `out_len` is the buffer length in doubles and must be at
// least `n * dim`. The stream is fully determined by `seed`.
//
// # Safety
// `p` must be a live handle; `out` must point to `out_len` writable
// doubles.
enum HsvaeStatus hsvae_sample(const struct HsvaePowerSpherical *p,
                              uint64_t seed,
                              size_t n,
                              double *out,
                              size_t out_len);

// Spherical linear interpolation between unit vectors `x` and `y` of
// length `dim` at parameter `t` in [0, 1]; writes `dim` doubles to
// `out`. Fails with a domain error for antipodal endpoints.
//
// # Safety
// `x` and `y` must point to `dim` readable doubles; `out` must point
// to `out_len` writable doubles.
enum HsvaeStatus hsvae_slerp(const double *x,
                             const double *y,
                             size_t dim,
                             double t,
                             double *out,
                             size_t out_len);

// Static, null-terminated description of a status code.
const char *hsvae_status_message(enum HsvaeStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HSVAE_H */

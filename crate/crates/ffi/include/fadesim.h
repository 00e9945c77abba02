/* C interface to the fadesim RSS-variance model. */

#ifndef FADESIM_H
#define FADESIM_H

#include <stdint.h>
#include <stddef.h>

/**
 * The person stands near the collinear region where theta is small.
 */
#define FADESIM_FLAG_NEAR_COLLINEAR_FAR 1

/**
 * The person stands near the opposite collinear limit with the nodes in the
 * scatterer plane.
 */
#define FADESIM_FLAG_NEAR_COLLINEAR_BETWEEN 2

/**
 * The person is within one diameter of a node.
 */
#define FADESIM_FLAG_NEAR_NODE 4

/**
 * Status codes returned by every fallible call.
 */
typedef enum FadesimStatus {
  FADESIM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FADESIM_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument violated a documented precondition.
   */
  FADESIM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Points that must be distinct coincide, or a link/person constraint
   * is violated.
   */
  FADESIM_STATUS_DEGENERATE_GEOMETRY = 3,
  /**
   * A kernel was evaluated within 1e-9 m of a node.
   */
  FADESIM_STATUS_SINGULAR_POSITION = 4,
  /**
   * The adaptive integrator ran out of budget before convergence.
   */
  FADESIM_STATUS_QUADRATURE_FAILURE = 5,
  /**
   * Reflection exponent <= 2 without a truncation cap.
   */
  FADESIM_STATUS_DIVERGENT_TAIL = 6,
  /**
   * Any other internal failure; see `fadesim_last_error_message`.
   */
  FADESIM_STATUS_INTERNAL = 7,
} FadesimStatus;

/**
 * Opaque model configuration: link, person, kernel constants, density, and
 * quadrature settings.
 */
typedef struct FadesimScenario FadesimScenario;

/**
 * ETAP value, its two per-ray contributions, and validity flags.
 */
typedef struct FadesimEtapResult {
  double value;
  double q_t;
  double q_r;
  /**
   * Bitwise OR of the FADESIM_FLAG_* constants; 0 means the evaluation is
   * inside the approximation's trusted region.
   */
  uint32_t flags;
} FadesimEtapResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Artifact version as a static null-terminated string.
 */
const char *fadesim_version(void);

/**
 * Copies the current thread's last error message into `buf` (always
 * null-terminated when `len > 0`) and returns the full message length in
 * bytes, excluding the terminator. Call with `len == 0` to query the size.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be null with
 * `len == 0`.
 */
uintptr_t fadesim_last_error_message(char *buf, uintptr_t len);

/**
 * Creates a scenario: a TX/RX pair at plan positions `(tx_x, tx_y)` and
 * `(rx_x, rx_y)`, both mounted `dz` above the scatterer plane; a person of
 * the given diameter at `(person_x, person_y)` in the plane; kernel
 * constants `c_s`, `c_r`, path loss exponent `n_p`; and scatterer density
 * `eta` per square meter. Default quadrature settings apply until
 * [`fadesim_scenario_set_quadrature`] is called.
 *
 * On success writes the handle to `out`; free it with
 * [`fadesim_scenario_free`].
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum FadesimStatus fadesim_scenario_new(double tx_x,
                                        double tx_y,
                                        double rx_x,
                                        double rx_y,
                                        double dz,
                                        double person_x,
                                        double person_y,
                                        double person_diameter,
                                        double c_s,
                                        double c_r,
                                        double n_p,
                                        double eta,
                                        struct FadesimScenario **out);

/**
 * Releases a scenario handle. Null is a no-op.
 *
 * # Safety
 * `handle` must have come from [`fadesim_scenario_new`] and not have been
 * freed already.
 */
void fadesim_scenario_free(struct FadesimScenario *handle);

/**
 * Moves the scenario's person to a new plan position.
 *
 * # Safety
 * `handle` must be a live scenario handle.
 */
enum FadesimStatus fadesim_scenario_set_person(struct FadesimScenario *handle, double x, double y);

/**
 * Adjusts quadrature controls. `alpha_cap <= 0` removes the truncation cap;
 * a positive value truncates the line integrals at that distance (required
 * for reflection with `n_p <= 2`).
 *
 * # Safety
 * `handle` must be a live scenario handle.
 */
enum FadesimStatus fadesim_scenario_set_quadrature(struct FadesimScenario *handle,
                                                   double rel_tol,
                                                   uintptr_t max_evals,
                                                   double alpha_cap);

/**
 * Scattering ETAP by the closed form.
 *
 * # Safety
 * `handle` must be a live scenario handle and `out` a valid result slot.
 */
enum FadesimStatus fadesim_etap_scatter(const struct FadesimScenario *handle,
                                        struct FadesimEtapResult *out);

/**
 * Scattering ETAP by adaptive quadrature of the shadow line integrals (the
 * numerical cross-check of the closed form).
 *
 * # Safety
 * As for [`fadesim_etap_scatter`].
 */
enum FadesimStatus fadesim_etap_scatter_quadrature(const struct FadesimScenario *handle,
                                                   struct FadesimEtapResult *out);

/**
 * Reflection ETAP by adaptive quadrature. Fails with
 * `FADESIM_STATUS_DIVERGENT_TAIL` when `n_p <= 2` and no cap is set.
 *
 * # Safety
 * As for [`fadesim_etap_scatter`].
 */
enum FadesimStatus fadesim_etap_reflect(const struct FadesimScenario *handle,
                                        struct FadesimEtapResult *out);

/**
 * Single-bounce scattered power at `(x, y, z)`.
 *
 * # Safety
 * `handle` must be a live scenario handle and `out` a valid slot.
 */
enum FadesimStatus fadesim_power_scatter(const struct FadesimScenario *handle,
                                         double x,
                                         double y,
                                         double z,
                                         double *out);

/**
 * Single-bounce reflected power at `(x, y, z)`.
 *
 * # Safety
 * As for [`fadesim_power_scatter`].
 */
enum FadesimStatus fadesim_power_reflect(const struct FadesimScenario *handle,
                                         double x,
                                         double y,
                                         double z,
                                         double *out);

/**
 * Cassini level function `|x_t - x| * |x_r - x|` at `(x, y, z)`.
 *
 * # Safety
 * As for [`fadesim_power_scatter`].
 */
enum FadesimStatus fadesim_cassini_level(const struct FadesimScenario *handle,
                                         double x,
                                         double y,
                                         double z,
                                         double *out);

/**
 * Ricean K-factor in dB for an unaffected sum `v_bar_re + j v_bar_im` and
 * total affected power `sigma2_aff`. Returns -inf in the Rayleigh limit.
 *
 * # Safety
 * `out` must be a valid slot.
 */
enum FadesimStatus fadesim_k_factor_db(double v_bar_re,
                                       double v_bar_im,
                                       double sigma2_aff,
                                       double *out);

/**
 * Variance of `R_dB` (dB^2) for a Ricean envelope with the given K-factor
 * in dB, by quadrature against the Ricean density. Pass -inf for the
 * Rayleigh limit.
 *
 * # Safety
 * `out` must be a valid slot.
 */
enum FadesimStatus fadesim_var_rdb_of_k(double k_db, double *out);

/**
 * Error of approximating the expected log affected power by the log of the
 * expectation, for `m` affected multipath with mean-square component power
 * `sigma2`. Any of the out-pointers may be null to skip that output.
 *
 * # Safety
 * Non-null out-pointers must be valid slots.
 */
enum FadesimStatus fadesim_expected_log_gap(uint32_t m,
                                            double sigma2,
                                            double *exact_db,
                                            double *approx_db,
                                            double *gap_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FADESIM_H */

//! C ABI for the RSS-variance model.
//!
//! Conventions:
//! - Scenarios are opaque handles created by [`fadesim_scenario_new`] and
//!   released by [`fadesim_scenario_free`].
//! - Every fallible call returns a [`FadesimStatus`]; results come back
//!   through out-pointers that are written only on `FADESIM_STATUS_OK`.
//! - The most recent error message is kept per thread and can be copied out
//!   with [`fadesim_last_error_message`].

use std::cell::RefCell;
use std::os::raw::c_char;

use fadesim::error::Error;
use fadesim::etap::{
    etap_reflect, etap_scatter_closed_form, etap_scatter_quadrature, EtapResult, Scenario,
};
use fadesim::fading::{expected_log_gap, k_factor_db, var_rdb_of_k, RiceanSpec, VarMethod};
use fadesim::geometry::{LinkGeometry, Person, Vec2, Vec3};
use fadesim::propagation::{cassini_level, power_reflect, power_scatter, PropagationParams};
use fadesim::quad::QuadratureSettings;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadesimStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument violated a documented precondition.
    InvalidArgument = 2,
    /// Points that must be distinct coincide, or a link/person constraint
    /// is violated.
    DegenerateGeometry = 3,
    /// A kernel was evaluated within 1e-9 m of a node.
    SingularPosition = 4,
    /// The adaptive integrator ran out of budget before convergence.
    QuadratureFailure = 5,
    /// Reflection exponent <= 2 without a truncation cap.
    DivergentTail = 6,
    /// Any other internal failure; see `fadesim_last_error_message`.
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(err: &Error) -> FadesimStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = err.to_string());
    match err {
        Error::InvalidArgument(_) => FadesimStatus::InvalidArgument,
        Error::DegenerateGeometry(_) => FadesimStatus::DegenerateGeometry,
        Error::SingularPosition { .. } => FadesimStatus::SingularPosition,
        Error::QuadratureFailure(_) => FadesimStatus::QuadratureFailure,
        Error::DivergentTail { .. } => FadesimStatus::DivergentTail,
        _ => FadesimStatus::Internal,
    }
}

fn fail_msg(status: FadesimStatus, msg: &str) -> FadesimStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg.to_string());
    status
}

/// Opaque model configuration: link, person, kernel constants, density, and
/// quadrature settings.
pub struct FadesimScenario {
    scenario: Scenario,
    quad: QuadratureSettings,
}

/// ETAP value, its two per-ray contributions, and validity flags.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadesimEtapResult {
    pub value: f64,
    pub q_t: f64,
    pub q_r: f64,
    /// Bitwise OR of the FADESIM_FLAG_* constants; 0 means the evaluation is
    /// inside the approximation's trusted region.
    pub flags: u32,
}

/// The person stands near the collinear region where theta is small.
pub const FADESIM_FLAG_NEAR_COLLINEAR_FAR: u32 = 1;
/// The person stands near the opposite collinear limit with the nodes in the
/// scatterer plane.
pub const FADESIM_FLAG_NEAR_COLLINEAR_BETWEEN: u32 = 2;
/// The person is within one diameter of a node.
pub const FADESIM_FLAG_NEAR_NODE: u32 = 4;

fn pack(result: EtapResult) -> FadesimEtapResult {
    let mut flags = 0;
    if result.flags.near_collinear_far {
        flags |= FADESIM_FLAG_NEAR_COLLINEAR_FAR;
    }
    if result.flags.near_collinear_between {
        flags |= FADESIM_FLAG_NEAR_COLLINEAR_BETWEEN;
    }
    if result.flags.near_node {
        flags |= FADESIM_FLAG_NEAR_NODE;
    }
    FadesimEtapResult {
        value: result.value,
        q_t: result.q_t,
        q_r: result.q_r,
        flags,
    }
}

/// Artifact version as a static null-terminated string.
#[no_mangle]
pub extern "C" fn fadesim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the current thread's last error message into `buf` (always
/// null-terminated when `len > 0`) and returns the full message length in
/// bytes, excluding the terminator. Call with `len == 0` to query the size.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null with
/// `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn fadesim_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: caller guarantees buf has space for len bytes.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Creates a scenario: a TX/RX pair at plan positions `(tx_x, tx_y)` and
/// `(rx_x, rx_y)`, both mounted `dz` above the scatterer plane; a person of
/// the given diameter at `(person_x, person_y)` in the plane; kernel
/// constants `c_s`, `c_r`, path loss exponent `n_p`; and scatterer density
/// `eta` per square meter. Default quadrature settings apply until
/// [`fadesim_scenario_set_quadrature`] is called.
///
/// On success writes the handle to `out`; free it with
/// [`fadesim_scenario_free`].
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fadesim_scenario_new(
    tx_x: f64,
    tx_y: f64,
    rx_x: f64,
    rx_y: f64,
    dz: f64,
    person_x: f64,
    person_y: f64,
    person_diameter: f64,
    c_s: f64,
    c_r: f64,
    n_p: f64,
    eta: f64,
    out: *mut *mut FadesimScenario,
) -> FadesimStatus {
    if out.is_null() {
        return fail_msg(FadesimStatus::NullArgument, "out pointer is null");
    }
    let build = || -> fadesim::Result<Scenario> {
        let link = LinkGeometry::with_height(Vec2::new(tx_x, tx_y), Vec2::new(rx_x, rx_y), dz)?;
        let person = Person::new(person_x, person_y, person_diameter)?;
        let params = PropagationParams::new(c_s, c_r, n_p)?;
        Scenario::new(link, person, params, eta)
    };
    match build() {
        Ok(scenario) => {
            let handle = Box::new(FadesimScenario {
                scenario,
                quad: QuadratureSettings::default(),
            });
            // SAFETY: out checked non-null above.
            unsafe { *out = Box::into_raw(handle) };
            FadesimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Releases a scenario handle. Null is a no-op.
///
/// # Safety
/// `handle` must have come from [`fadesim_scenario_new`] and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn fadesim_scenario_free(handle: *mut FadesimScenario) {
    if !handle.is_null() {
        // SAFETY: caller guarantees the pointer's provenance.
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Moves the scenario's person to a new plan position.
///
/// # Safety
/// `handle` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fadesim_scenario_set_person(
    handle: *mut FadesimScenario,
    x: f64,
    y: f64,
) -> FadesimStatus {
    let Some(h) = (unsafe { handle.as_mut() }) else {
        return fail_msg(FadesimStatus::NullArgument, "scenario handle is null");
    };
    match h.scenario.with_person_at(x, y) {
        Ok(s) => {
            h.scenario = s;
            FadesimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Adjusts quadrature controls. `alpha_cap <= 0` removes the truncation cap;
/// a positive value truncates the line integrals at that distance (required
/// for reflection with `n_p <= 2`).
///
/// # Safety
/// `handle` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn fadesim_scenario_set_quadrature(
    handle: *mut FadesimScenario,
    rel_tol: f64,
    max_evals: usize,
    alpha_cap: f64,
) -> FadesimStatus {
    let Some(h) = (unsafe { handle.as_mut() }) else {
        return fail_msg(FadesimStatus::NullArgument, "scenario handle is null");
    };
    if !(rel_tol.is_finite() && rel_tol > 0.0) || max_evals == 0 {
        return fail_msg(
            FadesimStatus::InvalidArgument,
            "rel_tol must be positive and max_evals nonzero",
        );
    }
    h.quad = QuadratureSettings {
        rel_tol,
        max_evals,
        alpha_cap: (alpha_cap > 0.0).then_some(alpha_cap),
    };
    FadesimStatus::Ok
}

unsafe fn etap_call(
    handle: *const FadesimScenario,
    out: *mut FadesimEtapResult,
    eval: impl Fn(&FadesimScenario) -> fadesim::Result<EtapResult>,
) -> FadesimStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail_msg(FadesimStatus::NullArgument, "scenario handle is null");
    };
    if out.is_null() {
        return fail_msg(FadesimStatus::NullArgument, "out pointer is null");
    }
    match eval(h) {
        Ok(r) => {
            // SAFETY: out checked non-null above.
            unsafe { *out = pack(r) };
            FadesimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Scattering ETAP by the closed form.
///
/// # Safety
/// `handle` must be a live scenario handle and `out` a valid result slot.
#[no_mangle]
pub unsafe extern "C" fn fadesim_etap_scatter(
    handle: *const FadesimScenario,
    out: *mut FadesimEtapResult,
) -> FadesimStatus {
    unsafe { etap_call(handle, out, |h| etap_scatter_closed_form(&h.scenario)) }
}

/// Scattering ETAP by adaptive quadrature of the shadow line integrals (the
/// numerical cross-check of the closed form).
///
/// # Safety
/// As for [`fadesim_etap_scatter`].
#[no_mangle]
pub unsafe extern "C" fn fadesim_etap_scatter_quadrature(
    handle: *const FadesimScenario,
    out: *mut FadesimEtapResult,
) -> FadesimStatus {
    unsafe {
        etap_call(handle, out, |h| {
            etap_scatter_quadrature(&h.scenario, &h.quad)
        })
    }
}

/// Reflection ETAP by adaptive quadrature. Fails with
/// `FADESIM_STATUS_DIVERGENT_TAIL` when `n_p <= 2` and no cap is set.
///
/// # Safety
/// As for [`fadesim_etap_scatter`].
#[no_mangle]
pub unsafe extern "C" fn fadesim_etap_reflect(
    handle: *const FadesimScenario,
    out: *mut FadesimEtapResult,
) -> FadesimStatus {
    unsafe { etap_call(handle, out, |h| etap_reflect(&h.scenario, &h.quad)) }
}

unsafe fn scalar_call(
    handle: *const FadesimScenario,
    out: *mut f64,
    eval: impl Fn(&FadesimScenario) -> fadesim::Result<f64>,
) -> FadesimStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail_msg(FadesimStatus::NullArgument, "scenario handle is null");
    };
    if out.is_null() {
        return fail_msg(FadesimStatus::NullArgument, "out pointer is null");
    }
    match eval(h) {
        Ok(v) => {
            // SAFETY: out checked non-null above.
            unsafe { *out = v };
            FadesimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Single-bounce scattered power at `(x, y, z)`.
///
/// # Safety
/// `handle` must be a live scenario handle and `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn fadesim_power_scatter(
    handle: *const FadesimScenario,
    x: f64,
    y: f64,
    z: f64,
    out: *mut f64,
) -> FadesimStatus {
    unsafe {
        scalar_call(handle, out, |h| {
            power_scatter(&h.scenario.link, Vec3::new(x, y, z), &h.scenario.params)
        })
    }
}

/// Single-bounce reflected power at `(x, y, z)`.
///
/// # Safety
/// As for [`fadesim_power_scatter`].
#[no_mangle]
pub unsafe extern "C" fn fadesim_power_reflect(
    handle: *const FadesimScenario,
    x: f64,
    y: f64,
    z: f64,
    out: *mut f64,
) -> FadesimStatus {
    unsafe {
        scalar_call(handle, out, |h| {
            power_reflect(&h.scenario.link, Vec3::new(x, y, z), &h.scenario.params)
        })
    }
}

/// Cassini level function `|x_t - x| * |x_r - x|` at `(x, y, z)`.
///
/// # Safety
/// As for [`fadesim_power_scatter`].
#[no_mangle]
pub unsafe extern "C" fn fadesim_cassini_level(
    handle: *const FadesimScenario,
    x: f64,
    y: f64,
    z: f64,
    out: *mut f64,
) -> FadesimStatus {
    unsafe {
        scalar_call(handle, out, |h| {
            Ok(cassini_level(&h.scenario.link, Vec3::new(x, y, z)))
        })
    }
}

/// Ricean K-factor in dB for an unaffected sum `v_bar_re + j v_bar_im` and
/// total affected power `sigma2_aff`. Returns -inf in the Rayleigh limit.
///
/// # Safety
/// `out` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn fadesim_k_factor_db(
    v_bar_re: f64,
    v_bar_im: f64,
    sigma2_aff: f64,
    out: *mut f64,
) -> FadesimStatus {
    if out.is_null() {
        return fail_msg(FadesimStatus::NullArgument, "out pointer is null");
    }
    match RiceanSpec::new(num_complex::Complex64::new(v_bar_re, v_bar_im), sigma2_aff) {
        Ok(spec) => {
            // SAFETY: out checked non-null above.
            unsafe { *out = k_factor_db(&spec) };
            FadesimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Variance of `R_dB` (dB^2) for a Ricean envelope with the given K-factor
/// in dB, by quadrature against the Ricean density. Pass -inf for the
/// Rayleigh limit.
///
/// # Safety
/// `out` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn fadesim_var_rdb_of_k(k_db: f64, out: *mut f64) -> FadesimStatus {
    if out.is_null() {
        return fail_msg(FadesimStatus::NullArgument, "out pointer is null");
    }
    if k_db.is_nan() || k_db == f64::INFINITY {
        return fail_msg(
            FadesimStatus::InvalidArgument,
            "k_db must be finite or -inf",
        );
    }
    // SAFETY: out checked non-null above.
    unsafe { *out = var_rdb_of_k(k_db, VarMethod::Quadrature) };
    FadesimStatus::Ok
}

/// Error of approximating the expected log affected power by the log of the
/// expectation, for `m` affected multipath with mean-square component power
/// `sigma2`. Any of the out-pointers may be null to skip that output.
///
/// # Safety
/// Non-null out-pointers must be valid slots.
#[no_mangle]
pub unsafe extern "C" fn fadesim_expected_log_gap(
    m: u32,
    sigma2: f64,
    exact_db: *mut f64,
    approx_db: *mut f64,
    gap_db: *mut f64,
) -> FadesimStatus {
    match expected_log_gap(m, sigma2) {
        Ok(gap) => {
            // SAFETY: each pointer is checked before the write.
            unsafe {
                if !exact_db.is_null() {
                    *exact_db = gap.exact_db;
                }
                if !approx_db.is_null() {
                    *approx_db = gap.approx_db;
                }
                if !gap_db.is_null() {
                    *gap_db = gap.gap_db;
                }
            }
            FadesimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    unsafe fn scenario(person_x: f64, person_y: f64) -> *mut FadesimScenario {
        let mut handle: *mut FadesimScenario = std::ptr::null_mut();
        let status = unsafe {
            fadesim_scenario_new(
                -1.0,
                0.0,
                1.0,
                0.0,
                0.0,
                person_x,
                person_y,
                1.0,
                1.0,
                1.0,
                3.0,
                1.0,
                &mut handle,
            )
        };
        assert_eq!(status, FadesimStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn scatter_closed_form_through_the_abi() {
        unsafe {
            let h = scenario(0.0, 1.0);
            let mut result = FadesimEtapResult {
                value: 0.0,
                q_t: 0.0,
                q_r: 0.0,
                flags: 99,
            };
            assert_eq!(fadesim_etap_scatter(h, &mut result), FadesimStatus::Ok);
            assert!((result.value - PI * SQRT_2 / 8.0).abs() < 1e-12);
            assert_eq!(result.flags, 0);
            // Quadrature route agrees.
            let mut numeric = result;
            assert_eq!(
                fadesim_etap_scatter_quadrature(h, &mut numeric),
                FadesimStatus::Ok
            );
            assert!((numeric.value - result.value).abs() < 1e-6 * result.value);
            fadesim_scenario_free(h);
        }
    }

    #[test]
    fn reflect_requires_cap_below_np2() {
        unsafe {
            let mut handle: *mut FadesimScenario = std::ptr::null_mut();
            assert_eq!(
                fadesim_scenario_new(
                    -1.0,
                    0.0,
                    1.0,
                    0.0,
                    0.0,
                    0.0,
                    1.0,
                    1.0,
                    1.0,
                    1.0,
                    2.0,
                    1.0,
                    &mut handle,
                ),
                FadesimStatus::Ok
            );
            let mut result = FadesimEtapResult {
                value: 0.0,
                q_t: 0.0,
                q_r: 0.0,
                flags: 0,
            };
            assert_eq!(
                fadesim_etap_reflect(handle, &mut result),
                FadesimStatus::DivergentTail
            );
            let mut buf = [0i8; 128];
            let n = fadesim_last_error_message(buf.as_mut_ptr(), buf.len());
            assert!(n > 0);
            let msg = std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy();
            assert!(msg.contains("divergent"), "message: {msg}");
            // With a cap it integrates.
            assert_eq!(
                fadesim_scenario_set_quadrature(handle, 1e-8, 100_000, 1000.0),
                FadesimStatus::Ok
            );
            assert_eq!(fadesim_etap_reflect(handle, &mut result), FadesimStatus::Ok);
            assert!(result.value > 0.0);
            fadesim_scenario_free(handle);
        }
    }

    #[test]
    fn null_and_invalid_arguments_are_reported() {
        unsafe {
            let mut result = FadesimEtapResult {
                value: 0.0,
                q_t: 0.0,
                q_r: 0.0,
                flags: 0,
            };
            assert_eq!(
                fadesim_etap_scatter(std::ptr::null(), &mut result),
                FadesimStatus::NullArgument
            );
            let h = scenario(0.0, 1.0);
            assert_eq!(
                fadesim_etap_scatter(h, std::ptr::null_mut()),
                FadesimStatus::NullArgument
            );
            // Coincident nodes.
            let mut bad: *mut FadesimScenario = std::ptr::null_mut();
            assert_eq!(
                fadesim_scenario_new(
                    1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 3.0, 1.0, &mut bad,
                ),
                FadesimStatus::DegenerateGeometry
            );
            // Person on a node: accepted by the setter, rejected at
            // evaluation time.
            assert_eq!(fadesim_scenario_set_person(h, -1.0, 0.0), FadesimStatus::Ok);
            assert_eq!(
                fadesim_etap_scatter(h, &mut result),
                FadesimStatus::DegenerateGeometry
            );
            fadesim_scenario_free(h);
            fadesim_scenario_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn flags_travel_across_the_abi() {
        unsafe {
            // Person within one diameter of the TX node.
            let h = scenario(-1.05, 0.2);
            let mut result = FadesimEtapResult {
                value: 0.0,
                q_t: 0.0,
                q_r: 0.0,
                flags: 0,
            };
            assert_eq!(fadesim_etap_scatter(h, &mut result), FadesimStatus::Ok);
            assert_ne!(result.flags & FADESIM_FLAG_NEAR_NODE, 0);
            fadesim_scenario_free(h);
        }
    }

    #[test]
    fn kernels_and_statistics_through_the_abi() {
        unsafe {
            let h = scenario(0.0, 1.0);
            let mut v = 0.0f64;
            assert_eq!(
                fadesim_power_scatter(h, 0.0, 0.0, 0.0, &mut v),
                FadesimStatus::Ok
            );
            assert!((v - 1.0).abs() < 1e-12);
            assert_eq!(
                fadesim_power_scatter(h, -1.0, 0.0, 0.0, &mut v),
                FadesimStatus::SingularPosition
            );
            assert_eq!(
                fadesim_cassini_level(h, 0.0, 1.0, 0.0, &mut v),
                FadesimStatus::Ok
            );
            assert!((v - 2.0).abs() < 1e-12);
            assert_eq!(
                fadesim_k_factor_db(1.0, 0.0, 1.0, &mut v),
                FadesimStatus::Ok
            );
            assert_eq!(v, 0.0);
            assert_eq!(
                fadesim_var_rdb_of_k(f64::NEG_INFINITY, &mut v),
                FadesimStatus::Ok
            );
            assert!((v - 31.025).abs() < 0.01);
            let mut gap = 0.0f64;
            assert_eq!(
                fadesim_expected_log_gap(
                    1,
                    1.0,
                    std::ptr::null_mut(),
                    std::ptr::null_mut(),
                    &mut gap
                ),
                FadesimStatus::Ok
            );
            assert!((gap - 1.17417).abs() < 1e-4);
            assert_eq!(
                fadesim_expected_log_gap(
                    0,
                    1.0,
                    std::ptr::null_mut(),
                    std::ptr::null_mut(),
                    &mut gap
                ),
                FadesimStatus::InvalidArgument
            );
            fadesim_scenario_free(h);
        }
    }

    #[test]
    fn version_is_a_c_string() {
        let ptr = fadesim_version();
        let s = unsafe { std::ffi::CStr::from_ptr(ptr) }.to_str().unwrap();
        assert_eq!(s, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn header_is_generated() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("include")
            .join("fadesim.h");
        let text = std::fs::read_to_string(header).expect("cbindgen header exists");
        assert!(text.contains("fadesim_etap_scatter"));
        assert!(text.contains("FadesimScenario"));
        assert!(text.contains("FADESIM_STATUS_OK"));
    }
}

//! Ricean envelope statistics.
//!
//! With the person perturbing only the phases of the affected multipath, the
//! received voltage is a fixed unaffected sum plus a zero-mean complex
//! Gaussian whose power is the total affected power. The envelope is then
//! Ricean with K = |v_bar|^2 / sigma2_aff, and the variance of
//! `R_dB = 20 log10 ||V||` depends on K alone. Over the working range
//! -2 dB <= K_dB <= 10 dB that dependence is close to affine, which is what
//! lets a measured RSS variance stand in for the (log) affected power.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::rng::stream_rng;

/// dB per natural-log unit: 10 / ln 10.
pub const DB_PER_LN: f64 = 4.342944819032518;

/// Measurement floor for RSS variance on a stationary link (dB^2). Below
/// this, noise dominates and the linear model is unsupported.
pub const VAR_FLOOR_DB2: f64 = 3.0;

/// Ceiling of the linear region (dB^2); stationary links essentially never
/// measure more.
pub const VAR_CEIL_DB2: f64 = 27.0;

/// Voltage decomposition of one link realization: the coherent sum of
/// unaffected multipath and the total power of the affected ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiceanSpec {
    pub v_bar: Complex64,
    pub sigma2_aff: f64,
}

impl RiceanSpec {
    pub fn new(v_bar: Complex64, sigma2_aff: f64) -> Result<Self> {
        if !(sigma2_aff.is_finite() && sigma2_aff > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "affected power must be positive, got {sigma2_aff}"
            )));
        }
        if !(v_bar.re.is_finite() && v_bar.im.is_finite()) {
            return Err(Error::InvalidArgument("v_bar must be finite".into()));
        }
        Ok(RiceanSpec { v_bar, sigma2_aff })
    }
}

/// Ricean K-factor in dB: `10 log10(|v_bar|^2 / sigma2_aff)`.
///
/// Returns `-inf` when the unaffected sum vanishes (the Rayleigh limit).
pub fn k_factor_db(spec: &RiceanSpec) -> f64 {
    let num = spec.v_bar.norm_sqr();
    if num == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (num / spec.sigma2_aff).log10()
    }
}

/// How to evaluate the envelope-variance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarMethod {
    /// Integrate against the Ricean density.
    Quadrature,
    /// Seeded sampling of the envelope; `n >= 1e6` recommended.
    MonteCarlo { n: usize, seed: u64 },
}

/// ln I0(x) for x >= 0, via the standard small/large-argument polynomial
/// approximations (relative error ~ 2e-7, far below the Monte Carlo noise it
/// is compared against).
fn ln_bessel_i0(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 3.75 {
        let t = x / 3.75;
        let t2 = t * t;
        let p = 1.0
            + t2 * (3.5156229
                + t2 * (3.0899424
                    + t2 * (1.2067492 + t2 * (0.2659732 + t2 * (0.0360768 + t2 * 0.0045813)))));
        p.ln()
    } else {
        let u = 3.75 / x;
        let p = 0.39894228
            + u * (0.01328592
                + u * (0.00225319
                    + u * (-0.00157565
                        + u * (0.00916281
                            + u * (-0.02057706
                                + u * (0.02635537 + u * (-0.01647633 + u * 0.00392377)))))));
        x + p.ln() - 0.5 * x.ln()
    }
}

/// Variance of `R_dB = 20 log10 ||V||` (dB^2) for a Ricean envelope with the
/// given K-factor in dB (`-inf` selects the Rayleigh limit).
///
/// The value is a function of K only: the envelope is normalized so the
/// affected power is 1 and the coherent part is sqrt(K).
pub fn var_rdb_of_k(k_db: f64, method: VarMethod) -> f64 {
    let k = if k_db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(k_db / 10.0)
    };
    let s = k.sqrt();
    match method {
        VarMethod::Quadrature => {
            // Per-component variance 1/2, so the density is
            // 2 r exp(-(r^2 + s^2)) I0(2 r s).
            let ln_pdf = move |r: f64| (2.0 * r).ln() - (r * r + s * s) + ln_bessel_i0(2.0 * r * s);
            let r_max = s + 30.0;
            let moment = |weight: fn(f64) -> f64| {
                integrate(
                    move |r| {
                        let p = ln_pdf(r).exp();
                        weight(20.0 * r.log10()) * p
                    },
                    0.0,
                    r_max,
                    1e-10,
                    400_000,
                )
                .expect("ricean density is smooth and integrable")
                .value
            };
            let mass = moment(|_| 1.0);
            let m1 = moment(|x| x) / mass;
            let m2 = moment(|x| x * x) / mass;
            m2 - m1 * m1
        }
        VarMethod::MonteCarlo { n, seed } => {
            let mut rng = stream_rng(seed, 0);
            let sigma = 0.5f64.sqrt();
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for i in 0..n {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let env = (s + sigma * re).hypot(sigma * im);
                let r_db = 20.0 * env.log10();
                let delta = r_db - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (r_db - mean);
            }
            m2 / n as f64
        }
    }
}

/// Affine model of the variance curve, `var ~= a0 - a1 * k_db`, fit over
/// `valid_range`. `a2` is the composite intercept of the ETAP form
/// (`a0 - a1 * c_up`); it comes from an ensemble regression, not from this
/// fit, so it is optional here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearVarModel {
    pub a0: f64,
    pub a1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a2: Option<f64>,
    pub valid_range: (f64, f64),
    /// Largest |residual| of the fit over its samples (dB^2).
    pub max_residual: f64,
}

impl LinearVarModel {
    pub fn predict(&self, k_db: f64) -> f64 {
        self.a0 - self.a1 * k_db
    }

    pub fn with_a2(mut self, a2: f64) -> Self {
        self.a2 = Some(a2);
        self
    }
}

/// Samples the variance curve on a uniform K_dB grid.
pub fn sample_var_curve(k_lo: f64, k_hi: f64, n: usize, method: VarMethod) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let k = k_lo + (k_hi - k_lo) * i as f64 / (n - 1) as f64;
            (k, var_rdb_of_k(k, method))
        })
        .collect()
}

/// Least-squares affine fit of `(k_db, var)` samples.
///
/// Requires at least 13 points spanning [-2, 10] dB, the range over which
/// the affine description holds.
pub fn fit_linear_var_model(samples: &[(f64, f64)]) -> Result<LinearVarModel> {
    if samples.len() < 13 {
        return Err(Error::InvalidArgument(format!(
            "need at least 13 samples to fit, got {}",
            samples.len()
        )));
    }
    let k_lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let k_hi = samples
        .iter()
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if k_lo > -2.0 || k_hi < 10.0 {
        return Err(Error::InvalidArgument(format!(
            "samples must cover [-2, 10] dB, got [{k_lo}, {k_hi}]"
        )));
    }
    let n = samples.len() as f64;
    let sum_k: f64 = samples.iter().map(|s| s.0).sum();
    let sum_v: f64 = samples.iter().map(|s| s.1).sum();
    let mean_k = sum_k / n;
    let mean_v = sum_v / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_k).powi(2)).sum();
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.0 - mean_k) * (s.1 - mean_v))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_v - slope * mean_k;
    let a1 = -slope;
    if a1 <= 0.0 || a1.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "variance curve is not decreasing over the fit range (a1 = {a1})"
        )));
    }
    let max_residual = samples
        .iter()
        .map(|&(k, v)| (v - (intercept - a1 * k)).abs())
        .fold(0.0, f64::max);
    Ok(LinearVarModel {
        a0: intercept,
        a1,
        a2: None,
        valid_range: (k_lo, k_hi),
        max_residual,
    })
}

/// A variance prediction, possibly clamped to the supported
/// [`VAR_FLOOR_DB2`], [`VAR_CEIL_DB2`] range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarPrediction {
    pub var_db2: f64,
    pub saturated: bool,
}

/// Expected RSS variance from an ETAP value: `a2 + a1 * 10 log10(etap)`,
/// clamped to the measurable [3, 27] dB^2 band (outside it the linearization
/// is unsupported).
pub fn expected_var_from_etap(etap: f64, model: &LinearVarModel, a2: f64) -> Result<VarPrediction> {
    if etap <= 0.0 || etap.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "etap must be positive, got {etap}"
        )));
    }
    let raw = a2 + model.a1 * 10.0 * etap.log10();
    let clamped = raw.clamp(VAR_FLOOR_DB2, VAR_CEIL_DB2);
    Ok(VarPrediction {
        var_db2: clamped,
        saturated: clamped != raw,
    })
}

/// Exact vs approximate expected log of a multipath power sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGap {
    pub exact_db: f64,
    pub approx_db: f64,
    /// `approx - exact`; nonnegative by Jensen's inequality.
    pub gap_db: f64,
}

/// Digamma at a positive integer: `psi(n) = -gamma + H_{n-1}`.
fn digamma_int(n: u64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut h = 0.0;
    for j in 1..n {
        h += 1.0 / j as f64;
    }
    h - EULER_GAMMA
}

/// Error of approximating the expected log affected power by the log of the
/// expectation, for `m` affected multipath.
///
/// The model sum is `Y = sum of 2m squared magnitudes` of i.i.d. zero-mean
/// complex Gaussian voltage components with mean-square power `sigma2`, so
/// `Y ~ Gamma(2m, sigma2)` and
///
/// ```text
/// exact  = (10/ln 10) (psi(2m) + ln sigma2)
/// approx = 10 log10(2m sigma2)
/// ```
///
/// The gap depends on `m` only. It shrinks roughly like 1/(4m): ~1.17 dB for
/// one affected path, ~0.57 dB for two, ~0.22 dB for five.
pub fn expected_log_gap(m: u32, sigma2: f64) -> Result<LogGap> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    let exact = DB_PER_LN * (digamma_int(2 * m as u64) + sigma2.ln());
    let approx = 10.0 * (2.0 * m as f64 * sigma2).log10();
    Ok(LogGap {
        exact_db: exact,
        approx_db: approx,
        gap_db: approx - exact,
    })
}

/// Monte Carlo oracle for [`expected_log_gap`]: averages
/// `10 log10 Y` over `n` seeded draws of the power sum.
pub fn expected_log_gap_mc(m: u32, sigma2: f64, n: usize, seed: u64) -> Result<LogGap> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let sigma = (sigma2 / 2.0).sqrt();
    let mut mean = 0.0;
    for i in 0..n {
        let mut y = 0.0;
        for _ in 0..2 * m {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            y += (sigma * re).powi(2) + (sigma * im).powi(2);
        }
        mean += (10.0 * y.log10() - mean) / (i + 1) as f64;
    }
    let approx = 10.0 * (2.0 * m as f64 * sigma2).log10();
    Ok(LogGap {
        exact_db: mean,
        approx_db: approx,
        gap_db: approx - mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn k_factor_reference_points() {
        let unit = RiceanSpec::new(Complex64::new(1.0, 0.0), 1.0).unwrap();
        assert_eq!(k_factor_db(&unit), 0.0);
        let rayleigh = RiceanSpec::new(Complex64::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(k_factor_db(&rayleigh), f64::NEG_INFINITY);
        let ten = RiceanSpec::new(Complex64::new(10f64.sqrt(), 0.0), 1.0).unwrap();
        assert_relative_eq!(k_factor_db(&ten), 10.0, max_relative = 1e-12);
        // Scale invariance: K depends only on the power ratio.
        let scaled = RiceanSpec::new(Complex64::new(3.0, 4.0), 5.0).unwrap();
        let scaled2 = RiceanSpec::new(Complex64::new(30.0, 40.0), 500.0).unwrap();
        assert_relative_eq!(
            k_factor_db(&scaled),
            k_factor_db(&scaled2),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rayleigh_variance_matches_log_moment() {
        // Var[10 log10 of an exponential] = (10/ln10)^2 pi^2/6.
        let expected = DB_PER_LN * DB_PER_LN * PI * PI / 6.0;
        let quad = var_rdb_of_k(f64::NEG_INFINITY, VarMethod::Quadrature);
        assert_relative_eq!(quad, expected, max_relative = 1e-4);
        let mc = var_rdb_of_k(
            f64::NEG_INFINITY,
            VarMethod::MonteCarlo {
                n: 1_000_000,
                seed: 11,
            },
        );
        assert!(
            (mc - expected).abs() < 0.3,
            "mc = {mc}, expected = {expected}"
        );
    }

    #[test]
    fn variance_curve_endpoints_and_monotonicity() {
        // Reference values verified by two independent routes (density
        // quadrature and Monte Carlo sampling, see
        // quadrature_and_monte_carlo_agree): 28.51 dB^2 at K = -2 dB and
        // 3.99 dB^2 at K = 10 dB.
        let lo = var_rdb_of_k(-2.0, VarMethod::Quadrature);
        let hi = var_rdb_of_k(10.0, VarMethod::Quadrature);
        assert!((lo - 28.512988).abs() < 0.01, "var(-2 dB) = {lo}");
        assert!((hi - 3.994292).abs() < 0.01, "var(10 dB) = {hi}");
        let samples = sample_var_curve(-2.0, 10.0, 13, VarMethod::Quadrature);
        for w in samples.windows(2) {
            assert!(w[1].1 < w[0].1, "curve must strictly decrease: {w:?}");
        }
    }

    #[test]
    fn quadrature_and_monte_carlo_agree() {
        for k_db in [-2.0, 4.0, 10.0] {
            let q = var_rdb_of_k(k_db, VarMethod::Quadrature);
            let mc = var_rdb_of_k(
                k_db,
                VarMethod::MonteCarlo {
                    n: 1_000_000,
                    seed: 3,
                },
            );
            assert!(
                (q - mc).abs() < 0.3,
                "k = {k_db}: quadrature {q} vs mc {mc}"
            );
        }
    }

    #[test]
    fn linear_fit_matches_endpoints_and_is_idempotent() {
        let samples = sample_var_curve(-2.0, 10.0, 25, VarMethod::Quadrature);
        let model = fit_linear_var_model(&samples).unwrap();
        assert!(model.a1 > 0.0);
        assert!(model.max_residual < 1.5, "residual {}", model.max_residual);
        // The line tracks the computed curve within its own residual at the
        // ends of the fit range.
        assert!((model.predict(-2.0) - samples[0].1).abs() <= model.max_residual + 1e-12);
        assert!((model.predict(10.0) - samples[24].1).abs() <= model.max_residual + 1e-12);
        // Refit on the model's own predictions returns (a0, a1).
        let synthetic: Vec<(f64, f64)> = samples
            .iter()
            .map(|&(k, _)| (k, model.predict(k)))
            .collect();
        let refit = fit_linear_var_model(&synthetic).unwrap();
        assert_relative_eq!(refit.a0, model.a0, max_relative = 1e-12);
        assert_relative_eq!(refit.a1, model.a1, max_relative = 1e-12);
    }

    #[test]
    fn fit_preconditions() {
        let short = sample_var_curve(-2.0, 10.0, 5, VarMethod::Quadrature);
        assert!(fit_linear_var_model(&short).is_err());
        let narrow = sample_var_curve(0.0, 5.0, 15, VarMethod::Quadrature);
        assert!(fit_linear_var_model(&narrow).is_err());
    }

    #[test]
    fn etap_prediction_log_law_and_clamping() {
        let model = LinearVarModel {
            a0: 23.0,
            a1: 2.0,
            a2: None,
            valid_range: (-2.0, 10.0),
            max_residual: 0.5,
        };
        let a2 = 5.0;
        let p1 = expected_var_from_etap(1.0, &model, a2).unwrap();
        let p10 = expected_var_from_etap(10.0, &model, a2).unwrap();
        assert!(!p1.saturated && !p10.saturated);
        assert_relative_eq!(
            p10.var_db2 - p1.var_db2,
            model.a1 * 10.0,
            max_relative = 1e-12
        );
        // Vanishing ETAP clamps at the noise floor.
        let tiny = expected_var_from_etap(1e-12, &model, a2).unwrap();
        assert_eq!(tiny.var_db2, VAR_FLOOR_DB2);
        assert!(tiny.saturated);
        let huge = expected_var_from_etap(1e12, &model, a2).unwrap();
        assert_eq!(huge.var_db2, VAR_CEIL_DB2);
        assert!(huge.saturated);
        assert!(expected_var_from_etap(0.0, &model, a2).is_err());
    }

    #[test]
    fn log_gap_reference_values() {
        // Independent route: gap = (10/ln10)(ln(2m) + gamma - H_{2m-1}).
        const GAMMA: f64 = 0.577_215_664_901_532_9;
        for (m, frozen) in [
            (1u32, 1.174_170_918_955_816),
            (2, 0.565_350_193_068_531),
            (5, 0.220_762_759_569_626),
        ] {
            let h: f64 = (1..2 * m as u64).map(|j| 1.0 / j as f64).sum();
            let oracle = DB_PER_LN * ((2.0 * m as f64).ln() + GAMMA - h);
            let got = expected_log_gap(m, 1.0).unwrap();
            assert_relative_eq!(got.gap_db, oracle, max_relative = 1e-12);
            assert_relative_eq!(got.gap_db, frozen, max_relative = 1e-8);
        }
    }

    #[test]
    fn log_gap_decreases_in_m_and_ignores_sigma2() {
        let mut prev = f64::INFINITY;
        for m in 1..=8 {
            let g = expected_log_gap(m, 1.0).unwrap().gap_db;
            assert!(g < prev);
            prev = g;
        }
        // Closed form: exactly sigma2-independent.
        for sigma2 in [0.1, 1.0, 10.0] {
            assert_relative_eq!(
                expected_log_gap(3, sigma2).unwrap().gap_db,
                expected_log_gap(3, 1.0).unwrap().gap_db,
                max_relative = 1e-12
            );
        }
        // Monte Carlo route: independent within sampling noise.
        let gaps: Vec<f64> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&s| expected_log_gap_mc(2, s, 400_000, 17).unwrap().gap_db)
            .collect();
        let spread = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.02, "sigma2 spread {spread} dB, gaps {gaps:?}");
    }

    #[test]
    fn log_gap_mc_agrees_with_closed_form() {
        for m in [1u32, 2, 5] {
            let closed = expected_log_gap(m, 1.0).unwrap();
            let mc = expected_log_gap_mc(m, 1.0, 1_000_000, 23).unwrap();
            assert!(
                (closed.exact_db - mc.exact_db).abs() < 0.01,
                "m = {m}: closed {} vs mc {}",
                closed.exact_db,
                mc.exact_db
            );
        }
    }
}

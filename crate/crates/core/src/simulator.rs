//! Brute-force single-bounce channel oracle.
//!
//! Scatterers are dropped as a Poisson process on the plane, each carries a
//! single-bounce voltage whose power comes from the propagation kernels, and
//! a path counts as affected when either of its two segments crosses the
//! person's cylinder. Phase-only perturbation of the affected paths yields
//! RSS series whose variance can be compared against the analytic chain:
//! shadow integrals for the expected affected power, the Ricean curve for
//! the variance.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etap::{Mechanism, Scenario};
use crate::fading::k_factor_db;
use crate::fading::RiceanSpec;
use crate::geometry::{segment_shadowed, LinkGeometry, Person, Vec2, Vec3};
use crate::propagation::{power_reflect, power_scatter, PropagationParams};
use crate::quad::{integrate_semi_infinite, QuadratureSettings};
use crate::rng::stream_rng;

/// Axis-aligned rectangle in the scatterer plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::InvalidArgument(
                "region must have positive extent on both axes".into(),
            ));
        }
        Ok(Region {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// A sampled Poisson scatterer configuration (all points at z = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    pub region: Region,
    pub eta: f64,
    pub seed: u64,
    pub points: Vec<Vec3>,
}

/// Samples a field with Poisson-distributed count (mean `eta * area`) and
/// uniform positions. Deterministic for a fixed seed.
pub fn sample_field(region: Region, eta: f64, seed: u64) -> Result<ScattererField> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scatterer density must be positive, got {eta}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let lambda = eta * region.area();
    let count = Poisson::new(lambda)
        .map_err(|e| Error::InvalidArgument(format!("invalid poisson mean {lambda}: {e}")))?
        .sample(&mut rng) as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.random_range(region.x_min..region.x_max);
        let y = rng.random_range(region.y_min..region.y_max);
        points.push(Vec3::new(x, y, 0.0));
    }
    Ok(ScattererField {
        region,
        eta,
        seed,
        points,
    })
}

/// Per-scatterer single-bounce power for the given mechanism.
pub fn bounce_power(
    link: &LinkGeometry,
    x: Vec3,
    params: &PropagationParams,
    mechanism: Mechanism,
) -> Result<f64> {
    match mechanism {
        Mechanism::Scatter => power_scatter(link, x, params),
        Mechanism::Reflect => power_reflect(link, x, params),
        Mechanism::Blend { w } => {
            Ok(w * power_scatter(link, x, params)? + (1.0 - w) * power_reflect(link, x, params)?)
        }
    }
}

/// Draws one complex voltage per scatterer: magnitude from the power kernel,
/// phase i.i.d. uniform on [0, 2 pi).
pub fn synthesize_voltages(
    field: &ScattererField,
    link: &LinkGeometry,
    mechanism: Mechanism,
    params: &PropagationParams,
    phase_seed: u64,
) -> Result<Vec<Complex64>> {
    let mut rng = stream_rng(phase_seed, 1);
    field
        .points
        .iter()
        .map(|&x| {
            let power = bounce_power(link, x, params, mechanism)?;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            Ok(Complex64::from_polar(power.sqrt(), phase))
        })
        .collect()
}

/// Marks each scatterer whose TX-to-bounce or bounce-to-RX segment crosses
/// the person's cylinder.
pub fn classify_affected(points: &[Vec3], link: &LinkGeometry, person: &Person) -> Vec<bool> {
    points
        .iter()
        .map(|&x| segment_shadowed(link.tx(), x, person) || segment_shadowed(link.rx(), x, person))
        .collect()
}

/// One realized link: field, voltages, affected set, and the coherent sum of
/// the unaffected voltages.
#[derive(Debug, Clone)]
pub struct LinkRealization {
    pub field: ScattererField,
    pub voltages: Vec<Complex64>,
    pub affected: Vec<bool>,
    pub v_bar: Complex64,
    /// Optional extra scatter-path off the person itself, power
    /// `P_s(x_o)`. Off by default: the model is about changes to existing
    /// multipath.
    pub extra_path: Option<Complex64>,
}

impl LinkRealization {
    pub fn affected_power(&self) -> f64 {
        let base: f64 = self
            .voltages
            .iter()
            .zip(&self.affected)
            .filter(|(_, &a)| a)
            .map(|(v, _)| v.norm_sqr())
            .sum();
        base + self.extra_path.map_or(0.0, |v| v.norm_sqr())
    }

    pub fn total_power(&self) -> f64 {
        let base: f64 = self.voltages.iter().map(|v| v.norm_sqr()).sum();
        base + self.extra_path.map_or(0.0, |v| v.norm_sqr())
    }

    pub fn affected_count(&self) -> usize {
        self.affected.iter().filter(|&&a| a).count() + usize::from(self.extra_path.is_some())
    }
}

/// Samples voltages and classifies them for a person at `person`.
pub fn realize_link(
    field: ScattererField,
    link: &LinkGeometry,
    person: &Person,
    mechanism: Mechanism,
    params: &PropagationParams,
    phase_seed: u64,
    include_new_path: bool,
) -> Result<LinkRealization> {
    let voltages = synthesize_voltages(&field, link, mechanism, params, phase_seed)?;
    let affected = classify_affected(&field.points, link, person);
    let v_bar = voltages
        .iter()
        .zip(&affected)
        .filter(|(_, &a)| !a)
        .map(|(v, _)| v)
        .sum();
    let extra_path = if include_new_path {
        let power = power_scatter(link, person.position(), params)?;
        let mut rng = stream_rng(phase_seed, 2);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        Some(Complex64::from_polar(power.sqrt(), phase))
    } else {
        None
    };
    Ok(LinkRealization {
        field,
        voltages,
        affected,
        v_bar,
        extra_path,
    })
}

/// An RSS time series and its sample variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RssSeries {
    pub samples_db: Vec<f64>,
    pub variance_db2: f64,
}

/// Draws `n_samples` RSS values by redrawing the phases of every affected
/// path (amplitudes kept) and summing with the unaffected `v_bar`.
///
/// With no affected paths the series is constant and the variance is 0.
pub fn simulate_rss_series(
    realization: &LinkRealization,
    n_samples: usize,
    seed: u64,
) -> RssSeries {
    let amplitudes: Vec<f64> = realization
        .voltages
        .iter()
        .zip(&realization.affected)
        .filter(|(_, &a)| a)
        .map(|(v, _)| v.norm())
        .chain(realization.extra_path.map(|v| v.norm()))
        .collect();
    if amplitudes.is_empty() {
        // Nothing to perturb: the series is constant and the variance is
        // exactly zero.
        let level = 20.0 * realization.v_bar.norm().log10();
        return RssSeries {
            samples_db: vec![level; n_samples],
            variance_db2: 0.0,
        };
    }
    let mut rng = stream_rng(seed, 3);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut v = realization.v_bar;
        for &amp in &amplitudes {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            v += Complex64::from_polar(amp, phase);
        }
        samples.push(20.0 * v.norm().log10());
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    RssSeries {
        samples_db: samples,
        variance_db2: variance,
    }
}

/// Empirical expected total affected power with a 3-sigma half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEtap {
    pub mean: f64,
    pub halfwidth3: f64,
    pub n_fields: usize,
    /// Fraction of the analytic shadow-integral mass inside the region.
    pub coverage: f64,
}

/// Fraction of the two median-ray integrals that lies inside the region
/// (plan view). This is the truncation check for finite simulation regions.
pub fn shadow_mass_coverage(
    scn: &Scenario,
    mechanism: Mechanism,
    region: Region,
    quad: &QuadratureSettings,
) -> Result<f64> {
    if matches!(mechanism, Mechanism::Reflect | Mechanism::Blend { .. })
        && scn.params.n_p <= 2.0
        && quad.alpha_cap.is_none()
    {
        return Err(Error::DivergentTail { np: scn.params.n_p });
    }
    let x_o = scn.person.position();
    if !region.contains(x_o.xy()) {
        return Err(Error::InvalidArgument(
            "person must stand inside the simulation region".into(),
        ));
    }
    let mut full = 0.0;
    let mut inside = 0.0;
    for apex in [scn.link.tx(), scn.link.rx()] {
        let d = apex.distance(x_o);
        let unit = (x_o - apex) * (1.0 / d);
        let scale = scn.eta * scn.person.diameter();
        let link = scn.link;
        let params = scn.params;
        let integrand = move |alpha: f64| {
            let x = x_o + unit * alpha;
            let p = match mechanism {
                Mechanism::Scatter => crate::propagation::power_scatter_raw(&link, x, &params),
                Mechanism::Reflect => crate::propagation::power_reflect_raw(&link, x, &params),
                Mechanism::Blend { w } => {
                    w * crate::propagation::power_scatter_raw(&link, x, &params)
                        + (1.0 - w) * crate::propagation::power_reflect_raw(&link, x, &params)
                }
            };
            scale * (alpha + d) / d * p
        };
        let whole = integrate_semi_infinite(integrand, quad)?.value;
        let exit = ray_exit_alpha(region, x_o.xy(), unit.xy());
        let trapped = if exit.is_finite() {
            integrate_semi_infinite(integrand, &quad.with_cap(exit))?.value
        } else {
            whole
        };
        full += whole;
        inside += trapped;
    }
    Ok(inside / full)
}

/// Distance along the plan-view ray `origin + alpha * dir` at which it
/// leaves the rectangle. Infinite when the direction has no plan component.
fn ray_exit_alpha(region: Region, origin: Vec2, dir: Vec2) -> f64 {
    let mut exit = f64::INFINITY;
    if dir.x > 0.0 {
        exit = exit.min((region.x_max - origin.x) / dir.x);
    } else if dir.x < 0.0 {
        exit = exit.min((region.x_min - origin.x) / dir.x);
    }
    if dir.y > 0.0 {
        exit = exit.min((region.y_max - origin.y) / dir.y);
    } else if dir.y < 0.0 {
        exit = exit.min((region.y_min - origin.y) / dir.y);
    }
    exit
}

/// Mean affected power over `n_fields` independent Poisson fields.
///
/// Fails with [`Error::RegionTooSmall`] when less than 99% of the analytic
/// shadow-integral mass lies inside the region.
pub fn empirical_etap(
    scn: &Scenario,
    mechanism: Mechanism,
    region: Region,
    n_fields: usize,
    master_seed: u64,
    quad: &QuadratureSettings,
) -> Result<EmpiricalEtap> {
    let coverage = shadow_mass_coverage(scn, mechanism, region, quad)?;
    if coverage < 0.99 {
        return Err(Error::RegionTooSmall { coverage });
    }
    if n_fields < 2 {
        return Err(Error::InvalidArgument("need at least 2 fields".into()));
    }
    let sums: Result<Vec<f64>> = (0..n_fields)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(
                region,
                scn.eta,
                crate::rng::child_seed(master_seed, i as u64),
            )?;
            let affected = classify_affected(&field.points, &scn.link, &scn.person);
            let mut sum = 0.0;
            for (&x, &a) in field.points.iter().zip(&affected) {
                if a {
                    sum += bounce_power(&scn.link, x, &scn.params, mechanism)?;
                }
            }
            Ok(sum)
        })
        .collect();
    let sums = sums?;
    let n = sums.len() as f64;
    let mean = sums.iter().sum::<f64>() / n;
    let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EmpiricalEtap {
        mean,
        halfwidth3: 3.0 * (var / n).sqrt(),
        n_fields,
        coverage,
    })
}

/// Ensemble controls for [`ensemble_regression`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub region: Region,
    pub n_realizations: usize,
    pub n_samples: usize,
    pub master_seed: u64,
    pub include_new_path: bool,
}

/// Per-position ensemble means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub position: Vec2,
    pub mean_var_db2: f64,
    pub mean_affected_power: f64,
    pub n_realizations: usize,
}

/// One realization's raw observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub position_index: usize,
    pub var_db2: f64,
    pub affected_power: f64,
    pub affected_fraction: f64,
    pub k_db: f64,
}

/// Regression of ensemble-mean RSS variance on the ensemble-mean affected
/// power in dB, across person positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub positions: Vec<PositionStats>,
    pub realizations: Vec<RealizationRecord>,
    /// Slope of mean Var(R_dB) vs 10 log10(mean affected power) — the
    /// ensemble estimate of the variance model's `a1`.
    pub slope: f64,
    /// Intercept — the estimate of the composite `a2`.
    pub intercept: f64,
    pub r_squared: f64,
    /// Fraction of realizations whose K factor fell in the [-2, 10] dB
    /// band where the affine variance model holds.
    pub k_in_range_fraction: f64,
}

/// Ordinary least squares of y on x, returning (slope, intercept, r^2).
pub fn regress(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

/// Runs the full ensemble: at every person position, `n_realizations`
/// independent fields with phase-perturbed RSS series, then the
/// across-position regression. Bit-identical for fixed settings regardless
/// of worker count.
pub fn ensemble_regression(
    link: &LinkGeometry,
    positions: &[Vec2],
    mechanism: Mechanism,
    params: &PropagationParams,
    eta: f64,
    person_diameter: f64,
    settings: &EnsembleSettings,
) -> Result<EnsembleReport> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("need at least one position".into()));
    }
    if settings.n_realizations < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 realizations".into(),
        ));
    }
    let n_real = settings.n_realizations;
    let tasks: Vec<(usize, usize)> = (0..positions.len())
        .flat_map(|pi| (0..n_real).map(move |r| (pi, r)))
        .collect();
    let records: Result<Vec<RealizationRecord>> = tasks
        .par_iter()
        .map(|&(pi, r)| {
            let p = positions[pi];
            let person = Person::new(p.x, p.y, person_diameter)?;
            let stream = (pi * n_real + r) as u64;
            let field_seed = crate::rng::child_seed(settings.master_seed, 3 * stream);
            let phase_seed = crate::rng::child_seed(settings.master_seed, 3 * stream + 1);
            let series_seed = crate::rng::child_seed(settings.master_seed, 3 * stream + 2);
            let field = sample_field(settings.region, eta, field_seed)?;
            if field.points.is_empty() {
                return Err(Error::NoScatterers(
                    "a sampled field came up empty; increase eta or the region".into(),
                ));
            }
            let real = realize_link(
                field,
                link,
                &person,
                mechanism,
                params,
                phase_seed,
                settings.include_new_path,
            )?;
            let affected_power = real.affected_power();
            let total = real.total_power();
            let series = simulate_rss_series(&real, settings.n_samples, series_seed);
            let k_db = if affected_power > 0.0 {
                k_factor_db(&RiceanSpec::new(real.v_bar, affected_power)?)
            } else {
                f64::INFINITY
            };
            Ok(RealizationRecord {
                position_index: pi,
                var_db2: series.variance_db2,
                affected_power,
                affected_fraction: affected_power / total,
                k_db,
            })
        })
        .collect();
    let records = records?;

    let mut positions_stats = Vec::with_capacity(positions.len());
    for (pi, &p) in positions.iter().enumerate() {
        let mine: Vec<&RealizationRecord> =
            records.iter().filter(|r| r.position_index == pi).collect();
        let n = mine.len() as f64;
        positions_stats.push(PositionStats {
            position: p,
            mean_var_db2: mine.iter().map(|r| r.var_db2).sum::<f64>() / n,
            mean_affected_power: mine.iter().map(|r| r.affected_power).sum::<f64>() / n,
            n_realizations: mine.len(),
        });
    }

    let points: Vec<(f64, f64)> = positions_stats
        .iter()
        .map(|s| (10.0 * s.mean_affected_power.log10(), s.mean_var_db2))
        .collect();
    let (slope, intercept, r_squared) = regress(&points);
    let in_range = records
        .iter()
        .filter(|r| r.k_db >= -2.0 && r.k_db <= 10.0)
        .count();
    Ok(EnsembleReport {
        k_in_range_fraction: in_range as f64 / records.len() as f64,
        positions: positions_stats,
        realizations: records,
        slope,
        intercept,
        r_squared,
    })
}

//! Single-bounce received-power kernels.
//!
//! A multipath component that changes direction once at `x` arrives with
//! power `c_s / (|x_t - x|^2 |x_r - x|^2)` if the bounce is a scatter, or
//! `c_r / (|x_t - x| + |x_r - x|)^n_p` if it is a reflection. Iso-contours of
//! the scattering kernel are Cassini ovals with foci at the nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LinkGeometry, Vec3, DEGENERACY_TOLERANCE};

/// Constants of the two power kernels. `c_s` and `c_r` are held constant
/// across the scatterer ensemble; `n_p` is the path loss exponent of the
/// reflection kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub c_s: f64,
    pub c_r: f64,
    pub n_p: f64,
}

impl PropagationParams {
    pub fn new(c_s: f64, c_r: f64, n_p: f64) -> Result<Self> {
        for (name, v) in [("c_s", c_s), ("c_r", c_r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(n_p.is_finite() && n_p >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "path loss exponent must be >= 1, got {n_p}"
            )));
        }
        Ok(PropagationParams { c_s, c_r, n_p })
    }
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            c_s: 1.0,
            c_r: 1.0,
            n_p: 3.0,
        }
    }
}

fn check_off_nodes(link: &LinkGeometry, x: Vec3) -> Result<()> {
    if link.tx().distance(x) < DEGENERACY_TOLERANCE || link.rx().distance(x) < DEGENERACY_TOLERANCE
    {
        return Err(Error::SingularPosition {
            tolerance: DEGENERACY_TOLERANCE,
        });
    }
    Ok(())
}

/// Scattered-bounce received power at `x`. Rejects positions within 1e-9 m of
/// a node, where the far-field formula is singular.
pub fn power_scatter(link: &LinkGeometry, x: Vec3, params: &PropagationParams) -> Result<f64> {
    check_off_nodes(link, x)?;
    Ok(power_scatter_raw(link, x, params))
}

/// Reflected-bounce received power at `x`, with the same node exclusion.
pub fn power_reflect(link: &LinkGeometry, x: Vec3, params: &PropagationParams) -> Result<f64> {
    check_off_nodes(link, x)?;
    Ok(power_reflect_raw(link, x, params))
}

/// Scattering kernel without the node-proximity check. Used as a line
/// integrand, where singular rays must surface as quadrature failures rather
/// than per-point errors.
pub fn power_scatter_raw(link: &LinkGeometry, x: Vec3, params: &PropagationParams) -> f64 {
    let dt = link.tx().distance(x);
    let dr = link.rx().distance(x);
    params.c_s / (dt * dt * dr * dr)
}

/// Reflection kernel without the node-proximity check.
pub fn power_reflect_raw(link: &LinkGeometry, x: Vec3, params: &PropagationParams) -> f64 {
    let total = link.tx().distance(x) + link.rx().distance(x);
    params.c_r / total.powf(params.n_p)
}

/// The Cassini level function `|x_t - x| * |x_r - x|`: its iso-contours are
/// Cassini ovals, and the scattering power is `c_s / level^2`.
pub fn cassini_level(link: &LinkGeometry, x: Vec3) -> f64 {
    link.tx().distance(x) * link.rx().distance(x)
}

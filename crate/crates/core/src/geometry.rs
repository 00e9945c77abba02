//! Link and person geometry: coordinate types, the scalar quantities the
//! closed-form power expressions are built from, cylinder shadow predicates,
//! and the per-link coordinate normalization used by the measurement
//! pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two points closer than this (meters) are treated as coincident. Well below
/// the precision of any surveyed RF geometry.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// 3-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Plan-view projection (drop z).
    pub fn xy(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// 2-D position in meters (plan view / normalized frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// A TX/RX pair. Both nodes sit at the same height above the scatterer plane
/// (whose z-coordinate is 0); that shared height is `dz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    x_t: Vec3,
    x_r: Vec3,
}

impl LinkGeometry {
    pub fn new(x_t: Vec3, x_r: Vec3) -> Result<Self> {
        if !x_t.is_finite() || !x_r.is_finite() {
            return Err(Error::DegenerateGeometry(
                "link node coordinates must be finite".into(),
            ));
        }
        if x_t.distance(x_r) < DEGENERACY_TOLERANCE {
            return Err(Error::DegenerateGeometry("TX and RX coincide".into()));
        }
        if x_t.z != x_r.z {
            return Err(Error::DegenerateGeometry(format!(
                "TX and RX must share a height above the scatterer plane (got {} and {})",
                x_t.z, x_r.z
            )));
        }
        Ok(LinkGeometry { x_t, x_r })
    }

    /// Nodes at plan positions `tx`, `rx`, both at height `dz`.
    pub fn with_height(tx: Vec2, rx: Vec2, dz: f64) -> Result<Self> {
        LinkGeometry::new(Vec3::new(tx.x, tx.y, dz), Vec3::new(rx.x, rx.y, dz))
    }

    pub fn tx(&self) -> Vec3 {
        self.x_t
    }

    pub fn rx(&self) -> Vec3 {
        self.x_r
    }

    /// Node height above the scatterer plane.
    pub fn dz(&self) -> f64 {
        self.x_t.z
    }

    /// TX-RX separation.
    pub fn d_rt(&self) -> f64 {
        self.x_t.distance(self.x_r)
    }

    /// Same link with the roles of TX and RX exchanged.
    pub fn swapped(&self) -> LinkGeometry {
        LinkGeometry {
            x_t: self.x_r,
            x_r: self.x_t,
        }
    }
}

/// The person: a vertical cylinder of diameter `diameter` whose axis crosses
/// the scatterer plane at `x_o` (so `x_o.z == 0`). The cylinder spans every
/// height of interest, so shadowing reduces to a plan-view disc test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Person {
    x_o: Vec3,
    diameter: f64,
}

impl Person {
    /// Person centered at plan position `(x, y)` in the scatterer plane.
    pub fn new(x: f64, y: f64, diameter: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::DegenerateGeometry(
                "person position must be finite".into(),
            ));
        }
        if !(diameter.is_finite() && diameter > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "person diameter must be positive, got {diameter}"
            )));
        }
        Ok(Person {
            x_o: Vec3::new(x, y, 0.0),
            diameter,
        })
    }

    pub fn position(&self) -> Vec3 {
        self.x_o
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }
}

/// Scalar quantities derived from a (link, person) pair.
///
/// `a` and `b` are the TX-person and RX-person distances. `theta` is the
/// angle between the person-to-RX and TX-to-person directions, in [0, pi].
/// `d_plus` combines the two distances in parallel; `d_minus` is the parallel
/// difference and is `+inf` when `a == b` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryScalars {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub d_plus: f64,
    pub d_minus: f64,
}

/// Computes [`GeometryScalars`] for a person position relative to a link.
///
/// Errors with [`Error::DegenerateGeometry`] if the person stands within
/// [`DEGENERACY_TOLERANCE`] of either node.
pub fn geometry_scalars(link: &LinkGeometry, person: &Person) -> Result<GeometryScalars> {
    let x_o = person.position();
    let to_rx = link.rx() - x_o;
    let from_tx = x_o - link.tx();
    let a = from_tx.norm();
    let b = to_rx.norm();
    if a < DEGENERACY_TOLERANCE || b < DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateGeometry(
            "person position coincides with a link node".into(),
        ));
    }
    let cos_theta = (to_rx.dot(from_tx) / (a * b)).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let d_plus = 1.0 / (1.0 / a + 1.0 / b);
    let d_minus = if a == b {
        f64::INFINITY
    } else {
        1.0 / (1.0 / b - 1.0 / a)
    };
    Ok(GeometryScalars {
        a,
        b,
        theta,
        d_plus,
        d_minus,
    })
}

/// Width of the person's shadow at distance `alpha` beyond the person along
/// the median line from `apex` (a node position): the similar-triangle
/// widening `D * (alpha + |apex - x_o|) / |apex - x_o|`.
pub fn shadow_width(apex: Vec3, person: &Person, alpha: f64) -> Result<f64> {
    let d = apex.distance(person.position());
    if d < DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateGeometry(
            "shadow apex coincides with the person".into(),
        ));
    }
    // Grouped so alpha = 0 returns the diameter exactly.
    Ok(person.diameter() * ((alpha + d) / d))
}

/// Whether the path from `endpoint` (a node) to `scatterer` is blocked by the
/// person's cylinder.
///
/// Uses the plan-view projection: the segment is shadowed iff its closest
/// approach to the person's center, clamped to the segment, is within D/2.
/// Boundary contact (distance exactly D/2) counts as shadowed.
pub fn segment_shadowed(endpoint: Vec3, scatterer: Vec3, person: &Person) -> bool {
    let a = endpoint.xy();
    let b = scatterer.xy();
    let c = person.position().xy();
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((c - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = a + ab * t;
    let r = person.diameter() / 2.0;
    closest.distance(c) <= r
}

/// Orientation-preserving similarity transform of the plane (rotation +
/// translation + uniform positive scale).
///
/// Stored as the complex-linear map `z -> m * z + t`; `det > 0` holds by
/// construction since complex multiplication cannot reflect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    /// Multiplier (rotation + scale) as (re, im).
    pub m: (f64, f64),
    /// Translation as (re, im).
    pub t: (f64, f64),
}

impl Similarity {
    pub fn apply(&self, p: Vec2) -> Vec2 {
        let (mr, mi) = self.m;
        Vec2::new(
            mr * p.x - mi * p.y + self.t.0,
            mi * p.x + mr * p.y + self.t.1,
        )
    }

    /// Uniform scale factor.
    pub fn scale(&self) -> f64 {
        let (mr, mi) = self.m;
        (mr * mr + mi * mi).sqrt()
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.m.0 - 1.0).abs() <= tol
            && self.m.1.abs() <= tol
            && self.t.0.abs() <= tol
            && self.t.1.abs() <= tol
    }
}

/// The unique orientation-preserving similarity mapping `tx -> (1, 0)` and
/// `rx -> (-1, 0)`, applied to `points`.
///
/// Errors if `tx` and `rx` coincide.
pub fn normalize_coordinates(
    link2d: (Vec2, Vec2),
    points: &[Vec2],
) -> Result<(Similarity, Vec<Vec2>)> {
    let transform = link_normalization(link2d.0, link2d.1)?;
    let mapped = points.iter().map(|&p| transform.apply(p)).collect();
    Ok((transform, mapped))
}

/// The transform underlying [`normalize_coordinates`], without applying it.
pub fn link_normalization(tx: Vec2, rx: Vec2) -> Result<Similarity> {
    let d = tx - rx;
    let len2 = d.dot(d);
    if len2.sqrt() < DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateGeometry(
            "cannot normalize a link whose nodes coincide".into(),
        ));
    }
    // Solve T(z) = m z + t with T(tx) = 1, T(rx) = -1 over the complex
    // numbers: m = 2 / (tx - rx), t = -m * midpoint.
    let mr = 2.0 * d.x / len2;
    let mi = -2.0 * d.y / len2;
    let mid = Vec2::new((tx.x + rx.x) / 2.0, (tx.y + rx.y) / 2.0);
    let t = (-(mr * mid.x - mi * mid.y), -(mi * mid.x + mr * mid.y));
    Ok(Similarity { m: (mr, mi), t })
}

//! Measurement ingestion: RSS logs plus a node survey in, empirical variance
//! surface out.
//!
//! Every measurement is re-expressed in the normalized link frame (TX at
//! (1, 0), RX at (-1, 0)) using the per-link similarity transform, the
//! person's transformed position selects a bin, and each bin with enough
//! samples reports the unbiased variance of its RSS values.
//!
//! CSV schemas (headers are exact):
//!   measurements: `time_s,tx_id,rx_id,rss_db,person_x_m,person_y_m`
//!   survey:       `node_id,x_m,y_m,z_m`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{link_normalization, Similarity, Vec2, Vec3};
use crate::surface::{write_atomic, GridSpec, SurfaceGrid, SurfaceMetadata};

pub const MEASUREMENT_HEADER: &str = "time_s,tx_id,rx_id,rss_db,person_x_m,person_y_m";
pub const SURVEY_HEADER: &str = "node_id,x_m,y_m,z_m";

/// Surveyed node positions, keyed by node id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeSurvey {
    pub nodes: BTreeMap<String, Vec3>,
}

impl NodeSurvey {
    pub fn get(&self, id: &str) -> Option<Vec3> {
        self.nodes.get(id).copied()
    }
}

/// One RSS measurement with the person's surveyed position in the site
/// frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub time_s: f64,
    pub tx_id: String,
    pub rx_id: String,
    pub rss_db: f64,
    pub person_xy: Vec2,
}

/// A row that failed validation, kept for the rejects report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

/// Parsed measurements plus everything that was rejected. Rows are never
/// silently dropped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub records: Vec<MeasurementRecord>,
    pub rejects: Vec<RejectedRow>,
}

/// Loads a node survey. A malformed header or row is a hard error here —
/// without a trustworthy survey nothing downstream is meaningful.
pub fn load_survey(path: &Path) -> Result<NodeSurvey> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, SURVEY_HEADER)) => {}
        other => {
            return Err(Error::SchemaMismatch {
                path: path.into(),
                detail: format!(
                    "expected header '{SURVEY_HEADER}', got {:?}",
                    other.map(|(_, l)| l)
                ),
            })
        }
    }
    let mut nodes = BTreeMap::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |detail: String| Error::SchemaMismatch {
            path: path.into(),
            detail: format!("line {}: {detail}", i + 1),
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        }
        let id = fields[0].to_string();
        let x: f64 = fields[1].parse().map_err(|_| bad("bad x_m".into()))?;
        let y: f64 = fields[2].parse().map_err(|_| bad("bad y_m".into()))?;
        let z: f64 = fields[3].parse().map_err(|_| bad("bad z_m".into()))?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(bad("coordinates must be finite".into()));
        }
        if nodes.insert(id.clone(), Vec3::new(x, y, z)).is_some() {
            return Err(bad(format!("duplicate node id '{id}'")));
        }
    }
    Ok(NodeSurvey { nodes })
}

/// Loads measurements, validating each row against the survey. Malformed
/// rows and rows naming unknown nodes land in the rejects report with their
/// line numbers.
pub fn load_measurements(path: &Path, survey: &NodeSurvey) -> Result<LoadReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, MEASUREMENT_HEADER)) => {}
        other => {
            return Err(Error::SchemaMismatch {
                path: path.into(),
                detail: format!(
                    "expected header '{MEASUREMENT_HEADER}', got {:?}",
                    other.map(|(_, l)| l)
                ),
            })
        }
    }
    let mut report = LoadReport::default();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        match parse_measurement_row(line, survey) {
            Ok(record) => report.records.push(record),
            Err(reason) => report.rejects.push(RejectedRow {
                line: lineno,
                reason,
                raw: line.to_string(),
            }),
        }
    }
    Ok(report)
}

fn parse_measurement_row(
    line: &str,
    survey: &NodeSurvey,
) -> std::result::Result<MeasurementRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, got {}", fields.len()));
    }
    let time_s: f64 = fields[0].parse().map_err(|_| "bad time_s".to_string())?;
    let tx_id = fields[1].to_string();
    let rx_id = fields[2].to_string();
    let rss_db: f64 = fields[3].parse().map_err(|_| "bad rss_db".to_string())?;
    let px: f64 = fields[4]
        .parse()
        .map_err(|_| "bad person_x_m".to_string())?;
    let py: f64 = fields[5]
        .parse()
        .map_err(|_| "bad person_y_m".to_string())?;
    if tx_id == rx_id {
        return Err(format!("tx and rx are the same node '{tx_id}'"));
    }
    if survey.get(&tx_id).is_none() {
        return Err(format!("unknown node id '{tx_id}'"));
    }
    if survey.get(&rx_id).is_none() {
        return Err(format!("unknown node id '{rx_id}'"));
    }
    if !(rss_db.is_finite() && px.is_finite() && py.is_finite() && time_s.is_finite()) {
        return Err("non-finite numeric field".into());
    }
    Ok(MeasurementRecord {
        time_s,
        tx_id,
        rx_id,
        rss_db,
        person_xy: Vec2::new(px, py),
    })
}

/// Writes measurements in the canonical CSV format.
pub fn write_measurements(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 48 + 64);
    out.push_str(MEASUREMENT_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.time_s, r.tx_id, r.rx_id, r.rss_db, r.person_xy.x, r.person_xy.y
        )
        .expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a node survey in the canonical CSV format.
pub fn write_survey(path: &Path, survey: &NodeSurvey) -> Result<()> {
    let mut out = String::new();
    out.push_str(SURVEY_HEADER);
    out.push('\n');
    for (id, p) in &survey.nodes {
        writeln!(out, "{},{},{},{}", id, p.x, p.y, p.z).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a rejects report (CSV with the offending line numbers).
pub fn write_rejects(path: &Path, rejects: &[RejectedRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("line,reason,raw\n");
    for r in rejects {
        writeln!(out, "{},{:?},{:?}", r.line, r.reason, r.raw).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

/// Empirical variance surface over normalized person positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedVariance {
    pub spec: GridSpec,
    pub count: Vec<usize>,
    pub variance: Vec<f64>,
    pub valid: Vec<bool>,
    pub min_count: usize,
    pub in_grid: usize,
    pub out_of_grid: usize,
}

impl BinnedVariance {
    /// Total samples routed: in-grid plus out-of-grid.
    pub fn total_routed(&self) -> usize {
        self.in_grid + self.out_of_grid
    }

    pub fn to_surface_grid(&self, mut metadata: SurfaceMetadata) -> SurfaceGrid {
        metadata.quantity = "rss_variance_db2".into();
        SurfaceGrid {
            spec: self.spec,
            values: self.variance.clone(),
            valid: self.valid.clone(),
            metadata,
        }
    }
}

/// Bins every record by the person's normalized position and computes
/// per-bin unbiased RSS variance.
///
/// Bins with fewer than `min_count` samples are marked invalid. Bin values
/// are sorted before the moments are taken, so the surface does not depend
/// on record order. The transformed node images are re-checked against
/// (+1, 0) / (-1, 0) for every link as an internal consistency guard.
pub fn build_variance_surface(
    records: &[MeasurementRecord],
    survey: &NodeSurvey,
    grid: &GridSpec,
    min_count: usize,
) -> Result<BinnedVariance> {
    if min_count < 2 {
        return Err(Error::InvalidArgument(
            "min_count must be at least 2 for a variance".into(),
        ));
    }
    let mut transforms: BTreeMap<(String, String), Similarity> = BTreeMap::new();
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); grid.cell_count()];
    let mut out_of_grid = 0usize;
    let mut in_grid = 0usize;

    for r in records {
        let key = (r.tx_id.clone(), r.rx_id.clone());
        let transform = match transforms.get(&key) {
            Some(t) => *t,
            None => {
                let tx = survey.get(&r.tx_id).ok_or_else(|| {
                    Error::InvalidArgument(format!("record names unsurveyed node '{}'", r.tx_id))
                })?;
                let rx = survey.get(&r.rx_id).ok_or_else(|| {
                    Error::InvalidArgument(format!("record names unsurveyed node '{}'", r.rx_id))
                })?;
                let t = link_normalization(tx.xy(), rx.xy())?;
                let tx_img = t.apply(tx.xy());
                let rx_img = t.apply(rx.xy());
                if tx_img.distance(Vec2::new(1.0, 0.0)) > 1e-9
                    || rx_img.distance(Vec2::new(-1.0, 0.0)) > 1e-9
                {
                    return Err(Error::DegenerateGeometry(format!(
                        "normalization failed to map link ({}, {}) onto (+1,0)/(-1,0)",
                        r.tx_id, r.rx_id
                    )));
                }
                transforms.insert(key, t);
                t
            }
        };
        let normalized = transform.apply(r.person_xy);
        match grid.bin_of(normalized) {
            Some(idx) => {
                bins[idx].push(r.rss_db);
                in_grid += 1;
            }
            None => out_of_grid += 1,
        }
    }

    let mut count = Vec::with_capacity(bins.len());
    let mut variance = Vec::with_capacity(bins.len());
    let mut valid = Vec::with_capacity(bins.len());
    for samples in &mut bins {
        // Fixed summation order regardless of input order.
        samples.sort_by(|a, b| a.total_cmp(b));
        count.push(samples.len());
        if samples.len() >= min_count {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            variance.push(var);
            valid.push(true);
        } else {
            variance.push(f64::NAN);
            valid.push(false);
        }
    }
    Ok(BinnedVariance {
        spec: *grid,
        count,
        variance,
        valid,
        min_count,
        in_grid,
        out_of_grid,
    })
}

/// Agreement metrics between an empirical variance surface and a model
/// surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Spearman rank correlation over jointly valid bins.
    pub spearman: f64,
    /// Distance between the two argmax cells (normalized units).
    pub peak_distance: f64,
    /// Jaccard overlap of the top-decile cells.
    pub top_decile_jaccard: f64,
    pub joint_bins: usize,
}

/// Compares an empirical surface to a model surface.
///
/// When the grids differ, the model is resampled by cell-center lookup onto
/// the empirical grid. Fails with [`Error::NoOverlap`] when fewer than 10
/// bins are valid in both.
pub fn compare_surfaces(
    empirical: &BinnedVariance,
    model: &SurfaceGrid,
) -> Result<ComparisonReport> {
    let spec = empirical.spec;
    // Model values aligned to the empirical lattice.
    let mut model_vals = Vec::with_capacity(spec.cell_count());
    let mut model_valid = Vec::with_capacity(spec.cell_count());
    if model.spec == spec {
        model_vals.extend_from_slice(&model.values);
        model_valid.extend_from_slice(&model.valid);
    } else {
        for idx in 0..spec.cell_count() {
            let (ix, iy) = spec.split_index(idx);
            match model.spec.bin_of(spec.point(ix, iy)) {
                Some(m) => {
                    model_vals.push(model.values[m]);
                    model_valid.push(model.valid[m]);
                }
                None => {
                    model_vals.push(f64::NAN);
                    model_valid.push(false);
                }
            }
        }
    }

    let joint: Vec<usize> = (0..spec.cell_count())
        .filter(|&i| {
            empirical.valid[i]
                && model_valid[i]
                && empirical.variance[i].is_finite()
                && model_vals[i].is_finite()
        })
        .collect();
    if joint.len() < 10 {
        return Err(Error::NoOverlap { joint: joint.len() });
    }

    let emp: Vec<f64> = joint.iter().map(|&i| empirical.variance[i]).collect();
    let mdl: Vec<f64> = joint.iter().map(|&i| model_vals[i]).collect();
    let spearman = pearson(&ranks(&emp), &ranks(&mdl));

    let peak_of = |vals: &[f64]| -> usize {
        let mut best = 0usize;
        for (k, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = k;
            }
        }
        joint[best]
    };
    let pe = peak_of(&emp);
    let pm = peak_of(&mdl);
    let (ex, ey) = spec.split_index(pe);
    let (mx, my) = spec.split_index(pm);
    let peak_distance = spec.point(ex, ey).distance(spec.point(mx, my));

    let decile = joint.len().div_ceil(10);
    let top_set = |vals: &[f64]| -> Vec<usize> {
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        order.truncate(decile);
        order.iter().map(|&k| joint[k]).collect()
    };
    let te = top_set(&emp);
    let tm = top_set(&mdl);
    let inter = te.iter().filter(|i| tm.contains(i)).count();
    let union = te.len() + tm.len() - inter;
    let top_decile_jaccard = inter as f64 / union as f64;

    Ok(ComparisonReport {
        spearman,
        peak_distance,
        top_decile_jaccard,
        joint_bins: joint.len(),
    })
}

/// Average ranks (ties share the mean of their rank range).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

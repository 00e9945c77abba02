//! Grid evaluation, parameter sweeps, and serialized surface outputs.
//!
//! Surfaces are sampled on a regular lattice; for binning purposes each
//! lattice point owns the half-open square cell centered on it (the last
//! edge of the grid is closed so the cells tile the domain exactly). No
//! plotting happens here — grids and cuts are written as CSV plus a JSON
//! metadata sidecar for external plotters.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etap::{etap_value, EtapSurface, Mechanism, Scenario};
use crate::geometry::{LinkGeometry, Vec2, Vec3};
use crate::propagation::{power_scatter, PropagationParams};
use crate::quad::QuadratureSettings;

/// Regular lattice over a rectangle: points `x_min + i * step` by
/// `y_min + j * step`, both endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid step must be positive, got {step}"
            )));
        }
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::InvalidArgument(
                "grid extent must be nonempty on both axes".into(),
            ));
        }
        let spec = GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            step,
        };
        if spec.nx() < 2 || spec.ny() < 2 {
            return Err(Error::InvalidArgument(
                "grid must contain at least 2x2 cells".into(),
            ));
        }
        Ok(spec)
    }

    /// Square lattice over `[-2, 2]^2` at 0.05 m, the default figure grid.
    pub fn default_figure_grid() -> GridSpec {
        GridSpec::new(-2.0, 2.0, -2.0, 2.0, 0.05).expect("static grid is valid")
    }

    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.step).round() as usize + 1
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.step).round() as usize + 1
    }

    pub fn cell_count(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x_min + ix as f64 * self.step
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.y_min + iy as f64 * self.step
    }

    pub fn point(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(self.x_at(ix), self.y_at(iy))
    }

    /// Row-major index of cell (ix, iy).
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    pub fn split_index(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx(), idx / self.nx())
    }

    /// The cell owning point `p`, if `p` lies inside the tiled domain.
    ///
    /// Cells are half-open `[c - step/2, c + step/2)` around their lattice
    /// point; the outermost edges on the max side are closed so every
    /// in-domain point lands in exactly one cell.
    pub fn bin_of(&self, p: Vec2) -> Option<usize> {
        let ix = self.bin_axis(p.x, self.x_min, self.nx())?;
        let iy = self.bin_axis(p.y, self.y_min, self.ny())?;
        Some(self.index(ix, iy))
    }

    fn bin_axis(&self, v: f64, min: f64, n: usize) -> Option<usize> {
        let rel = (v - min) / self.step + 0.5;
        if rel < 0.0 {
            return None;
        }
        let idx = rel.floor() as usize;
        if idx < n {
            Some(idx)
        } else if idx == n && rel == n as f64 {
            // Closing the final edge keeps the tiling exhaustive.
            Some(n - 1)
        } else {
            None
        }
    }
}

/// Location and raw value of the designated 0 dB peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakInfo {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub raw_value: f64,
}

/// Descriptive metadata carried by every exported surface.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurfaceMetadata {
    /// What the values are: e.g. "etap_db_rel_max", "etap", "cassini_power",
    /// "rss_variance_db2".
    pub quantity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PropagationParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub person_diameter: Option<f64>,
    /// Present on dB-normalized surfaces; ties in the raw maximum are broken
    /// by the lowest row-major index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak: Option<PeakInfo>,
    /// Resolved run configuration and artifact version, attached by the CLI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// A sampled surface: row-major values with per-cell validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub metadata: SurfaceMetadata,
}

impl SurfaceGrid {
    /// Index of the largest valid value; ties go to the lowest row-major
    /// index.
    pub fn argmax_valid(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (&v, &ok)) in self.values.iter().zip(&self.valid).enumerate() {
            if ok && v.is_finite() {
                match best {
                    Some((_, bv)) if v <= bv => {}
                    _ => best = Some((i, v)),
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

impl EtapSurface {
    /// Raw ETAP values; flagged cells keep their values but are marked
    /// invalid, holes become NaN.
    pub fn raw_grid(&self, mut metadata: SurfaceMetadata) -> SurfaceGrid {
        metadata.quantity = "etap".into();
        metadata.mechanism = Some(self.mechanism.label());
        let (values, valid) = self
            .cells
            .iter()
            .map(|c| match c {
                Ok(r) => (r.value, r.flags.is_empty() && r.value.is_finite()),
                Err(_) => (f64::NAN, false),
            })
            .unzip();
        SurfaceGrid {
            spec: self.grid,
            values,
            valid,
            metadata,
        }
    }

    /// dB relative to the maximum over unflagged cells:
    /// `10 log10(value / max)`. Exactly one cell carries 0 dB — the
    /// designated peak recorded in the metadata (raw ties broken by lowest
    /// row-major index).
    pub fn db_grid(&self, mut metadata: SurfaceMetadata) -> Result<SurfaceGrid> {
        let peak_idx = self
            .unflagged_indices()
            .max_by(|&i, &j| {
                let (vi, vj) = (self.value_at(i).unwrap(), self.value_at(j).unwrap());
                vi.total_cmp(&vj).then(j.cmp(&i))
            })
            .ok_or_else(|| {
                Error::InvalidArgument("surface has no unflagged cells to normalize by".into())
            })?;
        let peak_value = self.value_at(peak_idx).expect("peak cell evaluated");
        if !(peak_value.is_finite() && peak_value > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "surface maximum must be positive to normalize, got {peak_value}"
            )));
        }
        let (ix, iy) = self.grid.split_index(peak_idx);
        metadata.quantity = "etap_db_rel_max".into();
        metadata.mechanism = Some(self.mechanism.label());
        metadata.peak = Some(PeakInfo {
            index: peak_idx,
            x: self.grid.x_at(ix),
            y: self.grid.y_at(iy),
            raw_value: peak_value,
        });
        let (values, valid) = self
            .cells
            .iter()
            .map(|c| match c {
                Ok(r) if r.value.is_finite() => {
                    (10.0 * (r.value / peak_value).log10(), r.flags.is_empty())
                }
                _ => (f64::NAN, false),
            })
            .unzip();
        Ok(SurfaceGrid {
            spec: self.grid,
            values,
            valid,
            metadata,
        })
    }
}

/// A 1-D cut: ETAP sampled along a horizontal line of constant y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutLine {
    pub y: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub step: f64,
}

impl CutLine {
    pub fn new(y: f64, x_min: f64, x_max: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && x_max > x_min) {
            return Err(Error::InvalidArgument(
                "cut line needs a positive step and nonempty extent".into(),
            ));
        }
        Ok(CutLine {
            y,
            x_min,
            x_max,
            step,
        })
    }

    /// Fig-style default: y = 0.1, x in [-2, 2] at 0.05 m.
    pub fn default_figure_cut() -> CutLine {
        CutLine::new(0.1, -2.0, 2.0, 0.05).expect("static cut is valid")
    }

    pub fn len(&self) -> usize {
        ((self.x_max - self.x_min) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.step
    }
}

/// One evaluated cut of a sweep, in both raw and dB-relative-to-sweep-max
/// form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCut {
    /// The swept parameter's value for this cut (n_p or dz).
    pub param_value: f64,
    pub raw: Vec<f64>,
    pub db: Vec<f64>,
    pub valid: Vec<bool>,
}

/// A family of cuts normalized to the single global maximum across every cut
/// in the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param_name: String,
    pub line: CutLine,
    pub cuts: Vec<SweepCut>,
    /// (cut index, sample index) of the global 0 dB point.
    pub peak: (usize, usize),
}

fn evaluate_cut(
    scn_template: &Scenario,
    line: &CutLine,
    mechanism: Mechanism,
    quad: &QuadratureSettings,
) -> Vec<std::result::Result<crate::etap::EtapResult, String>> {
    (0..line.len())
        .into_par_iter()
        .map(|i| {
            scn_template
                .with_person_at(line.x_at(i), line.y)
                .and_then(|scn| etap_value(&scn, mechanism, quad))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn normalize_cuts(
    param_name: &str,
    line: &CutLine,
    evaluated: Vec<(
        f64,
        Vec<std::result::Result<crate::etap::EtapResult, String>>,
    )>,
) -> Result<SweepResult> {
    let mut peak: Option<(usize, usize, f64)> = None;
    for (ci, (_, cells)) in evaluated.iter().enumerate() {
        for (xi, cell) in cells.iter().enumerate() {
            if let Ok(r) = cell {
                if r.flags.is_empty() && r.value.is_finite() {
                    match peak {
                        Some((_, _, bv)) if r.value <= bv => {}
                        _ => peak = Some((ci, xi, r.value)),
                    }
                }
            }
        }
    }
    let (pci, pxi, pv) = peak.ok_or_else(|| {
        Error::InvalidArgument("sweep has no unflagged samples to normalize by".into())
    })?;
    let cuts = evaluated
        .into_iter()
        .map(|(param_value, cells)| {
            let mut raw = Vec::with_capacity(cells.len());
            let mut db = Vec::with_capacity(cells.len());
            let mut valid = Vec::with_capacity(cells.len());
            for cell in cells {
                match cell {
                    Ok(r) if r.value.is_finite() => {
                        raw.push(r.value);
                        db.push(10.0 * (r.value / pv).log10());
                        valid.push(r.flags.is_empty());
                    }
                    _ => {
                        raw.push(f64::NAN);
                        db.push(f64::NAN);
                        valid.push(false);
                    }
                }
            }
            SweepCut {
                param_value,
                raw,
                db,
                valid,
            }
        })
        .collect();
    Ok(SweepResult {
        param_name: param_name.into(),
        line: *line,
        cuts,
        peak: (pci, pxi),
    })
}

/// Reflection-ETAP cuts for each path loss exponent in `np_list`, normalized
/// to the global maximum across the whole sweep. Exponents <= 2 require the
/// settings to carry a truncation cap.
pub fn sweep_np(
    scn_template: &Scenario,
    line: &CutLine,
    np_list: &[f64],
    quad: &QuadratureSettings,
) -> Result<SweepResult> {
    if np_list.is_empty() {
        return Err(Error::InvalidArgument(
            "np sweep needs at least one value".into(),
        ));
    }
    let mut evaluated = Vec::with_capacity(np_list.len());
    for &np in np_list {
        let mut scn = *scn_template;
        scn.params = PropagationParams::new(scn.params.c_s, scn.params.c_r, np)?;
        if np <= 2.0 && quad.alpha_cap.is_none() {
            return Err(Error::DivergentTail { np });
        }
        evaluated.push((np, evaluate_cut(&scn, line, Mechanism::Reflect, quad)));
    }
    normalize_cuts("np", line, evaluated)
}

/// ETAP cuts for each node height in `dz_list` (the nodes of the template
/// link are re-seated at z = dz), same global normalization convention.
pub fn sweep_dz(
    scn_template: &Scenario,
    line: &CutLine,
    dz_list: &[f64],
    mechanism: Mechanism,
    quad: &QuadratureSettings,
) -> Result<SweepResult> {
    if dz_list.is_empty() {
        return Err(Error::InvalidArgument(
            "dz sweep needs at least one value".into(),
        ));
    }
    let mut evaluated = Vec::with_capacity(dz_list.len());
    for &dz in dz_list {
        let link = LinkGeometry::with_height(
            scn_template.link.tx().xy(),
            scn_template.link.rx().xy(),
            dz,
        )?;
        let scn = Scenario {
            link,
            ..*scn_template
        };
        evaluated.push((dz, evaluate_cut(&scn, line, mechanism, quad)));
    }
    normalize_cuts("dz", line, evaluated)
}

/// Scattered-power surface over the grid (Cassini-oval contours), for
/// contour plotting. Cells within 1e-9 m of a node become holes.
pub fn cassini_surface(link: &LinkGeometry, grid: &GridSpec, c_s: f64) -> Result<SurfaceGrid> {
    let params = PropagationParams::new(c_s, 1.0, 2.0)?;
    let (values, valid): (Vec<f64>, Vec<bool>) = (0..grid.cell_count())
        .into_par_iter()
        .map(|idx| {
            let (ix, iy) = grid.split_index(idx);
            let p = grid.point(ix, iy);
            match power_scatter(link, Vec3::new(p.x, p.y, 0.0), &params) {
                Ok(v) => (v, true),
                Err(_) => (f64::NAN, false),
            }
        })
        .unzip();
    Ok(SurfaceGrid {
        spec: *grid,
        values,
        valid,
        metadata: SurfaceMetadata {
            quantity: "cassini_power".into(),
            params: Some(params),
            dz: Some(link.dz()),
            ..Default::default()
        },
    })
}

/// Serialization format for grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFormat {
    Csv,
    Json,
}

/// Formats a value to 6 significant digits, the exchange precision of the
/// CSV grid format. Parsing and re-exporting is byte-stable.
fn fmt6(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.5e}")
    }
}

/// Path of the JSON metadata sidecar that accompanies a CSV export.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut os = csv_path.as_os_str().to_os_string();
    os.push(".meta.json");
    PathBuf::from(os)
}

/// Writes a surface to `path`.
///
/// CSV: header `x,y,value,valid`, one row per cell (6 significant digits,
/// LF endings), plus a `<path>.meta.json` sidecar carrying the spec and
/// metadata. JSON: a single self-describing document.
pub fn export_grid(surface: &SurfaceGrid, path: &Path, format: GridFormat) -> Result<()> {
    match format {
        GridFormat::Csv => {
            let mut out = String::with_capacity(surface.values.len() * 40 + 16);
            out.push_str("x,y,value,valid\n");
            for idx in 0..surface.values.len() {
                let (ix, iy) = surface.spec.split_index(idx);
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt6(surface.spec.x_at(ix)),
                    fmt6(surface.spec.y_at(iy)),
                    fmt6(surface.values[idx]),
                    if surface.valid[idx] { 1 } else { 0 },
                ));
            }
            write_atomic(path, out.as_bytes())?;
            let sidecar = serde_json::json!({
                "spec": surface.spec,
                "metadata": surface.metadata,
            });
            write_atomic(
                &sidecar_path(path),
                serde_json::to_string_pretty(&sidecar)
                    .expect("metadata serializes")
                    .as_bytes(),
            )
        }
        GridFormat::Json => {
            let doc = serde_json::to_string_pretty(surface).expect("surface serializes");
            write_atomic(path, doc.as_bytes())
        }
    }
}

/// Reads a surface previously written by [`export_grid`].
pub fn import_grid(path: &Path, format: GridFormat) -> Result<SurfaceGrid> {
    match format {
        GridFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let sidecar_file = sidecar_path(path);
            let sidecar_text =
                fs::read_to_string(&sidecar_file).map_err(|e| Error::io(&sidecar_file, e))?;
            let sidecar: serde_json::Value =
                serde_json::from_str(&sidecar_text).map_err(|e| Error::SchemaMismatch {
                    path: sidecar_file.clone(),
                    detail: format!("invalid sidecar JSON: {e}"),
                })?;
            let spec: GridSpec = serde_json::from_value(sidecar["spec"].clone()).map_err(|e| {
                Error::SchemaMismatch {
                    path: sidecar_file.clone(),
                    detail: format!("invalid grid spec: {e}"),
                }
            })?;
            let metadata: SurfaceMetadata = serde_json::from_value(sidecar["metadata"].clone())
                .map_err(|e| Error::SchemaMismatch {
                    path: sidecar_file,
                    detail: format!("invalid metadata: {e}"),
                })?;
            let mut lines = text.lines();
            match lines.next() {
                Some("x,y,value,valid") => {}
                other => {
                    return Err(Error::SchemaMismatch {
                        path: path.into(),
                        detail: format!("expected header 'x,y,value,valid', got {other:?}"),
                    })
                }
            }
            let mut values = Vec::with_capacity(spec.cell_count());
            let mut valid = Vec::with_capacity(spec.cell_count());
            for (n, line) in lines.enumerate() {
                let mut fields = line.split(',');
                let bad = || Error::SchemaMismatch {
                    path: path.into(),
                    detail: format!("malformed data row {}", n + 2),
                };
                let _x = fields.next().ok_or_else(bad)?;
                let _y = fields.next().ok_or_else(bad)?;
                let value: f64 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let flag = match fields.next().ok_or_else(bad)? {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad()),
                };
                values.push(value);
                valid.push(flag);
            }
            if values.len() != spec.cell_count() {
                return Err(Error::SchemaMismatch {
                    path: path.into(),
                    detail: format!(
                        "expected {} data rows, found {}",
                        spec.cell_count(),
                        values.len()
                    ),
                });
            }
            Ok(SurfaceGrid {
                spec,
                values,
                valid,
                metadata,
            })
        }
        GridFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch {
                path: path.into(),
                detail: format!("invalid surface JSON: {e}"),
            })
        }
    }
}

/// Writes a sweep: one CSV per cut (`<stem>_<param><value>.csv` with columns
/// `x,value_db,value,valid`) plus a single JSON document at `<stem>.json`.
pub fn export_sweep(sweep: &SweepResult, stem: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for cut in &sweep.cuts {
        let name = format!(
            "{}_{}{}.csv",
            stem.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sweep".into()),
            sweep.param_name,
            cut.param_value
        );
        let path = stem.with_file_name(name);
        let mut out = String::new();
        out.push_str("x,value_db,value,valid\n");
        for i in 0..cut.raw.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt6(sweep.line.x_at(i)),
                fmt6(cut.db[i]),
                fmt6(cut.raw[i]),
                if cut.valid[i] { 1 } else { 0 },
            ));
        }
        write_atomic(&path, out.as_bytes())?;
        written.push(path);
    }
    let json_path = stem.with_extension("json");
    write_atomic(
        &json_path,
        serde_json::to_string_pretty(sweep)
            .expect("sweep serializes")
            .as_bytes(),
    )?;
    written.push(json_path);
    Ok(written)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

//! Run configuration: a JSON-loadable document whose resolved form is
//! embedded into every output for provenance. Command-line flags override
//! individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etap::Mechanism;
use crate::geometry::Vec2;
use crate::propagation::PropagationParams;
use crate::quad::QuadratureSettings;
use crate::simulator::Region;
use crate::surface::{CutLine, GridSpec};

/// Link placement: plan-view node positions plus the shared height above the
/// scatterer plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub tx: [f64; 2],
    pub rx: [f64; 2],
    pub dz: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            tx: [-1.0, 0.0],
            rx: [1.0, 0.0],
            dz: 0.1,
        }
    }
}

impl LinkConfig {
    pub fn build(&self) -> Result<crate::geometry::LinkGeometry> {
        crate::geometry::LinkGeometry::with_height(
            Vec2::new(self.tx[0], self.tx[1]),
            Vec2::new(self.rx[0], self.rx[1]),
            self.dz,
        )
    }
}

/// One surveyed node of a synthetic site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSite {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Settings for the synthetic dataset generator and the ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Synthetic site survey.
    pub nodes: Vec<NodeSite>,
    /// Links measured during the synthetic walk, as (tx_id, rx_id).
    pub links: Vec<(String, String)>,
    /// Scatterer region for the site simulation (site frame).
    pub region: Region,
    /// Person positions walked during the synthetic experiment.
    pub track: GridSpec,
    /// RSS samples recorded per (link, position).
    pub samples_per_position: usize,
    /// Independent walks per link. Each walk fixes one scatterer field (one
    /// environment) through which the person moves, matching how a real
    /// campaign sees a single environment per link.
    pub walks_per_link: usize,
    /// Person diameter in the site frame (meters).
    pub person_diameter: f64,
    /// Scatterer density in the site frame (per m^2).
    pub eta: f64,
    /// Person positions for the model-frame ensemble regression.
    pub ensemble_positions: Vec<[f64; 2]>,
    /// Scatterer region for the model-frame ensemble.
    pub ensemble_region: Region,
    pub ensemble_realizations: usize,
    pub ensemble_samples: usize,
    /// Also inject the person's own scatter-path into each realization.
    pub include_new_path: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            // One measured link: pooling raw RSS from links with different
            // static levels into shared bins adds a level-difference variance
            // unrelated to the person's position, which buries the surface.
            nodes: vec![
                NodeSite {
                    id: "n1".into(),
                    x: 0.0,
                    y: 0.0,
                    z: 0.2,
                },
                NodeSite {
                    id: "n2".into(),
                    x: 4.0,
                    y: 0.0,
                    z: 0.2,
                },
            ],
            links: vec![("n1".into(), "n2".into())],
            region: Region {
                x_min: -8.0,
                x_max: 12.0,
                y_min: -10.0,
                y_max: 10.0,
            },
            track: GridSpec {
                x_min: -1.0,
                x_max: 5.0,
                y_min: -3.0,
                y_max: 3.0,
                step: 0.5,
            },
            samples_per_position: 80,
            walks_per_link: 1,
            person_diameter: 1.0,
            eta: 3.0,
            ensemble_positions: default_ensemble_positions(),
            ensemble_region: Region {
                x_min: -4.0,
                x_max: 4.0,
                y_min: -4.0,
                y_max: 4.0,
            },
            ensemble_realizations: 200,
            ensemble_samples: 100,
            include_new_path: false,
        }
    }
}

fn default_ensemble_positions() -> Vec<[f64; 2]> {
    // 25 positions around the 2 m link, chosen to keep the realized
    // K-factors mostly inside the affine band of the variance curve while
    // spanning a wide affected-power range.
    let mut out = Vec::new();
    for &y in &[0.25, 0.4, 0.6, 0.8, 1.05] {
        for &x in &[-1.2, -0.6, 0.0, 0.6, 1.2] {
            out.push([x, y]);
        }
    }
    out
}

/// Settings for the ingestion pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Bin grid over the normalized person position.
    pub grid: GridSpec,
    /// Bins with fewer samples than this are left invalid.
    pub min_count: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            grid: GridSpec {
                x_min: -2.0,
                x_max: 2.0,
                y_min: -2.0,
                y_max: 2.0,
                step: 0.25,
            },
            min_count: 10,
        }
    }
}

/// Sizes and tolerances of the validation checks. Tolerances default to the
/// acceptance thresholds; sizes can be shrunk for quick runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    /// Random geometries for the closed-form vs quadrature comparison.
    pub geometries: usize,
    pub closed_vs_quad_rel_tol: f64,
    /// Monte Carlo draws for the expected-log gaps.
    pub log_gap_draws: usize,
    /// Monte Carlo draws for the envelope-variance cross-check.
    pub var_mc_draws: usize,
    pub var_mc_agree_db2: f64,
    pub fit_max_residual_db2: f64,
    /// Ensemble regression size.
    pub ensemble_positions: usize,
    pub ensemble_realizations: usize,
    pub ensemble_samples: usize,
    pub r2_min: f64,
    /// Monte Carlo vs analytic ETAP.
    pub mc_etap_fields: usize,
    pub mc_etap_eta: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    /// Grid step for the figure-shape checks.
    pub shape_grid_step: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            geometries: 200,
            closed_vs_quad_rel_tol: 1e-6,
            log_gap_draws: 10_000_000,
            var_mc_draws: 10_000_000,
            var_mc_agree_db2: 0.1,
            fit_max_residual_db2: 1.5,
            ensemble_positions: 25,
            ensemble_realizations: 200,
            ensemble_samples: 100,
            r2_min: 0.9,
            mc_etap_fields: 3000,
            mc_etap_eta: 4.0,
            ratio_lo: 0.85,
            ratio_hi: 1.15,
            shape_grid_step: 0.05,
        }
    }
}

/// Exchange metadata written by `simulate` and consumed by `ingest`: the
/// generating mechanism expressed in the normalized link frame, plus the
/// ensemble's fitted variance map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    /// Fitted slope of variance vs 10 log10(affected power).
    pub a1: f64,
    /// Fitted intercept.
    pub a2: f64,
    pub r_squared: f64,
    pub mechanism: Mechanism,
    pub params: PropagationParams,
    /// Node height in the normalized frame.
    pub dz_norm: f64,
    /// Person diameter in the normalized frame.
    pub person_diameter_norm: f64,
    pub provenance: serde_json::Value,
}

/// The resolved run configuration. Serialized in full into every output's
/// provenance block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means "let the runtime decide". Outputs do not
    /// depend on this.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub link: LinkConfig,
    pub person_diameter: f64,
    pub eta: f64,
    pub params: PropagationParams,
    pub mechanism: Mechanism,
    pub grid: GridSpec,
    pub cut: CutLine,
    pub quad: QuadratureSettings,
    pub np_values: Vec<f64>,
    pub dz_values: Vec<f64>,
    pub simulate: SimulateConfig,
    pub ingest: IngestConfig,
    pub validate: ValidateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20260808,
            workers: 0,
            out_dir: PathBuf::from("out"),
            link: LinkConfig::default(),
            person_diameter: 0.1,
            eta: 1.0,
            params: PropagationParams::default(),
            mechanism: Mechanism::Scatter,
            grid: GridSpec::default_figure_grid(),
            cut: CutLine::default_figure_cut(),
            quad: QuadratureSettings::default(),
            np_values: vec![2.0, 3.0, 4.0, 5.0],
            dz_values: vec![0.1, 0.5, 1.0, 2.4],
            simulate: SimulateConfig::default(),
            ingest: IngestConfig::default(),
            validate: ValidateConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch {
                    path: p.into(),
                    detail: format!("invalid config JSON: {e}"),
                })
            }
        }
    }

    /// Provenance block embedded in outputs: the resolved config plus the
    /// artifact version. The worker count is normalized out — outputs do not
    /// depend on it, and recording it would break byte-identity across
    /// worker counts.
    pub fn provenance(&self) -> serde_json::Value {
        let mut normalized = self.clone();
        normalized.workers = 0;
        serde_json::json!({
            "version": crate::VERSION,
            "config": normalized,
        })
    }
}

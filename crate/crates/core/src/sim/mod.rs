//! Synthetic four-leg intersection: geometry, vehicles, constant-speed
//! trajectory prediction, the geometric conflict oracle and frame rendering.

pub mod dataset;
pub mod geometry;
pub mod oracle;
pub mod path;
pub mod render;
pub mod sampler;
pub mod trajectory;
pub mod vehicle;

use std::io::{BufRead, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::model::ConflictLabel;

pub use dataset::{sample_dataset, synthesize, SynthesisConfig, Synthesized};
pub use geometry::{default_geometry, IntersectionGeometry, Leg, Movement, Priority, Route};
pub use oracle::{conflict_oracle, ConflictPair, OracleAnalysis};
pub use path::{Pose, Vec2};
pub use render::{render_frames, render_raster, RenderConfig, RenderedFrame, TRIPLET_TIMES};
pub use sampler::{sample_scenario, sample_scenario_for, GeneratorConfig};
pub use trajectory::{predict_trajectory, OracleParams, Trajectory, TrajectorySample};
pub use vehicle::{Vehicle, VehicleClass};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("vehicle {vehicle} is {distance:.2} m from its route centerline")]
    OffRoute { vehicle: String, distance: f64 },
    #[error("could not place vehicles without overlap ({placed} placed, {attempts} retries each)")]
    PlacementFailure { placed: usize, attempts: u32 },
    #[error("vehicle {vehicle} falls outside the image at t = {t} s")]
    RenderBounds { vehicle: String, t: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("invalid oracle or render parameters: {0}")]
    InvalidParams(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub geometry: IntersectionGeometry,
    pub vehicles: Vec<Vehicle>,
    pub seed: u64,
    pub oracle_label: ConflictLabel,
    pub conflict_pairs: Vec<ConflictPair>,
}

impl Scenario {
    /// Recompute the label and pairs under `params`.
    pub fn relabel(&mut self, params: &OracleParams) -> Result<(), SimError> {
        let (label, pairs) = conflict_oracle(&self.geometry, &self.vehicles, params)?;
        self.oracle_label = label;
        self.conflict_pairs = pairs;
        Ok(())
    }

    pub fn vehicle(&self, id: &str) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }
}

/// Write scenarios as line-delimited JSON, one scenario per line.
pub fn write_scenarios(path: &FsPath, scenarios: &[Scenario]) -> Result<(), SimError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scenarios {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenarios(path: &FsPath) -> Result<Vec<Scenario>, SimError> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

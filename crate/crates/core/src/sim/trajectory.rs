//! Constant-speed motion along route centerlines.

use serde::{Deserialize, Serialize};

use super::geometry::IntersectionGeometry;
use super::path::{Path, Pose};
use super::vehicle::Vehicle;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Prediction horizon in seconds.
    pub horizon: f64,
    /// Sampling step in seconds.
    pub dt: f64,
    /// Post-encroachment gap below which shared space counts as a conflict.
    pub gap_threshold: f64,
    /// Side of the square cells used to rasterize swept footprints, meters.
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
}

fn default_cell_size() -> f64 {
    0.25
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams { horizon: 6.0, dt: 0.1, gap_threshold: 1.5, cell_size: default_cell_size() }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.horizon > 0.0
            && self.dt > 0.0
            && self.dt <= self.horizon
            && self.gap_threshold > 0.0
            && self.cell_size > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParams(format!("{self:?}")))
        }
    }

    /// Sample times `0, dt, 2dt, ...` up to the horizon.
    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        let steps = (self.horizon / self.dt + 1e-9).floor() as usize;
        (0..=steps).map(move |k| k as f64 * self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Arc length along the route centerline; zero for stationary vehicles.
    pub station: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub samples: Vec<TrajectorySample>,
    pub dt: f64,
    pub horizon: f64,
}

/// How a vehicle moves over time.
#[derive(Debug, Clone)]
pub enum Motion {
    Stationary(Pose),
    AlongPath { path: Path, start_station: f64, speed: f64 },
}

impl Motion {
    pub fn for_vehicle(v: &Vehicle, g: &IntersectionGeometry) -> Result<Motion, SimError> {
        if v.parked {
            return Ok(Motion::Stationary(v.pose));
        }
        let path = g.route_path(&v.route)?;
        let (station, distance) = path.project(v.pose.position());
        if distance > g.lane_width {
            return Err(SimError::OffRoute { vehicle: v.id.clone(), distance });
        }
        Ok(Motion::AlongPath { path, start_station: station, speed: v.speed })
    }

    pub fn station_at(&self, t: f64) -> f64 {
        match self {
            Motion::Stationary(_) => 0.0,
            Motion::AlongPath { start_station, speed, .. } => start_station + speed * t,
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        match self {
            Motion::Stationary(p) => *p,
            Motion::AlongPath { path, .. } => path.pose_at(self.station_at(t)),
        }
    }

    pub fn sample(&self, vehicle_id: &str, params: &OracleParams) -> Trajectory {
        let samples = params
            .sample_times()
            .map(|t| {
                let p = self.pose_at(t);
                TrajectorySample { t, x: p.x, y: p.y, heading: p.heading, station: self.station_at(t) }
            })
            .collect();
        Trajectory {
            vehicle_id: vehicle_id.to_string(),
            samples,
            dt: params.dt,
            horizon: params.horizon,
        }
    }
}

/// Sample a vehicle's motion along its route centerline over the horizon.
/// Parked vehicles yield a stationary trajectory at their pose.
pub fn predict_trajectory(
    v: &Vehicle,
    g: &IntersectionGeometry,
    params: &OracleParams,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    Ok(Motion::for_vehicle(v, g)?.sample(&v.id, params))
}

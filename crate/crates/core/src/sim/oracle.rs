//! Geometric conflict oracle.
//!
//! Each moving vehicle's footprint is swept over the horizon and rasterized
//! onto a grid covering the conflict zone; every cell remembers the first and
//! last sample time it was occupied. Two vehicles conflict when some shared
//! cell has a post-encroachment gap (time between one vehicle leaving and the
//! other arriving, zero if they overlap) below the threshold. Parked vehicles
//! are ignored, and a stopped sub-road vehicle waiting before the zone is
//! yielding, so any pair it belongs to is resolved by priority.

use serde::{Deserialize, Serialize};

use super::geometry::{IntersectionGeometry, Priority, Zone};
use super::path::Vec2;
use super::trajectory::{Motion, OracleParams};
use super::vehicle::Vehicle;
use super::SimError;
use crate::model::ConflictLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub first: String,
    pub second: String,
    /// Earliest time at which the later of the two vehicles reaches a contested cell.
    pub t_conflict: f64,
    /// Smallest post-encroachment gap over contested cells.
    pub min_gap: f64,
}

/// First/last occupancy time per zone cell for one vehicle.
#[derive(Debug, Clone)]
pub struct Occupancy {
    nx: usize,
    first: Vec<f64>,
    last: Vec<f64>,
    // inclusive cell bounds of occupied cells, if any
    bounds: Option<(usize, usize, usize, usize)>,
}

impl Occupancy {
    pub fn is_empty(&self) -> bool {
        self.bounds.is_none()
    }

    /// Occupied interval of cell (ix, iy), if ever occupied.
    pub fn interval(&self, ix: usize, iy: usize) -> Option<(f64, f64)> {
        let k = iy * self.nx + ix;
        let f = self.first[k];
        (!f.is_nan()).then(|| (f, self.last[k]))
    }
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    zone: Zone,
    cell: f64,
    nx: usize,
    ny: usize,
}

impl Grid {
    fn new(zone: Zone, cell: f64) -> Self {
        let nx = ((zone.max_x - zone.min_x) / cell).ceil() as usize;
        let ny = ((zone.max_y - zone.min_y) / cell).ceil() as usize;
        Grid { zone, cell, nx, ny }
    }

    fn center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.zone.min_x + (ix as f64 + 0.5) * self.cell,
            self.zone.min_y + (iy as f64 + 0.5) * self.cell,
        )
    }

    /// Clamp a world-space interval to a cell index range.
    fn range(&self, lo: f64, hi: f64, origin: f64, n: usize) -> Option<(usize, usize)> {
        let a = ((lo - origin) / self.cell - 0.5).ceil();
        let b = ((hi - origin) / self.cell - 0.5).floor();
        let a = a.max(0.0);
        let b = b.min(n as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    }
}

fn occupancy(v: &Vehicle, motion: &Motion, grid: &Grid, params: &OracleParams) -> Occupancy {
    let n = grid.nx * grid.ny;
    let mut occ = Occupancy {
        nx: grid.nx,
        first: vec![f64::NAN; n],
        last: vec![f64::NAN; n],
        bounds: None,
    };
    for t in params.sample_times() {
        let rect = v.rect_at(motion.pose_at(t));
        let (lo, hi) = rect.bounds();
        let Some((x0, x1)) = grid.range(lo.x, hi.x, grid.zone.min_x, grid.nx) else {
            continue;
        };
        let Some((y0, y1)) = grid.range(lo.y, hi.y, grid.zone.min_y, grid.ny) else {
            continue;
        };
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                if !rect.contains(grid.center(ix, iy)) {
                    continue;
                }
                let k = iy * grid.nx + ix;
                if occ.first[k].is_nan() {
                    occ.first[k] = t;
                }
                occ.last[k] = t;
                occ.bounds = Some(match occ.bounds {
                    None => (ix, iy, ix, iy),
                    Some((a, b, c, d)) => (a.min(ix), b.min(iy), c.max(ix), d.max(iy)),
                });
            }
        }
    }
    occ
}

/// Swept occupancy of every moving vehicle in a scene.
pub struct OracleAnalysis {
    pub movers: Vec<Mover>,
}

pub struct Mover {
    pub id: String,
    pub yielding: bool,
    pub occupancy: Occupancy,
}

impl OracleAnalysis {
    pub fn new(
        geometry: &IntersectionGeometry,
        vehicles: &[Vehicle],
        params: &OracleParams,
    ) -> Result<Self, SimError> {
        params.validate()?;
        let grid = Grid::new(geometry.zone, params.cell_size);
        let mut movers = Vec::new();
        for v in vehicles.iter().filter(|v| !v.parked) {
            let motion = Motion::for_vehicle(v, geometry)?;
            let yielding = geometry.priority(v.route.approach_leg) == Priority::Sub
                && v.speed == 0.0
                && motion.station_at(0.0) < geometry.entry_station();
            movers.push(Mover {
                id: v.id.clone(),
                yielding,
                occupancy: occupancy(v, &motion, &grid, params),
            });
        }
        Ok(OracleAnalysis { movers })
    }

    /// Conflict status of movers `i` and `j` under gap threshold `tau`.
    pub fn pair(&self, i: usize, j: usize, tau: f64) -> Option<ConflictPair> {
        let (a, b) = (&self.movers[i], &self.movers[j]);
        if a.yielding || b.yielding {
            return None;
        }
        let (ba, bb) = (a.occupancy.bounds?, b.occupancy.bounds?);
        let x0 = ba.0.max(bb.0);
        let y0 = ba.1.max(bb.1);
        let x1 = ba.2.min(bb.2);
        let y1 = ba.3.min(bb.3);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        let mut best: Option<(f64, f64)> = None;
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let (Some((af, al)), Some((bf, bl))) =
                    (a.occupancy.interval(ix, iy), b.occupancy.interval(ix, iy))
                else {
                    continue;
                };
                let gap = (af - bl).max(bf - al).max(0.0);
                if gap < tau {
                    let t = af.max(bf);
                    best = Some(match best {
                        None => (t, gap),
                        Some((bt, bg)) => (bt.min(t), bg.min(gap)),
                    });
                }
            }
        }
        best.map(|(t_conflict, min_gap)| {
            let (first, second) = if a.id <= b.id { (&a.id, &b.id) } else { (&b.id, &a.id) };
            ConflictPair { first: first.clone(), second: second.clone(), t_conflict, min_gap }
        })
    }

    pub fn conflicts(&self, tau: f64) -> Vec<ConflictPair> {
        let mut pairs = Vec::new();
        for i in 0..self.movers.len() {
            for j in i + 1..self.movers.len() {
                pairs.extend(self.pair(i, j, tau));
            }
        }
        pairs.sort_by(|p, q| {
            p.t_conflict
                .total_cmp(&q.t_conflict)
                .then_with(|| (&p.first, &p.second).cmp(&(&q.first, &q.second)))
        });
        pairs
    }
}

/// Label a scene: `Conflict` iff at least one pair of movers conflicts.
pub fn conflict_oracle(
    geometry: &IntersectionGeometry,
    vehicles: &[Vehicle],
    params: &OracleParams,
) -> Result<(ConflictLabel, Vec<ConflictPair>), SimError> {
    let pairs = OracleAnalysis::new(geometry, vehicles, params)?.conflicts(params.gap_threshold);
    let label = if pairs.is_empty() { ConflictLabel::NoConflict } else { ConflictLabel::Conflict };
    Ok((label, pairs))
}

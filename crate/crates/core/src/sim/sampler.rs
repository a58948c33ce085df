//! Seeded synthetic scenario generation.
//!
//! A scene draws a target class with probability `conflict_bias`, then
//! generates candidate scenes until the oracle agrees with the target (or the
//! attempt budget runs out, in which case the last candidate is returned with
//! whatever label the oracle gave it). Yielding sub-road vehicles are drawn far
//! more often for no-conflict targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{IntersectionGeometry, Leg, Movement, Priority, Route};
use super::oracle::conflict_oracle;
use super::path::{Path, Pose};
use super::trajectory::OracleParams;
use super::vehicle::{OrientedRect, Vehicle, VehicleClass};
use super::{Scenario, SimError};
use crate::model::ConflictLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Inclusive range of moving (or yielding) vehicles.
    pub n_vehicles: (u32, u32),
    /// Inclusive range of parked roadside vehicles.
    pub n_parked: (u32, u32),
    pub conflict_bias: f64,
    /// Inclusive speed range for moving vehicles, m/s.
    pub speed_range: (f64, f64),
    pub vclass_weights: Vec<(VehicleClass, f64)>,
    /// Chance that a sub-road vehicle waits at the stop line, for conflict targets.
    pub yield_probability: f64,
    /// Same, for no-conflict targets.
    pub yield_probability_calm: f64,
    /// Latest time at which a mover's front bumper reaches the zone.
    pub max_arrival_time: f64,
    pub max_label_attempts: u32,
    pub placement_retries: u32,
    /// Vehicles are kept within this distance of the center so they stay in view.
    pub view_half_extent: f64,
    pub geometry: IntersectionGeometry,
    pub oracle: OracleParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_vehicles: (2, 5),
            n_parked: (0, 2),
            conflict_bias: 0.5,
            speed_range: (4.0, 14.0),
            vclass_weights: vec![
                (VehicleClass::Car, 0.55),
                (VehicleClass::Van, 0.1),
                (VehicleClass::Truck, 0.07),
                (VehicleClass::Bus, 0.06),
                (VehicleClass::Bike, 0.1),
                (VehicleClass::Motorcycle, 0.12),
            ],
            yield_probability: 0.15,
            yield_probability_calm: 0.8,
            max_arrival_time: 3.5,
            max_label_attempts: 60,
            placement_retries: 80,
            view_half_extent: 60.0,
            geometry: super::geometry::default_geometry(),
            oracle: OracleParams::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n_vehicles.0 > self.n_vehicles.1 || self.n_parked.0 > self.n_parked.1 {
            return bad("empty vehicle count range");
        }
        if !(0.0..=1.0).contains(&self.conflict_bias) {
            return bad("conflict_bias must lie in [0, 1]");
        }
        let (lo, hi) = self.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("speed range must be non-negative and ordered");
        }
        if self.vclass_weights.is_empty()
            || self.vclass_weights.iter().any(|(_, w)| *w < 0.0 || !w.is_finite())
            || self.vclass_weights.iter().map(|(_, w)| w).sum::<f64>() <= 0.0
        {
            return bad("vehicle class weights must be non-negative with positive sum");
        }
        for p in [self.yield_probability, self.yield_probability_calm] {
            if !(0.0..=1.0).contains(&p) {
                return bad("yield probabilities must lie in [0, 1]");
            }
        }
        if self.max_arrival_time < 0.0 || self.max_label_attempts == 0 {
            return bad("arrival time and attempt budget must be positive");
        }
        self.geometry.validate()?;
        self.oracle.validate()
    }
}

/// Generate one labeled scenario, deterministic in `(seed, cfg)`.
pub fn sample_scenario(seed: u64, cfg: &GeneratorConfig) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = if rng.random_bool(cfg.conflict_bias) {
        ConflictLabel::Conflict
    } else {
        ConflictLabel::NoConflict
    };
    generate(seed, &mut rng, cfg, target)
}

/// Like [`sample_scenario`] but aims at a fixed class. The result's label may
/// still differ when no matching scene was found within the attempt budget.
pub fn sample_scenario_for(
    seed: u64,
    cfg: &GeneratorConfig,
    target: ConflictLabel,
) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let _ = rng.random_bool(cfg.conflict_bias);
    generate(seed, &mut rng, cfg, target)
}

fn generate(
    seed: u64,
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    target: ConflictLabel,
) -> Result<Scenario, SimError> {
    let mut last = None;
    for _ in 0..cfg.max_label_attempts {
        let vehicles = place_vehicles(rng, cfg, target)?;
        let (label, pairs) = conflict_oracle(&cfg.geometry, &vehicles, &cfg.oracle)?;
        let scenario = Scenario {
            id: format!("scn-{seed:016x}"),
            geometry: cfg.geometry.clone(),
            vehicles,
            seed,
            oracle_label: label,
            conflict_pairs: pairs,
        };
        if label == target {
            return Ok(scenario);
        }
        last = Some(scenario);
    }
    Ok(last.expect("at least one attempt"))
}

struct Placed {
    rect: OrientedRect,
    leg: Leg,
    lane: Option<u8>,
    station: f64,
    length: f64,
    speed: f64,
    stopped: bool,
}

fn pick_class(rng: &mut ChaCha8Rng, weights: &[(VehicleClass, f64)]) -> VehicleClass {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut x = rng.random_range(0.0..total);
    for (c, w) in weights {
        if x < *w {
            return *c;
        }
        x -= w;
    }
    weights.last().unwrap().0
}

fn pick_leg(rng: &mut ChaCha8Rng) -> Leg {
    match rng.random_range(0..10) {
        0..=2 => Leg::West,
        3..=5 => Leg::East,
        6 | 7 => Leg::North,
        _ => Leg::South,
    }
}

fn pick_movement(rng: &mut ChaCha8Rng) -> Movement {
    match rng.random_range(0..4) {
        0 => Movement::Left,
        3 => Movement::Right,
        _ => Movement::Straight,
    }
}

fn place_vehicles(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    target: ConflictLabel,
) -> Result<Vec<Vehicle>, SimError> {
    let g = &cfg.geometry;
    let n_moving = rng.random_range(cfg.n_vehicles.0..=cfg.n_vehicles.1);
    let n_parked = rng.random_range(cfg.n_parked.0..=cfg.n_parked.1);
    let yield_p = match target {
        ConflictLabel::Conflict => cfg.yield_probability,
        ConflictLabel::NoConflict => cfg.yield_probability_calm,
    };
    let zone_half = g.zone.max_x.max(g.zone.max_y);

    let mut placed: Vec<Placed> = Vec::new();
    let mut vehicles = Vec::new();

    for k in 0..n_moving {
        let mut done = false;
        for _ in 0..cfg.placement_retries {
            let leg = pick_leg(rng);
            let movement = pick_movement(rng);
            let through = g.leg(leg).lanes.through_lanes;
            let lane = if movement == Movement::Straight { rng.random_range(0..through) } else { 0 };
            let route = Route { approach_leg: leg, movement, lane };
            let vclass = pick_class(rng, &cfg.vclass_weights);
            let len = vclass.footprint().length;
            let stopped = g.priority(leg) == Priority::Sub && rng.random_bool(yield_p);
            let (station, speed) = if stopped {
                (g.entry_station() - len / 2.0 - 0.5, 0.0)
            } else {
                let speed = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
                let arrival = rng.random_range(0.0..=cfg.max_arrival_time);
                let reach = cfg.view_half_extent - zone_half - len / 2.0 - 1.0;
                let upstream = (speed * arrival + len / 2.0).min(reach);
                (g.entry_station() - upstream, speed)
            };
            let path: Path = g.route_path(&route)?;
            let pose: Pose = path.pose_at(station);
            let vehicle = Vehicle {
                id: format!("v{k}"),
                vclass,
                pose,
                speed,
                route,
                parked: false,
            };
            let candidate = Placed {
                rect: vehicle.rect_at(pose),
                leg,
                lane: Some(g.inbound_lane(&route)?),
                station,
                length: len,
                speed,
                stopped,
            };
            if fits(&candidate, &placed, cfg.oracle.gap_threshold) {
                placed.push(candidate);
                vehicles.push(vehicle);
                done = true;
                break;
            }
        }
        if !done {
            return Err(SimError::PlacementFailure { placed: vehicles.len(), attempts: cfg.placement_retries });
        }
    }

    for k in 0..n_parked {
        let mut done = false;
        for _ in 0..cfg.placement_retries {
            let leg = pick_leg(rng);
            let vclass = if rng.random_bool(0.8) { VehicleClass::Car } else { VehicleClass::Van };
            let fp = vclass.footprint();
            let lo = zone_half + fp.length / 2.0 + 1.0;
            let hi = cfg.view_half_extent - fp.length / 2.0 - 2.0;
            if hi <= lo {
                break;
            }
            let along = rng.random_range(lo..hi);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let pose = parking_pose(g, leg, along, side, fp.width);
            let vehicle = Vehicle {
                id: format!("p{k}"),
                vclass,
                pose,
                speed: 0.0,
                route: Route { approach_leg: leg, movement: Movement::Straight, lane: 0 },
                parked: true,
            };
            let candidate = Placed {
                rect: vehicle.rect_at(pose),
                leg,
                lane: None,
                station: 0.0,
                length: fp.length,
                speed: 0.0,
                stopped: true,
            };
            if fits(&candidate, &placed, cfg.oracle.gap_threshold) {
                placed.push(candidate);
                vehicles.push(vehicle);
                done = true;
                break;
            }
        }
        if !done {
            return Err(SimError::PlacementFailure { placed: vehicles.len(), attempts: cfg.placement_retries });
        }
    }
    Ok(vehicles)
}

/// Curbside parking pose beside `leg`, `along` meters from the center.
fn parking_pose(g: &IntersectionGeometry, leg: Leg, along: f64, side: f64, width: f64) -> Pose {
    let half = |l: Leg| g.leg(l).lanes.inbound_lanes() as f64 * g.lane_width;
    let out = leg.outward().scale(along);
    if leg.is_main() {
        let edge = if side > 0.0 { half(Leg::East) } else { half(Leg::West) };
        Pose { x: out.x, y: side * (edge + width / 2.0 + 0.6), heading: if side > 0.0 { 0.0 } else { std::f64::consts::PI } }
    } else {
        let edge = if side > 0.0 { half(Leg::South) } else { half(Leg::North) };
        Pose {
            x: side * (edge + width / 2.0 + 0.6),
            y: out.y,
            heading: if side > 0.0 { std::f64::consts::FRAC_PI_2 } else { -std::f64::consts::FRAC_PI_2 },
        }
    }
}

fn fits(c: &Placed, placed: &[Placed], tau: f64) -> bool {
    placed.iter().all(|p| {
        if c.rect.inflate(0.5).overlaps(&p.rect) {
            return false;
        }
        if c.lane.is_none() || p.lane.is_none() || c.leg != p.leg || c.lane != p.lane {
            return true;
        }
        let (lead, follow) = if c.station >= p.station { (c, p) } else { (p, c) };
        // nothing moves through a vehicle stopped ahead of it
        if lead.stopped && !follow.stopped {
            return false;
        }
        let spacing = lead.station - follow.station;
        spacing >= (lead.length + follow.length) / 2.0 + 1.0 + follow.speed * tau
    })
}

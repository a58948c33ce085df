//! Oracle property checks shared by the property tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcd_core::model::ConflictLabel;
use tcd_core::sim::{
    conflict_oracle, sample_scenario, GeneratorConfig, Leg, Movement, OracleAnalysis, Pose, Route, Vehicle,
    VehicleClass,
};

use super::brute::{brute_force_conflict_time, StraightMover};
use super::car_on;

pub fn crossing_pair() -> (Vehicle, Vehicle) {
    // westbound lane centerline y = 5.25, northbound x = 1.75; both centers 20 m
    // from the crossing point at 10 m/s
    let wb = car_on("wb", Leg::East, Movement::Straight, 0, 6.75, 10.0);
    let nb = car_on("nb", Leg::South, Movement::Straight, 0, -0.25, 10.0);
    (wb, nb)
}

pub fn brute_crossing(dt: f64) -> f64 {
    let fp = VehicleClass::Car.footprint();
    let wb = StraightMover { x0: 21.75, y0: 5.25, dx: -1.0, dy: 0.0, speed: 10.0, length: fp.length, width: fp.width };
    let nb = StraightMover { x0: 1.75, y0: -14.75, dx: 0.0, dy: 1.0, speed: 10.0, length: fp.length, width: fp.width };
    brute_force_conflict_time(&wb, &nb, (0.35, 3.85), (3.15, 6.65), dt, 6.0, 0.02, 1.5).unwrap()
}

fn random_parked(rng: &mut ChaCha8Rng, id: usize) -> Vehicle {
    let leg = [Leg::West, Leg::East, Leg::North, Leg::South][rng.random_range(0..4)];
    Vehicle {
        id: format!("extra-parked-{id}"),
        vclass: VehicleClass::Van,
        // anywhere, including on lanes and inside the zone
        pose: Pose {
            x: rng.random_range(-40.0..40.0),
            y: rng.random_range(-40.0..40.0),
            heading: rng.random_range(-3.1..3.1),
        },
        speed: 0.0,
        route: Route { approach_leg: leg, movement: Movement::Straight, lane: 0 },
        parked: true,
    }
}

#[derive(Default, Debug)]
pub struct Violations {
    pub symmetry: usize,
    pub monotonicity: usize,
    pub parked: usize,
    pub single: usize,
}

pub fn check_scenario(seed: u64, cfg: &GeneratorConfig, v: &mut Violations) -> ConflictLabel {
    let s = sample_scenario(seed, cfg).unwrap();
    let params = cfg.oracle;
    let analysis = OracleAnalysis::new(&s.geometry, &s.vehicles, &params).unwrap();
    let n = analysis.movers.len();

    for i in 0..n {
        for j in 0..n {
            if i != j && analysis.pair(i, j, params.gap_threshold) != analysis.pair(j, i, params.gap_threshold) {
                v.symmetry += 1;
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for (lo, hi) in [(0.5, 1.5), (1.5, 2.0), (1.5, 3.0)] {
                if analysis.pair(i, j, lo).is_some() && analysis.pair(i, j, hi).is_none() {
                    v.monotonicity += 1;
                }
            }
        }
    }

    let (label, pairs) = conflict_oracle(&s.geometry, &s.vehicles, &params).unwrap();
    assert_eq!(label, s.oracle_label);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut with_parked = s.vehicles.clone();
    for k in 0..rng.random_range(1..3) {
        with_parked.push(random_parked(&mut rng, k));
    }
    let (label2, pairs2) = conflict_oracle(&s.geometry, &with_parked, &params).unwrap();
    if label2 != label || pairs2 != pairs {
        v.parked += 1;
    }

    for mover in s.vehicles.iter().filter(|x| !x.parked) {
        let (l, p) = conflict_oracle(&s.geometry, std::slice::from_ref(mover), &params).unwrap();
        if l != ConflictLabel::NoConflict || !p.is_empty() {
            v.single += 1;
        }
    }
    s.oracle_label
}

impl Violations {
    pub fn total(&self) -> usize {
        self.symmetry + self.monotonicity + self.parked + self.single
    }
}

//! Four-leg unsignalized intersection layout.
//!
//! World frame: meters, origin at the zone center, x east, y north.
//! Right-hand traffic. Inbound lanes of a leg are numbered outward from the
//! road centerline; on main legs the innermost inbound lanes are the dedicated
//! turn lanes and outbound lanes sit opposite the through lanes.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::path::{Path, Segment, Vec2};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    West,
    East,
    North,
    South,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::West, Leg::East, Leg::North, Leg::South];

    /// Unit vector from the zone center toward this leg.
    pub fn outward(self) -> Vec2 {
        match self {
            Leg::West => Vec2::new(-1.0, 0.0),
            Leg::East => Vec2::new(1.0, 0.0),
            Leg::North => Vec2::new(0.0, 1.0),
            Leg::South => Vec2::new(0.0, -1.0),
        }
    }

    /// Heading of traffic entering the intersection from this leg.
    pub fn inbound_heading(self) -> f64 {
        match self {
            Leg::West => 0.0,
            Leg::East => PI,
            Leg::North => -FRAC_PI_2,
            Leg::South => FRAC_PI_2,
        }
    }

    /// Heading of traffic leaving the intersection through this leg.
    pub fn outbound_heading(self) -> f64 {
        match self {
            Leg::West => PI,
            Leg::East => 0.0,
            Leg::North => FRAC_PI_2,
            Leg::South => -FRAC_PI_2,
        }
    }

    pub fn opposite(self) -> Leg {
        match self {
            Leg::West => Leg::East,
            Leg::East => Leg::West,
            Leg::North => Leg::South,
            Leg::South => Leg::North,
        }
    }

    /// Leg reached by turning right from this approach.
    pub fn right_of(self) -> Leg {
        match self {
            Leg::West => Leg::South,
            Leg::South => Leg::East,
            Leg::East => Leg::North,
            Leg::North => Leg::West,
        }
    }

    pub fn left_of(self) -> Leg {
        self.right_of().opposite()
    }

    pub fn is_main(self) -> bool {
        matches!(self, Leg::West | Leg::East)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Left,
    Straight,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Main,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub through_lanes: u8,
    /// Dedicated left-turn lanes; zero means turns share the through lane.
    pub dedicated_turn_lanes: u8,
}

impl LaneSpec {
    pub fn shared(&self) -> bool {
        self.dedicated_turn_lanes == 0
    }

    pub fn inbound_lanes(&self) -> u8 {
        self.through_lanes + self.dedicated_turn_lanes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegSpec {
    pub leg: Leg,
    pub lanes: LaneSpec,
    pub priority: Priority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Zone {
    pub fn square(half: f64) -> Self {
        Zone { min_x: -half, min_y: -half, max_x: half, max_y: half }
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x) * (self.max_y - self.min_y)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        const EPS: f64 = 1e-9;
        p.x >= self.min_x - EPS
            && p.x <= self.max_x + EPS
            && p.y >= self.min_y - EPS
            && p.y <= self.max_y + EPS
    }

    /// Distance from the center to the boundary crossed by a leg.
    fn half_extent(&self, leg: Leg) -> f64 {
        match leg {
            Leg::West => -self.min_x,
            Leg::East => self.max_x,
            Leg::North => self.max_y,
            Leg::South => -self.min_y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    WestEast,
    NorthSouth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub approach_leg: Leg,
    pub movement: Movement,
    /// Index among the through lanes for straight movements on multi-lane
    /// approaches; ignored for turns.
    #[serde(default)]
    pub lane: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionGeometry {
    pub legs: Vec<LegSpec>,
    pub main_axis: Axis,
    pub zone: Zone,
    pub lane_width: f64,
    /// Length of the straight approach and exit runs outside the zone.
    pub approach_length: f64,
}

/// Canonical layout: two through lanes plus one dedicated turn lane per main
/// (West-East) approach, one shared lane each way on the North-South sub road,
/// 30 m square conflict zone, 3.5 m lanes.
pub fn default_geometry() -> IntersectionGeometry {
    let main = LaneSpec { through_lanes: 2, dedicated_turn_lanes: 1 };
    let sub = LaneSpec { through_lanes: 1, dedicated_turn_lanes: 0 };
    IntersectionGeometry {
        legs: vec![
            LegSpec { leg: Leg::West, lanes: main, priority: Priority::Main },
            LegSpec { leg: Leg::East, lanes: main, priority: Priority::Main },
            LegSpec { leg: Leg::North, lanes: sub, priority: Priority::Sub },
            LegSpec { leg: Leg::South, lanes: sub, priority: Priority::Sub },
        ],
        main_axis: Axis::WestEast,
        zone: Zone::square(15.0),
        lane_width: 3.5,
        approach_length: 80.0,
    }
}

impl IntersectionGeometry {
    pub fn leg(&self, leg: Leg) -> &LegSpec {
        self.legs
            .iter()
            .find(|l| l.leg == leg)
            .expect("geometry defines all four legs")
    }

    pub fn priority(&self, leg: Leg) -> Priority {
        self.leg(leg).priority
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for leg in Leg::ALL {
            if self.legs.iter().filter(|l| l.leg == leg).count() != 1 {
                return Err(SimError::InvalidGeometry(format!("leg {leg:?} must appear once")));
            }
            if self.leg(leg).lanes.through_lanes == 0 {
                return Err(SimError::InvalidGeometry(format!("leg {leg:?} has no lanes")));
            }
        }
        if self.zone.area() <= 0.0 || self.lane_width <= 0.0 {
            return Err(SimError::InvalidGeometry("zone and lane width must be positive".into()));
        }
        for leg in Leg::ALL {
            let spec = self.leg(leg);
            let half_width = (spec.lanes.inbound_lanes() as f64) * self.lane_width;
            let lateral = match leg {
                Leg::West | Leg::East => self.zone.max_y.min(-self.zone.min_y),
                Leg::North | Leg::South => self.zone.max_x.min(-self.zone.min_x),
            };
            if half_width >= lateral {
                return Err(SimError::InvalidGeometry(format!(
                    "leg {leg:?} is wider than the zone"
                )));
            }
        }
        Ok(())
    }

    /// Lateral offset from the road centerline of inbound lane `i`, measured
    /// toward the driver's right.
    fn inbound_offset(&self, i: u8) -> f64 {
        (i as f64 + 0.5) * self.lane_width
    }

    /// Offset of outbound lane `j`, measured toward the driver's right when
    /// leaving. Outbound lanes line up with the opposite leg's through lanes.
    fn outbound_offset(&self, leg: Leg, j: u8) -> f64 {
        let turn = self.leg(leg.opposite()).lanes.dedicated_turn_lanes;
        (turn as f64 + j as f64 + 0.5) * self.lane_width
    }

    /// Point where inbound lane `i` of `leg` meets the zone boundary.
    pub fn entry_point(&self, leg: Leg, i: u8) -> Vec2 {
        let out = leg.outward();
        let heading = Vec2::from_heading(leg.inbound_heading());
        out.scale(self.zone.half_extent(leg)) + heading.right().scale(self.inbound_offset(i))
    }

    /// Point where outbound lane `j` of `leg` meets the zone boundary.
    pub fn exit_point(&self, leg: Leg, j: u8) -> Vec2 {
        let out = leg.outward();
        let heading = Vec2::from_heading(leg.outbound_heading());
        out.scale(self.zone.half_extent(leg)) + heading.right().scale(self.outbound_offset(leg, j))
    }

    /// Inbound lane index used by a route.
    pub fn inbound_lane(&self, route: &Route) -> Result<u8, SimError> {
        let lanes = self.leg(route.approach_leg).lanes;
        let turn = lanes.dedicated_turn_lanes;
        match route.movement {
            Movement::Left if turn > 0 => Ok(0),
            Movement::Left => Ok(0),
            Movement::Right => Ok(lanes.inbound_lanes() - 1),
            Movement::Straight => {
                if route.lane >= lanes.through_lanes {
                    return Err(SimError::InvalidRoute(format!(
                        "lane {} on {:?} with {} through lanes",
                        route.lane, route.approach_leg, lanes.through_lanes
                    )));
                }
                Ok(turn + route.lane)
            }
        }
    }

    fn exit_lane(&self, route: &Route) -> (Leg, u8) {
        let from = route.approach_leg;
        match route.movement {
            Movement::Straight => {
                let lane = route.lane;
                (from.opposite(), lane)
            }
            Movement::Right => {
                let to = from.right_of();
                (to, self.leg(to.opposite()).lanes.through_lanes - 1)
            }
            Movement::Left => (from.left_of(), 0),
        }
    }

    /// Full centerline of a route: approach run, in-zone maneuver, exit run.
    pub fn route_path(&self, route: &Route) -> Result<Path, SimError> {
        let from = route.approach_leg;
        let i = self.inbound_lane(route)?;
        let entry = self.entry_point(from, i);
        let h_in = from.inbound_heading();
        let (to, j) = self.exit_lane(route);
        let exit = self.exit_point(to, j);
        let h_out = to.outbound_heading();

        let approach_start = entry - Vec2::from_heading(h_in).scale(self.approach_length);
        let mut segs = vec![Segment::Line {
            start: approach_start,
            heading: h_in,
            length: self.approach_length,
        }];
        match route.movement {
            Movement::Straight => segs.push(Segment::Line {
                start: entry,
                heading: h_in,
                length: (exit - entry).norm(),
            }),
            Movement::Left | Movement::Right => {
                segs.extend_from_slice(Path::turn(entry, h_in, exit, h_out).segments())
            }
        }
        segs.push(Segment::Line { start: exit, heading: h_out, length: self.approach_length });
        Ok(Path::new(segs))
    }

    /// Arc length along the route's path at which it enters the zone.
    pub fn entry_station(&self) -> f64 {
        self.approach_length
    }
}

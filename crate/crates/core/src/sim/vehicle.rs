use serde::{Deserialize, Serialize};

use super::geometry::Route;
use super::path::{Pose, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Bus,
    Van,
    Truck,
    Bike,
    Motorcycle,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 6] = [
        VehicleClass::Car,
        VehicleClass::Bus,
        VehicleClass::Van,
        VehicleClass::Truck,
        VehicleClass::Bike,
        VehicleClass::Motorcycle,
    ];

    /// Footprint (length, width) in meters.
    pub fn footprint(self) -> Footprint {
        let (length, width) = match self {
            VehicleClass::Car => (4.5, 1.8),
            VehicleClass::Bus => (12.0, 2.55),
            VehicleClass::Van => (5.2, 2.0),
            VehicleClass::Truck => (8.0, 2.5),
            VehicleClass::Bike => (1.8, 0.6),
            VehicleClass::Motorcycle => (2.2, 0.8),
        };
        Footprint { length, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: String,
    pub vclass: VehicleClass,
    pub pose: Pose,
    pub speed: f64,
    pub route: Route,
    pub parked: bool,
}

impl Vehicle {
    pub fn footprint(&self) -> Footprint {
        self.vclass.footprint()
    }

    pub fn rect_at(&self, pose: Pose) -> OrientedRect {
        OrientedRect::new(pose, self.footprint())
    }
}

/// Vehicle body as a rectangle centered on the pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub axis: Vec2,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(pose: Pose, fp: Footprint) -> Self {
        OrientedRect {
            center: pose.position(),
            axis: Vec2::from_heading(pose.heading),
            half_length: fp.length / 2.0,
            half_width: fp.width / 2.0,
        }
    }

    pub fn inflate(mut self, margin: f64) -> Self {
        self.half_length += margin;
        self.half_width += margin;
        self
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center;
        d.dot(self.axis).abs() <= self.half_length && d.dot(self.axis.left()).abs() <= self.half_width
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let a = self.axis.scale(self.half_length);
        let b = self.axis.left().scale(self.half_width);
        [
            self.center + a + b,
            self.center + a - b,
            self.center - a - b,
            self.center - a + b,
        ]
    }

    /// Axis-aligned bounds: (min, max).
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let c = self.corners();
        let min = Vec2::new(
            c.iter().map(|p| p.x).fold(f64::INFINITY, f64::min),
            c.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
        );
        let max = Vec2::new(
            c.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max),
            c.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max),
        );
        (min, max)
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let axes = [self.axis, self.axis.left(), other.axis, other.axis.left()];
        let (ca, cb) = (self.corners(), other.corners());
        axes.iter().all(|ax| {
            let (amin, amax) = project(&ca, *ax);
            let (bmin, bmax) = project(&cb, *ax);
            amax >= bmin && bmax >= amin
        })
    }
}

fn project(points: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = p.dot(axis);
        (lo.min(v), hi.max(v))
    })
}

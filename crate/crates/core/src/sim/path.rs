//! Planar centerline paths built from straight lines and circular arcs,
//! parameterized by arc length.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_heading(h: f64) -> Self {
        Vec2::new(h.cos(), h.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    /// Rotated +90 degrees.
    pub fn left(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rotated -90 degrees.
    pub fn right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Line {
        start: Vec2,
        heading: f64,
        length: f64,
    },
    /// Positive `sweep` turns left (counter-clockwise).
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn pose_at(&self, u: f64) -> Pose {
        match *self {
            Segment::Line { start, heading, .. } => {
                let p = start + Vec2::from_heading(heading).scale(u);
                Pose { x: p.x, y: p.y, heading }
            }
            Segment::Arc { center, radius, start_angle, sweep } => {
                let dir = sweep.signum();
                let theta = start_angle + dir * u / radius;
                let p = center + Vec2::from_heading(theta).scale(radius);
                Pose {
                    x: p.x,
                    y: p.y,
                    heading: normalize_angle(theta + dir * FRAC_PI_2),
                }
            }
        }
    }

    /// Closest point: (local arc length, distance).
    fn project(&self, p: Vec2) -> (f64, f64) {
        match *self {
            Segment::Line { start, heading, length } => {
                let u = (p - start).dot(Vec2::from_heading(heading)).clamp(0.0, length);
                let q = self.pose_at(u).position();
                (u, (p - q).norm())
            }
            Segment::Arc { center, radius, start_angle, sweep } => {
                let rel = p - center;
                let angle = rel.y.atan2(rel.x);
                let dir = sweep.signum();
                // angular progress along the sweep direction, wrapped to [-pi, pi)
                let progress = normalize_angle(dir * (angle - start_angle));
                let u = (progress * radius).clamp(0.0, self.length());
                let q = self.pose_at(u).position();
                (u, (p - q).norm())
            }
        }
    }

    fn end_pose(&self) -> Pose {
        self.pose_at(self.length())
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    segments: Vec<Segment>,
}

impl Path {
    pub fn new(segments: Vec<Segment>) -> Self {
        Path {
            segments: segments.into_iter().filter(|s| s.length() > 1e-12).collect(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Pose at arc length `s`; beyond either end the path is extended straight.
    pub fn pose_at(&self, s: f64) -> Pose {
        let Some(first) = self.segments.first() else {
            return Pose { x: 0.0, y: 0.0, heading: 0.0 };
        };
        if s < 0.0 {
            let p0 = first.pose_at(0.0);
            let q = p0.position() + Vec2::from_heading(p0.heading).scale(s);
            return Pose { x: q.x, y: q.y, heading: p0.heading };
        }
        let mut remaining = s;
        for seg in &self.segments {
            let len = seg.length();
            if remaining <= len {
                return seg.pose_at(remaining);
            }
            remaining -= len;
        }
        let end = self.segments.last().unwrap().end_pose();
        let q = end.position() + Vec2::from_heading(end.heading).scale(remaining);
        Pose { x: q.x, y: q.y, heading: end.heading }
    }

    /// Arc length of the closest point to `p` and the distance to it.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        let mut offset = 0.0;
        for seg in &self.segments {
            let (u, d) = seg.project(p);
            if d < best.1 {
                best = (offset + u, d);
            }
            offset += seg.length();
        }
        best
    }

    /// Build a path that joins two poses with a straight run and a single
    /// quarter-circle arc, when `to` lies ahead-and-aside of `from`.
    pub fn turn(from: Vec2, from_heading: f64, to: Vec2, to_heading: f64) -> Path {
        let h0 = Vec2::from_heading(from_heading);
        let h1 = Vec2::from_heading(to_heading);
        let delta = to - from;
        // Solve delta = a*h0 + b*h1 for perpendicular unit headings.
        let a = delta.dot(h0);
        let b = delta.dot(h1);
        let left = h0.left().dot(h1) > 0.0;
        let radius = a.min(b);
        let mut segs = Vec::new();
        let lead = a - radius;
        if lead > 0.0 {
            segs.push(Segment::Line { start: from, heading: from_heading, length: lead });
        }
        let arc_start = from + h0.scale(lead);
        let normal = if left { h0.left() } else { h0.right() };
        let center = arc_start + normal.scale(radius);
        let rel = arc_start - center;
        segs.push(Segment::Arc {
            center,
            radius,
            start_angle: rel.y.atan2(rel.x),
            sweep: if left { FRAC_PI_2 } else { -FRAC_PI_2 },
        });
        let trail = b - radius;
        if trail > 0.0 {
            // a quarter arc ends one radius further along both headings
            let arc_end = arc_start + h0.scale(radius) + h1.scale(radius);
            segs.push(Segment::Line { start: arc_end, heading: to_heading, length: trail });
        }
        Path::new(segs)
    }
}

//! Independent time-stepped conflict check for two axis-aligned straight movers.
//!
//! Positions are integrated directly from start point, direction and speed;
//! occupancy is tested on a fine point lattice. Shares no code with the
//! library's oracle.

#[derive(Clone, Copy, Debug)]
pub struct StraightMover {
    pub x0: f64,
    pub y0: f64,
    /// Unit direction, axis aligned.
    pub dx: f64,
    pub dy: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl StraightMover {
    fn covers(&self, t: f64, px: f64, py: f64) -> bool {
        let cx = self.x0 + self.dx * self.speed * t;
        let cy = self.y0 + self.dy * self.speed * t;
        let (along, across) = if self.dx != 0.0 {
            ((px - cx).abs(), (py - cy).abs())
        } else {
            ((py - cy).abs(), (px - cx).abs())
        };
        along <= self.length / 2.0 && across <= self.width / 2.0
    }
}

/// Returns the earliest time the later mover reaches a point whose
/// post-encroachment gap is below `tau`, searching the box `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_conflict_time(
    a: &StraightMover,
    b: &StraightMover,
    lo: (f64, f64),
    hi: (f64, f64),
    dt: f64,
    horizon: f64,
    spacing: f64,
    tau: f64,
) -> Option<f64> {
    let nx = ((hi.0 - lo.0) / spacing).round() as usize + 1;
    let ny = ((hi.1 - lo.1) / spacing).round() as usize + 1;
    let steps = (horizon / dt).round() as usize;
    let mut first = vec![[f64::NAN; 2]; nx * ny];
    let mut last = vec![[f64::NAN; 2]; nx * ny];
    for k in 0..=steps {
        let t = k as f64 * dt;
        for j in 0..ny {
            let py = lo.1 + j as f64 * spacing;
            for i in 0..nx {
                let px = lo.0 + i as f64 * spacing;
                for (m, mover) in [a, b].iter().enumerate() {
                    if mover.covers(t, px, py) {
                        let cell = &mut first[j * nx + i][m];
                        if cell.is_nan() {
                            *cell = t;
                        }
                        last[j * nx + i][m] = t;
                    }
                }
            }
        }
    }
    let mut best: Option<f64> = None;
    for idx in 0..nx * ny {
        let [fa, fb] = first[idx];
        if fa.is_nan() || fb.is_nan() {
            continue;
        }
        let [la, lb] = last[idx];
        let gap = (fa - lb).max(fb - la).max(0.0);
        if gap < tau {
            let t = fa.max(fb);
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

/// Closed form for two perpendicular straight movers whose centerlines cross:
/// each reaches the other's corridor after traveling `d - other.width/2 - length/2`.
pub fn analytic_conflict_time(a: &StraightMover, da: f64, b: &StraightMover, db: f64) -> f64 {
    let ta = (da - b.width / 2.0 - a.length / 2.0) / a.speed;
    let tb = (db - a.width / 2.0 - b.length / 2.0) / b.speed;
    ta.max(tb)
}

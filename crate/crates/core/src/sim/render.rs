//! Schematic top-down raster rendering of scenarios.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::geometry::{IntersectionGeometry, Leg};
use super::path::Vec2;
use super::trajectory::{Motion, OracleParams};
use super::vehicle::{OrientedRect, VehicleClass};
use super::{Scenario, SimError};
use crate::model::{Frame, ImageRef};

/// Default capture times of a triplet, seconds.
pub const TRIPLET_TIMES: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width_px: u32,
    pub height_px: u32,
    /// Half of the visible square's side, meters.
    pub view_half_extent: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { width_px: 512, height_px: 512, view_half_extent: 60.0 }
    }
}

impl RenderConfig {
    /// Pixels per meter.
    pub fn scale(&self) -> f64 {
        self.width_px.min(self.height_px) as f64 / (2.0 * self.view_half_extent)
    }

    pub fn to_pixel(&self, p: Vec2) -> (f64, f64) {
        let s = self.scale();
        (self.width_px as f64 / 2.0 + p.x * s, self.height_px as f64 / 2.0 - p.y * s)
    }

    /// World coordinates of a (fractional) pixel position.
    pub fn to_world(&self, px: f64, py: f64) -> Vec2 {
        let s = self.scale();
        Vec2::new((px - self.width_px as f64 / 2.0) / s, (self.height_px as f64 / 2.0 - py) / s)
    }
}

const GRASS: Rgb<u8> = Rgb([92, 134, 78]);
const ASPHALT: Rgb<u8> = Rgb([68, 68, 70]);
const ZONE: Rgb<u8> = Rgb([78, 78, 80]);
const CURB: Rgb<u8> = Rgb([128, 128, 122]);
const WHITE: Rgb<u8> = Rgb([235, 235, 235]);
const YELLOW: Rgb<u8> = Rgb([226, 190, 40]);
const PARKED_FILL: Rgb<u8> = Rgb([160, 160, 160]);
const OUTLINE: Rgb<u8> = Rgb([10, 10, 10]);

/// Body and windshield colors of a moving vehicle.
pub fn class_colors(c: VehicleClass) -> (Rgb<u8>, Rgb<u8>) {
    match c {
        VehicleClass::Car => (Rgb([40, 96, 220]), Rgb([20, 48, 110])),
        VehicleClass::Bus => (Rgb([250, 210, 20]), Rgb([125, 105, 10])),
        VehicleClass::Van => (Rgb([30, 200, 200]), Rgb([15, 100, 100])),
        VehicleClass::Truck => (Rgb([240, 130, 20]), Rgb([120, 65, 10])),
        VehicleClass::Bike => (Rgb([220, 40, 220]), Rgb([110, 20, 110])),
        VehicleClass::Motorcycle => (Rgb([220, 30, 40]), Rgb([110, 15, 20])),
    }
}

/// Fill every pixel whose center satisfies `inside`, within a world-space box.
fn fill_world(
    img: &mut RgbImage,
    cfg: &RenderConfig,
    lo: Vec2,
    hi: Vec2,
    color: Rgb<u8>,
    inside: impl Fn(Vec2, u32, u32) -> bool,
) {
    let (ax, ay) = cfg.to_pixel(Vec2::new(lo.x, hi.y));
    let (bx, by) = cfg.to_pixel(Vec2::new(hi.x, lo.y));
    let x0 = ax.floor().max(0.0) as u32;
    let y0 = ay.floor().max(0.0) as u32;
    let x1 = (bx.ceil() as i64).min(img.width() as i64 - 1);
    let y1 = (by.ceil() as i64).min(img.height() as i64 - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    for py in y0..=y1 as u32 {
        for px in x0..=x1 as u32 {
            let w = cfg.to_world(px as f64 + 0.5, py as f64 + 0.5);
            if inside(w, px, py) {
                img.put_pixel(px, py, color);
            }
        }
    }
}

fn fill_box(img: &mut RgbImage, cfg: &RenderConfig, lo: Vec2, hi: Vec2, color: Rgb<u8>) {
    fill_world(img, cfg, lo, hi, color, |w, _, _| {
        w.x >= lo.x && w.x <= hi.x && w.y >= lo.y && w.y <= hi.y
    });
}

fn draw_roads(img: &mut RgbImage, g: &IntersectionGeometry, cfg: &RenderConfig) {
    let far = cfg.view_half_extent * 2.0;
    let w = g.lane_width;
    let half = |l: Leg| g.leg(l).lanes.inbound_lanes() as f64 * w;
    let (south, north) = (half(Leg::West), half(Leg::East));
    let (east, west) = (half(Leg::South), half(Leg::North));
    let z = g.zone;

    // curbside parking strips
    fill_box(img, cfg, Vec2::new(-far, -south - 3.0), Vec2::new(far, north + 3.0), CURB);
    fill_box(img, cfg, Vec2::new(-west - 3.0, -far), Vec2::new(east + 3.0, far), CURB);
    // carriageways
    fill_box(img, cfg, Vec2::new(-far, -south), Vec2::new(far, north), ASPHALT);
    fill_box(img, cfg, Vec2::new(-west, -far), Vec2::new(east, far), ASPHALT);
    fill_box(img, cfg, Vec2::new(z.min_x, z.min_y), Vec2::new(z.max_x, z.max_y), ZONE);

    let px = 1.0 / cfg.scale();
    let line = 0.15_f64.max(px);
    // main road markings, outside the zone only
    for sign in [-1.0, 1.0] {
        let (x_lo, x_hi) = if sign < 0.0 { (-far, z.min_x) } else { (z.max_x, far) };
        fill_box(img, cfg, Vec2::new(x_lo, -line), Vec2::new(x_hi, line), YELLOW);
        // inbound is south of the centerline on the west leg, north on the east leg
        let (leg, side) = if sign < 0.0 { (Leg::West, -1.0) } else { (Leg::East, 1.0) };
        let lanes = g.leg(leg).lanes;
        for k in 1..lanes.inbound_lanes() {
            let y = side * k as f64 * w;
            let solid = k <= lanes.dedicated_turn_lanes;
            fill_world(img, cfg, Vec2::new(x_lo, y - line), Vec2::new(x_hi, y + line), WHITE, |p, _, _| {
                (p.y - y).abs() <= line && (solid || (p.x / 3.0).floor() as i64 % 2 == 0)
            });
        }
        // hatched median opposite the other leg's turn lanes
        let other = g.leg(leg.opposite()).lanes.dedicated_turn_lanes as f64 * w;
        if other > 0.0 {
            let (y_lo, y_hi) = if side < 0.0 { (line, other) } else { (-other, -line) };
            fill_world(img, cfg, Vec2::new(x_lo, y_lo), Vec2::new(x_hi, y_hi), YELLOW, |p, _, _| {
                p.y >= y_lo && p.y <= y_hi && ((p.x + p.y) / 1.5).floor() as i64 % 3 == 0
            });
        }
    }
    // sub road centerline and stop lines
    for sign in [-1.0, 1.0] {
        let (y_lo, y_hi) = if sign < 0.0 { (-far, z.min_y) } else { (z.max_y, far) };
        fill_box(img, cfg, Vec2::new(-line, y_lo), Vec2::new(line, y_hi), YELLOW);
    }
    let stop = 0.4_f64.max(px);
    fill_box(img, cfg, Vec2::new(line, z.min_y - stop), Vec2::new(east, z.min_y), WHITE);
    fill_box(img, cfg, Vec2::new(-west, z.max_y), Vec2::new(-line, z.max_y + stop), WHITE);
}

fn draw_vehicle(img: &mut RgbImage, cfg: &RenderConfig, rect: &OrientedRect, fill: Rgb<u8>, front: Option<Rgb<u8>>, outline: bool) {
    let (lo, hi) = rect.bounds();
    let edge = 1.0 / cfg.scale();
    let inner = OrientedRect {
        half_length: (rect.half_length - edge).max(0.0),
        half_width: (rect.half_width - edge).max(0.0),
        ..*rect
    };
    let windshield = rect.half_length * 0.55;
    fill_world(img, cfg, lo, hi, fill, |p, _, _| rect.contains(p));
    if let Some(front) = front {
        fill_world(img, cfg, lo, hi, front, |p, _, _| {
            rect.contains(p) && (p - rect.center).dot(rect.axis) >= windshield
        });
    }
    if outline {
        fill_world(img, cfg, lo, hi, OUTLINE, |p, _, _| rect.contains(p) && !inner.contains(p));
    }
}

/// Rasterize a scenario at time `t`.
pub fn render_raster(s: &Scenario, t: f64, cfg: &RenderConfig) -> Result<RgbImage, SimError> {
    let mut img = RgbImage::from_pixel(cfg.width_px, cfg.height_px, GRASS);
    draw_roads(&mut img, &s.geometry, cfg);
    // parked vehicles underneath movers
    let mut order: Vec<_> = s.vehicles.iter().collect();
    order.sort_by_key(|v| !v.parked);
    for v in order {
        let pose = Motion::for_vehicle(v, &s.geometry)?.pose_at(t);
        let (px, py) = cfg.to_pixel(pose.position());
        if px < 0.0 || py < 0.0 || px >= cfg.width_px as f64 || py >= cfg.height_px as f64 {
            return Err(SimError::RenderBounds { vehicle: v.id.clone(), t });
        }
        let rect = v.rect_at(pose);
        if v.parked {
            draw_vehicle(&mut img, cfg, &rect, PARKED_FILL, None, true);
        } else {
            let (body, front) = class_colors(v.vclass);
            draw_vehicle(&mut img, cfg, &rect, body, Some(front), false);
        }
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, SimError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| SimError::Image(e.to_string()))?;
    Ok(out.into_inner())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub frame: Frame,
    pub png: Vec<u8>,
}

/// File name of frame `k` of a scenario, relative to the frames directory.
pub fn frame_file_name(scenario_id: &str, k: usize) -> String {
    format!("{scenario_id}_f{k}.png")
}

/// Render one PNG per requested time. Frames reference
/// `frames/<scenario_id>_f<k>.png` relative to the workspace root.
pub fn render_frames(
    s: &Scenario,
    times: &[f64],
    cfg: &RenderConfig,
    params: &OracleParams,
) -> Result<Vec<RenderedFrame>, SimError> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::InvalidParams("render times must be strictly increasing".into()));
    }
    if times[0] < 0.0 || *times.last().unwrap() > params.horizon {
        return Err(SimError::InvalidParams("render times must lie within the horizon".into()));
    }
    if cfg.width_px == 0 || cfg.height_px == 0 {
        return Err(SimError::InvalidParams("image dimensions must be positive".into()));
    }
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let png = encode_png(&render_raster(s, t, cfg)?)?;
            let frame = Frame {
                index: k as u8,
                time_offset: t,
                width_px: cfg.width_px,
                height_px: cfg.height_px,
                image_ref: ImageRef::for_file(format!("frames/{}", frame_file_name(&s.id, k)), &png),
                source_id: s.id.clone(),
            };
            Ok(RenderedFrame { frame, png })
        })
        .collect()
}

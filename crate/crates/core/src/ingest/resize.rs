use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

/// Target box for letterboxed resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeTarget {
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for ResizeTarget {
    fn default() -> Self {
        ResizeTarget { width_px: 1024, height_px: 1024 }
    }
}

impl std::str::FromStr for ResizeTarget {
    type Err = String;

    /// Parses `WIDTHxHEIGHT`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
        let t = ResizeTarget { width_px: parse(w)?, height_px: parse(h)? };
        if t.width_px == 0 || t.height_px == 0 {
            return Err("resize dimensions must be positive".into());
        }
        Ok(t)
    }
}

/// Placement of the scaled source inside the letterboxed output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    /// Uniform scale applied to both axes.
    pub scale: f64,
    pub scaled_width: u32,
    pub scaled_height: u32,
    pub offset_x: u32,
    pub offset_y: u32,
}

impl Letterbox {
    pub fn plan(src_w: u32, src_h: u32, target: ResizeTarget) -> Letterbox {
        let scale = (target.width_px as f64 / src_w as f64).min(target.height_px as f64 / src_h as f64);
        let scaled_width = ((src_w as f64 * scale).round() as u32).clamp(1, target.width_px);
        let scaled_height = ((src_h as f64 * scale).round() as u32).clamp(1, target.height_px);
        Letterbox {
            scale,
            scaled_width,
            scaled_height,
            offset_x: (target.width_px - scaled_width) / 2,
            offset_y: (target.height_px - scaled_height) / 2,
        }
    }

    /// Map a source pixel coordinate into the output image.
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (self.offset_x as f64 + x * self.scale, self.offset_y as f64 + y * self.scale)
    }
}

/// Fit `img` inside `target` without distortion, padding with black.
pub fn letterbox(img: &RgbImage, target: ResizeTarget) -> (RgbImage, Letterbox) {
    let lb = Letterbox::plan(img.width(), img.height(), target);
    let scaled = imageops::resize(img, lb.scaled_width, lb.scaled_height, FilterType::Triangle);
    let mut out = RgbImage::from_pixel(target.width_px, target.height_px, Rgb([0, 0, 0]));
    imageops::replace(&mut out, &scaled, lb.offset_x as i64, lb.offset_y as i64);
    (out, lb)
}

//! Color-threshold rust detector used in place of a trained network.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, DetectionRecord, InspectionError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    /// Smallest connected component reported, pixels.
    pub min_area: usize,
    /// Hues at or below this many degrees (or at or above `hue_wrap_deg`) count as rust.
    pub hue_max_deg: f64,
    pub hue_wrap_deg: f64,
    pub saturation_min: f64,
    pub value_min: f64,
    pub value_max: f64,
    /// Drop components touching the image border; their boxes are truncated.
    pub reject_border: bool,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            min_area: 100,
            hue_max_deg: 40.0,
            hue_wrap_deg: 345.0,
            saturation_min: 0.4,
            value_min: 0.15,
            value_max: 0.9,
            reject_border: true,
        }
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
fn hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

impl StubConfig {
    fn is_rust(&self, px: [u8; 3]) -> bool {
        let (h, s, v) = hsv(px);
        (h <= self.hue_max_deg || h >= self.hue_wrap_deg)
            && s >= self.saturation_min
            && (self.value_min..=self.value_max).contains(&v)
    }
}

/// Boxes around 4-connected rust-colored components of at least
/// `min_area` pixels; confidence is the component's fill ratio of its box.
/// Box edges are the extreme pixel centers.
pub fn detect_rust_stub(
    image: &RgbImage,
    t: f64,
    k: &CameraIntrinsics,
    cfg: &StubConfig,
) -> Result<Vec<DetectionRecord>, InspectionError> {
    let (w, h) = image.dimensions();
    if (w, h) != (k.width, k.height) {
        return Err(InspectionError::Invalid(format!(
            "image is {w}x{h} but the intrinsics expect {}x{}",
            k.width, k.height
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let mask: Vec<bool> = image.pixels().map(|p| cfg.is_rust(p.0)).collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1, mut area) = (usize::MAX, usize::MAX, 0, 0, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            area += 1;
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let touches = x0 == 0 || y0 == 0 || x1 + 1 == w || y1 + 1 == h;
        if area < cfg.min_area || x0 == x1 || y0 == y1 || (cfg.reject_border && touches) {
            continue;
        }
        let box_area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        out.push(DetectionRecord {
            t,
            bbox: [x0 as f64, y0 as f64, x1 as f64, y1 as f64],
            confidence: area as f64 / box_area,
            label: "rust".into(),
        });
    }
    Ok(out)
}

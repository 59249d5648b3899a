//! Per-image transforms: rotation (bilinear, zero fill) and grayscale
//! morphology (sliding-window max/min).

use crate::error::{Error, Result};

/// How an angle is applied to an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RotationMode {
    /// Standard in-plane rotation about the image center.
    #[default]
    InPlane,
    /// Horizontal foreshortening `x' = x * cos(theta)`, the literal
    /// out-of-plane reading of rotation about the vertical axis.
    Foreshorten,
}

impl RotationMode {
    pub fn name(&self) -> &'static str {
        match self {
            RotationMode::InPlane => "in-plane",
            RotationMode::Foreshorten => "foreshorten",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "in-plane" => Ok(RotationMode::InPlane),
            "foreshorten" => Ok(RotationMode::Foreshorten),
            other => Err(Error::Config(format!("unknown rotation mode '{other}'"))),
        }
    }
}

/// Angle set and application mode for rotated dataset construction.
#[derive(Clone, Debug)]
pub struct RotSpec {
    /// Degrees; each sample gets one drawn uniformly.
    pub angles: Vec<f32>,
    pub mode: RotationMode,
}

impl RotSpec {
    pub fn new(angles: Vec<f32>) -> Self {
        RotSpec { angles, mode: RotationMode::InPlane }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Config("angle set is empty".into()));
        }
        for &a in &self.angles {
            if !(-90.0..=90.0).contains(&a) || a.abs() >= 90.0 {
                return Err(Error::Config(format!("angle {a} outside (-90, 90)")));
            }
        }
        Ok(())
    }
}

/// Signed morphology kernel: positive dilates, negative erodes, the
/// magnitude is the square structuring-element side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DilSpec {
    pub kernel: i32,
}

impl DilSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(Error::Config("morphology kernel must be nonzero".into()));
        }
        Ok(())
    }
}

/// In-plane rotation by `theta_deg` counterclockwise about the image
/// center (matching the quarter-turn index permutation at 90 degrees),
/// bilinear interpolation, zero fill outside the source. Values stay in
/// [0, 1]. The foreshorten mode compresses columns by cos(theta) instead.
pub fn rotate_image(img: &[f32], side: usize, theta_deg: f32, mode: RotationMode) -> Vec<f32> {
    assert_eq!(img.len(), side * side, "image is not side x side");
    if theta_deg == 0.0 {
        return img.to_vec();
    }
    let theta = (theta_deg as f64).to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let c = (side as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; side * side];
    for r in 0..side {
        for col in 0..side {
            let dx = col as f64 - c;
            let dy = r as f64 - c;
            let (src_x, src_y) = match mode {
                RotationMode::InPlane => (cos_t * dx - sin_t * dy + c, sin_t * dx + cos_t * dy + c),
                RotationMode::Foreshorten => (dx / cos_t + c, r as f64),
            };
            out[r * side + col] = bilinear(img, side, src_x, src_y);
        }
    }
    out
}

fn bilinear(img: &[f32], side: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0f64;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xi = x0 as i64 + dx;
            let yi = y0 as i64 + dy;
            if xi >= 0 && yi >= 0 && (xi as usize) < side && (yi as usize) < side {
                acc += wy * wx * img[yi as usize * side + xi as usize] as f64;
            }
        }
    }
    (acc as f32).clamp(0.0, 1.0)
}

/// Grayscale morphology: dilation is a sliding-window max, erosion a
/// sliding-window min, square window of side `|kernel|`, windows clipped
/// at the image edge. `|kernel| == 1` is the identity.
pub fn morph(img: &[f32], side: usize, spec: DilSpec) -> Vec<f32> {
    assert_eq!(img.len(), side * side, "image is not side x side");
    let s = spec.kernel.unsigned_abs() as i64;
    if s <= 1 {
        return img.to_vec();
    }
    let dilate = spec.kernel > 0;
    let lo = -((s - 1) / 2);
    let hi = s - 1 + lo;
    let mut out = vec![0.0f32; side * side];
    for r in 0..side as i64 {
        for c in 0..side as i64 {
            let mut best = if dilate { f32::NEG_INFINITY } else { f32::INFINITY };
            for dy in lo..=hi {
                for dx in lo..=hi {
                    let (y, x) = (r + dy, c + dx);
                    if y >= 0 && x >= 0 && y < side as i64 && x < side as i64 {
                        let v = img[(y * side as i64 + x) as usize];
                        best = if dilate { best.max(v) } else { best.min(v) };
                    }
                }
            }
            out[(r * side as i64 + c) as usize] = best;
        }
    }
    out
}

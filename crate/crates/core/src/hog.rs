//! Landmark-anchored HOG appearance features.
//!
//! Each landmark contributes a 24×24 patch split into 2×2 cells of 12×12 pixels,
//! with a 9-bin unsigned orientation histogram per cell: 36 values per point,
//! 2376 for 66 points.

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

pub const HOG_DIM: usize = 2376;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HogError {
    #[error("patch must be {expected}x{expected}, got {width}x{height}")]
    BadPatch {
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid HOG parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogParams {
    /// Patch side in pixels.
    pub patch: usize,
    /// Cells per patch side.
    pub cells: usize,
    /// Orientation bins over [0°, 180°).
    pub bins: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            patch: 24,
            cells: 2,
            bins: 9,
        }
    }
}

impl HogParams {
    pub fn block_len(&self) -> usize {
        self.cells * self.cells * self.bins
    }

    pub fn validate(&self) -> Result<(), HogError> {
        if self.patch == 0 || self.cells == 0 || self.bins == 0 {
            return Err(HogError::BadParams("sizes must be positive".into()));
        }
        if !self.patch.is_multiple_of(self.cells) {
            return Err(HogError::BadParams(format!(
                "patch {} not divisible into {} cells",
                self.patch, self.cells
            )));
        }
        Ok(())
    }
}

/// Row-major patch of `side`×`side` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Patch {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, HogError> {
        if width != height || data.len() != width * height {
            return Err(HogError::BadPatch {
                expected: width,
                width,
                height,
            });
        }
        Ok(Self { side: width, data })
    }

    pub fn from_fn(side: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                data.push(f(x, y));
            }
        }
        Self { side, data }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.side + x]
    }
}

/// Gradient of one pixel by centered differences, edges replicated.
fn gradient(patch: &Patch, x: usize, y: usize) -> (f64, f64) {
    let last = patch.side - 1;
    let gx = patch.at((x + 1).min(last), y) - patch.at(x.saturating_sub(1), y);
    let gy = patch.at(x, (y + 1).min(last)) - patch.at(x, y.saturating_sub(1));
    (gx, gy)
}

/// Unsigned orientation in degrees, `[0, 180)`.
fn orientation(gx: f64, gy: f64) -> f64 {
    let deg = gy.atan2(gx).to_degrees();
    let folded = deg.rem_euclid(180.0);
    if folded >= 180.0 {
        0.0
    } else {
        folded
    }
}

/// Magnitude-weighted linear vote between the two nearest bin centers
/// (centers at `(k + ½)·width`, wrapping around 180°).
fn vote(hist: &mut [f64], angle: f64, magnitude: f64) {
    let bins = hist.len();
    let width = 180.0 / bins as f64;
    let pos = angle / width - 0.5;
    let lower = pos.floor();
    let frac = pos - lower;
    let lo = (lower as i64).rem_euclid(bins as i64) as usize;
    let hi = (lo + 1) % bins;
    hist[lo] += magnitude * (1.0 - frac);
    hist[hi] += magnitude * frac;
}

/// HOG block descriptor of one patch, L2-normalized over all cells.
pub fn hog_descriptor_patch(patch: &Patch, params: &HogParams) -> Result<Vec<f64>, HogError> {
    params.validate()?;
    if patch.side != params.patch || patch.data.len() != params.patch * params.patch {
        return Err(HogError::BadPatch {
            expected: params.patch,
            width: patch.side,
            height: patch.data.len() / patch.side.max(1),
        });
    }
    let cell = params.patch / params.cells;
    let mut out = vec![0.0; params.block_len()];
    for y in 0..params.patch {
        for x in 0..params.patch {
            let (gx, gy) = gradient(patch, x, y);
            let magnitude = gx.hypot(gy);
            if magnitude == 0.0 {
                continue;
            }
            let c = (y / cell) * params.cells + x / cell;
            let hist = &mut out[c * params.bins..(c + 1) * params.bins];
            vote(hist, orientation(gx, gy), magnitude);
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Top-left corner of the patch centered on `p`, clamped inside the image.
pub fn patch_origin(p: Point, side: usize, width: u32, height: u32) -> (usize, usize) {
    let half = (side / 2) as f64;
    let clamp = |c: f64, extent: u32| -> usize {
        let max = (extent as usize).saturating_sub(side) as f64;
        (c.round() - half).clamp(0.0, max) as usize
    };
    (clamp(p.x, width), clamp(p.y, height))
}

pub fn extract_patch(image: &GrayImage, origin: (usize, usize), side: usize) -> Patch {
    let (ox, oy) = origin;
    Patch::from_fn(side, |x, y| {
        f64::from(image.get_pixel((ox + x) as u32, (oy + y) as u32)[0])
    })
}

/// Concatenated per-landmark descriptors, in landmark order.
pub fn extract_hog(
    image: &GrayImage,
    landmarks: &[Point],
    params: &HogParams,
) -> Result<Vec<f64>, HogError> {
    params.validate()?;
    let (w, h) = image.dimensions();
    if (w as usize) < params.patch || (h as usize) < params.patch {
        return Err(HogError::BadParams(format!(
            "image {w}x{h} smaller than patch {}",
            params.patch
        )));
    }
    let mut out = Vec::with_capacity(landmarks.len() * params.block_len());
    for &p in landmarks {
        let patch = extract_patch(image, patch_origin(p, params.patch, w, h), params.patch);
        out.extend(hog_descriptor_patch(&patch, params)?);
    }
    Ok(out)
}

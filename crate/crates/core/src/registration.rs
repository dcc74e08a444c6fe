//! Landmark schema, generalized Procrustes mean shape, similarity alignment and
//! canonical face crops.
//!
//! Frames carry 66 points in image pixel coordinates. Alignment maps them into a
//! fixed canonical pixel frame: the mean shape's bounding box, padded by 20% and
//! scaled onto a square crop (128×128 by default).

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, Point, Similarity};

pub const NUM_LANDMARKS: usize = 66;
pub const DEFAULT_CROP_SIZE: u32 = 128;
const CROP_PADDING: f64 = 1.2;

const GPA_TOLERANCE: f64 = 1e-8;
const GPA_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("expected {NUM_LANDMARKS} landmarks, got {0}")]
    WrongPointCount(usize),
    #[error("landmark {0} is not finite")]
    NonFinite(usize),
    #[error("cannot compute a mean shape from zero frames")]
    EmptyDataset,
    #[error("anchor set is degenerate (coincident or collinear points)")]
    DegenerateAnchors,
    #[error("invalid anchor set: {0}")]
    BadAnchors(String),
    #[error("landmark {index} at ({x:.2}, {y:.2}) lies outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
}

/// 66 facial points of one frame, in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub frame_id: String,
    pub subject_id: String,
    pub sequence_id: String,
    points: Vec<Point>,
}

impl LandmarkFrame {
    pub fn new(
        frame_id: impl Into<String>,
        subject_id: impl Into<String>,
        sequence_id: impl Into<String>,
        points: Vec<Point>,
    ) -> Result<Self, RegistrationError> {
        validate_points(&points)?;
        Ok(Self {
            frame_id: frame_id.into(),
            subject_id: subject_id.into(),
            sequence_id: sequence_id.into(),
            points,
        })
    }

    /// Anonymous frame, handy for tests and the C API.
    pub fn from_points(points: Vec<Point>) -> Result<Self, RegistrationError> {
        Self::new("", "", "", points)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

fn validate_points(points: &[Point]) -> Result<(), RegistrationError> {
    if points.len() != NUM_LANDMARKS {
        return Err(RegistrationError::WrongPointCount(points.len()));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(RegistrationError::NonFinite(i));
    }
    Ok(())
}

/// Index tables over the 66-point layout (68-point layout minus the two inner
/// mouth corners).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkScheme {
    pub right_brow: RangeInclusive<usize>,
    pub left_brow: RangeInclusive<usize>,
    pub nose: RangeInclusive<usize>,
    pub right_eye: RangeInclusive<usize>,
    pub left_eye: RangeInclusive<usize>,
    pub outer_lip: RangeInclusive<usize>,
    pub inner_lip: RangeInclusive<usize>,
    /// Points used for Procrustes alignment (eye and mouth corners).
    pub anchors: Vec<usize>,
    /// Eye corners, joined with the nose for the stable set.
    pub eye_corners: Vec<usize>,
}

impl Default for LandmarkScheme {
    fn default() -> Self {
        Self {
            right_brow: 17..=21,
            left_brow: 22..=26,
            nose: 27..=35,
            right_eye: 36..=41,
            left_eye: 42..=47,
            outer_lip: 48..=59,
            inner_lip: 60..=65,
            anchors: vec![36, 39, 42, 45, 48, 54],
            eye_corners: vec![36, 39, 42, 45],
        }
    }
}

impl LandmarkScheme {
    /// Brows, nose, eyes and mouth: indices 17..=65 in the default layout.
    pub fn inner_points(&self) -> Vec<usize> {
        let mut v: Vec<usize> = [
            &self.right_brow,
            &self.left_brow,
            &self.nose,
            &self.right_eye,
            &self.left_eye,
            &self.outer_lip,
            &self.inner_lip,
        ]
        .iter()
        .flat_map(|r| (*r).clone())
        .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn stable_points(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.nose.clone().chain(self.eye_corners.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn brows_and_eyes(&self) -> Vec<usize> {
        [&self.right_brow, &self.left_brow, &self.right_eye, &self.left_eye]
            .iter()
            .flat_map(|r| (*r).clone())
            .collect()
    }

    pub fn mouth(&self) -> Vec<usize> {
        self.outer_lip.clone().chain(self.inner_lip.clone()).collect()
    }

    pub fn eye_centers(&self, points: &[Point]) -> (Point, Point) {
        let mean = |r: &RangeInclusive<usize>| {
            let pts: Vec<Point> = r.clone().map(|i| points[i]).collect();
            centroid(&pts)
        };
        (mean(&self.right_eye), mean(&self.left_eye))
    }

    pub fn validate(&self) -> Result<(), RegistrationError> {
        let all = self.inner_points();
        if all.iter().any(|&i| i >= NUM_LANDMARKS) {
            return Err(RegistrationError::BadAnchors("scheme index out of range".into()));
        }
        validate_anchors(&self.anchors)
    }
}

fn validate_anchors(anchors: &[usize]) -> Result<(), RegistrationError> {
    if anchors.len() < 3 {
        return Err(RegistrationError::BadAnchors(format!(
            "need at least 3 anchors, got {}",
            anchors.len()
        )));
    }
    if let Some(&i) = anchors.iter().find(|&&i| i >= NUM_LANDMARKS) {
        return Err(RegistrationError::BadAnchors(format!("anchor index {i} out of range")));
    }
    Ok(())
}

/// Generalized Procrustes mean in a canonical frame: centroid at the origin,
/// unit RMS point norm, eye line along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShape {
    points: Vec<Point>,
    /// Subjects whose frames contributed.
    pub provenance: BTreeSet<String>,
}

impl MeanShape {
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Wraps externally supplied canonical points (renormalized).
    pub fn from_points(points: Vec<Point>) -> Result<Self, RegistrationError> {
        validate_points(&points)?;
        Ok(Self {
            points: normalize_shape(&points).0,
            provenance: BTreeSet::new(),
        })
    }
}

/// Centers and scales a shape to unit RMS norm, returning the scale used.
fn normalize_shape(points: &[Point]) -> (Vec<Point>, f64) {
    let c = centroid(points);
    let centered: Vec<Point> = points.iter().map(|&p| p - c).collect();
    let rms = (centered.iter().map(|p| p.norm_sq()).sum::<f64>() / points.len() as f64).sqrt();
    let s = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    (centered.into_iter().map(|p| p * s).collect(), rms)
}

/// Rotates a centered shape so that the right-to-left eye-center vector points along +x.
fn level_eyes(points: &[Point], scheme: &LandmarkScheme) -> Vec<Point> {
    let (r, l) = scheme.eye_centers(points);
    let d = l - r;
    if d.norm() == 0.0 {
        return points.to_vec();
    }
    let rot = Similarity::new(1.0, -d.y.atan2(d.x), Point::default());
    rot.apply_all(points)
}

/// Generalized Procrustes analysis over all 66 points.
pub fn compute_mean_shape(
    frames: &[LandmarkFrame],
    scheme: &LandmarkScheme,
) -> Result<MeanShape, RegistrationError> {
    let first = frames.first().ok_or(RegistrationError::EmptyDataset)?;
    let shapes: Vec<Vec<Point>> = frames.iter().map(|f| normalize_shape(&f.points).0).collect();
    let all: Vec<usize> = (0..NUM_LANDMARKS).collect();

    let mut mean = level_eyes(&normalize_shape(&first.points).0, scheme);
    for _ in 0..GPA_MAX_ITER {
        let mut acc = vec![Point::default(); NUM_LANDMARKS];
        for shape in &shapes {
            let t = fit_similarity(shape, &mean, &all)?;
            for (a, &p) in acc.iter_mut().zip(shape) {
                *a = *a + t.apply(p);
            }
        }
        let avg: Vec<Point> = acc.into_iter().map(|p| p * (1.0 / shapes.len() as f64)).collect();
        let next = level_eyes(&normalize_shape(&avg).0, scheme);
        let movement = next
            .iter()
            .zip(&mean)
            .map(|(a, b)| a.distance(*b))
            .fold(0.0, f64::max);
        mean = next;
        if movement < GPA_TOLERANCE {
            break;
        }
    }
    Ok(MeanShape {
        points: mean,
        provenance: frames.iter().map(|f| f.subject_id.clone()).collect(),
    })
}

/// Least-squares similarity mapping `source[anchors]` onto `target[anchors]`.
pub fn fit_similarity(
    source: &[Point],
    target: &[Point],
    anchors: &[usize],
) -> Result<Similarity, RegistrationError> {
    let src: Vec<Point> = anchors.iter().map(|&i| source[i]).collect();
    let dst: Vec<Point> = anchors.iter().map(|&i| target[i]).collect();
    let cs = centroid(&src);
    let cd = centroid(&dst);

    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (s, d) in src.iter().zip(&dst) {
        let s = *s - cs;
        let d = *d - cd;
        sxx += s.x * s.x;
        syy += s.y * s.y;
        sxy += s.x * s.y;
        dot += s.dot(d);
        cross += s.cross(d);
    }
    let spread = sxx + syy;
    // smallest eigenvalue of the 2x2 scatter matrix; zero for collinear anchors
    let det = sxx * syy - sxy * sxy;
    let min_eig = spread / 2.0 - ((spread / 2.0).powi(2) - det).max(0.0).sqrt();
    if spread < 1e-12 || min_eig <= 1e-12 * spread {
        return Err(RegistrationError::DegenerateAnchors);
    }
    let a = dot / spread;
    let b = cross / spread;
    let linear = Similarity::new(a.hypot(b), b.atan2(a), Point::default());
    let t = cd - linear.apply(cs);
    Ok(Similarity::new(linear.scale, linear.rotation, t))
}

/// A frame registered to the canonical pixel frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFace {
    pub frame_id: String,
    pub landmarks: Vec<Point>,
    /// Maps raw image coordinates into the canonical pixel frame.
    pub transform: Similarity,
}

/// Fits the similarity on `anchors` only and applies it to all points.
pub fn procrustes_align(
    frame: &LandmarkFrame,
    reference: &[Point],
    anchors: &[usize],
) -> Result<AlignedFace, RegistrationError> {
    validate_anchors(anchors)?;
    validate_points(reference)?;
    let transform = fit_similarity(&frame.points, reference, anchors)?;
    Ok(AlignedFace {
        frame_id: frame.frame_id.clone(),
        landmarks: transform.apply_all(&frame.points),
        transform,
    })
}

/// Warps `image` by `transform` into a `size`×`size` crop with bilinear sampling.
///
/// Pixel `(u, v)` of the crop samples the source at `transform⁻¹(u, v)`, with
/// pixel centers on integer coordinates and edge replication outside the source.
pub fn crop_and_normalize_face(
    image: &GrayImage,
    frame: &LandmarkFrame,
    transform: &Similarity,
    size: u32,
) -> Result<GrayImage, RegistrationError> {
    let (w, h) = image.dimensions();
    for (index, p) in frame.points.iter().enumerate() {
        if p.x < 0.0 || p.y < 0.0 || p.x > f64::from(w - 1) || p.y > f64::from(h - 1) {
            return Err(RegistrationError::OutOfBounds {
                index,
                x: p.x,
                y: p.y,
                width: w,
                height: h,
            });
        }
    }
    let inv = transform.inverse();
    let mut out = GrayImage::new(size, size);
    for v in 0..size {
        for u in 0..size {
            let src = inv.apply(Point::new(f64::from(u), f64::from(v)));
            let value = bilinear(image, src.x, src.y);
            out.put_pixel(u, v, Luma([value.round().clamp(0.0, 255.0) as u8]));
        }
    }
    Ok(out)
}

fn bilinear(image: &GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = image.dimensions();
    let max_x = f64::from(w - 1);
    let max_y = f64::from(h - 1);
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let px = |x: u32, y: u32| f64::from(image.get_pixel(x, y)[0]);
    let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
    let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mean shape placed in the canonical crop: bounding box padded 20%, centered.
pub fn canonical_template(mean: &MeanShape, size: u32) -> Vec<Point> {
    let pts = mean.points();
    let (min_x, max_x, min_y, max_y) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.x), b.max(p.x), c.min(p.y), d.max(p.y)),
    );
    let side = (max_x - min_x).max(max_y - min_y) * CROP_PADDING;
    let scale = f64::from(size) / side;
    let center = Point::new((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let half = f64::from(size - 1) / 2.0;
    pts.iter()
        .map(|&p| (p - center) * scale + Point::new(half, half))
        .collect()
}

/// Mean shape, scheme and crop geometry bundled for per-frame registration.
#[derive(Debug, Clone)]
pub struct Registration {
    pub mean: MeanShape,
    pub scheme: LandmarkScheme,
    pub crop_size: u32,
    template: Vec<Point>,
}

impl Registration {
    pub fn new(mean: MeanShape, scheme: LandmarkScheme, crop_size: u32) -> Self {
        let template = canonical_template(&mean, crop_size);
        Self {
            mean,
            scheme,
            crop_size,
            template,
        }
    }

    /// The mean shape in canonical crop pixel coordinates.
    pub fn template(&self) -> &[Point] {
        &self.template
    }

    pub fn align(&self, frame: &LandmarkFrame) -> Result<AlignedFace, RegistrationError> {
        procrustes_align(frame, &self.template, &self.scheme.anchors)
    }

    pub fn crop(
        &self,
        image: &GrayImage,
        frame: &LandmarkFrame,
        aligned: &AlignedFace,
    ) -> Result<GrayImage, RegistrationError> {
        crop_and_normalize_face(image, frame, &aligned.transform, self.crop_size)
    }
}

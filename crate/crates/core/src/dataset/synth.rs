//! Deterministic synthetic faces with known pain levels.
//!
//! Each sequence holds one pain episode: a contiguous run of non-zero frames
//! whose level ramps up to a sampled peak and back down. Every level is split
//! into AU intensities that sum to it under PSPI, each AU displaces a fixed
//! set of landmarks linearly, and the face is rendered from the landmarks with
//! filled polygons, shading and pain-dependent wrinkle lines.
//!
//! Every sequence draws from its own ChaCha stream keyed by (subject,
//! sequence), so the output does not depend on generation order.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    format_aus, format_landmarks, write_manifest, Dataset, DatasetError, FrameRecord,
    Manifest, ManifestFrame, ManifestSequence, ManifestSubject, MANIFEST_FORMAT_VERSION,
};
use crate::facs::{AuCoding, PainScore, PSPI_MAX};
use crate::geometry::{convex_contains, convex_hull, polygon_area, Point, Similarity};
use crate::registration::LandmarkFrame;

/// Side of the frame [`canonical_face`] is drawn in.
const CANONICAL_SIDE: f64 = 160.0;
/// Eye-center distance of the canonical face.
const CANONICAL_IOD: f64 = 42.0;

/// Neutral 66-point face in a 160×160 image frame.
pub fn canonical_face() -> Vec<Point> {
    let mut p = Vec::with_capacity(66);
    // jaw 0..=16: lower half ellipse from right temple to left temple
    for k in 0..17 {
        let t = std::f64::consts::PI * (1.0 - k as f64 / 16.0);
        p.push(Point::new(80.0 + 46.0 * t.cos(), 78.0 + 58.0 * t.sin().abs()));
    }
    // brows 17..=21 (right), 22..=26 (left): arcs
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let u = k as f64 / 4.0;
            let x = if side < 0.0 { 46.0 + 26.0 * u } else { 88.0 + 26.0 * u };
            let arch = (std::f64::consts::PI * u).sin() * 6.0;
            p.push(Point::new(x, 56.0 - arch));
        }
    }
    // nose bridge 27..=30, lower nose 31..=35
    for k in 0..4 {
        p.push(Point::new(80.0, 66.0 + 9.0 * k as f64));
    }
    for k in 0..5 {
        let dx = -10.0 + 5.0 * k as f64;
        p.push(Point::new(80.0 + dx, 98.0 + 2.0 - (dx.abs() * 0.2)));
    }
    // eyes 36..=41 (right), 42..=47 (left): corner, upper x2, corner, lower x2
    for cx in [59.0, 101.0] {
        let (w, h) = (11.0, 4.5);
        p.push(Point::new(cx - w, 70.0));
        p.push(Point::new(cx - w / 3.0, 70.0 - h));
        p.push(Point::new(cx + w / 3.0, 70.0 - h));
        p.push(Point::new(cx + w, 70.0));
        p.push(Point::new(cx + w / 3.0, 70.0 + h));
        p.push(Point::new(cx - w / 3.0, 70.0 + h));
    }
    // outer lip 48..=59: ellipse starting at the right mouth corner
    for k in 0..12 {
        let t = std::f64::consts::PI + std::f64::consts::TAU * k as f64 / 12.0;
        p.push(Point::new(80.0 + 20.0 * t.cos(), 115.0 + 8.0 * t.sin()));
    }
    // inner lip 60..=65: upper three then lower three
    for (dx, dy) in [(-9.0, -2.0), (0.0, -2.5), (9.0, -2.0), (9.0, 2.0), (0.0, 2.5), (-9.0, 2.0)] {
        p.push(Point::new(80.0 + dx, 115.0 + dy));
    }
    p
}

/// Per-subject shape, pose and tone offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAppearance {
    /// Base skin gray level.
    pub skin: f64,
    pub background: f64,
    /// Horizontal face scale about the midline.
    pub face_width: f64,
    /// Outward shift of each eye and brow, canonical pixels.
    pub eye_spacing: f64,
    /// Upward brow shift, canonical pixels.
    pub brow_height: f64,
    pub mouth_width: f64,
    /// Overall size multiplier.
    pub scale: f64,
    /// Habitual head roll, radians.
    pub roll: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl SubjectAppearance {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            skin: rng.random_range(135.0..185.0),
            background: rng.random_range(30.0..80.0),
            face_width: rng.random_range(0.92..1.08),
            eye_spacing: rng.random_range(-2.5..2.5),
            brow_height: rng.random_range(-2.5..2.5),
            mouth_width: rng.random_range(0.9..1.1),
            scale: rng.random_range(0.95..1.05),
            roll: rng.random_range(-0.05..0.05),
            offset_x: rng.random_range(-3.0..3.0),
            offset_y: rng.random_range(-3.0..3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_subjects: usize,
    pub sequences_per_subject: usize,
    pub frames_per_sequence: usize,
    /// Fraction of frames with PSPI 0.
    pub zero_fraction: f64,
    /// Relative weight of episode peak levels 1..=16.
    pub level_weights: Vec<f64>,
    pub image_size: u32,
    /// Landmark jitter, canonical pixels.
    pub landmark_noise: f64,
    /// Explicit per-subject offsets; drawn from the seed when empty.
    pub subject_appearance: Vec<SubjectAppearance>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_subjects: 6,
            sequences_per_subject: 4,
            frames_per_sequence: 50,
            zero_fraction: 0.83,
            level_weights: (0..PSPI_MAX as i32).map(|k| 0.75f64.powi(k)).collect(),
            image_size: 128,
            landmark_noise: 0.3,
            subject_appearance: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::BadSpec(m.to_string()));
        if self.n_subjects == 0 || self.sequences_per_subject == 0 || self.frames_per_sequence == 0 {
            return bad("subject, sequence and frame counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.zero_fraction) {
            return bad("zero_fraction must lie in [0, 1]");
        }
        if self.level_weights.len() != PSPI_MAX as usize
            || self.level_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.level_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("level_weights needs 16 non-negative finite entries with a positive sum");
        }
        if self.image_size < 64 {
            return bad("image_size must be at least 64");
        }
        if !(self.landmark_noise.is_finite() && self.landmark_noise >= 0.0) {
            return bad("landmark_noise must be finite and non-negative");
        }
        if !self.subject_appearance.is_empty() && self.subject_appearance.len() != self.n_subjects {
            return bad("subject_appearance must be empty or list every subject");
        }
        Ok(())
    }

    pub fn subject_id(s: usize) -> String {
        format!("S{:02}", s + 1)
    }

    pub fn sequence_id(q: usize) -> String {
        format!("Q{}", q + 1)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn appearance(&self, s: usize) -> SubjectAppearance {
        match self.subject_appearance.get(s) {
            Some(a) => a.clone(),
            None => SubjectAppearance::sample(&mut self.rng(u64::MAX - s as u64)),
        }
    }
}

/// A generated dataset: the in-memory view matches what `load_manifest` reads back.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest_path: PathBuf,
    pub dataset: Dataset,
    /// Latent pain level of each frame, in dataset order.
    pub latent: Vec<PainScore>,
}

/// Pain levels of one sequence: zeros around a single triangular episode.
fn sequence_levels(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let f = spec.frames_per_sequence;
    let k = (((1.0 - spec.zero_fraction) * f as f64).round() as usize).min(f);
    let mut levels = vec![0u8; f];
    if k == 0 {
        return levels;
    }
    let peak = WeightedIndex::new(&spec.level_weights).expect("validated weights").sample(rng) + 1;
    let start = rng.random_range(0..=f - k);
    for i in 0..k {
        let u = (i as f64 + 0.5) / k as f64;
        let tri = 1.0 - (2.0 * u - 1.0).abs();
        levels[start + i] = ((peak as f64 * tri).ceil() as u8).clamp(1, peak as u8);
    }
    levels
}

/// Splits a PSPI level into AU intensities whose PSPI is exactly `level`.
fn decompose(level: u8, rng: &mut ChaCha8Rng) -> AuCoding {
    let au43 = u8::from(level == PSPI_MAX || (level >= 4 && rng.random_bool(0.4)));
    let rest = level - au43;
    // near-even split so every region tracks the level, then one random transfer
    let mut parts = [rest / 3; 3];
    let start = rng.random_range(0..3);
    for k in 0..(rest % 3) as usize {
        parts[(start + k) % 3] += 1;
    }
    let (from, to) = (rng.random_range(0..3), rng.random_range(0..3));
    if rng.random_bool(0.5) && parts[from] > 0 && parts[to] < 5 && from != to {
        parts[from] -= 1;
        parts[to] += 1;
    }
    let [au4, b, c] = parts;
    let split = |m: u8, rng: &mut ChaCha8Rng| {
        let other = rng.random_range(0..=m);
        if rng.random_bool(0.5) {
            (m, other)
        } else {
            (other, m)
        }
    };
    let (au6, au7) = split(b, rng);
    let (au9, au10) = split(c, rng);
    AuCoding {
        au4,
        au6,
        au7,
        au9,
        au10,
        au43,
        extra: Default::default(),
    }
}

fn shift(p: &mut [Point], idx: impl IntoIterator<Item = usize>, dx: f64, dy: f64) {
    for i in idx {
        p[i].x += dx;
        p[i].y += dy;
    }
}

/// Subject-specific neutral face in canonical coordinates.
fn subject_face(a: &SubjectAppearance) -> Vec<Point> {
    let mut p = canonical_face();
    let mid = CANONICAL_SIDE / 2.0;
    for q in p.iter_mut() {
        q.x = mid + (q.x - mid) * a.face_width;
    }
    shift(&mut p, (17..=21).chain(36..=41), -a.eye_spacing, 0.0);
    shift(&mut p, (22..=26).chain(42..=47), a.eye_spacing, 0.0);
    shift(&mut p, 17..=26, 0.0, -a.brow_height);
    for q in p[48..=65].iter_mut() {
        q.x = mid + (q.x - mid) * a.mouth_width;
    }
    p
}

const UPPER_LIDS: [usize; 4] = [37, 38, 43, 44];
const LOWER_LIDS: [usize; 4] = [41, 40, 47, 46];

/// Linear landmark displacement fields of the PSPI action units.
fn apply_aus(p: &mut [Point], c: &AuCoding) {
    let mid = CANONICAL_SIDE / 2.0;
    let a4 = f64::from(c.au4);
    for q in &mut p[17..=26] {
        // inner brow points move most
        let inner = 1.0 - ((q.x - mid).abs() / 40.0).min(1.0) * 0.6;
        q.y += 1.1 * a4 * inner;
        q.x -= (q.x - mid).signum() * 0.5 * a4 * inner;
    }
    let a6 = f64::from(c.au6);
    shift(p, LOWER_LIDS, 0.0, -0.35 * a6);
    shift(p, [48], -0.2 * a6, -0.45 * a6);
    shift(p, [54], 0.2 * a6, -0.45 * a6);
    let a7 = f64::from(c.au7);
    shift(p, UPPER_LIDS, 0.0, 0.35 * a7);
    shift(p, LOWER_LIDS, 0.0, -0.3 * a7);
    let a9 = f64::from(c.au9);
    shift(p, 31..=35, 0.0, -0.6 * a9);
    shift(p, [31], -0.35 * a9, 0.0);
    shift(p, [35], 0.35 * a9, 0.0);
    shift(p, [21, 22], 0.0, 0.4 * a9);
    shift(p, (49..=53).chain(60..=62), 0.0, -0.3 * a9);
    let a10 = f64::from(c.au10);
    shift(p, 49..=53, 0.0, -0.9 * a10);
    shift(p, 60..=62, 0.0, -0.6 * a10);
    if c.au43 == 1 {
        for (u, l) in UPPER_LIDS.into_iter().zip(LOWER_LIDS) {
            p[u].y = p[l].y - 0.6;
        }
    }
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(size: u32, background: f64) -> Self {
        let size = size as usize;
        let mut px = vec![0.0; size * size];
        for (i, v) in px.iter_mut().enumerate() {
            let y = (i / size) as f64 / size as f64;
            *v = background + 12.0 * y;
        }
        Self { size, px }
    }

    fn bbox(&self, pts: &[Point], pad: f64) -> (usize, usize, usize, usize) {
        let last = self.size as f64 - 1.0;
        let lo = |v: f64| (v - pad).floor().clamp(0.0, last) as usize;
        let hi = |v: f64| (v + pad).ceil().clamp(0.0, last) as usize;
        let x0 = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let x1 = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let y0 = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let y1 = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        (lo(x0), hi(x1), lo(y0), hi(y1))
    }

    /// Fills the convex hull of `pts` with a per-pixel value.
    fn fill(&mut self, pts: &[Point], value: impl Fn(Point) -> f64) {
        let hull = convex_hull(pts);
        if hull.len() < 3 {
            return;
        }
        let (x0, x1, y0, y1) = self.bbox(&hull, 0.0);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let q = Point::new(x as f64, y as f64);
                if convex_contains(&hull, q) {
                    self.px[y * self.size + x] = value(q);
                }
            }
        }
    }

    /// Darkens pixels near a polyline with an anti-aliased edge.
    fn stroke(&mut self, line: &[Point], half_width: f64, darkness: f64) {
        if darkness <= 0.0 || line.len() < 2 {
            return;
        }
        let (x0, x1, y0, y1) = self.bbox(line, half_width + 1.0);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let q = Point::new(x as f64, y as f64);
                let d = line
                    .windows(2)
                    .map(|s| segment_distance(q, s[0], s[1]))
                    .fold(f64::INFINITY, f64::min);
                let cover = (half_width + 0.5 - d).clamp(0.0, 1.0);
                self.px[y * self.size + x] -= darkness * cover;
            }
        }
    }

    fn into_image(self, rng: &mut ChaCha8Rng) -> GrayImage {
        let size = self.size as u32;
        let mut img = GrayImage::new(size, size);
        for (i, v) in self.px.iter().enumerate() {
            let noisy = v + f64::from(rng.random_range(-2i8..=2));
            img.put_pixel(i as u32 % size, i as u32 / size, Luma([noisy.round().clamp(0.0, 255.0) as u8]));
        }
        img
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sq();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    p.distance(a + ab * t)
}

fn pick(p: &[Point], idx: impl IntoIterator<Item = usize>) -> Vec<Point> {
    idx.into_iter().map(|i| p[i]).collect()
}

/// Draws a face from image-space landmarks.
fn render(
    p: &[Point],
    coding: &AuCoding,
    look: &SubjectAppearance,
    size: u32,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let mut canvas = Canvas::new(size, look.background);
    let eye_r = crate::geometry::centroid(&p[36..=41]);
    let eye_l = crate::geometry::centroid(&p[42..=47]);
    let unit = eye_r.distance(eye_l) / CANONICAL_IOD;
    let up = {
        let d = eye_l - eye_r;
        let n = d * (1.0 / d.norm());
        Point::new(n.y, -n.x)
    };

    // face: jaw plus a forehead above the brows
    let mut outline = pick(p, 0..=16);
    outline.extend(p[17..=26].iter().map(|&b| b + up * (24.0 * unit)));
    let center = crate::geometry::centroid(&outline);
    let half_w = 46.0 * unit;
    let skin = look.skin;
    canvas.fill(&outline, |q| {
        let r = (q - center).norm() / (60.0 * unit);
        skin + 18.0 * (q.x - center.x) / half_w - 22.0 * r * r
    });

    let (a4, a6, a7) = (f64::from(coding.au4), f64::from(coding.au6), f64::from(coding.au7));
    let a910 = f64::from(coding.au9 + coding.au10);

    // glabella furrows
    let glabella = (p[21] + p[22]) * 0.5;
    for dx in [-2.5, 2.5] {
        let side = Point::new(dx * unit, 0.0);
        canvas.stroke(
            &[glabella + side - up * (2.0 * unit), glabella + side + up * (7.0 * unit)],
            0.6 * unit,
            9.0 * a4,
        );
    }
    // crow's feet at the outer eye corners
    for (corner, out) in [(p[36], -1.0), (p[45], 1.0)] {
        for k in [-1.0, 0.0, 1.0] {
            let dir = Point::new(out, 0.45 * k);
            canvas.stroke(&[corner + dir * (3.0 * unit), corner + dir * (9.0 * unit)], 0.5 * unit, 7.0 * a6 + 4.0 * a7);
        }
    }
    // nasolabial folds
    canvas.stroke(&[p[31] + Point::new(-3.0 * unit, 0.0), p[48] + Point::new(-3.0 * unit, 0.0)], 0.8 * unit, 6.0 * a910 + 4.0 * a6);
    canvas.stroke(&[p[35] + Point::new(3.0 * unit, 0.0), p[54] + Point::new(3.0 * unit, 0.0)], 0.8 * unit, 6.0 * a910 + 4.0 * a6);

    canvas.stroke(&pick(p, 17..=21), 1.6 * unit, 85.0);
    canvas.stroke(&pick(p, 22..=26), 1.6 * unit, 85.0);

    for (lo, hi) in [(36, 41), (42, 47)] {
        let eye = pick(p, lo..=hi);
        let hull = convex_hull(&eye);
        let c = crate::geometry::centroid(&eye);
        let iris = 2.8 * unit;
        canvas.fill(&eye, |q| if q.distance(c) <= iris { 45.0 } else { 215.0 });
        canvas.stroke(&pick(p, lo..=lo + 3), 0.6 * unit, 70.0);
        if polygon_area(&hull) < 4.0 * unit * unit {
            canvas.stroke(&[p[lo], p[lo + 3]], 0.7 * unit, 60.0);
        }
    }

    canvas.stroke(&pick(p, 27..=30), 0.7 * unit, 25.0);
    canvas.stroke(&pick(p, 31..=35), 0.9 * unit, 45.0);

    let lips = skin - 55.0;
    canvas.fill(&pick(p, 48..=59), |_| lips);
    let inner = pick(p, 60..=65);
    if polygon_area(&convex_hull(&inner)) > 2.0 * unit * unit {
        canvas.fill(&inner, |_| 30.0);
    }
    canvas.into_image(rng)
}

struct GeneratedFrame {
    entry: ManifestFrame,
    record: FrameRecord,
}

fn generate_sequence(
    spec: &SyntheticSpec,
    s: usize,
    q: usize,
    look: &SubjectAppearance,
    out_dir: &Path,
) -> Result<Vec<GeneratedFrame>, DatasetError> {
    let mut rng = spec.rng(((s as u64) << 32) | q as u64);
    let levels = sequence_levels(spec, &mut rng);
    let subject = SyntheticSpec::subject_id(s);
    let sequence = SyntheticSpec::sequence_id(q);
    let rel_dir = format!("{subject}/{sequence}");
    let dir = out_dir.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;

    let size = f64::from(spec.image_size);
    let base = subject_face(look);
    let jitter = Normal::new(0.0, spec.landmark_noise.max(1e-300)).expect("finite sigma");
    let mut out = Vec::with_capacity(levels.len());
    for (i, &level) in levels.iter().enumerate() {
        let mut coding = decompose(level, &mut rng);
        let mut pts = base.clone();
        apply_aus(&mut pts, &coding);

        let open: f64 = rng.random_range(0.0..2.0);
        shift(&mut pts, (55..=59).chain(63..=65), 0.0, open);
        if open > 1.0 {
            coding.extra.insert("au25".into(), 1);
        }
        if spec.landmark_noise > 0.0 {
            for p in pts.iter_mut() {
                p.x += jitter.sample(&mut rng);
                p.y += jitter.sample(&mut rng);
            }
        }

        let scale = size / CANONICAL_SIDE * look.scale * (1.0 + rng.random_range(-0.02..0.02));
        let roll = look.roll + rng.random_range(-0.04..0.04);
        let target = Point::new(
            size / 2.0 + look.offset_x + rng.random_range(-1.5..1.5),
            size / 2.0 + look.offset_y + rng.random_range(-1.5..1.5),
        );
        let linear = Similarity::new(scale, roll, Point::default());
        let c = Point::new(CANONICAL_SIDE / 2.0, CANONICAL_SIDE / 2.0);
        let pose = Similarity::new(scale, roll, target - linear.apply(c));
        let pts = pose.apply_all(&pts);

        let image = render(&pts, &coding, look, spec.image_size, &mut rng);
        let frame_id = format!("{subject}_{sequence}_{i:03}");
        let entry = ManifestFrame {
            frame_id: frame_id.clone(),
            index: i as u32,
            image: format!("{rel_dir}/{frame_id}.png"),
            landmarks: format!("{rel_dir}/{frame_id}.pts"),
            aus: format!("{rel_dir}/{frame_id}.au"),
        };
        let image_path = out_dir.join(&entry.image);
        image
            .save_with_format(&image_path, image::ImageFormat::Png)
            .map_err(|source| match source {
                image::ImageError::IoError(e) => DatasetError::io(&image_path, e),
                source => DatasetError::Image {
                    path: image_path.display().to_string(),
                    source,
                },
            })?;
        for (rel, text) in [(&entry.landmarks, format_landmarks(&pts)), (&entry.aus, format_aus(&coding))] {
            let path = out_dir.join(rel);
            fs::write(&path, text).map_err(|e| DatasetError::io(&path, e))?;
        }
        let landmarks = LandmarkFrame::new(&frame_id, &subject, &sequence, pts).map_err(|source| {
            DatasetError::Landmarks {
                path: entry.landmarks.clone(),
                source,
            }
        })?;
        let pspi = coding.pspi();
        debug_assert_eq!(pspi.value(), level);
        out.push(GeneratedFrame {
            record: FrameRecord {
                frame_id,
                subject_id: subject.clone(),
                sequence_id: sequence.clone(),
                index: i as u32,
                image_path,
                landmarks,
                coding,
                pspi,
            },
            entry,
        });
    }
    Ok(out)
}

/// Writes a synthetic dataset (images, landmark and AU files, `manifest.json`)
/// under `out_dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticDataset, DatasetError> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| DatasetError::io(out_dir, e))?;
    let looks: Vec<SubjectAppearance> = (0..spec.n_subjects).map(|s| spec.appearance(s)).collect();
    let jobs: Vec<(usize, usize)> = (0..spec.n_subjects)
        .flat_map(|s| (0..spec.sequences_per_subject).map(move |q| (s, q)))
        .collect();
    let generated = jobs
        .par_iter()
        .map(|&(s, q)| generate_sequence(spec, s, q, &looks[s], out_dir))
        .collect::<Result<Vec<_>, _>>()?;

    let mut subjects: Vec<ManifestSubject> = Vec::new();
    let mut frames = Vec::new();
    for ((s, q), seq) in jobs.into_iter().zip(generated) {
        if q == 0 {
            subjects.push(ManifestSubject {
                id: SyntheticSpec::subject_id(s),
                sequences: Vec::new(),
            });
        }
        let mut entries = Vec::with_capacity(seq.len());
        for g in seq {
            entries.push(g.entry);
            frames.push(g.record);
        }
        subjects.last_mut().expect("subject pushed").sequences.push(ManifestSequence {
            id: SyntheticSpec::sequence_id(q),
            frames: entries,
        });
    }
    let dataset = Dataset {
        root: out_dir.to_path_buf(),
        frames,
    };
    let stats = dataset.stats();
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        subjects,
        stats: Some(stats),
    };
    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&manifest, &manifest_path)?;
    let latent = dataset.frames.iter().map(|f| f.pspi).collect();
    Ok(SyntheticDataset {
        manifest_path,
        dataset,
        latent,
    })
}

/// Writes a spec next to generated data so runs can be reproduced.
pub fn write_spec(spec: &SyntheticSpec, path: &Path) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(path, text + "\n").map_err(|e| DatasetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest_with_root;
    use crate::facs::compute_pspi;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            n_subjects: 2,
            sequences_per_subject: 1,
            frames_per_sequence: 50,
            ..Default::default()
        }
    }

    fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn decomposition_is_exact_for_every_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for level in 0..=PSPI_MAX {
            for _ in 0..200 {
                let c = decompose(level, &mut rng);
                assert!(c.au4 <= 5 && c.au6 <= 5 && c.au7 <= 5 && c.au9 <= 5 && c.au10 <= 5 && c.au43 <= 1);
                // independent restatement of the score
                let score = c.au4 + [c.au6, c.au7].into_iter().max().unwrap() + [c.au9, c.au10].into_iter().max().unwrap() + c.au43;
                assert_eq!(score, level);
                assert_eq!(compute_pspi(&c).value(), level);
            }
        }
    }

    #[test]
    fn byte_identical_reruns() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small(1), a.path()).unwrap();
        generate_synthetic(&small(1), b.path()).unwrap();
        let (ta, tb) = (tree(a.path()), tree(b.path()));
        assert_eq!(ta.len(), 2 * 50 * 3 + 1);
        assert!(ta == tb);
    }

    #[test]
    fn reload_matches_in_memory_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let syn = generate_synthetic(&small(5), dir.path()).unwrap();
        let loaded = load_manifest_with_root(&syn.manifest_path, None).unwrap();
        assert_eq!(loaded, syn.dataset);
        let pspi: Vec<PainScore> = loaded.frames.iter().map(|f| f.pspi).collect();
        assert_eq!(pspi, syn.latent);
        let img = loaded.frames[0].load_image().unwrap();
        assert_eq!(img.dimensions(), (128, 128));
    }

    #[test]
    fn all_zero_when_fraction_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            zero_fraction: 1.0,
            ..small(2)
        };
        let syn = generate_synthetic(&spec, dir.path()).unwrap();
        assert!(syn.latent.iter().all(|s| s.is_zero()));
    }

    #[test]
    fn landmarks_stay_inside_the_image() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_subjects: 6,
            frames_per_sequence: 20,
            zero_fraction: 0.0,
            ..small(11)
        };
        let syn = generate_synthetic(&spec, dir.path()).unwrap();
        for f in &syn.dataset.frames {
            for p in f.landmarks.points() {
                assert!(p.x > 4.0 && p.y > 4.0 && p.x < 123.0 && p.y < 123.0, "{p:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            SyntheticSpec { n_subjects: 0, ..small(1) },
            SyntheticSpec { zero_fraction: 1.5, ..small(1) },
            SyntheticSpec { level_weights: vec![1.0; 3], ..small(1) },
        ] {
            assert!(matches!(generate_synthetic(&spec, dir.path()), Err(DatasetError::BadSpec(_))));
        }
    }
}

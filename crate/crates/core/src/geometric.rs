//! 218-D shape feature computed from registered landmarks.
//!
//! Block layout, in order:
//!
//! | block | content                                              | len |
//! |-------|------------------------------------------------------|-----|
//! | 1     | registered − mean for the 49 inner points, x/y interleaved | 98 |
//! | 2     | consecutive segment lengths, brows (open) + eyes (closed)  | 20 |
//! | 3     | consecutive segment lengths, outer lip (closed) + inner lip (open) | 17 |
//! | 4     | distance of each inner point to the median of the stable points | 49 |
//! | 5     | interior angles, brows (open) + eyes (closed)         | 18 |
//! | 6     | interior angles, outer lip (closed) + inner lip (open) | 16 |

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::registration::LandmarkScheme;

pub const GEOMETRIC_DIM: usize = 218;
pub const BLOCK_LENGTHS: [usize; 6] = [98, 20, 17, 49, 18, 16];

const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometricError {
    #[error("degenerate angle: coincident points")]
    DegenerateAngle,
    #[error("expected {expected} points, got {got}")]
    WrongPointCount { expected: usize, got: usize },
    #[error("feature layout mismatch: block lengths {0:?}")]
    Layout(Vec<usize>),
}

/// Angle at `mid` between the rays towards `prev` and `next`, in degrees.
pub fn interior_angle(prev: Point, mid: Point, next: Point) -> Result<f64, GeometricError> {
    let a = prev - mid;
    let b = next - mid;
    if a.norm() < DEGENERATE_EPS || b.norm() < DEGENERATE_EPS {
        return Err(GeometricError::DegenerateAngle);
    }
    // atan2 of |cross| and dot stays accurate near 0° and 180°
    Ok(a.cross(b).abs().atan2(a.dot(b)).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainKind {
    Open,
    Closed,
}

/// An ordered run of landmark indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub indices: Vec<usize>,
    pub kind: ChainKind,
}

impl Chain {
    fn new(r: &RangeInclusive<usize>, kind: ChainKind) -> Self {
        Self {
            indices: r.clone().collect(),
            kind,
        }
    }

    /// Index pairs of consecutive points.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let ix = &self.indices;
        let n = ix.len();
        match self.kind {
            ChainKind::Open => (0..n.saturating_sub(1)).map(|k| (ix[k], ix[k + 1])).collect(),
            ChainKind::Closed => (0..n).map(|k| (ix[k], ix[(k + 1) % n])).collect(),
        }
    }

    /// `(prev, mid, next)` triples of consecutive points.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        let ix = &self.indices;
        let n = ix.len();
        match self.kind {
            ChainKind::Open => (1..n.saturating_sub(1))
                .map(|k| (ix[k - 1], ix[k], ix[k + 1]))
                .collect(),
            ChainKind::Closed => (0..n)
                .map(|k| (ix[(k + n - 1) % n], ix[k], ix[(k + 1) % n]))
                .collect(),
        }
    }
}

/// Chain tables used by the distance and angle blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryTables {
    pub inner: Vec<usize>,
    pub stable: Vec<usize>,
    pub eye_brow_chains: Vec<Chain>,
    pub mouth_chains: Vec<Chain>,
}

impl GeometryTables {
    pub fn from_scheme(scheme: &LandmarkScheme) -> Self {
        Self {
            inner: scheme.inner_points(),
            stable: scheme.stable_points(),
            eye_brow_chains: vec![
                Chain::new(&scheme.right_brow, ChainKind::Open),
                Chain::new(&scheme.left_brow, ChainKind::Open),
                Chain::new(&scheme.right_eye, ChainKind::Closed),
                Chain::new(&scheme.left_eye, ChainKind::Closed),
            ],
            mouth_chains: vec![
                Chain::new(&scheme.outer_lip, ChainKind::Closed),
                Chain::new(&scheme.inner_lip, ChainKind::Open),
            ],
        }
    }

    pub fn block_lengths(&self) -> [usize; 6] {
        let segs = |cs: &[Chain]| cs.iter().map(|c| c.segments().len()).sum::<usize>();
        let angles = |cs: &[Chain]| cs.iter().map(|c| c.triples().len()).sum::<usize>();
        [
            2 * self.inner.len(),
            segs(&self.eye_brow_chains),
            segs(&self.mouth_chains),
            self.inner.len(),
            angles(&self.eye_brow_chains),
            angles(&self.mouth_chains),
        ]
    }
}

/// The 218-D vector plus a flag raised when a degenerate angle was replaced by 180°.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricFeature {
    pub values: Vec<f64>,
    pub degenerate_angle: bool,
}

impl GeometricFeature {
    /// Slices of the six blocks, in layout order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(6);
        let mut start = 0;
        for len in BLOCK_LENGTHS {
            out.push(&self.values[start..start + len]);
            start += len;
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Extracts the 218-D shape feature.
///
/// `aligned` and `mean` must live in the same canonical frame.
pub fn extract_geometric(
    aligned: &[Point],
    mean: &[Point],
    tables: &GeometryTables,
) -> Result<GeometricFeature, GeometricError> {
    for pts in [aligned, mean] {
        if pts.len() != crate::registration::NUM_LANDMARKS {
            return Err(GeometricError::WrongPointCount {
                expected: crate::registration::NUM_LANDMARKS,
                got: pts.len(),
            });
        }
    }
    let lengths = tables.block_lengths();
    if lengths != BLOCK_LENGTHS {
        return Err(GeometricError::Layout(lengths.to_vec()));
    }

    let mut values = Vec::with_capacity(GEOMETRIC_DIM);
    let mut degenerate_angle = false;

    for &i in &tables.inner {
        let d = aligned[i] - mean[i];
        values.push(d.x);
        values.push(d.y);
    }

    let push_segments = |values: &mut Vec<f64>, chains: &[Chain]| {
        for c in chains {
            for (a, b) in c.segments() {
                values.push(aligned[a].distance(aligned[b]));
            }
        }
    };
    push_segments(&mut values, &tables.eye_brow_chains);
    push_segments(&mut values, &tables.mouth_chains);

    let anchor = Point::new(
        median(tables.stable.iter().map(|&i| aligned[i].x).collect()),
        median(tables.stable.iter().map(|&i| aligned[i].y).collect()),
    );
    for &i in &tables.inner {
        values.push(aligned[i].distance(anchor));
    }

    for chains in [&tables.eye_brow_chains, &tables.mouth_chains] {
        for c in chains {
            for (p, m, n) in c.triples() {
                let angle = interior_angle(aligned[p], aligned[m], aligned[n]).unwrap_or_else(|_| {
                    degenerate_angle = true;
                    180.0
                });
                values.push(angle);
            }
        }
    }

    debug_assert_eq!(values.len(), GEOMETRIC_DIM);
    Ok(GeometricFeature {
        values,
        degenerate_angle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::canonical_face;

    fn tables() -> GeometryTables {
        GeometryTables::from_scheme(&LandmarkScheme::default())
    }

    #[test]
    fn angle_examples() {
        let a = interior_angle(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0));
        assert!((a.unwrap() - 90.0).abs() < 1e-12);
        let a = interior_angle(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0));
        assert!((a.unwrap() - 180.0).abs() < 1e-12);
        let c = 60f64.to_radians();
        let a = interior_angle(Point::new(1.0, 0.0), Point::new(0.0, 0.0), Point::new(c.cos(), c.sin()));
        assert!((a.unwrap() - 60.0).abs() < 1e-12);
        assert_eq!(
            interior_angle(Point::new(1.0, 1.0), Point::new(1.0, 1.0), Point::new(0.0, 0.0)),
            Err(GeometricError::DegenerateAngle)
        );
    }

    #[test]
    fn default_tables_match_layout() {
        assert_eq!(tables().block_lengths(), BLOCK_LENGTHS);
        assert_eq!(BLOCK_LENGTHS.iter().sum::<usize>(), GEOMETRIC_DIM);
    }

    #[test]
    fn identical_to_mean_zeroes_first_block() {
        let face = canonical_face();
        let f = extract_geometric(&face, &face, &tables()).unwrap();
        assert_eq!(f.values.len(), GEOMETRIC_DIM);
        assert!(f.blocks()[0].iter().all(|&v| v == 0.0));
        assert!(!f.degenerate_angle);
        for b in [1, 2, 3] {
            assert!(f.blocks()[b].iter().all(|&v| v >= 0.0));
        }
        for b in [4, 5] {
            assert!(f.blocks()[b].iter().all(|&v| (0.0..=180.0).contains(&v)));
        }
    }

    /// Brute-force recomputation of every block with explicit index tables.
    fn oracle(p: &[Point], mean: &[Point]) -> Vec<f64> {
        let mut v = Vec::new();
        for i in 17..=65 {
            v.push(p[i].x - mean[i].x);
            v.push(p[i].y - mean[i].y);
        }
        let dist = |a: usize, b: usize| ((p[a].x - p[b].x).powi(2) + (p[a].y - p[b].y).powi(2)).sqrt();
        let open = |s: usize, e: usize| (s..e).map(|i| (i, i + 1)).collect::<Vec<_>>();
        let closed = |s: usize, e: usize| {
            let mut v = open(s, e);
            v.push((e, s));
            v
        };
        for (a, b) in open(17, 21).into_iter().chain(open(22, 26)).chain(closed(36, 41)).chain(closed(42, 47)) {
            v.push(dist(a, b));
        }
        for (a, b) in closed(48, 59).into_iter().chain(open(60, 65)) {
            v.push(dist(a, b));
        }
        let stable = [27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 39, 42, 45];
        let mut xs: Vec<f64> = stable.iter().map(|&i| p[i].x).collect();
        let mut ys: Vec<f64> = stable.iter().map(|&i| p[i].y).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let m = Point::new(xs[6], ys[6]);
        for q in &p[17..=65] {
            v.push(((q.x - m.x).powi(2) + (q.y - m.y).powi(2)).sqrt());
        }
        let ang = |a: usize, b: usize, c: usize| {
            let u = p[a] - p[b];
            let w = p[c] - p[b];
            (u.dot(w) / (u.norm() * w.norm())).clamp(-1.0, 1.0).acos().to_degrees()
        };
        let open3 = |s: usize, e: usize| (s + 1..e).map(|i| (i - 1, i, i + 1)).collect::<Vec<_>>();
        let closed3 = |s: usize, e: usize| {
            let n = e - s + 1;
            (0..n)
                .map(|k| (s + (k + n - 1) % n, s + k, s + (k + 1) % n))
                .collect::<Vec<_>>()
        };
        for (a, b, c) in open3(17, 21).into_iter().chain(open3(22, 26)).chain(closed3(36, 41)).chain(closed3(42, 47)) {
            v.push(ang(a, b, c));
        }
        for (a, b, c) in closed3(48, 59).into_iter().chain(open3(60, 65)) {
            v.push(ang(a, b, c));
        }
        v
    }

    #[test]
    fn displaced_eye_point_matches_oracle() {
        let mean = canonical_face();
        let mut moved = mean.clone();
        moved[37].x += 0.1;
        let base = extract_geometric(&mean, &mean, &tables()).unwrap();
        let f = extract_geometric(&moved, &mean, &tables()).unwrap();
        let expected = oracle(&moved, &mean);
        assert_eq!(expected.len(), GEOMETRIC_DIM);
        for (a, b) in f.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // block 1: point 37 is inner index 20 -> entries 40 and 41; only x changed
        let changed: Vec<usize> = (0..98).filter(|&k| f.values[k] != base.values[k]).collect();
        assert_eq!(changed, vec![40]);
        assert!((f.values[40] - 0.1).abs() < 1e-12);
        // segment block: only the two segments touching 37
        let changed: Vec<usize> = (98..118).filter(|&k| f.values[k] != base.values[k]).collect();
        assert_eq!(changed.len(), 2);
        // angle block: 37 and its two neighbours on the closed eye loop
        let changed: Vec<usize> = (184..202).filter(|&k| f.values[k] != base.values[k]).collect();
        assert_eq!(changed.len(), 3);
    }

    #[test]
    fn relative_blocks_translation_invariant() {
        let mean = canonical_face();
        let mut p = mean.clone();
        p[50].y -= 1.5;
        p[40].x += 0.7;
        let shifted: Vec<Point> = p.iter().map(|&q| q + Point::new(3.0, -2.0)).collect();
        let a = extract_geometric(&p, &mean, &tables()).unwrap();
        let b = extract_geometric(&shifted, &mean, &tables()).unwrap();
        for k in 98..GEOMETRIC_DIM {
            assert!((a.values[k] - b.values[k]).abs() < 1e-9);
        }
        for k in 0..49 {
            assert!((b.values[2 * k] - a.values[2 * k] - 3.0).abs() < 1e-9);
            assert!((b.values[2 * k + 1] - a.values[2 * k + 1] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_points_flagged() {
        let mean = canonical_face();
        let mut p = mean.clone();
        p[61] = p[60];
        let f = extract_geometric(&p, &mean, &tables()).unwrap();
        assert!(f.degenerate_angle);
        assert!(f.values.iter().all(|v| v.is_finite()));
    }
}

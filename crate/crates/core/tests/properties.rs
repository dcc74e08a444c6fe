//! Property tests for invariants that hold across whole input spaces.

use image::{GrayImage, Luma};
use proptest::prelude::*;

use painfuse::dataset::synth::canonical_face;
use painfuse::evaluation::compute_metrics;
use painfuse::facs::{compute_pspi, AuCoding, PainScore};
use painfuse::fusion::undersample_zero_frames;
use painfuse::geometric::{extract_geometric, GeometryTables, GEOMETRIC_DIM};
use painfuse::geometry::{Point, Similarity};
use painfuse::hog::{hog_descriptor_patch, HogParams, Patch};
use painfuse::registration::{fit_similarity, procrustes_align, LandmarkFrame, LandmarkScheme};
use painfuse::rvm::{rbf_kernel_matrix, DataMatrix};
use painfuse::temporal::{build_binary_mask, difference_stack};

fn coding() -> impl Strategy<Value = AuCoding> {
    (0..=5u8, 0..=5u8, 0..=5u8, 0..=5u8, 0..=5u8, 0..=1u8).prop_map(|(au4, au6, au7, au9, au10, au43)| AuCoding {
        au4,
        au6,
        au7,
        au9,
        au10,
        au43,
        ..Default::default()
    })
}

fn similarity() -> impl Strategy<Value = Similarity> {
    (0.5..2.0f64, -3.1..3.1f64, -50.0..50.0f64, -50.0..50.0f64)
        .prop_map(|(s, r, tx, ty)| Similarity::new(s, r, Point::new(tx, ty)))
}

/// Canonical face with bounded per-point jitter.
fn face() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-1.5..1.5f64, -1.5..1.5f64), 66).prop_map(|d| {
        canonical_face()
            .into_iter()
            .zip(d)
            .map(|(p, (dx, dy))| Point::new(p.x + dx, p.y + dy))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pspi_bounded_and_monotone(c in coding(), which in 0..6usize) {
        let p = compute_pspi(&c).value();
        prop_assert!(p <= 16);
        let mut up = c.clone();
        let (slot, max) = match which {
            0 => (&mut up.au4, 5),
            1 => (&mut up.au6, 5),
            2 => (&mut up.au7, 5),
            3 => (&mut up.au9, 5),
            4 => (&mut up.au10, 5),
            _ => (&mut up.au43, 1),
        };
        if *slot < max {
            *slot += 1;
            prop_assert!(compute_pspi(&up).value() >= p);
        }
    }

    #[test]
    fn alignment_is_idempotent(pts in face(), t in similarity()) {
        let anchors = LandmarkScheme::default().anchors;
        let mean = canonical_face();
        let frame = LandmarkFrame::from_points(t.apply_all(&pts)).unwrap();
        let first = procrustes_align(&frame, &mean, &anchors).unwrap();
        let again = procrustes_align(&LandmarkFrame::from_points(first.landmarks.clone()).unwrap(), &mean, &anchors).unwrap();
        prop_assert!(again.transform.deviation_from_identity() < 1e-8);
    }

    #[test]
    fn fitted_rotation_is_locally_optimal(pts in face(), t in similarity()) {
        let anchors = LandmarkScheme::default().anchors;
        let mean = canonical_face();
        let src = t.apply_all(&pts);
        let fit = fit_similarity(&src, &mean, &anchors).unwrap();
        let residual = |s: &Similarity| -> f64 {
            anchors.iter().map(|&a| s.apply(src[a]).distance(mean[a]).powi(2)).sum()
        };
        let best = residual(&fit);
        for d in [-1e-3, 1e-3] {
            // re-centre the translation so only the angle moves
            let turned = Similarity::new(fit.scale, fit.rotation + d, Point::default());
            let cs = anchors.iter().fold(Point::default(), |acc, &a| acc + src[a]) * (1.0 / anchors.len() as f64);
            let cd = anchors.iter().fold(Point::default(), |acc, &a| acc + mean[a]) * (1.0 / anchors.len() as f64);
            let perturbed = Similarity::new(fit.scale, fit.rotation + d, cd - turned.apply(cs));
            prop_assert!(residual(&perturbed) >= best - 1e-9);
        }
    }

    #[test]
    fn geometric_ranges_and_translation(pts in face(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
        let mean = canonical_face();
        let tables = GeometryTables::from_scheme(&LandmarkScheme::default());
        let f = extract_geometric(&pts, &mean, &tables).unwrap();
        prop_assert_eq!(f.values.len(), GEOMETRIC_DIM);
        // distances are blocks 2..4, angles blocks 5..6
        prop_assert!(f.values[98..184].iter().all(|&v| v >= 0.0));
        prop_assert!(f.values[184..].iter().all(|&v| (0.0..=180.0).contains(&v)));
        let moved: Vec<Point> = pts.iter().map(|&p| p + Point::new(dx, dy)).collect();
        let g = extract_geometric(&moved, &mean, &tables).unwrap();
        for k in 98..GEOMETRIC_DIM {
            prop_assert!((f.values[k] - g.values[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn hog_intensity_invariance(pixels in prop::collection::vec(0u8..=200, 24 * 24), offset in 0u8..=55, scale in 0.2..4.0f64) {
        let params = HogParams::default();
        let at = |x: usize, y: usize| f64::from(pixels[y * 24 + x]);
        let base = hog_descriptor_patch(&Patch::from_fn(24, at), &params).unwrap();
        let shifted = hog_descriptor_patch(&Patch::from_fn(24, |x, y| at(x, y) + f64::from(offset)), &params).unwrap();
        prop_assert_eq!(&base, &shifted);
        let scaled = hog_descriptor_patch(&Patch::from_fn(24, |x, y| at(x, y) * scale), &params).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        prop_assert!(base.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mask_is_binary(pts in face()) {
        let mask = build_binary_mask(&pts, &LandmarkScheme::default(), 160, 160).unwrap();
        let mut ones = 0;
        for y in 0..160 {
            for x in 0..160 {
                let v = mask.get(x, y);
                prop_assert!(v <= 1);
                ones += usize::from(v);
            }
        }
        prop_assert_eq!(ones, mask.area());
        prop_assert!(ones > 0);
    }

    #[test]
    fn stack_reconstructs_frames(seed in any::<u64>(), len in 1usize..8, t_frac in 0.0..1.0f64) {
        let frames: Vec<GrayImage> = (0..len as u64)
            .map(|k| GrayImage::from_fn(6, 5, |x, y| Luma([(seed.wrapping_mul(k + 1).wrapping_add(u64::from(x * 31 + y * 17)) % 256) as u8])))
            .collect();
        let t = ((len as f64 - 1.0) * t_frac).round() as usize;
        let stack = difference_stack(&frames, t).unwrap();
        for (j, plane) in stack.planes.iter().enumerate() {
            if j == 2 {
                continue;
            }
            let src = &frames[(t as isize + j as isize - 2).clamp(0, len as isize - 1) as usize];
            for (k, px) in src.as_raw().iter().enumerate() {
                prop_assert_eq!(i16::from(*px), plane.data[k] + stack.center().data[k]);
            }
        }
        prop_assert_eq!(&stack, &difference_stack(&frames, t).unwrap());
    }

    #[test]
    fn kernel_symmetric_with_unit_diagonal(raw in prop::collection::vec(-5.0..5.0f64, 3 * 12), gamma in 0.01..5.0f64) {
        let x = DataMatrix::new(12, 3, raw).unwrap();
        let k = rbf_kernel_matrix(&x, &x, gamma).unwrap();
        prop_assert!((&k - k.transpose()).amax() == 0.0);
        prop_assert!(k.diagonal().iter().all(|&d| d == 1.0));
        let jittered = &k + nalgebra::DMatrix::identity(12, 12) * 1e-8;
        prop_assert!(jittered.cholesky().is_some());
    }

    #[test]
    fn metrics_match_naive_and_corr_is_affine_invariant(
        pairs in prop::collection::vec((-10.0..20.0f64, 0.0..16.0f64), 3..80),
        a in 0.1..10.0f64,
        b in -5.0..5.0f64,
    ) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let t: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        let m = compute_metrics(&p, &t).unwrap();
        let n = p.len() as f64;
        let rmse = (p.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!((m.rmse - rmse).abs() <= 1e-12 * rmse.max(1.0));
        let mp = p.iter().sum::<f64>() / n;
        let mt = t.iter().sum::<f64>() / n;
        let cov: f64 = p.iter().zip(&t).map(|(x, y)| (x - mp) * (y - mt)).sum();
        let vp: f64 = p.iter().map(|x| (x - mp).powi(2)).sum();
        let vt: f64 = t.iter().map(|y| (y - mt).powi(2)).sum();
        if let Some(c) = m.corr {
            prop_assert!((c - cov / (vp * vt).sqrt()).abs() < 1e-12);
            let q: Vec<f64> = p.iter().map(|x| a * x + b).collect();
            let c2 = compute_metrics(&q, &t).unwrap().corr.unwrap();
            prop_assert!((c - c2).abs() < 1e-9);
        }
    }

    #[test]
    fn undersampling_counts(levels in prop::collection::vec(0u8..=16, 1..400), ratio in 0.5..4.0f64, seed in any::<u64>()) {
        let labels: Vec<PainScore> = levels.iter().map(|&l| PainScore::new(l).unwrap()).collect();
        let u = undersample_zero_frames(&labels, ratio, seed, 100).unwrap();
        let zeros = labels.iter().filter(|l| l.is_zero()).count();
        let mut hist = [0usize; 17];
        for l in &levels {
            hist[usize::from(*l)] += 1;
        }
        let c = hist[1..].iter().copied().max().unwrap();
        let want = if c == 0 { zeros.min(100) } else { zeros.min((ratio * c as f64 + 1e-9).floor() as usize) };
        prop_assert_eq!(u.zeros_retained, want);
        prop_assert_eq!(u.retained.len(), want + labels.len() - zeros);
        prop_assert!(u.retained.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(u.retained, undersample_zero_frames(&labels, ratio, seed, 100).unwrap().retained);
    }
}

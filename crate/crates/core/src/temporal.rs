//! Inputs for the deep feature channel: binary eye/mouth region masks, temporal
//! difference stacks over a 5-frame window, and loading of externally computed
//! per-frame feature vectors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use thiserror::Error;

use crate::geometry::{convex_hull, convex_span_at, Point};
use crate::registration::LandmarkScheme;

/// Temporal window length.
pub const WINDOW: usize = 5;
/// Region dilation as a fraction of the inter-ocular distance.
pub const MASK_MARGIN: f64 = 0.10;
const DILATION_DIRECTIONS: usize = 16;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("region hull has fewer than 3 distinct points")]
    DegenerateRegion,
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("center index {t} out of range for {len} frames")]
    BadIndex { t: usize, len: usize },
    #[error("frame planes differ in size")]
    SizeMismatch,
    #[error("{path}: frame {frame_id} has {got} values, expected {expected}")]
    DimMismatch {
        path: String,
        frame_id: String,
        expected: usize,
        got: usize,
    },
    #[error("channel {channel}: missing features for {} frame(s), first {}", .frames.len(), .frames[0])]
    MissingFrames { channel: String, frames: Vec<String> },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Eye and mouth region bitmap (values 0/1) in the canonical crop frame.
#[derive(Debug, Clone)]
pub struct BinaryMask {
    pub bitmap: GrayImage,
    pub eye_region: Vec<Point>,
    pub mouth_region: Vec<Point>,
}

impl BinaryMask {
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.bitmap.get_pixel(x, y)[0]
    }

    pub fn area(&self) -> usize {
        self.bitmap.pixels().filter(|p| p[0] == 1).count()
    }
}

/// Convex hull of `points`, grown outward by `margin` (Minkowski sum with a
/// 16-gon of that radius).
pub fn dilated_hull(points: &[Point], margin: f64) -> Result<Vec<Point>, TemporalError> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(TemporalError::DegenerateRegion);
    }
    if margin <= 0.0 {
        return Ok(hull);
    }
    let grown: Vec<Point> = hull
        .iter()
        .flat_map(|&p| {
            (0..DILATION_DIRECTIONS).map(move |k| {
                let a = std::f64::consts::TAU * k as f64 / DILATION_DIRECTIONS as f64;
                p + Point::new(a.cos(), a.sin()) * margin
            })
        })
        .collect();
    Ok(convex_hull(&grown))
}

/// Sets every pixel center `(x, y)` inside `poly` to 1.
fn fill_convex(bitmap: &mut GrayImage, poly: &[Point]) {
    let (w, h) = bitmap.dimensions();
    for y in 0..h {
        let Some((x0, x1)) = convex_span_at(poly, f64::from(y)) else {
            continue;
        };
        let start = x0.ceil().max(0.0);
        let end = x1.floor().min(f64::from(w) - 1.0);
        if start > end {
            continue;
        }
        for x in start as u32..=end as u32 {
            bitmap.put_pixel(x, y, Luma([1]));
        }
    }
}

/// Rasterizes the dilated brow/eye hull and the dilated mouth hull.
pub fn build_binary_mask(
    landmarks: &[Point],
    scheme: &LandmarkScheme,
    width: u32,
    height: u32,
) -> Result<BinaryMask, TemporalError> {
    let (r, l) = scheme.eye_centers(landmarks);
    let margin = MASK_MARGIN * r.distance(l);
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| landmarks[i]).collect::<Vec<_>>();
    let eye_region = dilated_hull(&pick(scheme.brows_and_eyes()), margin)?;
    let mouth_region = dilated_hull(&pick(scheme.mouth()), margin)?;
    let mut bitmap = GrayImage::new(width, height);
    fill_convex(&mut bitmap, &eye_region);
    fill_convex(&mut bitmap, &mouth_region);
    Ok(BinaryMask {
        bitmap,
        eye_region,
        mouth_region,
    })
}

/// Signed plane produced by frame differencing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedPlane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<i16>,
}

/// `[I(t-2)-I(t), I(t-1)-I(t), I(t), I(t+1)-I(t), I(t+2)-I(t)]`, indices clamped to the sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceStack {
    pub planes: Vec<SignedPlane>,
}

impl DifferenceStack {
    pub fn center(&self) -> &SignedPlane {
        &self.planes[WINDOW / 2]
    }
}

/// Builds the stack for frame `t`. Works for images and 0/1 masks alike.
pub fn difference_stack(frames: &[GrayImage], t: usize) -> Result<DifferenceStack, TemporalError> {
    if frames.is_empty() {
        return Err(TemporalError::EmptySequence);
    }
    if t >= frames.len() {
        return Err(TemporalError::BadIndex {
            t,
            len: frames.len(),
        });
    }
    let dims = frames[0].dimensions();
    if frames.iter().any(|f| f.dimensions() != dims) {
        return Err(TemporalError::SizeMismatch);
    }
    let center = &frames[t];
    let half = (WINDOW / 2) as i64;
    let last = frames.len() as i64 - 1;
    let planes = (-half..=half)
        .map(|offset| {
            let j = (t as i64 + offset).clamp(0, last) as usize;
            let data = if offset == 0 {
                center.as_raw().iter().map(|&v| i16::from(v)).collect()
            } else {
                frames[j]
                    .as_raw()
                    .iter()
                    .zip(center.as_raw())
                    .map(|(&a, &b)| i16::from(a) - i16::from(b))
                    .collect()
            };
            SignedPlane {
                width: dims.0,
                height: dims.1,
                data,
            }
        })
        .collect();
    Ok(DifferenceStack { planes })
}

/// Declared shape of an external (e.g. CNN) feature channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalChannelSpec {
    pub channel: String,
    pub dim: usize,
}

/// Per-frame vectors keyed by frame id.
pub type FrameTable = BTreeMap<String, Vec<f64>>;

/// Loads an external channel file.
///
/// Format: header `frame_id,<dim>`, then one line per frame:
/// `<frame_id>,<v1>,...,<v_dim>`. An empty file is an empty table.
pub fn load_external_channel(
    path: &Path,
    spec: &ExternalChannelSpec,
) -> Result<FrameTable, TemporalError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| TemporalError::Io {
        path: display.clone(),
        source,
    })?;
    parse_external_channel(&text, &display, spec)
}

pub fn parse_external_channel(
    text: &str,
    path: &str,
    spec: &ExternalChannelSpec,
) -> Result<FrameTable, TemporalError> {
    let parse_err = |line: usize, msg: String| TemporalError::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(FrameTable::new());
    };
    let mut fields = header.split(',').map(str::trim);
    if fields.next() != Some("frame_id") {
        return Err(parse_err(1, format!("bad header {header:?}")));
    }
    let declared: usize = fields
        .next()
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad header {header:?}")))?;
    if declared != spec.dim {
        return Err(TemporalError::DimMismatch {
            path: path.to_string(),
            frame_id: "<header>".into(),
            expected: spec.dim,
            got: declared,
        });
    }
    let mut table = FrameTable::new();
    for (lineno, line) in lines {
        let mut fields = line.split(',');
        let frame_id = fields.next().unwrap_or_default().trim().to_string();
        let values = fields
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno + 1, e.to_string()))?;
        if values.len() != spec.dim {
            return Err(TemporalError::DimMismatch {
                path: path.to_string(),
                frame_id,
                expected: spec.dim,
                got: values.len(),
            });
        }
        if table.insert(frame_id.clone(), values).is_some() {
            return Err(parse_err(lineno + 1, format!("duplicate frame id {frame_id}")));
        }
    }
    Ok(table)
}

/// Checks that every requested frame has a vector.
pub fn require_frames<'a>(
    channel: &str,
    table: &FrameTable,
    frame_ids: impl IntoIterator<Item = &'a str>,
) -> Result<(), TemporalError> {
    let missing: Vec<String> = frame_ids
        .into_iter()
        .filter(|id| !table.contains_key(*id))
        .map(String::from)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(TemporalError::MissingFrames {
            channel: channel.to_string(),
            frames: missing,
        })
    }
}

//! Dataset manifests, per-frame landmark/AU files, feature persistence and
//! the synthetic dataset generator.
//!
//! A manifest is a JSON document listing subjects → sequences → frames. Each
//! frame names an image, a landmark file (66 lines of `x y`) and an AU file
//! (`AUname intensity` lines). Paths are relative to the manifest's directory
//! unless `PAINFUSE_DATA_ROOT` is set.

pub mod features;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facs::{parse_intensity, validate_au_coding, AuCoding, FacsError, PainScore, PSPI_MAX};
use crate::geometry::Point;
use crate::registration::{LandmarkFrame, RegistrationError, NUM_LANDMARKS};

pub use features::{load_channel, load_features, persist_features, ChannelTable};
pub use synth::{generate_synthetic, SubjectAppearance, SyntheticDataset, SyntheticSpec};

/// Overrides the directory that manifest paths are resolved against.
pub const DATA_ROOT_ENV: &str = "PAINFUSE_DATA_ROOT";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: parse error at byte {offset}: {msg}")]
    BadFeatureFile { path: String, offset: u64, msg: String },
    #[error("{path}: invalid manifest: {msg}")]
    Manifest { path: String, msg: String },
    #[error("{path}: {source}")]
    Facs {
        path: String,
        #[source]
        source: FacsError,
    },
    #[error("{path}: {source}")]
    Landmarks {
        path: String,
        #[source]
        source: RegistrationError,
    },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("channel {channel}: expected dimension {expected}, got {got}")]
    DimMismatch { channel: String, expected: usize, got: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, DatasetError::Io { .. } | DatasetError::Image { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub subjects: Vec<ManifestSubject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<DatasetStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub sequences: Vec<ManifestSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub id: String,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: String,
    /// Position in the sequence; strictly increasing.
    pub index: u32,
    pub image: String,
    pub landmarks: String,
    pub aus: String,
}

/// Cached summary counts; recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub subjects: usize,
    pub frames: usize,
    pub zero_fraction: f64,
    /// Frame count per PSPI level 0..=16.
    pub histogram: Vec<usize>,
}

impl DatasetStats {
    pub fn from_scores(subjects: usize, scores: impl IntoIterator<Item = PainScore>) -> Self {
        let mut histogram = vec![0; PSPI_MAX as usize + 1];
        for s in scores {
            histogram[s.value() as usize] += 1;
        }
        let frames: usize = histogram.iter().sum();
        let zero_fraction = if frames == 0 {
            0.0
        } else {
            histogram[0] as f64 / frames as f64
        };
        Self {
            subjects,
            frames,
            zero_fraction,
            histogram,
        }
    }
}

/// One loaded frame with parsed annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub subject_id: String,
    pub sequence_id: String,
    pub index: u32,
    pub image_path: PathBuf,
    pub landmarks: LandmarkFrame,
    pub coding: AuCoding,
    pub pspi: PainScore,
}

impl FrameRecord {
    pub fn load_image(&self) -> Result<GrayImage, DatasetError> {
        load_gray(&self.image_path)
    }
}

pub fn load_gray(path: &Path) -> Result<GrayImage, DatasetError> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => DatasetError::io(path, e),
        source => DatasetError::Image {
            path: path.display().to_string(),
            source,
        },
    })?;
    Ok(img.to_luma8())
}

/// A validated, fully parsed dataset. Frames keep manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
}

impl Dataset {
    /// Distinct subject ids, ascending.
    pub fn subject_ids(&self) -> Vec<String> {
        self.frames
            .iter()
            .map(|f| f.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Frames grouped by (subject, sequence) in manifest order.
    pub fn sequences(&self) -> Vec<Vec<&FrameRecord>> {
        let mut out: Vec<Vec<&FrameRecord>> = Vec::new();
        for f in &self.frames {
            match out.last_mut() {
                Some(seq)
                    if seq[0].subject_id == f.subject_id && seq[0].sequence_id == f.sequence_id =>
                {
                    seq.push(f)
                }
                _ => out.push(vec![f]),
            }
        }
        out
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::from_scores(self.subject_ids().len(), self.frames.iter().map(|f| f.pspi))
    }

    pub fn index_of(&self) -> BTreeMap<&str, usize> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| (f.frame_id.as_str(), i))
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses 66 `x y` lines. Blank lines and `#` comments are skipped.
pub fn parse_landmarks(text: &str, path: &str) -> Result<Vec<Point>, DatasetError> {
    let err = |line, msg: String| DatasetError::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut points = Vec::with_capacity(NUM_LANDMARKS);
    let mut last = 0;
    for (line, content) in content_lines(text) {
        last = line;
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(line, format!("expected `x y`, got {content:?}")));
        }
        let coord = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("bad coordinate {s:?}")))
        };
        if points.len() == NUM_LANDMARKS {
            return Err(err(line, format!("more than {NUM_LANDMARKS} points")));
        }
        points.push(Point::new(coord(fields[0])?, coord(fields[1])?));
    }
    if points.len() != NUM_LANDMARKS {
        return Err(err(
            last + 1,
            format!("expected {NUM_LANDMARKS} points, found {}", points.len()),
        ));
    }
    Ok(points)
}

/// Parses `AUname intensity` lines into a validated coding.
pub fn parse_aus(text: &str, path: &str) -> Result<AuCoding, DatasetError> {
    let mut raw = BTreeMap::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        let err = |msg: String| DatasetError::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        if fields.len() != 2 {
            return Err(err(format!("expected `AUname intensity`, got {content:?}")));
        }
        let value = parse_intensity(fields[1]).ok_or_else(|| err(format!("bad intensity {:?}", fields[1])))?;
        let name = crate::facs::normalize_au_name(fields[0]).unwrap_or_else(|| fields[0].to_ascii_lowercase());
        if raw.insert(name, value).is_some() {
            return Err(err(format!("duplicate entry for {}", fields[0])));
        }
    }
    validate_au_coding(&raw).map_err(|source| DatasetError::Facs {
        path: path.to_string(),
        source,
    })
}

/// Landmark file text; floats use shortest round-trip formatting.
pub fn format_landmarks(points: &[Point]) -> String {
    let mut s = String::with_capacity(points.len() * 24);
    for p in points {
        let _ = writeln!(s, "{} {}", p.x, p.y);
    }
    s
}

pub fn format_aus(coding: &AuCoding) -> String {
    let mut s = String::new();
    for (name, v) in [
        ("AU4", coding.au4),
        ("AU6", coding.au6),
        ("AU7", coding.au7),
        ("AU9", coding.au9),
        ("AU10", coding.au10),
        ("AU43", coding.au43),
    ] {
        let _ = writeln!(s, "{name} {v}");
    }
    for (name, v) in &coding.extra {
        let _ = writeln!(s, "{} {v}", name.to_ascii_uppercase());
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| DatasetError::io(path, e))
}

/// Loads a manifest, resolving paths against `$PAINFUSE_DATA_ROOT` when set.
pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let root = std::env::var_os(DATA_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    load_manifest_with_root(path, root.as_deref())
}

/// Loads and validates a manifest. `root` defaults to the manifest's directory.
pub fn load_manifest_with_root(path: &Path, root: Option<&Path>) -> Result<Dataset, DatasetError> {
    let manifest = read_manifest(path)?;
    let display = path.display().to_string();
    let invalid = |msg: String| DatasetError::Manifest {
        path: display.clone(),
        msg,
    };
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(invalid(format!("unsupported format version {}", manifest.format_version)));
    }
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };

    let mut frame_ids = BTreeSet::new();
    let mut subject_ids = BTreeSet::new();
    let mut frames = Vec::new();
    for subject in &manifest.subjects {
        if !subject_ids.insert(subject.id.as_str()) {
            return Err(invalid(format!("duplicate subject id {}", subject.id)));
        }
        let mut seq_ids = BTreeSet::new();
        for seq in &subject.sequences {
            if !seq_ids.insert(seq.id.as_str()) {
                return Err(invalid(format!("duplicate sequence id {} in subject {}", seq.id, subject.id)));
            }
            let mut prev: Option<u32> = None;
            for f in &seq.frames {
                if !frame_ids.insert(f.frame_id.as_str()) {
                    return Err(invalid(format!("duplicate frame id {}", f.frame_id)));
                }
                if prev.is_some_and(|p| f.index <= p) {
                    return Err(invalid(format!(
                        "frame {} index {} out of order in sequence {}",
                        f.frame_id, f.index, seq.id
                    )));
                }
                prev = Some(f.index);
                frames.push(load_frame(&root, &subject.id, &seq.id, f)?);
            }
        }
    }
    let dataset = Dataset { root, frames };
    if let Some(cached) = &manifest.stats {
        if *cached != dataset.stats() {
            warn!("{display}: cached stats are stale; using recomputed values");
        }
    }
    Ok(dataset)
}

fn load_frame(root: &Path, subject: &str, sequence: &str, f: &ManifestFrame) -> Result<FrameRecord, DatasetError> {
    let image_path = root.join(&f.image);
    if !image_path.is_file() {
        return Err(DatasetError::io(
            &image_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
        ));
    }
    let lm_path = root.join(&f.landmarks);
    let lm_display = lm_path.display().to_string();
    let points = parse_landmarks(&read_text(&lm_path)?, &lm_display)?;
    let landmarks = LandmarkFrame::new(&f.frame_id, subject, sequence, points)
        .map_err(|source| DatasetError::Landmarks { path: lm_display, source })?;
    let au_path = root.join(&f.aus);
    let coding = parse_aus(&read_text(&au_path)?, &au_path.display().to_string())?;
    let pspi = coding.pspi();
    Ok(FrameRecord {
        frame_id: f.frame_id.clone(),
        subject_id: subject.to_string(),
        sequence_id: sequence.to_string(),
        index: f.index,
        image_path,
        landmarks,
        coding,
        pspi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::canonical_face;

    fn write_frame(dir: &Path, id: &str, points: &[Point], aus: &str) -> ManifestFrame {
        GrayImage::new(8, 8).save(dir.join(format!("{id}.png"))).unwrap();
        fs::write(dir.join(format!("{id}.pts")), format_landmarks(points)).unwrap();
        fs::write(dir.join(format!("{id}.au")), aus).unwrap();
        ManifestFrame {
            frame_id: id.into(),
            index: 0,
            image: format!("{id}.png"),
            landmarks: format!("{id}.pts"),
            aus: format!("{id}.au"),
        }
    }

    fn minimal(dir: &Path) -> PathBuf {
        let face = canonical_face();
        let a = write_frame(dir, "f0", &face, "AU4 2\nAU6 1\nAU7 3\nAU9 0\nAU10 4\nAU43 1\n");
        let mut b = write_frame(dir, "f1", &face, "AU4 0\nAU6 0\nAU7 0\nAU9 0\nAU10 0\nAU43 0\nAU25 2\n");
        b.index = 1;
        let manifest = Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            subjects: vec![ManifestSubject {
                id: "s1".into(),
                sequences: vec![ManifestSequence {
                    id: "q1".into(),
                    frames: vec![a, b],
                }],
            }],
            stats: None,
        };
        let path = dir.join("manifest.json");
        write_manifest(&manifest, &path).unwrap();
        path
    }

    #[test]
    fn minimal_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_manifest_with_root(&minimal(dir.path()), None).unwrap();
        assert_eq!(ds.frames.len(), 2);
        assert_eq!(ds.frames[0].pspi.value(), 2 + 3 + 4 + 1);
        assert_eq!(ds.frames[1].pspi.value(), 0);
        assert_eq!(ds.frames[1].coding.extra["au25"], 2);
        assert_eq!(ds.frames[0].landmarks.points(), &canonical_face()[..]);
        assert_eq!(ds.subject_ids(), vec!["s1".to_string()]);
        assert_eq!(ds.sequences().len(), 1);
    }

    #[test]
    fn explicit_root_overrides_manifest_dir() {
        let data = tempfile::tempdir().unwrap();
        let elsewhere = tempfile::tempdir().unwrap();
        let manifest = minimal(data.path());
        let moved = elsewhere.path().join("m.json");
        fs::copy(&manifest, &moved).unwrap();
        assert!(load_manifest_with_root(&moved, None).unwrap_err().is_io());
        assert!(load_manifest_with_root(&moved, Some(data.path())).is_ok());
    }

    #[test]
    fn short_landmark_file_names_the_file() {
        let mut text = format_landmarks(&canonical_face());
        let cut = text.trim_end().rfind('\n').unwrap();
        text.truncate(cut + 1);
        match parse_landmarks(&text, "face.pts") {
            Err(e @ DatasetError::Parse { .. }) => assert!(e.to_string().contains("face.pts")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_landmarks("1 2\n3 x\n", "a.pts").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
        let err = parse_aus("AU4 2\nAU6\n", "a.au").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
        let err = parse_aus("AU4 high\n", "a.au").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
        let err = parse_aus("AU4 9\nAU6 0\nAU7 0\nAU9 0\nAU10 0\nAU43 0\n", "a.au").unwrap_err();
        assert!(matches!(err, DatasetError::Facs { .. }));
        assert!(matches!(parse_aus("AU4 1\n", "a.au"), Err(DatasetError::Facs { .. })));
    }

    #[test]
    fn landmark_text_round_trips_bitwise() {
        let pts: Vec<Point> = (0..66)
            .map(|i| Point::new(0.1 * i as f64 + 1.0 / 3.0, (i as f64).sqrt() * std::f64::consts::PI))
            .collect();
        assert_eq!(parse_landmarks(&format_landmarks(&pts), "x").unwrap(), pts);
    }

    #[test]
    fn letter_intensities_accepted() {
        let c = parse_aus("au4 C\nAU06 B\nAU7 0\nAU9 A\nAU10 0\nAU43 1\n", "x").unwrap();
        assert_eq!(c.pspi().value(), 3 + 2 + 1 + 1);
        assert_eq!(parse_aus(&format_aus(&c), "x").unwrap(), c);
    }

    #[test]
    fn rejects_duplicates_and_disorder() {
        let dir = tempfile::tempdir().unwrap();
        let path = minimal(dir.path());
        let mut m = read_manifest(&path).unwrap();
        m.subjects[0].sequences[0].frames[1].index = 0;
        write_manifest(&m, &path).unwrap();
        assert!(matches!(load_manifest_with_root(&path, None), Err(DatasetError::Manifest { .. })));
        m.subjects[0].sequences[0].frames[1].index = 1;
        m.subjects[0].sequences[0].frames[1].frame_id = "f0".into();
        write_manifest(&m, &path).unwrap();
        assert!(matches!(load_manifest_with_root(&path, None), Err(DatasetError::Manifest { .. })));
    }
}

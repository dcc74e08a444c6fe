//! Per-channel relevance vector regressors stacked into a second-level regressor.
//!
//! Every channel regressor picks its RBF width from a grid of multiples of the
//! median pairwise distance by leave-one-subject-out cross-validation inside
//! the training subjects. The held-out predictions from that inner loop are
//! the inputs of the second-level regressor, so it never sees in-sample
//! channel outputs.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ChannelTable;
use crate::facs::PainScore;
use crate::rvm::{median_pairwise_distance, DataMatrix, KernelKind, KernelSpec, Prepared, RvmError, RvmModel, RvmOptions};

pub const GF_CHANNEL: &str = "GF";
pub const HOG_CHANNEL: &str = "HOG";
pub const FUSION_FORMAT_VERSION: u32 = 1;
/// Zero frames kept when the training set has no non-zero frame at all.
pub const EMPTY_FLOOR: usize = 100;
/// Inner RMSEs closer than this count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("channel {channel}: missing features for {} frame(s): {}", frames.len(), preview(frames))]
    MissingFrames { channel: String, frames: Vec<String> },
    #[error("channel {channel}, frame {frame_id}: expected dimension {expected}, got {got}")]
    DimMismatch {
        channel: String,
        frame_id: String,
        expected: usize,
        got: usize,
    },
    #[error("inner cross-validation needs at least 2 training subjects, got {0}")]
    InnerLoopInfeasible(usize),
    #[error("no channels selected")]
    NoChannels,
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid option: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Rvm(#[from] RvmError),
    #[error("unsupported fusion model: {0}")]
    Format(String),
}

fn preview(frames: &[String]) -> String {
    const SHOWN: usize = 5;
    let mut s = frames.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if frames.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}

/// One frame's vector for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub channel: String,
    pub frame_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(
        channel: impl Into<String>,
        frame_id: impl Into<String>,
        values: Vec<f64>,
        declared_dim: usize,
    ) -> Result<Self, FusionError> {
        let v = Self {
            channel: channel.into(),
            frame_id: frame_id.into(),
            values,
        };
        if v.values.len() != declared_dim {
            return Err(FusionError::DimMismatch {
                channel: v.channel,
                frame_id: v.frame_id,
                expected: declared_dim,
                got: v.values.len(),
            });
        }
        Ok(v)
    }
}

/// Feature tables of every available channel, keyed by channel id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    tables: BTreeMap<String, ChannelTable>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: ChannelTable) -> Result<(), FusionError> {
        for (id, v) in &table.rows {
            if v.len() != table.dim {
                return Err(FusionError::DimMismatch {
                    channel: table.channel.clone(),
                    frame_id: id.clone(),
                    expected: table.dim,
                    got: v.len(),
                });
            }
        }
        self.tables.insert(table.channel.clone(), table);
        Ok(())
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn table(&self, channel: &str) -> Option<&ChannelTable> {
        self.tables.get(channel)
    }

    /// Rows of `channel` for `frame_ids`, in that order.
    pub fn matrix<S: AsRef<str>>(&self, channel: &str, frame_ids: &[S]) -> Result<DataMatrix, FusionError> {
        let table = self
            .tables
            .get(channel)
            .ok_or_else(|| FusionError::UnknownChannel(channel.to_string()))?;
        let mut data = Vec::with_capacity(frame_ids.len() * table.dim);
        let mut missing = Vec::new();
        for id in frame_ids {
            match table.rows.get(id.as_ref()) {
                Some(v) => data.extend_from_slice(v),
                None => missing.push(id.as_ref().to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(FusionError::MissingFrames {
                channel: channel.to_string(),
                frames: missing,
            });
        }
        Ok(DataMatrix::new(frame_ids.len(), table.dim, data)?)
    }
}

/// A labeled training frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFrame {
    pub frame_id: String,
    pub subject_id: String,
    pub pspi: PainScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UndersampleOptions {
    pub enabled: bool,
    /// Zero frames kept per frame of the most frequent non-zero level.
    pub ratio: f64,
    pub empty_floor: usize,
}

impl Default for UndersampleOptions {
    fn default() -> Self {
        Self {
            enabled: true,
            ratio: 2.0,
            empty_floor: EMPTY_FLOOR,
        }
    }
}

/// Outcome of zero-frame undersampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Undersample {
    /// Retained input indices, ascending.
    pub retained: Vec<usize>,
    /// Frame count of the most frequent non-zero level.
    pub mode_count: usize,
    pub zeros_available: usize,
    pub zeros_retained: usize,
    pub seed: u64,
    /// Set when there were no non-zero frames and the floor applied.
    pub used_floor: bool,
}

/// Keeps every non-zero frame and `min(⌊ratio·c⌋, available)` zero frames drawn
/// uniformly without replacement, where `c` is the count of the most frequent
/// non-zero level.
pub fn undersample_zero_frames(
    labels: &[PainScore],
    ratio: f64,
    seed: u64,
    empty_floor: usize,
) -> Result<Undersample, FusionError> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(FusionError::BadOptions(format!("undersampling ratio must be positive, got {ratio}")));
    }
    let mut hist = [0usize; crate::facs::PSPI_MAX as usize + 1];
    for l in labels {
        hist[l.value() as usize] += 1;
    }
    let mode_count = hist[1..].iter().copied().max().unwrap_or(0);
    let zeros: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_zero()).collect();
    let used_floor = mode_count == 0;
    let want = if used_floor {
        warn!("no non-zero frames to balance against; keeping up to {empty_floor} zero frames");
        empty_floor
    } else {
        (ratio * mode_count as f64 + 1e-9).floor() as usize
    };
    let k = want.min(zeros.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: BTreeSet<usize> = rand::seq::index::sample(&mut rng, zeros.len(), k)
        .into_iter()
        .map(|j| zeros[j])
        .collect();
    keep.extend((0..labels.len()).filter(|&i| !labels[i].is_zero()));
    Ok(Undersample {
        retained: keep.into_iter().collect(),
        mode_count,
        zeros_available: zeros.len(),
        zeros_retained: k,
        seed,
        used_floor,
    })
}

/// How a kernel width was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSelection {
    /// Median pairwise distance of the standardized training inputs.
    pub median: f64,
    /// Candidate widths, ascending.
    pub candidates: Vec<f64>,
    /// Inner-loop RMSE per candidate (empty when the loop was skipped).
    pub inner_rmse: Vec<f64>,
    pub chosen: f64,
    /// True when fewer than two subjects forced the median fallback.
    pub fallback: bool,
    /// Subjects whose frames took part in the selection.
    pub provenance: BTreeSet<String>,
}

/// A trained channel regressor with its held-out training predictions.
#[derive(Debug, Clone)]
pub struct ChannelFit {
    pub channel: String,
    pub model: RvmModel,
    pub selection: GammaSelection,
    /// Inner-loop predictions for each training row at the chosen width.
    pub oof: Vec<f64>,
    /// True when `oof` had to fall back to in-sample predictions.
    pub in_sample: bool,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / a.len().max(1) as f64).sqrt()
}

fn groups(subjects: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut g: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        g.entry(s.as_str()).or_default().push(i);
    }
    g
}

fn kernel_for(kind: KernelKind, gamma: f64) -> KernelSpec {
    match kind {
        KernelKind::Rbf => KernelSpec::rbf(gamma),
        KernelKind::Linear => KernelSpec::linear(),
    }
}

/// Held-out predictions for every candidate width: `out[g][row]`.
fn inner_predictions(
    x: &DataMatrix,
    y: &[f64],
    subjects: &[String],
    kind: KernelKind,
    widths: &[f64],
    opts: &RvmOptions,
) -> Result<Vec<Vec<f64>>, FusionError> {
    let groups = groups(subjects);
    let per_fold = groups
        .par_iter()
        .map(|(&held, test_idx)| {
            let train_idx: Vec<usize> = (0..y.len()).filter(|&i| subjects[i] != held).collect();
            let prep = Prepared::new(&x.select_rows(&train_idx))?;
            let y_tr: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
            let x_te = x.select_rows(test_idx);
            widths
                .iter()
                .map(|&g| {
                    let fit = prep.fit(&y_tr, kernel_for(kind, g), opts)?;
                    Ok(fit.model.predict_mean(&x_te)?)
                })
                .collect::<Result<Vec<Vec<f64>>, FusionError>>()
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    let mut out = vec![vec![0.0; y.len()]; widths.len()];
    for ((_, test_idx), preds) in groups.iter().zip(per_fold) {
        for (g, p) in preds.into_iter().enumerate() {
            for (&i, v) in test_idx.iter().zip(p) {
                out[g][i] = v;
            }
        }
    }
    Ok(out)
}

/// Lowest RMSE wins; ties within `TIE_TOLERANCE` keep the earlier (smaller) width.
fn pick_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] - TIE_TOLERANCE * scores[best].abs().max(1.0) {
            best = i;
        }
    }
    best
}

/// Trains one channel regressor with inner leave-one-subject-out width selection.
///
/// `subjects[i]` names the subject of row `i`. With fewer than two subjects the
/// width falls back to the median heuristic and the held-out predictions are
/// replaced by in-sample ones, both with a warning.
pub fn train_channel_regressor(
    channel: &str,
    x: &DataMatrix,
    y: &[f64],
    subjects: &[String],
    kind: KernelKind,
    multipliers: &[f64],
    opts: &RvmOptions,
) -> Result<ChannelFit, FusionError> {
    if y.is_empty() {
        return Err(FusionError::EmptyTrainingSet);
    }
    if x.rows() != y.len() || subjects.len() != y.len() {
        return Err(RvmError::DimMismatch {
            expected: y.len(),
            got: x.rows().min(subjects.len()),
        }
        .into());
    }
    if multipliers.is_empty() || multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(FusionError::BadOptions("kernel width multipliers must be positive".into()));
    }
    let started = std::time::Instant::now();
    let provenance: BTreeSet<String> = subjects.iter().cloned().collect();
    let prep = Prepared::new(x)?;
    let median = median_pairwise_distance(prep.standardized());
    let mut candidates: Vec<f64> = match kind {
        KernelKind::Rbf => multipliers.iter().map(|m| m * median).collect(),
        KernelKind::Linear => vec![1.0],
    };
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let n_subjects = provenance.len();
    let (chosen, inner_rmse, oof, fallback) = if n_subjects < 2 {
        warn!(
            "channel {channel}: {}; using the median width",
            FusionError::InnerLoopInfeasible(n_subjects)
        );
        let g = if kind == KernelKind::Rbf { median } else { 1.0 };
        (g, Vec::new(), None, true)
    } else {
        let preds = inner_predictions(x, y, subjects, kind, &candidates, opts)?;
        let scores: Vec<f64> = preds.iter().map(|p| rmse(p, y)).collect();
        let best = pick_lowest(&scores);
        let oof = preds.into_iter().nth(best);
        (candidates[best], scores, oof, false)
    };

    let fit = prep.fit(y, kernel_for(kind, chosen), opts)?;
    debug!(
        "{channel}: {} rows, inner rmse {:?}, {} iterations, {:.2?}",
        y.len(),
        inner_rmse,
        fit.iterations,
        started.elapsed()
    );
    let model = fit.model.with_provenance(provenance.clone());
    let (oof, in_sample) = match oof {
        Some(o) => (o, false),
        None => (model.predict_mean(x)?, true),
    };
    Ok(ChannelFit {
        channel: channel.to_string(),
        model,
        selection: GammaSelection {
            median,
            candidates,
            inner_rmse,
            chosen,
            fallback,
            provenance,
        },
        oof,
        in_sample,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionOptions {
    /// RBF widths tried, as multiples of the median pairwise distance.
    pub gamma_multipliers: Vec<f64>,
    /// Kernel of the second-level regressor.
    pub second_level: KernelKind,
    pub rvm: RvmOptions,
    pub undersample: UndersampleOptions,
    pub seed: u64,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self {
            gamma_multipliers: vec![0.5, 1.0, 2.0, 4.0],
            second_level: KernelKind::Rbf,
            rvm: RvmOptions::default(),
            undersample: UndersampleOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub channel: String,
    pub dim: usize,
    pub model: RvmModel,
    pub selection: GammaSelection,
}

/// Undersampling record kept with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndersampleRecord {
    pub seed: u64,
    pub ratio: f64,
    pub mode_count: usize,
    pub zeros_available: usize,
    pub zeros_retained: usize,
    pub provenance: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub format_version: u32,
    pub channels: Vec<ChannelModel>,
    /// Maps the vector of channel predictions to the final estimate.
    pub second_level: RvmModel,
    pub second_selection: GammaSelection,
    pub undersample: Option<UndersampleRecord>,
    pub warnings: Vec<String>,
}

impl FusionModel {
    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.channel.as_str()).collect()
    }

    /// Every subject set a training artifact of this model was derived from.
    pub fn provenance(&self) -> Vec<(String, &BTreeSet<String>)> {
        let mut out = Vec::new();
        for c in &self.channels {
            out.push((format!("{} regressor", c.channel), &c.model.provenance));
            out.push((format!("{} width selection", c.channel), &c.selection.provenance));
        }
        out.push(("second-level regressor".into(), &self.second_level.provenance));
        out.push(("second-level width selection".into(), &self.second_selection.provenance));
        if let Some(u) = &self.undersample {
            out.push(("undersampling".into(), &u.provenance));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        let m: Self = serde_json::from_str(text).map_err(|e| FusionError::Format(e.to_string()))?;
        if m.format_version != FUSION_FORMAT_VERSION {
            return Err(FusionError::Format(format!("format version {}", m.format_version)));
        }
        if m.second_level.input_dim() != m.channels.len() {
            return Err(FusionError::Format(format!(
                "second level expects {} inputs but {} channels are listed",
                m.second_level.input_dim(),
                m.channels.len()
            )));
        }
        Ok(m)
    }
}

/// Stacks per-row values of several channels into an `n × channels` matrix.
fn stack(columns: &[&[f64]]) -> Result<DataMatrix, FusionError> {
    let n = columns.first().map_or(0, |c| c.len());
    let mut data = Vec::with_capacity(n * columns.len());
    for i in 0..n {
        data.extend(columns.iter().map(|c| c[i]));
    }
    Ok(DataMatrix::new(n, columns.len(), data)?)
}

/// Trains the second level on the channels' held-out predictions.
pub fn assemble_fusion(
    fits: &[&ChannelFit],
    dims: &[usize],
    y: &[f64],
    subjects: &[String],
    opts: &FusionOptions,
    undersample: Option<UndersampleRecord>,
) -> Result<FusionModel, FusionError> {
    if fits.is_empty() {
        return Err(FusionError::NoChannels);
    }
    let mut warnings = Vec::new();
    for f in fits {
        if f.in_sample {
            warnings.push(format!("{}: second level trained on in-sample predictions", f.channel));
        }
        if f.selection.fallback {
            warnings.push(format!("{}: kernel width fell back to the median heuristic", f.channel));
        }
    }
    let cols: Vec<&[f64]> = fits.iter().map(|f| f.oof.as_slice()).collect();
    let stacked = stack(&cols)?;
    let second = train_channel_regressor(
        "second-level",
        &stacked,
        y,
        subjects,
        opts.second_level,
        &opts.gamma_multipliers,
        &opts.rvm,
    )?;
    Ok(FusionModel {
        format_version: FUSION_FORMAT_VERSION,
        channels: fits
            .iter()
            .zip(dims)
            .map(|(f, &dim)| ChannelModel {
                channel: f.channel.clone(),
                dim,
                model: f.model.clone(),
                selection: f.selection.clone(),
            })
            .collect(),
        second_level: second.model,
        second_selection: second.selection,
        undersample,
        warnings,
    })
}

/// Undersamples `frames` and returns the retained frames plus a record.
pub fn undersample_frames(
    frames: &[LabeledFrame],
    opts: &UndersampleOptions,
    seed: u64,
) -> Result<(Vec<LabeledFrame>, Option<UndersampleRecord>), FusionError> {
    if !opts.enabled {
        return Ok((frames.to_vec(), None));
    }
    let labels: Vec<PainScore> = frames.iter().map(|f| f.pspi).collect();
    let u = undersample_zero_frames(&labels, opts.ratio, seed, opts.empty_floor)?;
    let kept: Vec<LabeledFrame> = u.retained.iter().map(|&i| frames[i].clone()).collect();
    let record = UndersampleRecord {
        seed,
        ratio: opts.ratio,
        mode_count: u.mode_count,
        zeros_available: u.zeros_available,
        zeros_retained: u.zeros_retained,
        provenance: frames.iter().map(|f| f.subject_id.clone()).collect(),
    };
    Ok((kept, Some(record)))
}

/// Fits every channel on the same training frames, in parallel.
pub fn train_channels(
    frames: &[LabeledFrame],
    store: &FeatureStore,
    channels: &[String],
    opts: &FusionOptions,
) -> Result<Vec<ChannelFit>, FusionError> {
    if channels.is_empty() {
        return Err(FusionError::NoChannels);
    }
    if frames.is_empty() {
        return Err(FusionError::EmptyTrainingSet);
    }
    let ids: Vec<&str> = frames.iter().map(|f| f.frame_id.as_str()).collect();
    let y: Vec<f64> = frames.iter().map(|f| f64::from(f.pspi.value())).collect();
    let subjects: Vec<String> = frames.iter().map(|f| f.subject_id.clone()).collect();
    let matrices = channels
        .iter()
        .map(|c| store.matrix(c, &ids))
        .collect::<Result<Vec<_>, _>>()?;
    channels
        .par_iter()
        .zip(matrices.par_iter())
        .map(|(c, x)| {
            train_channel_regressor(c, x, &y, &subjects, KernelKind::Rbf, &opts.gamma_multipliers, &opts.rvm)
        })
        .collect()
}

/// Undersamples, trains every channel regressor and the second level.
pub fn train_fusion(
    frames: &[LabeledFrame],
    store: &FeatureStore,
    channels: &[String],
    opts: &FusionOptions,
) -> Result<FusionModel, FusionError> {
    let (kept, record) = undersample_frames(frames, &opts.undersample, opts.seed)?;
    let fits = train_channels(&kept, store, channels, opts)?;
    let y: Vec<f64> = kept.iter().map(|f| f64::from(f.pspi.value())).collect();
    let subjects: Vec<String> = kept.iter().map(|f| f.subject_id.clone()).collect();
    let dims: Vec<usize> = channels
        .iter()
        .map(|c| store.table(c).map_or(0, |t| t.dim))
        .collect();
    let refs: Vec<&ChannelFit> = fits.iter().collect();
    assemble_fusion(&refs, &dims, &y, &subjects, opts, record)
}

/// Raw (unclamped) fused estimates for `frame_ids`.
pub fn predict_pipeline<S: AsRef<str>>(
    model: &FusionModel,
    store: &FeatureStore,
    frame_ids: &[S],
) -> Result<Vec<f64>, FusionError> {
    let per_channel = model
        .channels
        .iter()
        .map(|c| {
            let x = store.matrix(&c.channel, frame_ids)?;
            Ok(c.model.predict_mean(&x)?)
        })
        .collect::<Result<Vec<Vec<f64>>, FusionError>>()?;
    let cols: Vec<&[f64]> = per_channel.iter().map(Vec::as_slice).collect();
    Ok(model.second_level.predict_mean(&stack(&cols)?)?)
}

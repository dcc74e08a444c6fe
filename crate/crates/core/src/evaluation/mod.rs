//! Leave-one-subject-out folds, metrics and post-processing of raw predictions.

mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facs::PSPI_MAX;

pub use report::{
    emit_report, format_g6, load_report, ColumnReport, EvaluationReport, MethodResult, SubjectMetrics,
    SubjectPredictions, REPORT_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("leave-one-subject-out needs at least 2 distinct subjects: {0}")]
    InsufficientSubjects(String),
    #[error("length mismatch: {expected} predictions vs {got} targets")]
    DimMismatch { expected: usize, got: usize },
    #[error("no samples to score")]
    Empty,
    #[error("unknown post-processing method {0:?} (expected original, threshold, rebase or rebase_threshold)")]
    BadMethod(String),
    #[error("window length must be at least 1, got {0}")]
    BadWindow(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed report: {msg}")]
    BadReport { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_subject: String,
    pub train_subjects: Vec<String>,
}

/// One fold per subject, in ascending subject order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

pub fn loso_folds<S: AsRef<str>>(subjects: &[S]) -> Result<FoldPlan, EvalError> {
    let mut set = BTreeSet::new();
    for s in subjects {
        if !set.insert(s.as_ref()) {
            return Err(EvalError::InsufficientSubjects(format!("duplicate subject id {:?}", s.as_ref())));
        }
    }
    if set.len() < 2 {
        return Err(EvalError::InsufficientSubjects(format!("got {}", set.len())));
    }
    let folds = set
        .iter()
        .map(|&test| Fold {
            test_subject: test.to_string(),
            train_subjects: set.iter().filter(|&&s| s != test).map(|s| s.to_string()).collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// `None` when either side has zero variance.
    pub corr: Option<f64>,
}

pub fn compute_metrics(preds: &[f64], truth: &[f64]) -> Result<Metrics, EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::DimMismatch {
            expected: preds.len(),
            got: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = preds.len() as f64;
    let mse = preds.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let mp = preds.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    let corr = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0));
    Ok(Metrics { rmse: mse.sqrt(), corr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostMethod {
    Original,
    Threshold,
    Rebase,
    RebaseThreshold,
}

impl PostMethod {
    pub const ALL: [PostMethod; 4] = [
        PostMethod::Original,
        PostMethod::Rebase,
        PostMethod::Threshold,
        PostMethod::RebaseThreshold,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PostMethod::Original => "original",
            PostMethod::Threshold => "threshold",
            PostMethod::Rebase => "rebase",
            PostMethod::RebaseThreshold => "rebase_threshold",
        }
    }
}

impl fmt::Display for PostMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PostMethod {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "original" => Ok(PostMethod::Original),
            "threshold" | "thresholding" => Ok(PostMethod::Threshold),
            "rebase" | "rebased" => Ok(PostMethod::Rebase),
            "rebase_threshold" | "rebased_thresholding" => Ok(PostMethod::RebaseThreshold),
            _ => Err(EvalError::BadMethod(s.to_string())),
        }
    }
}

/// Rounds half-way cases up (towards +∞).
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Mode of the half-up rounded values; ties go to the smaller value. 0 for empty input.
pub fn modal_value(preds: &[f64]) -> f64 {
    let mut rounded: Vec<f64> = preds.iter().map(|&p| round_half_up(p)).collect();
    rounded.sort_by(f64::total_cmp);
    let mut best = (0usize, 0.0);
    let mut i = 0;
    while i < rounded.len() {
        let v = rounded[i];
        let run = rounded[i..].iter().take_while(|&&w| w == v).count();
        if run > best.0 {
            best = (run, v);
        }
        i += run;
    }
    best.1
}

pub fn clamp_pain(p: f64) -> f64 {
    p.clamp(0.0, f64::from(PSPI_MAX))
}

/// Applies `method` to one subject's predictions.
pub fn postprocess(preds: &[f64], method: PostMethod) -> Vec<f64> {
    match method {
        PostMethod::Original => preds.to_vec(),
        PostMethod::Threshold => preds.iter().map(|&p| clamp_pain(p)).collect(),
        PostMethod::Rebase => rebase(preds),
        PostMethod::RebaseThreshold => rebase(preds).into_iter().map(clamp_pain).collect(),
    }
}

fn rebase(preds: &[f64]) -> Vec<f64> {
    let m = modal_value(preds);
    preds.iter().map(|p| p - m).collect()
}

/// Rebases each non-overlapping window of `window` frames by its own mode.
pub fn sliding_rebase(preds: &[f64], window: usize) -> Result<Vec<f64>, EvalError> {
    if window == 0 {
        return Err(EvalError::BadWindow(window));
    }
    Ok(preds.chunks(window).flat_map(rebase).collect())
}

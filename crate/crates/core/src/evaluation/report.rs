use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{compute_metrics, postprocess, EvalError, Metrics, PostMethod};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Raw predictions and ground truth of one test subject, in frame order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPredictions {
    pub subject_id: String,
    pub frame_ids: Vec<String>,
    pub truth: Vec<f64>,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub frames: usize,
    pub rmse: f64,
    pub corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: PostMethod,
    /// Metrics over all subjects' predictions concatenated.
    pub overall: Metrics,
    pub subjects: Vec<SubjectMetrics>,
}

/// One channel set (a column of the comparison table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub name: String,
    pub channels: Vec<String>,
    pub subjects: Vec<SubjectPredictions>,
    pub methods: Vec<MethodResult>,
}

impl ColumnReport {
    /// Scores `subjects` under every method. Subjects are sorted by id.
    pub fn evaluate(
        name: impl Into<String>,
        channels: Vec<String>,
        mut subjects: Vec<SubjectPredictions>,
        methods: &[PostMethod],
    ) -> Result<Self, EvalError> {
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        for s in &subjects {
            if s.raw.len() != s.truth.len() || s.frame_ids.len() != s.truth.len() {
                return Err(EvalError::DimMismatch {
                    expected: s.truth.len(),
                    got: s.raw.len(),
                });
            }
        }
        let methods = methods
            .iter()
            .map(|&method| score(&subjects, method))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: name.into(),
            channels,
            subjects,
            methods,
        })
    }

    /// Re-scores after adding `bias` to every raw prediction.
    pub fn with_bias(&self, bias: f64) -> Result<Self, EvalError> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| SubjectPredictions {
                raw: s.raw.iter().map(|p| p + bias).collect(),
                ..s.clone()
            })
            .collect();
        let methods: Vec<PostMethod> = self.methods.iter().map(|m| m.method).collect();
        Self::evaluate(self.name.clone(), self.channels.clone(), subjects, &methods)
    }

    pub fn method(&self, method: PostMethod) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn score(subjects: &[SubjectPredictions], method: PostMethod) -> Result<MethodResult, EvalError> {
    let mut all_p = Vec::new();
    let mut all_t = Vec::new();
    let mut per = Vec::with_capacity(subjects.len());
    for s in subjects {
        let p = postprocess(&s.raw, method);
        let m = compute_metrics(&p, &s.truth)?;
        per.push(SubjectMetrics {
            subject_id: s.subject_id.clone(),
            frames: p.len(),
            rmse: m.rmse,
            corr: m.corr,
        });
        all_p.extend(p);
        all_t.extend_from_slice(&s.truth);
    }
    Ok(MethodResult {
        method,
        overall: compute_metrics(&all_p, &all_t)?,
        subjects: per,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub seed: u64,
    pub methods: Vec<PostMethod>,
    pub columns: Vec<ColumnReport>,
}

impl EvaluationReport {
    pub fn new(seed: u64, methods: Vec<PostMethod>, columns: Vec<ColumnReport>) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            seed,
            methods,
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnReport> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// `%.6g`-style formatting: 6 significant digits, trailing zeros dropped.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp) as usize;
    let s = trim_zeros(&format!("{x:.decimals$}"));
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), format_g6)
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn comparison_table(report: &EvaluationReport) -> String {
    let mut s = String::from("method");
    for c in &report.columns {
        let _ = write!(s, ",{0}_rmse,{0}_corr", c.name);
    }
    s.push('\n');
    for &m in &report.methods {
        s.push_str(m.as_str());
        for c in &report.columns {
            match c.method(m) {
                Some(r) => {
                    let _ = write!(s, ",{},{}", format_g6(r.overall.rmse), fmt_opt(r.overall.corr));
                }
                None => s.push_str(",NA,NA"),
            }
        }
        s.push('\n');
    }
    s
}

fn scatter(result: &MethodResult) -> String {
    let mut s = String::from("subject_id,rmse,corr\n");
    for m in &result.subjects {
        let _ = writeln!(s, "{},{},{}", m.subject_id, format_g6(m.rmse), fmt_opt(m.corr));
    }
    s
}

fn summary(report: &EvaluationReport) -> String {
    let mut s = String::from("column,method,subject_id,frames,rmse,corr\n");
    for c in &report.columns {
        for r in &c.methods {
            let n: usize = r.subjects.iter().map(|m| m.frames).sum();
            let _ = writeln!(
                s,
                "{},{},ALL,{n},{},{}",
                c.name,
                r.method,
                format_g6(r.overall.rmse),
                fmt_opt(r.overall.corr)
            );
            for m in &r.subjects {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    c.name,
                    r.method,
                    m.subject_id,
                    m.frames,
                    format_g6(m.rmse),
                    fmt_opt(m.corr)
                );
            }
        }
    }
    s
}

fn predictions(report: &EvaluationReport) -> String {
    let mut s = String::from("column,subject_id,frame_id,truth,raw\n");
    for c in &report.columns {
        for subj in &c.subjects {
            for ((id, t), p) in subj.frame_ids.iter().zip(&subj.truth).zip(&subj.raw) {
                let _ = writeln!(s, "{},{},{id},{},{}", c.name, subj.subject_id, format_g6(*t), format_g6(*p));
            }
        }
    }
    s
}

/// Writes the comparison table, per-method scatter files, summary,
/// predictions and the full-precision `report.json` under `dir`.
pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let scatter_dir = dir.join("scatter");
    fs::create_dir_all(&scatter_dir).map_err(|source| EvalError::Io {
        path: scatter_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<(), EvalError> {
        write(&path, &text)?;
        written.push(path);
        Ok(())
    };
    put(dir.join("comparison.csv"), comparison_table(report))?;
    for c in &report.columns {
        for r in &c.methods {
            put(scatter_dir.join(format!("{}_{}.csv", c.name, r.method)), scatter(r))?;
        }
    }
    put(dir.join("summary.csv"), summary(report))?;
    put(dir.join("predictions.csv"), predictions(report))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    put(dir.join("report.json"), json)?;
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<EvaluationReport, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |msg: String| EvalError::BadReport {
        path: path.display().to_string(),
        msg,
    };
    let report: EvaluationReport = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if report.format_version != REPORT_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", report.format_version)));
    }
    Ok(report)
}

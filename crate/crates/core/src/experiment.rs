//! Leave-one-subject-out driver: registration, feature extraction, training,
//! prediction and the provenance audit, fold by fold.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ColumnSpec, MeanShapeMode, RunConfig};
use crate::dataset::{load_manifest, ChannelTable, Dataset, FrameRecord};
use crate::evaluation::{loso_folds, ColumnReport, EvaluationReport, Fold, SubjectPredictions};
use crate::fusion::{
    assemble_fusion, predict_pipeline, train_channels, undersample_frames, ChannelFit, ChannelModel,
    FeatureStore, FusionModel, LabeledFrame, UndersampleRecord, GF_CHANNEL, HOG_CHANNEL,
};
use crate::geometric::{extract_geometric, GeometryTables, GEOMETRIC_DIM};
use crate::hog::{extract_hog, HOG_DIM};
use crate::registration::{compute_mean_shape, LandmarkFrame, LandmarkScheme, MeanShape, Registration};
use crate::temporal::{load_external_channel, require_frames, ExternalChannelSpec};
use crate::{Error, Result};

/// Everything a run needs in memory: config, parsed dataset, decoded images
/// and external channel tables.
pub struct Experiment {
    pub config: RunConfig,
    pub dataset: Dataset,
    images: Vec<GrayImage>,
    external: Vec<ChannelTable>,
}

/// Artifacts trained in one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldArtifacts {
    pub test_subject: String,
    pub train_subjects: Vec<String>,
    pub seed: u64,
    pub mean_shape: MeanShape,
    pub undersample: Option<UndersampleRecord>,
    pub channels: Vec<ChannelModel>,
    /// Second-level models of multi-channel columns, keyed by column name.
    pub fusions: BTreeMap<String, FusionModel>,
}

impl FoldArtifacts {
    /// Named subject sets of every training artifact in this fold.
    pub fn provenance(&self) -> Vec<(String, &BTreeSet<String>)> {
        let mut out = vec![("mean shape".to_string(), &self.mean_shape.provenance)];
        if let Some(u) = &self.undersample {
            out.push(("undersampling".into(), &u.provenance));
        }
        for c in &self.channels {
            out.push((format!("{} regressor", c.channel), &c.model.provenance));
            out.push((format!("{} width selection", c.channel), &c.selection.provenance));
        }
        for (name, f) in &self.fusions {
            for (what, set) in f.provenance() {
                out.push((format!("{name} fusion: {what}"), set));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub fold: String,
    pub artifact: String,
    pub subject: String,
}

/// Result of checking every artifact's subject set against its fold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub artifacts_checked: usize,
    pub violations: Vec<LeakageViolation>,
}

impl LeakageAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A subject set is clean when it holds only the fold's training subjects.
pub fn audit_folds(folds: &[FoldArtifacts]) -> LeakageAudit {
    let mut audit = LeakageAudit::default();
    for f in folds {
        let train: BTreeSet<&str> = f.train_subjects.iter().map(String::as_str).collect();
        for (artifact, set) in f.provenance() {
            audit.artifacts_checked += 1;
            if set.is_empty() {
                audit.violations.push(LeakageViolation {
                    fold: f.test_subject.clone(),
                    artifact: artifact.clone(),
                    subject: "<no provenance>".into(),
                });
            }
            for s in set.iter().filter(|s| !train.contains(s.as_str())) {
                audit.violations.push(LeakageViolation {
                    fold: f.test_subject.clone(),
                    artifact: artifact.clone(),
                    subject: s.clone(),
                });
            }
        }
    }
    audit
}

pub struct ExperimentOutcome {
    pub folds: Vec<FoldArtifacts>,
    /// Present when predictions were requested.
    pub report: Option<EvaluationReport>,
    pub audit: LeakageAudit,
}

struct FoldOutput {
    artifacts: FoldArtifacts,
    predictions: Vec<SubjectPredictions>,
}

/// Per-fold seed derived from the run seed and the fold position.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// GF and HOG rows of one frame, each present when requested.
type FrameFeatures = (Option<Vec<f64>>, Option<Vec<f64>>);

impl Experiment {
    /// Validates the config, loads the manifest, images and external channels.
    pub fn load(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dataset = load_manifest(&config.dataset)?;
        Self::from_parts(config, dataset)
    }

    pub fn from_parts(config: RunConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let images = dataset
            .frames
            .par_iter()
            .map(FrameRecord::load_image)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let needed: BTreeSet<String> = config.required_channels().into_iter().collect();
        let ids: Vec<&str> = dataset.frames.iter().map(|f| f.frame_id.as_str()).collect();
        let mut external = Vec::new();
        for e in config.external.iter().filter(|e| needed.contains(&e.name)) {
            let spec = ExternalChannelSpec {
                channel: e.name.clone(),
                dim: e.dim,
            };
            let rows = load_external_channel(&e.path, &spec)?;
            require_frames(&e.name, &rows, ids.iter().copied())?;
            external.push(ChannelTable {
                channel: e.name.clone(),
                dim: e.dim,
                rows,
            });
        }
        info!(
            "loaded {} frames of {} subjects, {} external channel(s)",
            dataset.frames.len(),
            dataset.subject_ids().len(),
            external.len()
        );
        Ok(Self {
            config,
            dataset,
            images,
            external,
        })
    }

    fn landmark_frames(&self, subjects: Option<&BTreeSet<&str>>) -> Vec<LandmarkFrame> {
        self.dataset
            .frames
            .iter()
            .filter(|f| subjects.is_none_or(|s| s.contains(f.subject_id.as_str())))
            .map(|f| f.landmarks.clone())
            .collect()
    }

    fn mean_shape(&self, train: Option<&BTreeSet<&str>>) -> Result<MeanShape> {
        let scheme = LandmarkScheme::default();
        Ok(compute_mean_shape(&self.landmark_frames(train), &scheme)?)
    }

    /// GF and HOG for every frame, registered to `mean`.
    fn builtin_features(&self, mean: MeanShape, channels: &BTreeSet<String>) -> Result<Vec<ChannelTable>> {
        let scheme = LandmarkScheme::default();
        let tables = GeometryTables::from_scheme(&scheme);
        let reg = Registration::new(mean, scheme, self.config.crop_size);
        let want_gf = channels.contains(GF_CHANNEL);
        let want_hog = channels.contains(HOG_CHANNEL);
        let rows = self
            .dataset
            .frames
            .par_iter()
            .zip(self.images.par_iter())
            .map(|(f, img)| -> Result<FrameFeatures> {
                let aligned = reg.align(&f.landmarks)?;
                let gf = if want_gf {
                    Some(extract_geometric(&aligned.landmarks, reg.template(), &tables)?.values)
                } else {
                    None
                };
                let hog = if want_hog {
                    let crop = reg.crop(img, &f.landmarks, &aligned)?;
                    Some(extract_hog(&crop, &aligned.landmarks, &self.config.hog)?)
                } else {
                    None
                };
                Ok((gf, hog))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gf = ChannelTable::new(GF_CHANNEL, GEOMETRIC_DIM);
        let mut hog = ChannelTable::new(HOG_CHANNEL, HOG_DIM);
        for (f, (g, h)) in self.dataset.frames.iter().zip(rows) {
            if let Some(g) = g {
                gf.insert(f.frame_id.clone(), g)?;
            }
            if let Some(h) = h {
                hog.insert(f.frame_id.clone(), h)?;
            }
        }
        let mut out = Vec::new();
        if want_gf {
            out.push(gf);
        }
        if want_hog {
            out.push(hog);
        }
        Ok(out)
    }

    /// GF and HOG tables for the whole dataset, registered to the mean shape of all frames.
    pub fn extract_all(&self) -> Result<Vec<ChannelTable>> {
        let all: BTreeSet<String> = [GF_CHANNEL, HOG_CHANNEL].map(String::from).into();
        self.builtin_features(self.mean_shape(None)?, &all)
    }

    fn store(&self, builtin: Vec<ChannelTable>) -> Result<FeatureStore> {
        let mut store = FeatureStore::new();
        for t in builtin.into_iter().chain(self.external.iter().cloned()) {
            store.insert(t)?;
        }
        Ok(store)
    }

    fn run_fold(
        &self,
        index: usize,
        fold: &Fold,
        columns: &[ColumnSpec],
        global_mean: Option<&MeanShape>,
        predict: bool,
    ) -> Result<FoldOutput> {
        let tag = format!("[fold {}]", fold.test_subject);
        let cfg = &self.config;
        let seed = fold_seed(cfg.seed, index);
        let train_set: BTreeSet<&str> = fold.train_subjects.iter().map(String::as_str).collect();

        let mean = match global_mean {
            Some(m) => m.clone(),
            None => self.mean_shape(Some(&train_set))?,
        };
        let channels = cfg.required_channels();
        let builtin: BTreeSet<String> = channels.iter().cloned().collect();
        let store = self.store(self.builtin_features(mean.clone(), &builtin)?)?;

        let train: Vec<LabeledFrame> = self
            .dataset
            .frames
            .iter()
            .filter(|f| train_set.contains(f.subject_id.as_str()))
            .map(|f| LabeledFrame {
                frame_id: f.frame_id.clone(),
                subject_id: f.subject_id.clone(),
                pspi: f.pspi,
            })
            .collect();
        let (kept, record) = undersample_frames(&train, &cfg.fusion.undersample, seed)?;
        info!("{tag} training on {} of {} frames", kept.len(), train.len());

        let fits = train_channels(&kept, &store, &channels, &cfg.fusion)?;
        for f in &fits {
            info!(
                "{tag} {}: width {:.4} ({} x median), {} relevance vectors",
                f.channel,
                f.selection.chosen,
                f.selection.chosen / f.selection.median,
                f.model.num_relevance_vectors()
            );
        }
        let by_name: BTreeMap<&str, &ChannelFit> = fits.iter().map(|f| (f.channel.as_str(), f)).collect();
        let y: Vec<f64> = kept.iter().map(|f| f64::from(f.pspi.value())).collect();
        let subjects: Vec<String> = kept.iter().map(|f| f.subject_id.clone()).collect();

        let mut fusions = BTreeMap::new();
        for col in columns.iter().filter(|c| c.channels.len() > 1) {
            let refs: Vec<&ChannelFit> = col.channels.iter().map(|c| by_name[c.as_str()]).collect();
            let dims: Vec<usize> = col.channels.iter().map(|c| cfg.channel_dim(c).unwrap_or(0)).collect();
            let model = assemble_fusion(&refs, &dims, &y, &subjects, &cfg.fusion, record.clone())?;
            for w in &model.warnings {
                warn!("{tag} {}: {w}", col.name);
            }
            fusions.insert(col.name.clone(), model);
        }

        let mut predictions = Vec::new();
        if predict {
            let test: Vec<&FrameRecord> = self
                .dataset
                .frames
                .iter()
                .filter(|f| f.subject_id == fold.test_subject)
                .collect();
            let ids: Vec<&str> = test.iter().map(|f| f.frame_id.as_str()).collect();
            for col in columns {
                let raw = match fusions.get(&col.name) {
                    Some(model) => predict_pipeline(model, &store, &ids)?,
                    None => {
                        let x = store.matrix(&col.channels[0], &ids)?;
                        by_name[col.channels[0].as_str()].model.predict_mean(&x)?
                    }
                };
                predictions.push(SubjectPredictions {
                    subject_id: fold.test_subject.clone(),
                    frame_ids: ids.iter().map(|s| s.to_string()).collect(),
                    truth: test.iter().map(|f| f64::from(f.pspi.value())).collect(),
                    raw,
                });
            }
        }
        info!("{tag} done");
        Ok(FoldOutput {
            artifacts: FoldArtifacts {
                test_subject: fold.test_subject.clone(),
                train_subjects: fold.train_subjects.clone(),
                seed,
                mean_shape: mean,
                undersample: record,
                channels: fits
                    .into_iter()
                    .map(|f| ChannelModel {
                        dim: cfg.channel_dim(&f.channel).unwrap_or(0),
                        channel: f.channel,
                        model: f.model,
                        selection: f.selection,
                    })
                    .collect(),
                fusions,
            },
            predictions,
        })
    }

    /// Runs every outer fold, in parallel on the current rayon pool.
    ///
    /// With `predict` set, the held-out subject of each fold is scored and an
    /// evaluation report is assembled.
    pub fn run(&self, predict: bool) -> Result<ExperimentOutcome> {
        let cfg = &self.config;
        let plan = loso_folds(&self.dataset.subject_ids())?;
        let columns = cfg.resolved_columns();
        let global_mean = match cfg.mean_shape {
            MeanShapeMode::Full => {
                warn!("mean shape computed from all subjects, test subjects included");
                Some(self.mean_shape(None)?)
            }
            MeanShapeMode::Fold => None,
        };
        let outputs = plan
            .folds
            .par_iter()
            .enumerate()
            .map(|(i, fold)| self.run_fold(i, fold, &columns, global_mean.as_ref(), predict))
            .collect::<Result<Vec<_>>>()?;

        let mut folds = Vec::with_capacity(outputs.len());
        let mut per_column: Vec<Vec<SubjectPredictions>> = vec![Vec::new(); columns.len()];
        for out in outputs {
            for (k, p) in out.predictions.into_iter().enumerate() {
                per_column[k].push(p);
            }
            folds.push(out.artifacts);
        }
        let audit = audit_folds(&folds);
        info!(
            "leakage audit: {} artifacts checked, {} violation(s)",
            audit.artifacts_checked,
            audit.violations.len()
        );
        let report = if predict {
            let cols = columns
                .iter()
                .zip(per_column)
                .map(|(c, preds)| ColumnReport::evaluate(c.name.clone(), c.channels.clone(), preds, &cfg.methods))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Some(EvaluationReport::new(cfg.seed, cfg.methods.clone(), cols))
        } else {
            None
        };
        Ok(ExperimentOutcome { folds, report, audit })
    }
}

/// Writes one `fold_<subject>.json` per fold under `dir`.
pub fn write_fold_models(folds: &[FoldArtifacts], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    folds
        .iter()
        .map(|f| {
            let path = dir.join(format!("fold_{}.json", f.test_subject));
            let text = serde_json::to_string_pretty(f).expect("fold artifacts serialize") + "\n";
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

pub fn write_audit(audit: &LeakageAudit, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(audit).expect("audit serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

//! TOML run configuration.
//!
//! Relative paths are resolved against the directory holding the config file.
//! See `configs/run.toml` for a complete example.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::PostMethod;
use crate::fusion::{FusionOptions, GF_CHANNEL, HOG_CHANNEL};
use crate::geometric::GEOMETRIC_DIM;
use crate::hog::{HogParams, HOG_DIM};
use crate::registration::DEFAULT_CROP_SIZE;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("external channel {channel}: feature file {path} not found")]
    MissingChannelFile { channel: String, path: String },
}

/// Where the registration mean shape comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanShapeMode {
    /// Training subjects of each fold only.
    #[default]
    Fold,
    /// Every frame of the dataset, test subjects included.
    Full,
}

/// A precomputed feature channel read from a `frame_id,<dim>` CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalChannel {
    pub name: String,
    pub path: PathBuf,
    pub dim: usize,
}

/// One column of the comparison table: a named channel set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset manifest.
    pub dataset: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub mean_shape: MeanShapeMode,
    #[serde(default = "default_methods")]
    pub methods: Vec<PostMethod>,
    /// Channels evaluated when `columns` is empty.
    #[serde(default = "default_channels")]
    pub channels: Vec<String>,
    #[serde(default)]
    pub external: Vec<ExternalChannel>,
    /// Explicit comparison columns. Empty means every single channel plus
    /// all channels fused.
    #[serde(default)]
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_crop")]
    pub crop_size: u32,
    #[serde(default)]
    pub hog: HogParams,
    #[serde(default)]
    pub fusion: FusionOptions,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub jobs: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_methods() -> Vec<PostMethod> {
    PostMethod::ALL.to_vec()
}

fn default_channels() -> Vec<String> {
    vec![GF_CHANNEL.into(), HOG_CHANNEL.into()]
}

fn default_crop() -> u32 {
    DEFAULT_CROP_SIZE
}

impl RunConfig {
    /// A config with defaults for everything but the seed and dataset.
    pub fn new(seed: u64, dataset: impl Into<PathBuf>) -> Self {
        Self {
            seed,
            dataset: dataset.into(),
            output: default_output(),
            mean_shape: MeanShapeMode::default(),
            methods: default_methods(),
            channels: default_channels(),
            external: Vec::new(),
            columns: Vec::new(),
            crop_size: default_crop(),
            hog: HogParams::default(),
            fusion: FusionOptions::default(),
            jobs: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.output);
        for e in &mut self.external {
            fix(&mut e.path);
        }
    }

    /// Declared dimension of a channel, if it exists.
    pub fn channel_dim(&self, channel: &str) -> Option<usize> {
        match channel {
            GF_CHANNEL => Some(GEOMETRIC_DIM),
            HOG_CHANNEL => Some(HOG_DIM),
            _ => self.external.iter().find(|e| e.name == channel).map(|e| e.dim),
        }
    }

    /// Comparison columns, expanding the default set when none are given.
    pub fn resolved_columns(&self) -> Vec<ColumnSpec> {
        if !self.columns.is_empty() {
            return self.columns.clone();
        }
        let mut cols: Vec<ColumnSpec> = self
            .channels
            .iter()
            .map(|c| ColumnSpec {
                name: c.clone(),
                channels: vec![c.clone()],
            })
            .collect();
        if self.channels.len() > 1 {
            cols.push(ColumnSpec {
                name: self.channels.join("_"),
                channels: self.channels.clone(),
            });
        }
        cols
    }

    /// Every channel some column needs, in first-use order.
    pub fn required_channels(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.resolved_columns()
            .into_iter()
            .flat_map(|c| c.channels)
            .filter(|c| seen.insert(c.clone()))
            .collect()
    }

    /// Structural checks plus existence of every external channel file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.methods.is_empty() {
            return bad("no post-processing methods".into());
        }
        let mut names = BTreeSet::new();
        for e in &self.external {
            if e.name == GF_CHANNEL || e.name == HOG_CHANNEL {
                return bad(format!("external channel may not be named {}", e.name));
            }
            if e.name.is_empty() || e.name.contains([',', '/', ' ']) {
                return bad(format!("invalid external channel name {:?}", e.name));
            }
            if e.dim == 0 {
                return bad(format!("external channel {} has dimension 0", e.name));
            }
            if !names.insert(e.name.as_str()) {
                return bad(format!("external channel {} declared twice", e.name));
            }
        }
        let columns = self.resolved_columns();
        if columns.is_empty() {
            return bad("no channels selected".into());
        }
        let mut col_names = BTreeSet::new();
        for col in &columns {
            if col.channels.is_empty() {
                return bad(format!("column {} has no channels", col.name));
            }
            if !col_names.insert(col.name.as_str()) {
                return bad(format!("column {} declared twice", col.name));
            }
            let unique: BTreeSet<&String> = col.channels.iter().collect();
            if unique.len() != col.channels.len() {
                return bad(format!("column {} repeats a channel", col.name));
            }
            for c in &col.channels {
                if self.channel_dim(c).is_none() {
                    return bad(format!("column {} uses unknown channel {c}", col.name));
                }
            }
        }
        self.hog.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.hog.cells * self.hog.cells * self.hog.bins * crate::registration::NUM_LANDMARKS != HOG_DIM {
            return bad(format!("HOG parameters must give a {HOG_DIM}-D descriptor"));
        }
        if (self.crop_size as usize) < self.hog.patch {
            return bad(format!("crop size {} is smaller than the HOG patch", self.crop_size));
        }
        let f = &self.fusion;
        if f.gamma_multipliers.is_empty() || f.gamma_multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return bad("kernel width multipliers must be positive".into());
        }
        if !(f.undersample.ratio.is_finite() && f.undersample.ratio > 0.0) {
            return bad("undersampling ratio must be positive".into());
        }
        let needed: BTreeSet<String> = self.required_channels().into_iter().collect();
        for e in self.external.iter().filter(|e| needed.contains(&e.name)) {
            if !e.path.is_file() {
                return Err(ConfigError::MissingChannelFile {
                    channel: e.name.clone(),
                    path: e.path.display().to_string(),
                });
            }
        }
        Ok(())
    }
}

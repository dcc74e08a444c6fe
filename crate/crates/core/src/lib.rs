//! Continuous pain-intensity estimation from face video.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`facs`]: FACS action-unit codings and the PSPI pain score used as ground truth.
//! * [`registration`]: 66-point landmark scheme, generalized Procrustes mean shape,
//!   similarity alignment and canonical face crops.
//! * [`geometric`] and [`hog`]: the 218-D shape and 2376-D appearance features.
//! * [`temporal`]: binary region masks, temporal difference stacks and externally
//!   computed (e.g. CNN) feature channels.
//! * [`rvm`]: relevance vector regression trained by evidence maximization.
//! * [`fusion`]: per-channel regressors with subject-independent kernel-width
//!   selection, stacked into a second-level regressor.
//! * [`evaluation`]: leave-one-subject-out folds, metrics, post-processing and reports.
//! * [`dataset`]: manifests, landmark/AU files, feature files and a synthetic generator.
//! * [`experiment`] and [`cli`]: the LOSO driver and the command-line front end.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod experiment;
pub mod facs;
pub mod fusion;
pub mod geometric;
pub mod geometry;
pub mod hog;
pub mod registration;
pub mod rvm;
pub mod temporal;

mod error;

pub use error::{Error, Result};

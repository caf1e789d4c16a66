//! Annotation quality measurement for multi-annotator bounding-box datasets.
//!
//! The crate turns boxes into per-class pixel observations, measures
//! Krippendorff's alpha over them, derives leave-one-out annotator vitality
//! and per-class difficulty, curates ground-truth sets from the most
//! consistent annotators, and scores detector predictions against them.

pub mod agreement;
pub mod curation;
pub mod datamodel;
pub mod detect_eval;
pub mod error;
pub mod quality;
pub mod raster;
pub mod rng;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

//! Core library for measuring how faithfully super-resolution outputs preserve
//! the high-level content of their ground truth.
//!
//! The crate is organised by stage of the evaluation workflow:
//!
//! * [`image`] decoded rasters, luma planes, resampling and filtering.
//! * [`degrade`] seeded synthesis of ×4 low-resolution inputs.
//! * [`metrics`] native full-reference scores (PSNR, SSIM, pixel-domain VIF).
//! * [`hlf`] embedding cosine similarity through an ONNX backbone.
//! * [`study`] pair selection, annotation log, annotator filtering, aggregation and splits.
//! * [`correlate`] SRCC/PLCC benchmarking of any scorer against human scores.

pub mod correlate;
pub mod degrade;
mod error;
pub mod hlf;
pub mod image;
pub mod jsonl;
pub mod metrics;
pub mod study;
pub mod synth;

pub use correlate::{benchmark, plcc, srcc, MetricReport, ScoreSeries, ScorerKind};
pub use degrade::{apply_degradation, prepare_gt, sample_recipe, DegradationRecipe, SeverityLevel};
pub use error::{Error, Result};
pub use hlf::{cosine_similarity, Embedding, EmbeddingBackend, EmbeddingModelSpec, HlfScore};
pub use image::{ImageBuffer, LumaPlane};
pub use metrics::{MetricValue, Orientation};
pub use study::{AnnotationEvent, AnnotatorStatus, FidelityScore, PairRecord, StudyStore};


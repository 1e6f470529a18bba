//! Embedding-based fidelity scoring.
//!
//! Both images go through the same ONNX backbone (input `image`, N×3×H×W
//! float32; output `embedding`, N×D float32) and are compared by cosine
//! similarity. Scores are published as a change score in `[0, 1]` where
//! higher means more fidelity change, matching the orientation of the human
//! annotations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use crate::image::{resize, ImageBuffer, ResizeKernel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizePolicy {
    Stretch,
    CenterCropAfterResize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Contents of a `<model>.spec.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingModelSpec {
    /// Relative paths resolve against the sidecar's directory.
    pub model_path: PathBuf,
    /// `(height, width)`.
    pub input_size: (usize, usize),
    pub normalization: Normalization,
    pub resize_policy: ResizePolicy,
    pub embedding_dim: usize,
    pub fine_tuned: bool,
}

impl EmbeddingModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.normalization.mean.len() != 3 || self.normalization.std.len() != 3 {
            return Err(Error::Spec("normalization mean and std need exactly 3 entries".into()));
        }
        if self.normalization.std.iter().any(|s| !s.is_finite() || *s == 0.0) {
            return Err(Error::Spec("normalization std must be non-zero and finite".into()));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::Spec("input_size must be positive".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Spec("embedding_dim must be positive".into()));
        }
        Ok(())
    }

    /// Reads a sidecar and resolves `model_path` against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if spec.model_path.is_relative() {
            if let Some(dir) = path.parent() {
                spec.model_path = dir.join(&spec.model_path);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Label used in batch output: the model file stem.
    pub fn model_name(&self) -> String {
        self.model_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Rejects non-finite entries and the all-zero vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("embedding has non-finite entries".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("embedding is all zeros".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `dot(a, b) / (|a|·|b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!("embedding dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm embedding".into()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Change score for a pretrained backbone: `(1 - cos) / 2`.
pub fn pretrained_change_score(cosine: f64) -> f64 {
    (1.0 - cosine) / 2.0
}

/// Change score for a fine-tuned backbone: its regressed output clamped to `[0, 1]`.
pub fn regressed_change_score(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlfScore {
    pub pair_id: String,
    pub cosine: f64,
    pub change_score: f64,
}

/// One line of batch HLF output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlfRecord {
    pub pair_id: String,
    pub cosine: f64,
    pub change_score: f64,
    pub model_name: String,
}

type Plan = TypedRunnableModel<TypedModel>;

/// A loaded backbone. Not shared between threads; create one per worker.
pub struct EmbeddingBackend {
    spec: EmbeddingModelSpec,
    plan: Plan,
}

impl std::fmt::Debug for EmbeddingBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingBackend").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl EmbeddingBackend {
    /// Loads and optimises the graph, then runs a probe image to confirm the
    /// output length equals `spec.embedding_dim`.
    pub fn load(spec: EmbeddingModelSpec) -> Result<Self> {
        spec.validate()?;
        if !spec.model_path.is_file() {
            return Err(Error::Load(format!("model file {} not found", spec.model_path.display())));
        }
        let load = |e: TractError| Error::Load(format!("{}: {e:#}", spec.model_path.display()));
        let mut model = tract_onnx::onnx().model_for_path(&spec.model_path).map_err(load)?;
        if model.inputs.len() != 1 || model.outputs.len() != 1 {
            return Err(Error::Load("graph must have exactly one input and one output".into()));
        }
        // Graphs exported with a symbolic batch dimension are pinned to the spec's input size.
        let declared = model.input_fact(0).map_err(load)?.clone();
        if declared.shape.as_concrete_finite().ok().flatten().is_none() {
            let (h, w) = spec.input_size;
            model = model
                .with_input_fact(0, f32::fact([1, 3, h, w]).into())
                .map_err(load)?;
        }
        let plan = model
            .into_optimized()
            .map_err(load)?
            .into_runnable()
            .map_err(load)?;
        let backend = Self { spec, plan };

        let (h, w) = backend.spec.input_size;
        let probe = ImageBuffer::uniform(w, h, 3, 128).expect("positive input size");
        let raw = backend.run(&probe)?;
        if raw.len() != backend.spec.embedding_dim {
            return Err(Error::Spec(format!(
                "spec declares embedding_dim {} but the graph produces {}",
                backend.spec.embedding_dim,
                raw.len()
            )));
        }
        Ok(backend)
    }

    pub fn from_spec_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(EmbeddingModelSpec::load(path)?)
    }

    pub fn spec(&self) -> &EmbeddingModelSpec {
        &self.spec
    }

    /// Resized, scaled to `[0, 1]` and channel-normalised NCHW input tensor.
    pub fn preprocess(&self, img: &ImageBuffer) -> Result<Vec<f32>> {
        let (h, w) = self.spec.input_size;
        let rgb = img.to_rgb();
        let sized = match self.spec.resize_policy {
            ResizePolicy::Stretch => fit(&rgb, w, h)?,
            ResizePolicy::CenterCropAfterResize => {
                let scale = (w as f64 / rgb.width() as f64).max(h as f64 / rgb.height() as f64);
                let rw = ((rgb.width() as f64 * scale).round() as usize).max(w);
                let rh = ((rgb.height() as f64 * scale).round() as usize).max(h);
                let big = fit(&rgb, rw, rh)?;
                big.crop((rw - w) / 2, (rh - h) / 2, w, h)?
            }
        };
        let norm = &self.spec.normalization;
        let mut tensor = vec![0f32; 3 * h * w];
        for (i, px) in sized.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                let v = (f64::from(px[c]) / 255.0 - norm.mean[c]) / norm.std[c];
                tensor[c * h * w + i] = v as f32;
            }
        }
        Ok(tensor)
    }

    fn run(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        let (h, w) = self.spec.input_size;
        let data = self.preprocess(img)?;
        let backend = |e: TractError| Error::Backend(format!("{e:#}"));
        let input = Tensor::from_shape(&[1, 3, h, w], &data).map_err(backend)?;
        let outputs = self.plan.run(tvec!(input.into())).map_err(backend)?;
        let out = outputs
            .first()
            .ok_or_else(|| Error::Backend("graph produced no output".into()))?;
        let view = out.to_array_view::<f32>().map_err(backend)?;
        Ok(view.iter().map(|&v| f64::from(v)).collect())
    }
}

fn fit(img: &ImageBuffer, w: usize, h: usize) -> Result<ImageBuffer> {
    if img.width() == w && img.height() == h {
        return Ok(img.clone());
    }
    resize(img, w, h, ResizeKernel::Bicubic)
}

/// Runs the backbone and returns the raw (un-normalised) embedding.
pub fn embed(backend: &EmbeddingBackend, img: &ImageBuffer) -> Result<Embedding> {
    Embedding::new(backend.run(img)?)
}

pub fn hlf_score(backend: &EmbeddingBackend, gt: &ImageBuffer, sr: &ImageBuffer, pair_id: &str) -> Result<HlfScore> {
    let score = || -> Result<HlfScore> {
        let cosine = cosine_similarity(&embed(backend, gt)?, &embed(backend, sr)?)?;
        let change = if backend.spec.fine_tuned {
            regressed_change_score(pretrained_change_score(cosine))
        } else {
            pretrained_change_score(cosine)
        };
        Ok(HlfScore {
            pair_id: pair_id.to_string(),
            cosine,
            change_score: change,
        })
    };
    score().map_err(|e| e.for_pair(pair_id))
}

//! Seeded ×4 degradation pipeline in the BSRGAN style.
//!
//! A [`DegradationRecipe`] fixes every random choice up front (stage order,
//! blur shape, resize kernel, noise level, JPEG quality and the noise seed),
//! so an LR image is a pure function of its GT and its recipe.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{
    add_gaussian_noise, decode_image, encode_image, gaussian_blur, gaussian_blur_anisotropic, resize,
    ImageBuffer, LumaPlane, ResizeKernel, SaveFormat,
};
use crate::{Error, Result};

/// Downscale factor. Fixed.
pub const SCALE: usize = 4;

/// Smallest GT side accepted by the pipeline.
pub const MIN_GT_SIDE: usize = 8;

/// Probability that a sampled blur is anisotropic.
pub const ANISOTROPIC_PROB: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Blur,
    Resize,
    Noise,
    Jpeg,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Blur, Stage::Resize, Stage::Noise, Stage::Jpeg];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurKind {
    Isotropic,
    Anisotropic { sigma_x: f64, sigma_y: f64, angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLevel {
    Mild,
    Medium,
    Severe,
}

impl FromStr for SeverityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mild" => Ok(Self::Mild),
            "medium" => Ok(Self::Medium),
            "severe" => Ok(Self::Severe),
            other => Err(Error::arg(format!("unknown severity {other:?}"))),
        }
    }
}

impl fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mild => "mild",
            Self::Medium => "medium",
            Self::Severe => "severe",
        })
    }
}

/// Parameter sub-ranges for one severity level. Ranges nest: mild ⊂ medium ⊂ severe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeverityRanges {
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
    /// Inclusive.
    pub jpeg_quality: (u8, u8),
}

/// Full parameter ranges; `severe` samples from all of them.
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.2, 3.0);
pub const NOISE_SIGMA_RANGE: (f64, f64) = (1.0, 25.0);
pub const JPEG_QUALITY_RANGE: (u8, u8) = (30, 95);

impl SeverityLevel {
    pub fn ranges(self) -> SeverityRanges {
        match self {
            Self::Mild => SeverityRanges {
                blur_sigma: (0.2, 1.0),
                noise_sigma: (1.0, 8.0),
                jpeg_quality: (70, 95),
            },
            Self::Medium => SeverityRanges {
                blur_sigma: (0.2, 2.0),
                noise_sigma: (1.0, 16.0),
                jpeg_quality: (50, 95),
            },
            Self::Severe => SeverityRanges {
                blur_sigma: BLUR_SIGMA_RANGE,
                noise_sigma: NOISE_SIGMA_RANGE,
                jpeg_quality: JPEG_QUALITY_RANGE,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRecipe {
    pub seed: u64,
    pub stage_order: [Stage; 4],
    pub blur_sigma: f64,
    pub blur_kind: BlurKind,
    pub resize_kernel: ResizeKernel,
    pub scale: usize,
    pub noise_sigma: f64,
    pub jpeg_quality: u8,
}

impl DegradationRecipe {
    /// Checks every parameter against its admissible range.
    pub fn validate(&self) -> Result<()> {
        let mut seen = self.stage_order.to_vec();
        seen.sort_by_key(|s| *s as u8);
        seen.dedup();
        if seen.len() != 4 {
            return Err(Error::arg("stage_order must be a permutation of the four stages"));
        }
        if self.scale != SCALE {
            return Err(Error::arg(format!("scale must be {SCALE}, got {}", self.scale)));
        }
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.blur_sigma, BLUR_SIGMA_RANGE) {
            return Err(Error::arg(format!("blur_sigma {} out of range", self.blur_sigma)));
        }
        if let BlurKind::Anisotropic { sigma_x, sigma_y, angle } = self.blur_kind {
            if !in_range(sigma_x, BLUR_SIGMA_RANGE) || !in_range(sigma_y, BLUR_SIGMA_RANGE) || !angle.is_finite() {
                return Err(Error::arg("anisotropic blur parameters out of range"));
            }
        }
        if !in_range(self.noise_sigma, NOISE_SIGMA_RANGE) {
            return Err(Error::arg(format!("noise_sigma {} out of range", self.noise_sigma)));
        }
        if !(JPEG_QUALITY_RANGE.0..=JPEG_QUALITY_RANGE.1).contains(&self.jpeg_quality) {
            return Err(Error::arg(format!("jpeg_quality {} out of range", self.jpeg_quality)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let recipe: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Sidecar path for an LR file: `x.png` → `x.recipe.json`.
pub fn recipe_sidecar(lr_path: &Path) -> PathBuf {
    lr_path.with_extension("recipe.json")
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Draws a recipe; a pure function of `(seed, severity)`.
pub fn sample_recipe(seed: u64, severity: SeverityLevel) -> DegradationRecipe {
    let ranges = severity.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stage_order = Stage::ALL;
    stage_order.shuffle(&mut rng);

    let blur_sigma = uniform(&mut rng, ranges.blur_sigma);
    let blur_kind = if rng.gen_bool(ANISOTROPIC_PROB) {
        BlurKind::Anisotropic {
            sigma_x: blur_sigma,
            sigma_y: uniform(&mut rng, ranges.blur_sigma),
            angle: rng.gen_range(0.0..PI),
        }
    } else {
        BlurKind::Isotropic
    };
    let resize_kernel = *ResizeKernel::ALL.choose(&mut rng).expect("non-empty");
    let noise_sigma = uniform(&mut rng, ranges.noise_sigma);
    let jpeg_quality = rng.gen_range(ranges.jpeg_quality.0..=ranges.jpeg_quality.1);
    DegradationRecipe {
        seed,
        stage_order,
        blur_sigma,
        blur_kind,
        resize_kernel,
        scale: SCALE,
        noise_sigma,
        jpeg_quality,
    }
}

/// Centre-crops to the largest width and height that are multiples of 4.
pub fn prepare_gt(img: &ImageBuffer) -> Result<ImageBuffer> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_GT_SIDE || h < MIN_GT_SIDE {
        return Err(Error::arg(format!("GT must be at least {MIN_GT_SIDE}x{MIN_GT_SIDE}, got {w}x{h}")));
    }
    let (cw, ch) = (w - w % SCALE, h - h % SCALE);
    if (cw, ch) == (w, h) {
        return Ok(img.clone());
    }
    img.crop((w - cw) / 2, (h - ch) / 2, cw, ch)
}

// The noise stream is decorrelated from the stream used to sample the recipe.
const NOISE_STREAM: u64 = 0x6e6f_6973_6531;

/// Runs the recipe's stages in order. Output is exactly GT/4 per side.
pub fn apply_degradation(gt: &ImageBuffer, recipe: &DegradationRecipe) -> Result<ImageBuffer> {
    recipe.validate()?;
    let (w, h) = (gt.width(), gt.height());
    if w < MIN_GT_SIDE || h < MIN_GT_SIDE {
        return Err(Error::arg(format!("GT must be at least {MIN_GT_SIDE}x{MIN_GT_SIDE}, got {w}x{h}")));
    }
    if w % SCALE != 0 || h % SCALE != 0 {
        return Err(Error::arg(format!("GT {w}x{h} is not divisible by {SCALE}; run prepare_gt first")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    rng.set_stream(NOISE_STREAM);
    let mut planes = gt.to_planes();
    for stage in recipe.stage_order {
        planes = match stage {
            Stage::Blur => planes.iter().map(|p| blur(p, recipe)).collect::<Result<_>>()?,
            Stage::Resize => planes
                .iter()
                .map(|p| resize(p, p.width() / SCALE, p.height() / SCALE, recipe.resize_kernel))
                .collect::<Result<_>>()?,
            Stage::Noise => planes
                .iter()
                .map(|p| add_gaussian_noise(p, recipe.noise_sigma, &mut rng))
                .collect::<Result<_>>()?,
            Stage::Jpeg => {
                let img = ImageBuffer::from_planes(&planes)?;
                let bytes = encode_image(&img, SaveFormat::Jpeg { quality: recipe.jpeg_quality })?;
                decode_image(&bytes)?.to_planes()
            }
        };
    }
    ImageBuffer::from_planes(&planes)
}

fn blur(p: &LumaPlane, recipe: &DegradationRecipe) -> Result<LumaPlane> {
    match recipe.blur_kind {
        BlurKind::Isotropic => gaussian_blur(p, recipe.blur_sigma),
        BlurKind::Anisotropic { sigma_x, sigma_y, angle } => gaussian_blur_anisotropic(p, sigma_x, sigma_y, angle),
    }
}

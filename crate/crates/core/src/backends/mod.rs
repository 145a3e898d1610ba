//! Model interfaces used by the editing engine.
//!
//! A real deployment would back these with a latent-diffusion VAE, a
//! text-conditioned denoiser and a region-aware CLIP scorer. The crate ships
//! only the [`synthetic`] implementation, whose linear decoder and quadratic
//! scorer make every gradient exact.

mod augment;
pub mod synthetic;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::ScalarField2D;
use crate::latent::{predict_blended_final, ImageBuffer, LatentTensor};
use crate::masks::{dilate, upscale_mask, BinaryMask};

pub use augment::{augment_for_scoring, Augmentation};
pub use synthetic::{SyntheticBackend, SyntheticConfig, TargetLayout};

/// Similarity between a (masked) image and a prompt, in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const EMPTY: SimilarityScore = SimilarityScore(-1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || !(-1.0..=1.0).contains(&value) {
            return Err(Error::Backend(format!("similarity {value} outside [-1, 1]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Derivative of a scalar with respect to every channel of every pixel,
/// interleaved like [`ImageBuffer`].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGradient {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PixelGradient {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    fn add_scaled(&mut self, other: &PixelGradient, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

pub trait Encoder: Send + Sync {
    fn encode(&self, image: &ImageBuffer) -> Result<LatentTensor>;
    /// Pixel-to-latent spatial factor.
    fn downscale(&self) -> usize;
}

pub trait Decoder: Send + Sync {
    fn decode(&self, z: &LatentTensor) -> Result<ImageBuffer>;
    /// Vector-Jacobian product of [`Decoder::decode`] at `z`.
    fn decode_vjp(&self, z: &LatentTensor, grad: &PixelGradient) -> Result<LatentTensor>;
}

pub trait Noiser: Send + Sync {
    /// Noise a clean latent to step `t` of `total_steps`.
    fn noise(&self, z: &LatentTensor, t: usize, total_steps: usize, seed: u64) -> Result<LatentTensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    /// Latent one step less noisy than the input.
    pub next: LatentTensor,
    /// Predicted fully denoised latent.
    pub predicted_final: LatentTensor,
}

pub trait Denoiser: Send + Sync {
    fn denoise(
        &self,
        z_t: &LatentTensor,
        prompt: &str,
        t: usize,
        total_steps: usize,
        seed: u64,
    ) -> Result<DenoiseOutput>;
}

pub trait Scorer: Send + Sync {
    fn score(&self, image: &ImageBuffer, mask: &BinaryMask, prompt: &str) -> Result<SimilarityScore>;

    fn score_with_gradient(
        &self,
        image: &ImageBuffer,
        mask: &BinaryMask,
        prompt: &str,
    ) -> Result<(SimilarityScore, PixelGradient)>;
}

/// The five model roles the engine needs, shared read-only across workers.
#[derive(Clone)]
pub struct BackendBundle {
    pub encoder: Arc<dyn Encoder>,
    pub decoder: Arc<dyn Decoder>,
    pub noiser: Arc<dyn Noiser>,
    pub denoiser: Arc<dyn Denoiser>,
    pub scorer: Arc<dyn Scorer>,
}

impl std::fmt::Debug for BackendBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendBundle")
            .field("downscale", &self.encoder.downscale())
            .finish_non_exhaustive()
    }
}

impl BackendBundle {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        let backend = Arc::new(SyntheticBackend::new(config));
        Self {
            encoder: backend.clone(),
            decoder: backend.clone(),
            noiser: backend.clone(),
            denoiser: backend.clone(),
            scorer: backend,
        }
    }

    /// Backend lookup by configuration key. Only `"synthetic"` ships.
    pub fn from_key(key: &str, config: SyntheticConfig) -> Result<Self> {
        match key {
            "synthetic" => Ok(Self::synthetic(config)),
            other => Err(Error::Backend(format!("unknown backend {other:?}"))),
        }
    }
}

/// Mean score over `views` augmentations of `(image, mask)`.
pub fn score_augmented(
    scorer: &dyn Scorer,
    image: &ImageBuffer,
    mask: &BinaryMask,
    prompt: &str,
    views: usize,
) -> Result<SimilarityScore> {
    let augs = Augmentation::set(views.max(1));
    let mut total = 0.0;
    for aug in &augs {
        total += scorer
            .score(&aug.apply_image(image), &aug.apply_mask(mask), prompt)?
            .value();
    }
    SimilarityScore::new(total / augs.len() as f64)
}

/// Mean score and its pixel gradient over `views` augmentations.
pub fn score_augmented_with_gradient(
    scorer: &dyn Scorer,
    image: &ImageBuffer,
    mask: &BinaryMask,
    prompt: &str,
    views: usize,
) -> Result<(SimilarityScore, PixelGradient)> {
    let augs = Augmentation::set(views.max(1));
    let weight = 1.0 / augs.len() as f64;
    let mut total = 0.0;
    let mut grad = PixelGradient::zeros(image.width(), image.height());
    for aug in &augs {
        let (s, g) = scorer.score_with_gradient(&aug.apply_image(image), &aug.apply_mask(mask), prompt)?;
        total += s.value();
        grad.add_scaled(&aug.pullback(&g), weight);
    }
    Ok((SimilarityScore::new(total * weight)?, grad))
}

/// Options for [`mask_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyOptions {
    /// Latent-cell dilation of the scoring mask.
    pub dilation: usize,
    pub views: usize,
}

/// Score of the decoded predicted final image and its derivative with
/// respect to each latent mask cell's blend weight.
///
/// The predicted final latent blends `fg_hat` and `z_init` with `mask`; the
/// scorer sees the decoded blend under the upscaled, dilated mask. The
/// gradient is pulled back through the decoder and then through the blend,
/// so `d score / d m_c = sum_ch grad_z[ch, c] * (fg_hat - z_init)[ch, c]`.
pub fn mask_gradient(
    backends: &BackendBundle,
    fg_hat: &LatentTensor,
    z_init: &LatentTensor,
    mask: &BinaryMask,
    prompt: &str,
    options: SaliencyOptions,
) -> Result<(SimilarityScore, ScalarField2D)> {
    let blended = predict_blended_final(fg_hat, z_init, mask)?;
    let scoring_mask = upscale_mask(&dilate(mask, options.dilation), backends.encoder.downscale())?;
    mask_gradient_at(backends, &blended, fg_hat, z_init, &scoring_mask, prompt, options.views)
}

/// [`mask_gradient`] for an explicit (possibly soft) blended latent and a
/// fixed pixel-space scoring mask.
pub fn mask_gradient_at(
    backends: &BackendBundle,
    blended: &LatentTensor,
    fg_hat: &LatentTensor,
    z_init: &LatentTensor,
    scoring_mask: &BinaryMask,
    prompt: &str,
    views: usize,
) -> Result<(SimilarityScore, ScalarField2D)> {
    let (w, h) = blended.spatial_dims();
    let image = backends.decoder.decode(blended)?;
    if scoring_mask.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("scoring mask {}x{}", image.width(), image.height()),
            actual: format!("{}x{}", scoring_mask.width(), scoring_mask.height()),
        });
    }
    if scoring_mask.is_empty() {
        return Ok((SimilarityScore::EMPTY, ScalarField2D::zeros(w, h)));
    }
    let (score, pixel_grad) =
        score_augmented_with_gradient(backends.scorer.as_ref(), &image, scoring_mask, prompt, views)?;
    let latent_grad = backends.decoder.decode_vjp(blended, &pixel_grad)?;
    let field = ScalarField2D::from_fn(w, h, |x, y| {
        (0..fg_hat.channels())
            .map(|c| latent_grad.get(c, y, x) * (fg_hat.get(c, y, x) - z_init.get(c, y, x)))
            .sum()
    });
    Ok((score, field))
}

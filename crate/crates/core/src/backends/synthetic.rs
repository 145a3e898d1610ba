//! Deterministic stand-in models.
//!
//! * Encoder: 8x8 block means of RGB mapped to four latent channels by a
//!   fixed matrix with orthonormal columns. The decoder applies its
//!   transpose (the pseudo-inverse), clamps to `[0, 1]` and replicates each
//!   latent cell over its block, so `decode(encode(x))` is the block-mean
//!   reconstruction of `x`.
//! * Prompts: each prompt hashes to a procedural target image, a smooth
//!   background with one dominant disk-shaped blob.
//! * Noiser: `(1 - t/n) z + (t/n) s eps(seed)`.
//! * Denoiser: `z_{t-1} = z_t + (E(target) - z_t) / t + sigma_t eps(seed, t)`
//!   and `z_hat = (1 - t/n) E(target) + (t/n) z_t`.
//! * Scorer: `1 - mean squared error` against the target over masked pixels.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DenoiseOutput, Decoder, Denoiser, Encoder, Noiser, PixelGradient, Scorer, SimilarityScore};
use crate::error::{Error, Result};
use crate::latent::{ImageBuffer, LatentTensor};
use crate::masks::BinaryMask;

pub const LATENT_CHANNELS: usize = 4;

/// Columns are orthonormal, so the transpose is the pseudo-inverse.
const MIX: [[f64; 3]; LATENT_CHANNELS] = [
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, 0.5, -0.5],
    [0.5, -0.5, -0.5],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub downscale: usize,
    /// Standard deviation of the noiser's latent noise at `t = n`.
    pub noise_scale: f64,
    /// Per-step denoiser noise at `t = n`; decays linearly with `t`.
    pub denoise_sigma: f64,
    /// Seed of the procedural prompt targets.
    pub target_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            downscale: 8,
            noise_scale: 1.0,
            denoise_sigma: 0.02,
            target_seed: 0,
        }
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Geometry and colors of a prompt's procedural target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLayout {
    pub width: usize,
    pub height: usize,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    /// Unit direction of the background color ramp.
    pub ramp_dir: (f64, f64),
    pub wave_amplitude: f64,
    pub wave_freq: (f64, f64),
    pub blob_center: (f64, f64),
    pub blob_radius: f64,
    pub blob_color: [f64; 3],
    /// Width in pixels of the blob's soft edge.
    pub blob_edge: f64,
}

impl TargetLayout {
    pub fn generate(prompt: &str, dims: (usize, usize), seed: u64) -> Self {
        let (width, height) = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes(), seed));
        let color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
            [
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
            ]
        };
        let color_a = color(&mut rng);
        let color_b = color(&mut rng);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let wave_amplitude = rng.random_range(0.02..0.06);
        let wave_freq = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let min_dim = width.min(height) as f64;
        let blob_center = (
            width as f64 * rng.random_range(0.3..0.7),
            height as f64 * rng.random_range(0.3..0.7),
        );
        let blob_radius = min_dim * rng.random_range(0.12..0.18);
        let mut layout = Self {
            width,
            height,
            color_a,
            color_b,
            ramp_dir: (angle.cos(), angle.sin()),
            wave_amplitude,
            wave_freq,
            blob_center,
            blob_radius,
            blob_color: [0.0; 3],
            blob_edge: 2.0,
        };
        // Contrast the blob against the background under its center.
        let under = layout.background_at(blob_center.0, blob_center.1);
        for c in 0..3 {
            layout.blob_color[c] = if under[c] > 0.5 {
                rng.random_range(0.0..0.15)
            } else {
                rng.random_range(0.85..1.0)
            };
        }
        layout
    }

    pub fn background_at(&self, x: f64, y: f64) -> [f64; 3] {
        let (w, h) = (self.width as f64, self.height as f64);
        let (u, v) = (x / w - 0.5, y / h - 0.5);
        let ramp = (0.5 + u * self.ramp_dir.0 + v * self.ramp_dir.1).clamp(0.0, 1.0);
        let wave = self.wave_amplitude
            * (std::f64::consts::TAU * (self.wave_freq.0 * u + self.wave_freq.1 * v)).sin();
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (self.color_a[c] * (1.0 - ramp) + self.color_b[c] * ramp + wave).clamp(0.0, 1.0);
        }
        out
    }

    /// Blob opacity at a pixel center; exceeds one half exactly inside the radius.
    pub fn blob_alpha(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.blob_center.0, y - self.blob_center.1);
        let d = (dx * dx + dy * dy).sqrt();
        (0.5 + (self.blob_radius - d) / self.blob_edge).clamp(0.0, 1.0)
    }

    pub fn render_background(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            self.background_at(x as f64 + 0.5, y as f64 + 0.5)
        })
        .expect("background colors are clamped")
    }

    pub fn render(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let bg = self.background_at(px, py);
            let a = self.blob_alpha(px, py);
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = bg[c] * (1.0 - a) + self.blob_color[c] * a;
            }
            out
        })
        .expect("blend of in-range colors")
    }

    /// Pixels whose blob opacity exceeds one half.
    pub fn blob_support(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            self.blob_alpha(x as f64 + 0.5, y as f64 + 0.5) > 0.5
        })
    }

    /// Latent cells whose block center lies inside the blob.
    pub fn blob_support_latent(&self, downscale: usize) -> BinaryMask {
        let f = downscale as f64;
        BinaryMask::from_fn(self.width / downscale, self.height / downscale, |x, y| {
            self.blob_alpha((x as f64 + 0.5) * f, (y as f64 + 0.5) * f) > 0.5
        })
    }
}

/// Procedural target image for `prompt`.
pub fn synthetic_target(prompt: &str, dims: (usize, usize), seed: u64, downscale: usize) -> Result<ImageBuffer> {
    if downscale == 0 || dims.0 == 0 || dims.1 == 0 || dims.0 % downscale != 0 || dims.1 % downscale != 0 {
        return Err(Error::InvalidArgument(format!(
            "target dims {}x{} must be positive multiples of {downscale}",
            dims.0, dims.1
        )));
    }
    Ok(TargetLayout::generate(prompt, dims, seed).render())
}

type TargetKey = (String, usize, usize);

pub struct SyntheticBackend {
    config: SyntheticConfig,
    targets: Mutex<HashMap<TargetKey, Arc<ImageBuffer>>>,
    target_latents: Mutex<HashMap<TargetKey, Arc<LatentTensor>>>,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticConfig) -> Self {
        assert!(config.downscale > 0, "downscale must be positive");
        Self {
            config,
            targets: Mutex::new(HashMap::new()),
            target_latents: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn target(&self, prompt: &str, dims: (usize, usize)) -> Arc<ImageBuffer> {
        let key = (prompt.to_owned(), dims.0, dims.1);
        if let Some(t) = self.targets.lock().expect("target cache poisoned").get(&key) {
            return t.clone();
        }
        let img = Arc::new(TargetLayout::generate(prompt, dims, self.config.target_seed).render());
        self.targets
            .lock()
            .expect("target cache poisoned")
            .insert(key, img.clone());
        img
    }

    /// Encoded target for a latent of spatial dims `(w, h)`.
    pub fn target_latent(&self, prompt: &str, latent_dims: (usize, usize)) -> Result<Arc<LatentTensor>> {
        let key = (prompt.to_owned(), latent_dims.0, latent_dims.1);
        if let Some(t) = self.target_latents.lock().expect("latent cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let f = self.config.downscale;
        let target = self.target(prompt, (latent_dims.0 * f, latent_dims.1 * f));
        let z = Arc::new(self.encode(&target)?);
        self.target_latents
            .lock()
            .expect("latent cache poisoned")
            .insert(key, z.clone());
        Ok(z)
    }

    fn gaussian(shape: (usize, usize, usize), seed: u64, stream: u64) -> LatentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(stream)));
        let n = shape.0 * shape.1 * shape.2;
        let values = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        LatentTensor::new(shape.0, shape.1, shape.2, values).expect("normal samples are finite")
    }

    fn cell_color(z: &LatentTensor, y: usize, x: usize) -> [f64; 3] {
        let mut rgb = [0.0; 3];
        for (k, row) in MIX.iter().enumerate() {
            let v = z.get(k, y, x);
            for c in 0..3 {
                rgb[c] += row[c] * v;
            }
        }
        rgb
    }
}

impl Encoder for SyntheticBackend {
    fn encode(&self, image: &ImageBuffer) -> Result<LatentTensor> {
        let f = self.config.downscale;
        let (w, h) = image.dims();
        if w % f != 0 || h % f != 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("image dims divisible by {f}"),
                actual: format!("{w}x{h}"),
            });
        }
        let (lw, lh) = (w / f, h / f);
        let mut z = LatentTensor::zeros(LATENT_CHANNELS, lh, lw);
        let norm = 1.0 / (f * f) as f64;
        for ly in 0..lh {
            for lx in 0..lw {
                let mut mean = [0.0; 3];
                for py in ly * f..(ly + 1) * f {
                    for px in lx * f..(lx + 1) * f {
                        let p = image.pixel(px, py);
                        for c in 0..3 {
                            mean[c] += p[c];
                        }
                    }
                }
                for (k, row) in MIX.iter().enumerate() {
                    let v: f64 = (0..3).map(|c| row[c] * mean[c] * norm).sum();
                    z.set(k, ly, lx, v);
                }
            }
        }
        Ok(z)
    }

    fn downscale(&self) -> usize {
        self.config.downscale
    }
}

impl Decoder for SyntheticBackend {
    fn decode(&self, z: &LatentTensor) -> Result<ImageBuffer> {
        if z.channels() != LATENT_CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: format!("{LATENT_CHANNELS} latent channels"),
                actual: format!("{}", z.channels()),
            });
        }
        let f = self.config.downscale;
        let (lw, lh) = z.spatial_dims();
        let colors: Vec<[f64; 3]> = (0..lh)
            .flat_map(|y| (0..lw).map(move |x| (x, y)))
            .map(|(x, y)| Self::cell_color(z, y, x).map(|v| v.clamp(0.0, 1.0)))
            .collect();
        ImageBuffer::from_fn(lw * f, lh * f, |x, y| colors[(y / f) * lw + x / f])
    }

    fn decode_vjp(&self, z: &LatentTensor, grad: &PixelGradient) -> Result<LatentTensor> {
        let f = self.config.downscale;
        let (lw, lh) = z.spatial_dims();
        if (grad.width, grad.height) != (lw * f, lh * f) {
            return Err(Error::DimensionMismatch {
                expected: format!("gradient {}x{}", lw * f, lh * f),
                actual: format!("{}x{}", grad.width, grad.height),
            });
        }
        let mut out = LatentTensor::zeros(z.channels(), lh, lw);
        for ly in 0..lh {
            for lx in 0..lw {
                let color = Self::cell_color(z, ly, lx);
                let mut block = [0.0; 3];
                for py in ly * f..(ly + 1) * f {
                    for px in lx * f..(lx + 1) * f {
                        let i = (py * grad.width + px) * 3;
                        for c in 0..3 {
                            block[c] += grad.data[i + c];
                        }
                    }
                }
                for c in 0..3 {
                    // The clamp passes gradient only on its identity segment.
                    if !(0.0..=1.0).contains(&color[c]) {
                        block[c] = 0.0;
                    }
                }
                for (k, row) in MIX.iter().enumerate() {
                    out.set(k, ly, lx, (0..3).map(|c| row[c] * block[c]).sum());
                }
            }
        }
        Ok(out)
    }
}

impl Noiser for SyntheticBackend {
    fn noise(&self, z: &LatentTensor, t: usize, total_steps: usize, seed: u64) -> Result<LatentTensor> {
        if total_steps == 0 || t > total_steps {
            return Err(Error::InvalidArgument(format!(
                "noise step {t} outside [0, {total_steps}]"
            )));
        }
        let level = t as f64 / total_steps as f64;
        let eps = Self::gaussian(z.shape(), seed, u64::MAX);
        let values = z
            .values()
            .iter()
            .zip(eps.values())
            .map(|(v, e)| (1.0 - level) * v + level * self.config.noise_scale * e)
            .collect();
        LatentTensor::new(z.channels(), z.height(), z.width(), values)
    }
}

impl Denoiser for SyntheticBackend {
    fn denoise(
        &self,
        z_t: &LatentTensor,
        prompt: &str,
        t: usize,
        total_steps: usize,
        seed: u64,
    ) -> Result<DenoiseOutput> {
        if t == 0 || t > total_steps {
            return Err(Error::InvalidArgument(format!(
                "denoise step {t} outside [1, {total_steps}]"
            )));
        }
        if z_t.channels() != LATENT_CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: format!("{LATENT_CHANNELS} latent channels"),
                actual: format!("{}", z_t.channels()),
            });
        }
        let target = self.target_latent(prompt, z_t.spatial_dims())?;
        let level = t as f64 / total_steps as f64;
        let sigma = self.config.denoise_sigma * level;
        let eps = (sigma > 0.0).then(|| Self::gaussian(z_t.shape(), seed, t as u64));
        let inv_t = 1.0 / t as f64;

        let mut next = Vec::with_capacity(z_t.values().len());
        let mut predicted = Vec::with_capacity(z_t.values().len());
        for (i, (&z, &e)) in z_t.values().iter().zip(target.values()).enumerate() {
            let noise = eps.as_ref().map_or(0.0, |n| sigma * n.values()[i]);
            next.push(z + (e - z) * inv_t + noise);
            predicted.push((1.0 - level) * e + level * z);
        }
        let (c, h, w) = z_t.shape();
        Ok(DenoiseOutput {
            next: LatentTensor::new(c, h, w, next)?,
            predicted_final: LatentTensor::new(c, h, w, predicted)?,
        })
    }
}

impl SyntheticBackend {
    fn masked_error(
        &self,
        image: &ImageBuffer,
        mask: &BinaryMask,
        prompt: &str,
        mut on_pixel: impl FnMut(usize, [f64; 3]),
    ) -> Result<Option<f64>> {
        if image.dims() != mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: format!("mask {}x{}", image.width(), image.height()),
                actual: format!("{}x{}", mask.width(), mask.height()),
            });
        }
        let count = mask.count();
        if count == 0 {
            return Ok(None);
        }
        let target = self.target(prompt, image.dims());
        let mut sse = 0.0;
        for (i, &inside) in mask.bits().iter().enumerate() {
            if !inside {
                continue;
            }
            let mut diff = [0.0; 3];
            for c in 0..3 {
                diff[c] = image.data()[i * 3 + c] - target.data()[i * 3 + c];
                sse += diff[c] * diff[c];
            }
            on_pixel(i, diff);
        }
        Ok(Some(sse / (3 * count) as f64))
    }
}

impl Scorer for SyntheticBackend {
    fn score(&self, image: &ImageBuffer, mask: &BinaryMask, prompt: &str) -> Result<SimilarityScore> {
        match self.masked_error(image, mask, prompt, |_, _| {})? {
            None => Ok(SimilarityScore::EMPTY),
            Some(mse) => SimilarityScore::new(1.0 - mse),
        }
    }

    fn score_with_gradient(
        &self,
        image: &ImageBuffer,
        mask: &BinaryMask,
        prompt: &str,
    ) -> Result<(SimilarityScore, PixelGradient)> {
        let mut grad = PixelGradient::zeros(image.width(), image.height());
        let norm = 3 * mask.count().max(1);
        let scale = -2.0 / norm as f64;
        let mse = self.masked_error(image, mask, prompt, |i, diff| {
            for c in 0..3 {
                grad.data[i * 3 + c] = scale * diff[c];
            }
        })?;
        match mse {
            None => Ok((SimilarityScore::EMPTY, grad)),
            Some(mse) => Ok((SimilarityScore::new(1.0 - mse)?, grad)),
        }
    }
}

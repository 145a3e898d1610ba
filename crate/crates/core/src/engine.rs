//! The editing loop.
//!
//! Steps are labelled by the noise level they produce: iteration `t`
//! denoises `z_{t+1}` into `z_t`, so a run of `n` steps visits
//! `t = n-1, ..., 0`, and iteration `t` sits at progress `1 - t/n`.
//! Iterations before `blend_start` are plain prompt-guided denoising; from
//! there on the prompt latent is blended with the noised source latent under
//! the current mask. Between `elevate_start` and `evolve_end` the potential
//! is raised on the mask's contour ring by the normalized score saliency and
//! every mask update restarts blending from its first step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{mask_gradient, score_augmented, BackendBundle, SaliencyOptions};
use crate::error::{Error, Result};
use crate::fields::{
    elevate_potential, gaussian_blur_field, init_potential, normalize_saliency, ScalarField2D,
    TauSchedule,
};
use crate::latent::{blend_latents, ImageBuffer, LatentTensor};
use crate::masks::{
    area_fraction, composite, contour_ring, dilate, feather, postprocess_mask, threshold,
    upscale_mask, BinaryMask, PostprocessParams,
};

/// Offset between the seeds of consecutive evolutions.
pub const EVOLUTION_SEED_STRIDE: u64 = 1_000_003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Total diffusion steps `n`.
    pub steps: usize,
    pub blend_start: f64,
    pub elevate_start: f64,
    pub stop_start: f64,
    pub evolve_end: f64,
    pub tau: TauSchedule,
    pub lr: f64,
    pub ring_inner: usize,
    pub ring_outer: usize,
    pub downscale: usize,
    pub target_initial_area: f64,
    pub seeds_per_batch: usize,
    pub evolutions: usize,
    pub master_seed: u64,
    pub postprocess: PostprocessParams,
    /// Gaussian sigma (latent cells) applied to the potential before thresholding.
    pub potential_blur_sigma: f64,
    /// Latent-cell dilation of the mask handed to the scorer.
    pub score_dilation: usize,
    /// Augmented views averaged per score.
    pub score_views: usize,
    /// Feathering sigma in pixels for the final composite.
    pub feather_sigma: f64,
    pub early_stop: bool,
    pub rerun: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            blend_start: 0.25,
            elevate_start: 0.40,
            stop_start: 0.45,
            evolve_end: 0.50,
            tau: TauSchedule::default(),
            lr: 0.1,
            ring_inner: 2,
            ring_outer: 2,
            downscale: 8,
            target_initial_area: 0.16,
            seeds_per_batch: 8,
            evolutions: 3,
            master_seed: 0,
            postprocess: PostprocessParams::default(),
            potential_blur_sigma: 0.5,
            score_dilation: 1,
            score_views: 2,
            feather_sigma: 8.0,
            early_stop: true,
            rerun: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.steps < 4 {
            return bad(format!("steps must be >= 4, got {}", self.steps));
        }
        let knots = [self.blend_start, self.elevate_start, self.stop_start, self.evolve_end];
        if !(0.0 <= knots[0] && knots[0] < knots[1] && knots[1] <= knots[2] && knots[2] <= knots[3] && knots[3] <= 1.0) {
            return bad(format!(
                "schedule must satisfy 0 <= blend_start < elevate_start <= stop_start <= evolve_end <= 1, got {knots:?}"
            ));
        }
        self.tau.validate(self.blend_start, self.evolve_end)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.ring_outer == 0 {
            return bad("ring_outer must be >= 1".into());
        }
        if self.downscale == 0 {
            return bad("downscale must be >= 1".into());
        }
        if !(self.target_initial_area > 0.0 && self.target_initial_area < 1.0) {
            return bad(format!("target_initial_area {} outside (0, 1)", self.target_initial_area));
        }
        if self.seeds_per_batch == 0 || self.evolutions == 0 {
            return bad("seeds_per_batch and evolutions must be >= 1".into());
        }
        if !(self.potential_blur_sigma >= 0.0 && self.feather_sigma > 0.0) {
            return bad("blur sigmas must be non-negative and feather sigma positive".into());
        }
        Ok(())
    }

    /// Step index of a progress knot: `floor(n * (1 - fraction))`.
    pub fn step_at(&self, fraction: f64) -> usize {
        (self.steps as f64 * (1.0 - fraction) + 1e-9).floor() as usize
    }

    pub fn progress_at(&self, t: usize) -> f64 {
        1.0 - t as f64 / self.steps as f64
    }

    pub fn first_blend_step(&self) -> usize {
        self.step_at(self.blend_start).min(self.steps - 1)
    }

    pub fn last_evolve_step(&self) -> usize {
        self.step_at(self.evolve_end)
    }

    /// Potential elevation runs for progress in `[elevate_start, evolve_end)`.
    pub fn elevates_at(&self, t: usize) -> bool {
        t <= self.step_at(self.elevate_start) && t > self.last_evolve_step()
    }

    /// Early stopping is checked for progress in `[stop_start, evolve_end)`.
    pub fn stop_checked_at(&self, t: usize) -> bool {
        self.early_stop && t <= self.step_at(self.stop_start) && t > self.last_evolve_step()
    }

    pub fn tau_at(&self, t: usize) -> Result<f64> {
        self.tau.at(self.progress_at(t), self.blend_start, self.evolve_end)
    }

    pub fn evolution_seed(&self, index: usize) -> u64 {
        self.master_seed
            .wrapping_add((index as u64).wrapping_mul(EVOLUTION_SEED_STRIDE))
    }
}

/// One executed blended step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    pub progress: f64,
    pub tau: f64,
    pub area: f64,
    pub score: Option<f64>,
    pub rerun: bool,
    pub stopped: bool,
    #[serde(skip)]
    pub elevated: bool,
    #[serde(skip)]
    pub stop_checked: bool,
    #[serde(skip)]
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub initial_mask: BinaryMask,
    pub records: Vec<TraceRecord>,
}

impl EvolutionTrace {
    pub fn initial_area(&self) -> f64 {
        area_fraction(&self.initial_mask)
    }

    pub fn final_mask(&self) -> &BinaryMask {
        self.records
            .iter()
            .rev()
            .find(|r| !r.stopped)
            .map_or(&self.initial_mask, |r| &r.mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    /// Final post-processed latent-resolution mask.
    pub mask: BinaryMask,
    pub trace: EvolutionTrace,
}

/// Failure with whatever trace was collected before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionFailure {
    pub error: Error,
    pub trace: Option<EvolutionTrace>,
}

impl From<EvolutionFailure> for Error {
    fn from(f: EvolutionFailure) -> Self {
        f.error
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub seed: u64,
    pub image: ImageBuffer,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub selected: usize,
}

impl CandidateSet {
    fn from_candidates(candidates: Vec<Candidate>) -> Result<Self> {
        let selected = best_index(candidates.iter().map(|c| (c.score, c.seed)))
            .ok_or_else(|| Error::InvalidArgument("no candidates".into()))?;
        Ok(Self {
            candidates,
            selected,
        })
    }

    pub fn best(&self) -> &Candidate {
        &self.candidates[self.selected]
    }
}

// Highest score; ties go to the lowest key.
fn best_index(items: impl Iterator<Item = (f64, u64)>) -> Option<usize> {
    let mut best: Option<(usize, f64, u64)> = None;
    for (i, (score, key)) in items.enumerate() {
        let better = match best {
            None => true,
            Some((_, s, k)) => score > s || (score == s && key < k),
        };
        if better {
            best = Some((i, score, key));
        }
    }
    best.map(|b| b.0)
}

/// Blended diffusion for one seed, with the mask-independent pure
/// denoising prefix computed once.
struct Bld<'a> {
    backends: &'a BackendBundle,
    config: &'a EvolutionConfig,
    prompt: &'a str,
    z_init: &'a LatentTensor,
    seed: u64,
    /// `z_{first_blend + 1}`.
    prefix: LatentTensor,
}

struct StepOutput {
    blended: LatentTensor,
    fg: LatentTensor,
    bg: LatentTensor,
    fg_hat: LatentTensor,
}

impl<'a> Bld<'a> {
    fn new(
        backends: &'a BackendBundle,
        config: &'a EvolutionConfig,
        prompt: &'a str,
        z_init: &'a LatentTensor,
        seed: u64,
    ) -> Result<Self> {
        let n = config.steps;
        let mut z = backends.noiser.noise(z_init, n, n, seed)?;
        for t in (config.first_blend_step() + 1..n).rev() {
            z = backends.denoiser.denoise(&z, prompt, t + 1, n, seed)?.next;
        }
        Ok(Self {
            backends,
            config,
            prompt,
            z_init,
            seed,
            prefix: z,
        })
    }

    /// Produce `z_t` from `z_{t+1}` under `mask`.
    fn step(&self, z_next: &LatentTensor, t: usize, mask: &BinaryMask) -> Result<StepOutput> {
        let n = self.config.steps;
        let out = self
            .backends
            .denoiser
            .denoise(z_next, self.prompt, t + 1, n, self.seed)?;
        let bg = self.backends.noiser.noise(self.z_init, t, n, self.seed)?;
        Ok(StepOutput {
            blended: blend_latents(&out.next, &bg, mask)?,
            fg: out.next,
            bg,
            fg_hat: out.predicted_final,
        })
    }

    /// Restart from the first blended step and run to `t_target` under a fixed mask.
    fn run(&self, mask: &BinaryMask, t_target: usize) -> Result<LatentTensor> {
        let first = self.config.first_blend_step();
        if t_target > first {
            return Err(Error::InvalidArgument(format!(
                "target step {t_target} is before the first blended step {first}"
            )));
        }
        let mut z = self.prefix.clone();
        for t in (t_target..=first).rev() {
            z = self.step(&z, t, mask)?.blended;
        }
        Ok(z)
    }
}

fn check_inputs(
    image: &ImageBuffer,
    point: (usize, usize),
    config: &EvolutionConfig,
    backends: &BackendBundle,
) -> Result<(usize, usize)> {
    config.validate()?;
    let f = config.downscale;
    if backends.encoder.downscale() != f {
        return Err(Error::InvalidArgument(format!(
            "config downscale {f} differs from encoder downscale {}",
            backends.encoder.downscale()
        )));
    }
    let (w, h) = image.dims();
    if w % f != 0 || h % f != 0 {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} not divisible by downscale {f}"
        )));
    }
    if point.0 >= w || point.1 >= h {
        return Err(Error::OutOfBounds {
            x: point.0,
            y: point.1,
            width: w,
            height: h,
        });
    }
    Ok((point.0 / f, point.1 / f))
}

/// Runs the blended loop from its first blended step down to `t_target`
/// under a fixed mask, with the noise seed reset at the start.
pub fn bld_run(
    image: &ImageBuffer,
    prompt: &str,
    mask: &BinaryMask,
    t_target: usize,
    seed: u64,
    config: &EvolutionConfig,
    backends: &BackendBundle,
) -> Result<LatentTensor> {
    check_inputs(image, (0, 0), config, backends)?;
    let z_init = backends.encoder.encode(image)?;
    if mask.dims() != z_init.spatial_dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("mask {:?}", z_init.spatial_dims()),
            actual: format!("{:?}", mask.dims()),
        });
    }
    Bld::new(backends, config, prompt, &z_init, seed)?.run(mask, t_target)
}

/// Grows the edit mask around `point` (pixel coordinates).
pub fn evolve_mask(
    image: &ImageBuffer,
    prompt: &str,
    point: (usize, usize),
    seed: u64,
    config: &EvolutionConfig,
    backends: &BackendBundle,
) -> std::result::Result<Evolution, EvolutionFailure> {
    let fail = |error: Error, trace: Option<EvolutionTrace>| EvolutionFailure { error, trace };
    let anchor = check_inputs(image, point, config, backends).map_err(|e| fail(e, None))?;
    let z_init = backends.encoder.encode(image).map_err(|e| fail(e, None))?;
    let dims = z_init.spatial_dims();

    let stage = |step: usize, stage: &'static str| {
        move |cause: Error| Error::EvolutionFailed {
            step,
            stage,
            cause: Box::new(cause),
        }
    };
    let cut = |phi: &ScalarField2D, tau: f64| -> Result<BinaryMask> {
        let smooth = gaussian_blur_field(phi, config.potential_blur_sigma)?;
        postprocess_mask(&threshold(&smooth, tau), anchor, &config.postprocess)
    };

    let first = config.first_blend_step();
    let last = config.last_evolve_step();
    let init = init_potential(anchor, dims, config.target_initial_area, config.tau.tau_init)
        .and_then(|phi| cut(&phi, config.tau.tau_init).map(|m| (phi, m)))
        .map_err(stage(first, "initial mask"))
        .map_err(|e| fail(e, None));
    let (mut phi, initial_mask) = init?;

    let mut trace = EvolutionTrace {
        initial_mask: initial_mask.clone(),
        records: Vec::new(),
    };
    let bld = match Bld::new(backends, config, prompt, &z_init, seed) {
        Ok(b) => b,
        Err(e) => return Err(fail(stage(first, "denoising")(e), Some(trace))),
    };

    let options = SaliencyOptions {
        dilation: config.score_dilation,
        views: config.score_views,
    };
    let mut mask = initial_mask;
    let mut z = bld.prefix.clone();
    let mut prev_score: Option<f64> = None;

    for t in (last..=first).rev() {
        let tau = config.tau_at(t).map_err(|e| fail(e, Some(trace.clone())))?;
        let step = match bld.step(&z, t, &mask) {
            Ok(s) => s,
            Err(e) => return Err(fail(stage(t, "denoising")(e), Some(trace))),
        };
        let elevated = config.elevates_at(t);
        let stop_checked = config.stop_checked_at(t);
        let mut score = None;

        if elevated {
            let (s, grad) = match mask_gradient(backends, &step.fg_hat, &z_init, &mask, prompt, options) {
                Ok(r) => r,
                Err(e) => return Err(fail(stage(t, "scoring")(e), Some(trace))),
            };
            score = Some(s.value());
            if stop_checked && prev_score.is_some_and(|p| s.value() <= p) {
                trace.records.push(TraceRecord {
                    t,
                    progress: config.progress_at(t),
                    tau,
                    area: area_fraction(&mask),
                    score,
                    rerun: false,
                    stopped: true,
                    elevated,
                    stop_checked,
                    mask: mask.clone(),
                });
                break;
            }
            prev_score = Some(s.value());
            let magnitude = ScalarField2D::from_fn(dims.0, dims.1, |x, y| grad.get(x, y).abs());
            let saliency = normalize_saliency(&magnitude).map_err(|e| fail(e, Some(trace.clone())))?;
            let ring = contour_ring(&mask, config.ring_inner, config.ring_outer);
            phi = elevate_potential(&phi, &saliency, config.lr, &ring)
                .map_err(|e| fail(e, Some(trace.clone())))?;
        }

        // A collapsed cut keeps the last valid mask.
        match cut(&phi, tau) {
            Ok(m) => mask = m,
            Err(Error::MaskCollapse) => {}
            Err(e) => return Err(fail(stage(t, "mask update")(e), Some(trace))),
        }

        let rerun = elevated && config.rerun;
        let fg = if rerun {
            match bld.run(&mask, t) {
                Ok(z) => z,
                Err(e) => return Err(fail(stage(t, "rerun")(e), Some(trace))),
            }
        } else {
            step.fg
        };
        z = blend_latents(&fg, &step.bg, &mask).map_err(|e| fail(e, Some(trace.clone())))?;

        trace.records.push(TraceRecord {
            t,
            progress: config.progress_at(t),
            tau,
            area: area_fraction(&mask),
            score,
            rerun,
            stopped: false,
            elevated,
            stop_checked,
            mask: mask.clone(),
        });
    }

    Ok(Evolution { mask, trace })
}

/// Final blended runs for `seeds_per_batch` seeds starting at `base_seed`,
/// each decoded, feather-composited onto `image` and scored.
pub fn generate_final(
    image: &ImageBuffer,
    prompt: &str,
    mask: &BinaryMask,
    base_seed: u64,
    config: &EvolutionConfig,
    backends: &BackendBundle,
) -> Result<CandidateSet> {
    check_inputs(image, (0, 0), config, backends)?;
    if mask.is_empty() {
        return Err(Error::MaskCollapse);
    }
    let z_init = backends.encoder.encode(image)?;
    if mask.dims() != z_init.spatial_dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("mask {:?}", z_init.spatial_dims()),
            actual: format!("{:?}", mask.dims()),
        });
    }
    let pixel_mask = upscale_mask(mask, config.downscale)?;
    let soft = feather(&pixel_mask, config.feather_sigma)?;
    let scoring_mask = upscale_mask(&dilate(mask, config.score_dilation), config.downscale)?;

    let candidates = (0..config.seeds_per_batch)
        .into_par_iter()
        .map(|j| {
            let seed = base_seed.wrapping_add(j as u64);
            let z0 = Bld::new(backends, config, prompt, &z_init, seed)?.run(mask, 0)?;
            let decoded = backends.decoder.decode(&z0)?;
            let out = composite(&decoded, image, &soft)?;
            let score = score_augmented(
                backends.scorer.as_ref(),
                &out,
                &scoring_mask,
                prompt,
                config.score_views,
            )?
            .value();
            Ok(Candidate {
                seed,
                image: out,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CandidateSet::from_candidates(candidates)
}

/// One evolution and its final batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionRun {
    pub index: usize,
    pub seed: u64,
    pub trace: Option<EvolutionTrace>,
    pub mask: Option<BinaryMask>,
    pub result: std::result::Result<CandidateSet, Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub image: ImageBuffer,
    pub runs: Vec<EvolutionRun>,
    /// `(run index, candidate index)` of the global winner.
    pub best: (usize, usize),
}

impl EditOutcome {
    pub fn best_candidate(&self) -> &Candidate {
        let (r, c) = self.best;
        match &self.runs[r].result {
            Ok(set) => &set.candidates[c],
            Err(_) => unreachable!("best run always succeeded"),
        }
    }
}

/// Full pipeline: `evolutions` independent mask evolutions, each followed by
/// a final batch; returns the best composite across all of them.
pub fn edit(
    image: &ImageBuffer,
    prompt: &str,
    point: (usize, usize),
    config: &EvolutionConfig,
    backends: &BackendBundle,
) -> Result<EditOutcome> {
    check_inputs(image, point, config, backends)?;
    let runs: Vec<EvolutionRun> = (0..config.evolutions)
        .into_par_iter()
        .map(|index| {
            let seed = config.evolution_seed(index);
            match evolve_mask(image, prompt, point, seed, config, backends) {
                Ok(evo) => EvolutionRun {
                    index,
                    seed,
                    result: generate_final(image, prompt, &evo.mask, seed, config, backends),
                    trace: Some(evo.trace),
                    mask: Some(evo.mask),
                },
                Err(f) => EvolutionRun {
                    index,
                    seed,
                    trace: f.trace,
                    mask: None,
                    result: Err(f.error),
                },
            }
        })
        .collect();

    let flat: Vec<(usize, usize, f64)> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|set| (r.index, set)))
        .flat_map(|(ri, set)| {
            set.candidates
                .iter()
                .enumerate()
                .map(move |(ci, c)| (ri, ci, c.score))
        })
        .collect();
    let Some(best) = best_index(flat.iter().map(|&(ri, ci, s)| (s, ((ri as u64) << 32) | ci as u64))) else {
        let causes = runs.into_iter().filter_map(|r| r.result.err()).collect();
        return Err(Error::AllEvolutionsFailed(causes));
    };
    let (ri, ci, _) = flat[best];
    let image = match &runs[ri].result {
        Ok(set) => set.candidates[ci].image.clone(),
        Err(_) => unreachable!("flattened candidates come from successful runs"),
    };
    Ok(EditOutcome {
        image,
        runs,
        best: (ri, ci),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Scorer, SimilarityScore, PixelGradient, SyntheticConfig, TargetLayout};
    use std::sync::Arc;

    fn scene(prompt: &str, size: usize) -> (TargetLayout, ImageBuffer, (usize, usize)) {
        let layout = TargetLayout::generate(prompt, (size, size), 0);
        let image = layout.render_background();
        let point = (layout.blob_center.0 as usize, layout.blob_center.1 as usize);
        (layout, image, point)
    }

    fn small_config() -> EvolutionConfig {
        EvolutionConfig {
            seeds_per_batch: 3,
            evolutions: 2,
            ..EvolutionConfig::default()
        }
    }

    fn synthetic() -> BackendBundle {
        BackendBundle::synthetic(SyntheticConfig::default())
    }

    #[test]
    fn knots_for_hundred_steps() {
        let c = EvolutionConfig::default();
        assert_eq!(c.first_blend_step(), 75);
        assert_eq!(c.step_at(c.elevate_start), 60);
        assert_eq!(c.step_at(c.stop_start), 55);
        assert_eq!(c.last_evolve_step(), 50);
        assert!(c.elevates_at(60) && c.elevates_at(51));
        assert!(!c.elevates_at(61) && !c.elevates_at(50));
        assert!(c.stop_checked_at(55) && !c.stop_checked_at(56) && !c.stop_checked_at(50));
        assert_eq!(c.evolution_seed(2), 2_000_006);
    }

    #[test]
    fn config_validation() {
        assert!(EvolutionConfig::default().validate().is_ok());
        let bad = [
            EvolutionConfig { steps: 2, ..Default::default() },
            EvolutionConfig { lr: -0.1, ..Default::default() },
            EvolutionConfig { elevate_start: 0.2, ..Default::default() },
            EvolutionConfig { seeds_per_batch: 0, ..Default::default() },
            EvolutionConfig { downscale: 4, ..Default::default() },
        ];
        for c in &bad[..4] {
            assert!(c.validate().is_err(), "{c:?}");
        }
        // Validates, but disagrees with the encoder.
        let (_, image, point) = scene("a cat", 64);
        assert!(evolve_mask(&image, "a cat", point, 0, &bad[4], &synthetic()).is_err());
    }

    #[test]
    fn empty_mask_run_is_the_noised_source() {
        let (_, image, _) = scene("a cat", 64);
        let b = synthetic();
        let c = EvolutionConfig::default();
        let z_init = b.encoder.encode(&image).unwrap();
        let empty = BinaryMask::new_empty(8, 8);
        for t in [75, 60, 0] {
            let z = bld_run(&image, "a cat", &empty, t, 5, &c, &b).unwrap();
            assert_eq!(z, b.noiser.noise(&z_init, t, 100, 5).unwrap());
        }
    }

    #[test]
    fn full_mask_run_is_plain_denoising() {
        let (_, image, _) = scene("a cat", 64);
        let b = synthetic();
        let c = EvolutionConfig::default();
        let z_init = b.encoder.encode(&image).unwrap();
        let mut z = b.noiser.noise(&z_init, 100, 100, 9).unwrap();
        for t in (0..100).rev() {
            z = b.denoiser.denoise(&z, "a cat", t + 1, 100, 9).unwrap().next;
        }
        let full = BinaryMask::new_full(8, 8);
        assert_eq!(bld_run(&image, "a cat", &full, 0, 9, &c, &b).unwrap(), z);
    }

    #[test]
    fn blended_step_matches_hand_blend() {
        let (_, image, _) = scene("a cat", 64);
        let b = synthetic();
        let c = EvolutionConfig::default();
        let z_init = b.encoder.encode(&image).unwrap();
        let mask = BinaryMask::from_fn(8, 8, |x, y| (x + y) % 2 == 0);
        let mut z = b.noiser.noise(&z_init, 100, 100, 3).unwrap();
        for t in (76..100).rev() {
            z = b.denoiser.denoise(&z, "a dog", t + 1, 100, 3).unwrap().next;
        }
        let fg = b.denoiser.denoise(&z, "a dog", 76, 100, 3).unwrap().next;
        let bg = b.noiser.noise(&z_init, 75, 100, 3).unwrap();
        let got = bld_run(&image, "a dog", &mask, 75, 3, &c, &b).unwrap();
        for ch in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    let want = if mask.get(x, y) { fg.get(ch, y, x) } else { bg.get(ch, y, x) };
                    assert_eq!(got.get(ch, y, x), want);
                }
            }
        }
        assert!(bld_run(&image, "a dog", &mask, 76, 3, &c, &b).is_err());
    }

    #[test]
    fn trace_gating_and_determinism() {
        let (_, image, point) = scene("a lamp", 128);
        let b = synthetic();
        let c = EvolutionConfig {
            early_stop: false,
            ..EvolutionConfig::default()
        };
        let evo = evolve_mask(&image, "a lamp", point, 4, &c, &b).unwrap();
        assert_eq!(evo.trace.records.len(), 26);
        for r in &evo.trace.records {
            let p = r.progress;
            assert_eq!(r.elevated, (0.40 - 1e-9..0.50 - 1e-9).contains(&p), "t={}", r.t);
            assert_eq!(r.rerun, r.elevated);
            assert_eq!(r.score.is_some(), r.elevated);
            assert!(!r.stop_checked && !r.stopped);
        }
        assert!(evo.trace.records.windows(2).all(|w| w[0].tau <= w[1].tau));
        assert_eq!(&evo.mask, evo.trace.final_mask());
        assert_eq!(evolve_mask(&image, "a lamp", point, 4, &c, &b).unwrap(), evo);
    }

    #[test]
    fn stop_eligibility_window() {
        let (_, image, point) = scene("a lamp", 128);
        let evo = evolve_mask(&image, "a lamp", point, 4, &EvolutionConfig::default(), &synthetic()).unwrap();
        for r in &evo.trace.records {
            assert_eq!(r.stop_checked, (0.45 - 1e-9..0.50 - 1e-9).contains(&r.progress), "t={}", r.t);
            if r.stopped {
                assert!(r.stop_checked);
            }
        }
        if let Some(stop) = evo.trace.records.iter().position(|r| r.stopped) {
            assert_eq!(stop + 1, evo.trace.records.len());
            assert_eq!(evo.trace.records[stop].mask, evo.trace.records[stop - 1].mask);
        }
    }

    #[test]
    fn zero_rate_only_shrinks() {
        let (_, image, point) = scene("a boat", 128);
        let c = EvolutionConfig {
            lr: 0.0,
            ..EvolutionConfig::default()
        };
        let evo = evolve_mask(&image, "a boat", point, 1, &c, &synthetic()).unwrap();
        let mut prev = evo.trace.initial_area();
        for r in &evo.trace.records {
            assert!(r.area <= prev);
            prev = r.area;
        }
        assert!(prev < evo.trace.initial_area());
    }

    #[test]
    fn out_of_bounds_click() {
        let (_, image, _) = scene("a cat", 64);
        let f = evolve_mask(&image, "a cat", (64, 3), 0, &EvolutionConfig::default(), &synthetic()).unwrap_err();
        assert!(matches!(f.error, Error::OutOfBounds { x: 64, .. }));
        assert!(f.trace.is_none());
    }

    #[test]
    fn final_batch_selection_and_composite() {
        let (layout, image, _) = scene("a hat", 64);
        let b = synthetic();
        let c = small_config();
        let mask = layout.blob_support_latent(8);
        let set = generate_final(&image, "a hat", &mask, 40, &c, &b).unwrap();
        assert_eq!(set.candidates.iter().map(|c| c.seed).collect::<Vec<_>>(), vec![40, 41, 42]);
        let top = set.candidates.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(set.best().score, top);

        let soft = feather(&upscale_mask(&mask, 8).unwrap(), c.feather_sigma).unwrap();
        for cand in &set.candidates {
            for y in 0..64 {
                for x in 0..64 {
                    if soft.get(x, y) == 0.0 {
                        assert_eq!(cand.image.pixel(x, y), image.pixel(x, y));
                    }
                }
            }
        }
        assert!(matches!(
            generate_final(&image, "a hat", &BinaryMask::new_empty(8, 8), 0, &c, &b),
            Err(Error::MaskCollapse)
        ));
    }

    #[test]
    fn ties_go_to_the_lowest_key() {
        assert_eq!(best_index([(0.5, 3), (0.7, 9), (0.7, 2), (0.1, 0)].into_iter()), Some(2));
        assert_eq!(best_index(std::iter::empty()), None);
    }

    #[test]
    fn edit_returns_the_global_best() {
        let (_, image, point) = scene("a moon", 64);
        let out = edit(&image, "a moon", point, &small_config(), &synthetic()).unwrap();
        assert_eq!(out.runs.len(), 2);
        assert_eq!(out.runs[1].seed, EVOLUTION_SEED_STRIDE);
        let best = out.best_candidate().score;
        for run in &out.runs {
            for cand in &run.result.as_ref().unwrap().candidates {
                assert!(cand.score <= best);
            }
        }
        assert_eq!(out.image, out.best_candidate().image);
    }

    struct BrokenScorer;

    impl Scorer for BrokenScorer {
        fn score(&self, _: &ImageBuffer, _: &BinaryMask, _: &str) -> Result<SimilarityScore> {
            Err(Error::Backend("scorer offline".into()))
        }
        fn score_with_gradient(&self, _: &ImageBuffer, _: &BinaryMask, _: &str) -> Result<(SimilarityScore, PixelGradient)> {
            Err(Error::Backend("scorer offline".into()))
        }
    }

    #[test]
    fn failures_name_the_stage() {
        let (_, image, point) = scene("a moon", 64);
        let mut b = synthetic();
        b.scorer = Arc::new(BrokenScorer);
        let c = small_config();
        let f = evolve_mask(&image, "a moon", point, 0, &c, &b).unwrap_err();
        assert!(matches!(f.error, Error::EvolutionFailed { step: 60, stage: "scoring", .. }));
        // Records before the first elevation step survive.
        assert_eq!(f.trace.unwrap().records.len(), 15);
        match edit(&image, "a moon", point, &c, &b) {
            Err(Error::AllEvolutionsFailed(causes)) => assert_eq!(causes.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}

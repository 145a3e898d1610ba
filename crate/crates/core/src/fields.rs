//! Real-valued latent grids: the potential height-field, the threshold
//! schedule that cuts it, and the saliency maps that raise it.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::masks::BinaryMask;

/// Row-major real grid at latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "field dims must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite field value at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "field dims must be positive");
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "field dims must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First cell (row-major) holding the maximum value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Piecewise-linear threshold schedule: a rapid rise from `tau_init` to
/// `tau_rapid` that ends at `rapid_phase_end`, then a slow rise to
/// `tau_final` over the rest of the evolution window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauSchedule {
    pub tau_init: f64,
    pub rapid_phase_end: f64,
    pub tau_rapid: f64,
    pub tau_final: f64,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self {
            tau_init: 0.5,
            rapid_phase_end: 0.40,
            tau_rapid: 0.8,
            tau_final: 0.9,
        }
    }
}

impl TauSchedule {
    pub fn validate(&self, blend_start: f64, evolve_end: f64) -> Result<()> {
        let finite = [
            self.tau_init,
            self.rapid_phase_end,
            self.tau_rapid,
            self.tau_final,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite tau schedule".into()));
        }
        if !(self.tau_init < self.tau_rapid && self.tau_rapid <= self.tau_final) {
            return Err(Error::InvalidArgument(format!(
                "tau schedule must satisfy tau_init < tau_rapid <= tau_final, got {} / {} / {}",
                self.tau_init, self.tau_rapid, self.tau_final
            )));
        }
        if !(blend_start < self.rapid_phase_end && self.rapid_phase_end <= evolve_end) {
            return Err(Error::InvalidArgument(format!(
                "rapid phase end {} must lie in ({blend_start}, {evolve_end}]",
                self.rapid_phase_end
            )));
        }
        Ok(())
    }

    /// Threshold at `progress`, anchored at `blend_start` and flat after `evolve_end`.
    pub fn at(&self, progress: f64, blend_start: f64, evolve_end: f64) -> Result<f64> {
        if !(blend_start..=1.0).contains(&progress) {
            return Err(Error::InvalidArgument(format!(
                "progress {progress} outside [{blend_start}, 1]"
            )));
        }
        let lerp = |a: f64, b: f64, from: f64, to: f64, p: f64| {
            if to <= from {
                b
            } else {
                a + (b - a) * ((p - from) / (to - from)).clamp(0.0, 1.0)
            }
        };
        if progress <= self.rapid_phase_end {
            Ok(lerp(
                self.tau_init,
                self.tau_rapid,
                blend_start,
                self.rapid_phase_end,
                progress,
            ))
        } else {
            Ok(lerp(
                self.tau_rapid,
                self.tau_final,
                self.rapid_phase_end,
                evolve_end,
                progress,
            ))
        }
    }
}

fn isotropic_gaussian(point: (usize, usize), dims: (usize, usize), sigma: f64) -> ScalarField2D {
    let (px, py) = (point.0 as f64, point.1 as f64);
    let denom = 2.0 * sigma * sigma;
    ScalarField2D::from_fn(dims.0, dims.1, |x, y| {
        let dx = x as f64 - px;
        let dy = y as f64 - py;
        (-(dx * dx + dy * dy) / denom).exp()
    })
}

fn superlevel_fraction(field: &ScalarField2D, tau: f64) -> f64 {
    let count = field.values.iter().filter(|&&v| v > tau).count();
    count as f64 / field.values.len() as f64
}

/// Unit-amplitude Gaussian bump at `point` whose `tau_init` superlevel set
/// covers `target_area` of the grid. The width is found by bisection.
pub fn init_potential(
    point: (usize, usize),
    dims: (usize, usize),
    target_area: f64,
    tau_init: f64,
) -> Result<ScalarField2D> {
    let (width, height) = dims;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("grid dims must be positive".into()));
    }
    if point.0 >= width || point.1 >= height {
        return Err(Error::OutOfBounds {
            x: point.0,
            y: point.1,
            width,
            height,
        });
    }
    if !(target_area > 0.0 && target_area < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target area {target_area} outside (0, 1)"
        )));
    }
    if !(tau_init > 0.0 && tau_init < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau_init {tau_init} outside (0, 1)"
        )));
    }

    let area_at = |sigma: f64| superlevel_fraction(&isotropic_gaussian(point, dims, sigma), tau_init);

    let diag = ((width * width + height * height) as f64).sqrt();
    let mut lo = 1e-3;
    let mut hi = diag;
    while area_at(hi) < target_area && hi < 1e6 {
        hi *= 2.0;
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let area = area_at(mid);
        let err = (area - target_area).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if area < target_area {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for sigma in [lo, hi] {
        let err = (area_at(sigma) - target_area).abs();
        if err < best.0 {
            best = (err, sigma);
        }
    }

    // Superlevel sets grow in whole cells; accept anything within one grid row.
    let total = (width * height) as f64;
    if best.0 * total > width.max(height) as f64 {
        return Err(Error::UnreachableArea {
            target: target_area,
            width,
            height,
        });
    }
    Ok(isotropic_gaussian(point, dims, best.1))
}

pub fn normalize_saliency(saliency: &ScalarField2D) -> Result<ScalarField2D> {
    if let Some(v) = saliency.values.iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "saliency must be non-negative, found {v}"
        )));
    }
    let max = saliency.max();
    if max <= 0.0 {
        return Ok(saliency.clone());
    }
    let mut out = saliency.clone();
    for v in &mut out.values {
        *v /= max;
    }
    Ok(out)
}

/// Adds `lr * saliency` to the potential on the cells of `ring`.
pub fn elevate_potential(
    potential: &ScalarField2D,
    saliency: &ScalarField2D,
    lr: f64,
    ring: &BinaryMask,
) -> Result<ScalarField2D> {
    check_dims("saliency", potential.dims(), saliency.dims())?;
    check_dims("ring", potential.dims(), ring.dims())?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be >= 0")));
    }
    let mut out = potential.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        if ring.bits()[i] {
            *v += lr * saliency.values[i];
        }
    }
    Ok(out)
}

/// Maps any integer index onto `0..n` by half-sample symmetric reflection.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Normalized 1D Gaussian taps truncated at `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-(d * d) / denom).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian filter with reflected borders over a row-major plane.
pub(crate) fn blur_plane(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + k as isize - radius, width);
                acc += w * row[sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + k as isize - radius, height);
                acc += w * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

pub fn gaussian_blur_field(field: &ScalarField2D, sigma: f64) -> Result<ScalarField2D> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma {sigma} must be >= 0")));
    }
    Ok(ScalarField2D {
        width: field.width,
        height: field.height,
        values: blur_plane(&field.values, field.width, field.height, sigma),
    })
}

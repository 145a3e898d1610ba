//! Latent tensors, RGB image buffers and mask-driven latent blending.

use crate::error::{check_dims, Error, Result};
use crate::fields::ScalarField2D;
use crate::masks::BinaryMask;

/// Channel-major `C x H x W` real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "latent dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} latent values", channels * height * width),
                actual: format!("{} latent values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite latent value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Spatial dims as `(width, height)`, matching mask and field order.
    pub fn spatial_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.values[(c * self.height + y) * self.width + x] = v;
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "latent shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channel values", width * height * 3),
                actual: format!("{} channel values", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "image channel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn check_blend_dims(fg: &LatentTensor, bg: &LatentTensor, spatial: (usize, usize)) -> Result<()> {
    if fg.shape() != bg.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("latent {:?}", fg.shape()),
            actual: format!("{:?}", bg.shape()),
        });
    }
    check_dims("latent spatial", fg.spatial_dims(), spatial)
}

/// `fg * m + bg * (1 - m)` with the mask broadcast over channels.
pub fn blend_latents(fg: &LatentTensor, bg: &LatentTensor, mask: &BinaryMask) -> Result<LatentTensor> {
    check_blend_dims(fg, bg, mask.dims())?;
    let plane = fg.width * fg.height;
    let values = fg
        .values
        .iter()
        .zip(&bg.values)
        .enumerate()
        .map(|(i, (&f, &b))| if mask.bits()[i % plane] { f } else { b })
        .collect();
    Ok(LatentTensor {
        values,
        ..fg.clone()
    })
}

/// Predicted clean latent: the predicted foreground inside the mask, the
/// source latent outside.
pub fn predict_blended_final(
    fg_hat: &LatentTensor,
    z_init: &LatentTensor,
    mask: &BinaryMask,
) -> Result<LatentTensor> {
    blend_latents(fg_hat, z_init, mask)
}

/// Blend with real-valued per-cell weights; used to differentiate the
/// blend with respect to the mask.
pub fn blend_weighted(fg: &LatentTensor, bg: &LatentTensor, weights: &ScalarField2D) -> Result<LatentTensor> {
    check_blend_dims(fg, bg, weights.dims())?;
    let plane = fg.width * fg.height;
    let values = fg
        .values
        .iter()
        .zip(&bg.values)
        .enumerate()
        .map(|(i, (&f, &b))| {
            let m = weights.values()[i % plane];
            f * m + b * (1.0 - m)
        })
        .collect();
    LatentTensor::new(fg.channels, fg.height, fg.width, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn latent(c: usize, h: usize, w: usize, seed: u64) -> LatentTensor {
        let mut s = seed;
        let values = (0..c * h * w)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        LatentTensor::new(c, h, w, values).unwrap()
    }

    #[test]
    fn blend_extremes_are_exact() {
        let a = latent(4, 3, 5, 1);
        let b = latent(4, 3, 5, 2);
        assert_eq!(blend_latents(&a, &b, &BinaryMask::new_full(5, 3)).unwrap(), a);
        assert_eq!(blend_latents(&a, &b, &BinaryMask::new_empty(5, 3)).unwrap(), b);
        assert_eq!(predict_blended_final(&a, &b, &BinaryMask::new_empty(5, 3)).unwrap(), b);
        assert_eq!(predict_blended_final(&a, &b, &BinaryMask::new_full(5, 3)).unwrap(), a);
    }

    #[test]
    fn checkerboard_selects_per_cell() {
        let a = latent(1, 2, 2, 3);
        let b = latent(1, 2, 2, 4);
        let m = BinaryMask::from_fn(2, 2, |x, y| (x + y) % 2 == 0);
        let out = blend_latents(&a, &b, &m).unwrap();
        assert_eq!(out.get(0, 0, 0), a.get(0, 0, 0));
        assert_eq!(out.get(0, 0, 1), b.get(0, 0, 1));
        assert_eq!(out.get(0, 1, 0), b.get(0, 1, 0));
        assert_eq!(out.get(0, 1, 1), a.get(0, 1, 1));
    }

    #[test]
    fn blend_rejects_mismatch() {
        let a = latent(4, 3, 5, 1);
        let b = latent(4, 3, 4, 2);
        assert!(blend_latents(&a, &b, &BinaryMask::new_full(5, 3)).is_err());
        assert!(blend_latents(&a, &a, &BinaryMask::new_full(3, 5)).is_err());
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageBuffer::new(1, 1, vec![0.0, 1.0, 1.1]).is_err());
        assert!(ImageBuffer::new(1, 1, vec![0.0, f64::NAN, 0.5]).is_err());
        assert!(ImageBuffer::new(2, 1, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn blend_idempotent_and_linear(
            seed in any::<u64>(),
            bits in proptest::collection::vec(any::<bool>(), 12),
            alpha in -3.0..3.0f64,
        ) {
            let a = latent(2, 3, 4, seed);
            let b = latent(2, 3, 4, seed ^ 0x9e37);
            let m = BinaryMask::new(4, 3, bits).unwrap();
            let once = blend_latents(&a, &b, &m).unwrap();
            prop_assert_eq!(blend_latents(&once, &b, &m).unwrap(), once.clone());
            let scaled = blend_latents(&a.scale(alpha), &b.scale(alpha), &m).unwrap();
            prop_assert_eq!(scaled, once.scale(alpha));
            prop_assert_eq!(predict_blended_final(&a, &b, &m).unwrap(), once);
        }

        #[test]
        fn weighted_blend_agrees_on_binary_weights(
            seed in any::<u64>(),
            bits in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let a = latent(2, 3, 4, seed);
            let b = latent(2, 3, 4, seed.rotate_left(7));
            let m = BinaryMask::new(4, 3, bits.clone()).unwrap();
            let w = ScalarField2D::new(4, 3, bits.iter().map(|&x| x as u8 as f64).collect()).unwrap();
            prop_assert_eq!(blend_weighted(&a, &b, &w).unwrap(), blend_latents(&a, &b, &m).unwrap());
        }
    }
}

//! Paired image/mask augmentations for scoring.
//!
//! Every augmentation is a gather map from output pixels to optional source
//! pixels, so the same map transforms images and masks identically and its
//! transpose pulls pixel gradients back to the untransformed image.

use crate::latent::ImageBuffer;
use crate::masks::BinaryMask;

use super::PixelGradient;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    Identity,
    FlipHorizontal,
    /// Zero the outer `margin` fraction of each axis (center crop, re-padded).
    CenterCrop { margin: f64 },
    FlipCrop { margin: f64 },
}

impl Augmentation {
    /// The deterministic list used when `k` views are requested.
    pub fn set(k: usize) -> Vec<Augmentation> {
        (0..k)
            .map(|i| {
                let margin = (i / 2) as f64 / 16.0;
                match (i, i % 2) {
                    (0, _) => Augmentation::Identity,
                    (1, _) => Augmentation::FlipHorizontal,
                    (_, 0) => Augmentation::CenterCrop { margin },
                    _ => Augmentation::FlipCrop { margin },
                }
            })
            .collect()
    }

    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> Option<(usize, usize)> {
        let inside = |margin: f64| {
            let mx = (w as f64 * margin).floor() as usize;
            let my = (h as f64 * margin).floor() as usize;
            x >= mx && x + mx < w && y >= my && y + my < h
        };
        match *self {
            Augmentation::Identity => Some((x, y)),
            Augmentation::FlipHorizontal => Some((w - 1 - x, y)),
            Augmentation::CenterCrop { margin } => inside(margin).then_some((x, y)),
            Augmentation::FlipCrop { margin } => inside(margin).then_some((w - 1 - x, y)),
        }
    }

    pub fn apply_image(&self, image: &ImageBuffer) -> ImageBuffer {
        let (w, h) = image.dims();
        ImageBuffer::from_fn(w, h, |x, y| match self.source(x, y, w, h) {
            Some((sx, sy)) => image.pixel(sx, sy),
            None => [0.0; 3],
        })
        .expect("gathered pixels stay in range")
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (w, h) = mask.dims();
        BinaryMask::from_fn(w, h, |x, y| {
            self.source(x, y, w, h)
                .map(|(sx, sy)| mask.get(sx, sy))
                .unwrap_or(false)
        })
    }

    /// Transpose of [`Augmentation::apply_image`] acting on a gradient.
    pub fn pullback(&self, grad: &PixelGradient) -> PixelGradient {
        let (w, h) = (grad.width, grad.height);
        let mut out = PixelGradient::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                if let Some((sx, sy)) = self.source(x, y, w, h) {
                    let (o, s) = ((y * w + x) * 3, (sy * w + sx) * 3);
                    for c in 0..3 {
                        out.data[s + c] += grad.data[o + c];
                    }
                }
            }
        }
        out
    }
}

/// `k` paired views of `(image, mask)`; the first is always the identity.
pub fn augment_for_scoring(image: &ImageBuffer, mask: &BinaryMask, k: usize) -> Vec<(ImageBuffer, BinaryMask)> {
    Augmentation::set(k.max(1))
        .iter()
        .map(|a| (a.apply_image(image), a.apply_mask(mask)))
        .collect()
}

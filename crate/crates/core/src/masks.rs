//! Binary and soft masks: thresholding, morphology, connected components,
//! resolution changes, feathering and pixel compositing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::fields::{blur_plane, ScalarField2D};
use crate::latent::ImageBuffer;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dims must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bits", width * height),
                actual: format!("{} bits", bits.len()),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn new_empty(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| false)
    }

    pub fn new_full(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| true)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dims must be positive");
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dims differ");
        Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "mask dims differ");
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Per-cell blend weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, alpha: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || alpha.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} alpha values", width * height),
                actual: format!("{} alpha values", alpha.len()),
            });
        }
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("alpha outside [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            alpha,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }
}

/// Knobs for [`postprocess_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessParams {
    pub closing_radius: usize,
    pub min_component_cells: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            closing_radius: 2,
            min_component_cells: 4,
        }
    }
}

/// `value > tau`, strictly.
pub fn threshold(field: &ScalarField2D, tau: f64) -> BinaryMask {
    BinaryMask {
        width: field.width(),
        height: field.height(),
        bits: field.values().iter().map(|&v| v > tau).collect(),
    }
}

// One pass of a square window OR (dilate) or AND (erode) along one axis.
// `outside` is the value assumed beyond the grid.
fn square_pass(
    bits: &[bool],
    width: usize,
    height: usize,
    r: usize,
    horizontal: bool,
    dilate: bool,
    outside: bool,
) -> Vec<bool> {
    let (len, lines) = if horizontal {
        (width, height)
    } else {
        (height, width)
    };
    let idx = |line: usize, i: usize| {
        if horizontal {
            line * width + i
        } else {
            i * width + line
        }
    };
    let mut out = vec![false; bits.len()];
    for line in 0..lines {
        // Prefix counts of set cells along the line.
        let mut prefix = vec![0usize; len + 1];
        for i in 0..len {
            prefix[i + 1] = prefix[i] + bits[idx(line, i)] as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            let set = prefix[hi + 1] - prefix[lo];
            let span = hi + 1 - lo;
            let clipped = i < r || i + r >= len;
            out[idx(line, i)] = if dilate {
                set > 0 || (clipped && outside)
            } else {
                set == span && !(clipped && !outside)
            };
        }
    }
    out
}

/// Chebyshev-radius dilation: a cell is set iff a set cell lies within `r`.
pub fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let pass = square_pass(&mask.bits, w, h, r, true, true, false);
    let bits = square_pass(&pass, w, h, r, false, true, false);
    BinaryMask {
        width: w,
        height: h,
        bits,
    }
}

/// Chebyshev-radius erosion; cells beyond the grid count as unset, so
/// erosion eats in from the image border.
pub fn erode(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let pass = square_pass(&mask.bits, w, h, r, true, false, false);
    let bits = square_pass(&pass, w, h, r, false, false, false);
    BinaryMask {
        width: w,
        height: h,
        bits,
    }
}

/// Erosion that ignores cells beyond the grid (min-pooling semantics).
pub(crate) fn erode_ignoring_border(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let pass = square_pass(&mask.bits, w, h, r, true, false, true);
    let bits = square_pass(&pass, w, h, r, false, false, true);
    BinaryMask {
        width: w,
        height: h,
        bits,
    }
}

/// Morphological closing. Extensive: the result always contains `mask`.
pub fn close(mask: &BinaryMask, r: usize) -> BinaryMask {
    erode_ignoring_border(&dilate(mask, r), r)
}

/// Labels of the 8-connected components of the set cells, each as a list of
/// flat indices, in row-major order of their first cell.
pub fn components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    label_components(mask, true, true)
}

fn label_components(mask: &BinaryMask, value: bool, eight: bool) -> Vec<Vec<usize>> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || mask.bits[start] != value {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.bits[j] == value {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Sets every unset cell not 4-connected to the grid border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = mask.clone();
    for comp in label_components(mask, false, false) {
        let touches_border = comp.iter().any(|&i| {
            let (x, y) = (i % w, i / w);
            x == 0 || y == 0 || x == w - 1 || y == h - 1
        });
        if !touches_border {
            for i in comp {
                out.bits[i] = true;
            }
        }
    }
    out
}

/// Closing, component selection and hole filling. The anchor's component
/// wins when it survives; otherwise the largest component of at least
/// `min_component_cells` (or the largest overall) is kept.
pub fn postprocess_mask(
    mask: &BinaryMask,
    anchor: (usize, usize),
    params: &PostprocessParams,
) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::MaskCollapse);
    }
    let (w, h) = mask.dims();
    if anchor.0 >= w || anchor.1 >= h {
        return Err(Error::OutOfBounds {
            x: anchor.0,
            y: anchor.1,
            width: w,
            height: h,
        });
    }
    let closed = close(mask, params.closing_radius);
    let comps = components(&closed);
    let anchor_idx = anchor.1 * w + anchor.0;
    let chosen = comps
        .iter()
        .find(|c| c.binary_search(&anchor_idx).is_ok())
        .or_else(|| {
            comps
                .iter()
                .filter(|c| c.len() >= params.min_component_cells)
                .max_by_key(|c| c.len())
        })
        .or_else(|| comps.iter().max_by_key(|c| c.len()))
        .ok_or(Error::MaskCollapse)?;
    let mut single = BinaryMask::new_empty(w, h);
    for &i in chosen {
        single.bits[i] = true;
    }
    Ok(fill_holes(&single))
}

/// Band around the mask boundary: `dilate(mask, r_out) \ erode(mask, r_in)`.
pub fn contour_ring(mask: &BinaryMask, r_in: usize, r_out: usize) -> BinaryMask {
    dilate(mask, r_out).and_not(&erode(mask, r_in))
}

/// Nearest-neighbor block replication.
pub fn upscale_mask(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upscale factor must be >= 1".into()));
    }
    let (w, h) = (mask.width * factor, mask.height * factor);
    Ok(BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x / factor, y / factor)
    }))
}

pub fn area_fraction(mask: &BinaryMask) -> f64 {
    mask.count() as f64 / mask.bits.len() as f64
}

/// Gaussian-blurred 0/1 mask, truncated at three sigma.
pub fn feather(mask: &BinaryMask, sigma: f64) -> Result<SoftMask> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("feather sigma {sigma} must be > 0")));
    }
    let plane: Vec<f64> = mask.bits.iter().map(|&b| b as u8 as f64).collect();
    let alpha = blur_plane(&plane, mask.width, mask.height, sigma)
        .into_iter()
        .map(|a| a.clamp(0.0, 1.0))
        .collect();
    Ok(SoftMask {
        width: mask.width,
        height: mask.height,
        alpha,
    })
}

/// `edited * alpha + original * (1 - alpha)` per channel.
pub fn composite(edited: &ImageBuffer, original: &ImageBuffer, soft: &SoftMask) -> Result<ImageBuffer> {
    check_dims("original", edited.dims(), original.dims())?;
    check_dims("soft mask", edited.dims(), soft.dims())?;
    let data = edited
        .data()
        .iter()
        .zip(original.data())
        .enumerate()
        .map(|(i, (&e, &o))| {
            let a = soft.alpha[i / 3];
            if a == 0.0 {
                o
            } else if a == 1.0 {
                e
            } else {
                (o + a * (e - o)).clamp(0.0, 1.0)
            }
        })
        .collect();
    ImageBuffer::new(edited.width(), edited.height(), data)
}

use crate::backends::Scorer;
use crate::backends::synthetic::TargetLayout;
use crate::error::{check_dims, Error, Result};
use crate::latent::ImageBuffer;

use super::extract::{extract_edit_mask, ExtractParams};

/// Joint image/text embedding space.
pub trait Embedder: Send + Sync {
    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding dims differ");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn nonempty(caption: &str) -> Result<()> {
    if caption.trim().is_empty() {
        return Err(Error::InvalidArgument("caption must be nonempty".into()));
    }
    Ok(())
}

fn embed_checked(v: Vec<f64>, dim: usize) -> Result<Vec<f64>> {
    if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Backend("embedder returned a malformed vector".into()));
    }
    Ok(v)
}

/// Mean absolute pixel difference over all channels.
pub fn mean_l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims("image", a.dims(), b.dims())?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data().len() as f64)
}

/// Alignment of the image change with the caption change.
pub fn directional_clip(
    embedder: &dyn Embedder,
    in_img: &ImageBuffer,
    out_img: &ImageBuffer,
    in_caption: &str,
    out_caption: &str,
) -> Result<f64> {
    nonempty(in_caption)?;
    nonempty(out_caption)?;
    let ei = embedder.embed_image(in_img)?;
    let dim = ei.len();
    let eo = embed_checked(embedder.embed_image(out_img)?, dim)?;
    let ti = embed_checked(embedder.embed_text(in_caption)?, dim)?;
    let to = embed_checked(embedder.embed_text(out_caption)?, dim)?;
    let d_img: Vec<f64> = eo.iter().zip(&ei).map(|(a, b)| a - b).collect();
    let d_txt: Vec<f64> = to.iter().zip(&ti).map(|(a, b)| a - b).collect();
    Ok(cosine(&d_img, &d_txt))
}

pub fn clip_out(embedder: &dyn Embedder, out_img: &ImageBuffer, out_caption: &str) -> Result<f64> {
    nonempty(out_caption)?;
    let ei = embedder.embed_image(out_img)?;
    let et = embed_checked(embedder.embed_text(out_caption)?, ei.len())?;
    Ok(cosine(&ei, &et))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditedScore {
    /// Masked similarity, or `0.0` when nothing changed.
    pub value: f64,
    pub empty_mask: bool,
}

/// Scores `output` against `instruction` inside the region that differs
/// from `input`.
pub fn alpha_clip_edit(
    scorer: &dyn Scorer,
    input: &ImageBuffer,
    output: &ImageBuffer,
    instruction: &str,
    params: &ExtractParams,
) -> Result<EditedScore> {
    let mask = extract_edit_mask(input, output, params)?;
    if mask.is_empty() {
        return Ok(EditedScore {
            value: 0.0,
            empty_mask: true,
        });
    }
    Ok(EditedScore {
        value: scorer.score(output, &mask, instruction)?.value(),
        empty_mask: false,
    })
}

/// Embeds images as centered mean colors over a 3x3 grid; text embeds as
/// the image embedding of the prompt's procedural target.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticEmbedder {
    pub target_seed: u64,
}

const GRID: usize = 3;

impl Embedder for SyntheticEmbedder {
    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        let (w, h) = image.dims();
        let mut sums = vec![0.0; GRID * GRID * 3];
        let mut counts = vec![0usize; GRID * GRID];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * GRID / h) * GRID + x * GRID / w;
                let p = image.pixel(x, y);
                for c in 0..3 {
                    sums[cell * 3 + c] += p[c];
                }
                counts[cell] += 1;
            }
        }
        Ok(sums
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = counts[i / 3];
                if n == 0 {
                    0.0
                } else {
                    s / n as f64 - 0.5
                }
            })
            .collect())
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let target = TargetLayout::generate(text, (48, 48), self.target_seed).render();
        self.embed_image(&target)
    }
}

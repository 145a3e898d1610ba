//! PNG load/save. Images are 8-bit RGB on disk and `[0, 1]` floats in memory.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use click2mask::latent::ImageBuffer;
use click2mask::masks::BinaryMask;

use crate::error::{CliError, CliResult};

fn image_error(path: &Path, e: image::ImageError) -> CliError {
    match e {
        image::ImageError::IoError(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn load_rgb(path: &Path) -> CliResult<ImageBuffer> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(ImageBuffer::new(w as usize, h as usize, data)?)
}

/// Round half up to the nearest 8-bit level.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn save_rgb(path: &Path, image: &ImageBuffer) -> CliResult<()> {
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    image::save_buffer(
        path,
        &bytes,
        image.width() as u32,
        image.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| image_error(path, e))
}

/// Writes a 1-bit grayscale PNG (set = white).
pub fn save_mask(path: &Path, mask: &BinaryMask) -> CliResult<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let (w, h) = mask.dims();
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let row_bytes = w.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let to_io = |e: png::EncodingError| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&packed).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

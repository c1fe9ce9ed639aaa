//! 8-bit RGB images mapped to [0, 1].

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn codec(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Reads any 8-bit image the codec understands as (1, 3, h, w) in [0, 1].
pub fn read_ldr8(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(0, c, y as usize, x as usize, px.0[c] as f32 / 255.0);
        }
    }
    Ok(t)
}

/// Quantises a (1, 3, h, w) tensor to 8 bits (round to nearest, clamped).
pub fn to_rgb8(img: &Tensor) -> Result<RgbImage> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("write_ldr8", format!("expected (1, 3, h, w), got {s}")));
    }
    Ok(ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let q = |c| (img.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    }))
}

/// Writes an 8-bit image; the format follows the file extension.
pub fn write_ldr8(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(img)?.save(path).map_err(|e| codec(path, e))
}

/// Applies the same 8-bit quantisation as a write/read round trip.
pub fn quantize8(img: &Tensor) -> Tensor {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

//! 8-bit RGB PNG input and output.
//!
//! Values map linearly between `[0, 1]` and `0..=255`.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rounds every value to the nearest multiple of 1/255, clamping to `[0, 1]`.
pub fn quantize(t: &Tensor<f32>) -> Tensor<f32> {
    let data = t.values().iter().map(|&v| to_u8(v) as f32 / 255.0).collect();
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads a PNG into a `1×3×H×W` tensor.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data)
}

/// Writes a `1×3×H×W` (or `3×H×W`) tensor as an 8-bit RGB PNG.
pub fn write_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (h, w) = match *t.shape() {
        [1, 3, h, w] | [3, h, w] => (h, w),
        _ => {
            return Err(Error::shape(format!(
                "PNG output needs 3 channels, got {:?}",
                t.shape()
            )))
        }
    };
    let v = t.values();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| to_u8(v[(c * h + y as usize) * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

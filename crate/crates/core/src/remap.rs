//! Backward image warping: every output pixel pulls from the source location
//! given by the warp evaluated at that pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageWindow};
use crate::tps::{warp_field, TpsFrameParams, TpsSequenceParams};
use crate::types::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Border {
    #[default]
    Clamp,
    Constant(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub interpolation: Interpolation,
    pub border: Border,
}

#[inline]
fn fetch(image: &Image, x: i64, y: i64, c: usize, border: Border) -> f64 {
    let inside = x >= 0 && y >= 0 && (x as usize) < image.width() && (y as usize) < image.height();
    match border {
        Border::Constant(v) if !inside => v as f64,
        _ => image.get_clamped(x, y, c) as f64,
    }
}

/// Samples channel `c` of `image` at a continuous position.
pub fn sample(image: &Image, at: Point2, c: usize, config: SamplingConfig) -> u8 {
    match config.interpolation {
        Interpolation::Nearest => {
            fetch(image, at.x.round() as i64, at.y.round() as i64, c, config.border) as u8
        }
        Interpolation::Bilinear => {
            let x0 = at.x.floor();
            let y0 = at.y.floor();
            let fx = at.x - x0;
            let fy = at.y - y0;
            let (xi, yi) = (x0 as i64, y0 as i64);
            let v00 = fetch(image, xi, yi, c, config.border);
            let v10 = fetch(image, xi + 1, yi, c, config.border);
            let v01 = fetch(image, xi, yi + 1, c, config.border);
            let v11 = fetch(image, xi + 1, yi + 1, c, config.border);
            let top = v00 + fx * (v10 - v00);
            let bottom = v01 + fx * (v11 - v01);
            let v = top + fy * (bottom - top);
            v.round().clamp(0.0, 255.0) as u8
        }
    }
}

/// Warps one frame: output `(x, y)` takes the source sample at `f(x, y)`.
pub fn remap_frame(image: &Image, inverse: &TpsFrameParams, config: SamplingConfig) -> Result<Image> {
    if image.is_empty() {
        return Err(Error::invalid("cannot remap an empty image"));
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let field = warp_field(inverse, w, h)?;
    let mut out = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let src = field.at(x, y);
            if !src.is_finite() {
                return Err(Error::invalid(format!("warp is not finite at ({x}, {y})")));
            }
            for c in 0..ch {
                out.push(sample(image, src, c, config));
            }
        }
    }
    Image::new(w, h, ch, out)
}

/// Frame-wise [`remap_frame`] over a window.
pub fn remap_window(images: &ImageWindow, inverse: &TpsSequenceParams, config: SamplingConfig) -> Result<ImageWindow> {
    if images.len() != inverse.len() {
        return Err(Error::invalid(format!(
            "{} images but {} warp frames",
            images.len(),
            inverse.len()
        )));
    }
    let frames = images
        .frames()
        .iter()
        .zip(&inverse.frames)
        .enumerate()
        .map(|(t, (img, p))| remap_frame(img, p, config).map_err(|e| e.in_frame(t)))
        .collect::<Result<Vec<_>>>()?;
    ImageWindow::new(frames)
}

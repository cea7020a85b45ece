//! Synthetic inputs shared by the benchmarks.

use std::f64::consts::PI;

use tpswarp::{Image, ImageWindow, LandmarkFrame, LandmarkWindow, MaskImage, Point2};

/// 39 mouth landmarks (outer lip, inner lip, jaw) centred on `c`.
pub fn mouth(c: Point2, open: f64) -> LandmarkFrame {
    let mut pts = Vec::with_capacity(39);
    for k in 0..12 {
        let phi = PI - 2.0 * PI * k as f64 / 12.0;
        let r = if phi.sin() >= 0.0 { 8.0 + open } else { 10.0 + open };
        pts.push(Point2::new(c.x + 28.0 * phi.cos(), c.y - r * phi.sin()));
    }
    for k in 0..8 {
        let phi = PI - 2.0 * PI * k as f64 / 8.0;
        pts.push(Point2::new(c.x + 22.0 * phi.cos(), c.y - (0.5 + open) * phi.sin()));
    }
    for k in 0..19 {
        let psi = PI * k as f64 / 18.0;
        pts.push(Point2::new(c.x - 52.0 * psi.cos(), c.y - 6.0 + (40.0 + open) * psi.sin()));
    }
    LandmarkFrame::new(pts)
}

/// A talking-mouth landmark window in crop coordinates.
pub fn landmarks(frames: usize, phase: f64) -> LandmarkWindow {
    let lm = (0..frames)
        .map(|t| {
            let t = t as f64;
            mouth(Point2::new(74.0 + 0.3 * t, 78.0), 4.0 + 3.0 * (0.7 * t + phase).sin())
        })
        .collect();
    LandmarkWindow::new(lm, 30.0).unwrap()
}

pub fn texture(width: usize, height: usize, phase: f64) -> Image {
    Image::from_fn(width, height, 3, |x, y, c| {
        (128.0 + 60.0 * ((x as f64 * 0.11 + phase).sin() * (y as f64 * 0.07 + c as f64).cos())) as u8
    })
    .unwrap()
}

pub fn textures(frames: usize, width: usize, height: usize) -> ImageWindow {
    ImageWindow::new((0..frames).map(|t| texture(width, height, 0.3 * t as f64)).collect()).unwrap()
}

/// Filled ellipse in the middle of the frame.
pub fn ellipse_mask(width: usize, height: usize) -> MaskImage {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let values = (0..width * height)
        .map(|i| {
            let dx = ((i % width) as f64 - cx) / (0.3 * width as f64);
            let dy = ((i / width) as f64 - cy) / (0.2 * height as f64);
            (dx * dx + dy * dy <= 1.0) as u8
        })
        .collect();
    MaskImage::new(width, height, values).unwrap()
}

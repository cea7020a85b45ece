//! Mouth mask rasterization, Laplacian pyramid blending and crop retargeting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::types::{mouth, LandmarkFrame, Point2};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "mask buffer has {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            values: vec![value as u8; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    /// Single-channel 0/255 rendering.
    pub fn to_image(&self) -> Image {
        Image::new(self.width, self.height, 1, self.values.iter().map(|&v| v * 255).collect())
            .expect("mask dimensions are consistent")
    }
}

/// Closed polygon from the topmost landmark through the jaw points in order.
pub fn mask_polygon(inferred: &LandmarkFrame) -> Result<Vec<Point2>> {
    inferred.require_mouth()?;
    let pts = &inferred.points;
    let mut top = 0;
    for (i, p) in pts.iter().enumerate() {
        if p.y < pts[top].y {
            top = i;
        }
    }
    let mut poly = vec![pts[top]];
    poly.extend_from_slice(&pts[mouth::JAW]);
    Ok(poly)
}

fn shoelace_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Even-odd scanline fill with pixel centers at integer coordinates.
pub fn rasterize_polygon(poly: &[Point2], width: usize, height: usize) -> MaskImage {
    let mut mask = MaskImage::filled(width, height, false);
    let n = poly.len();
    let mut xs = Vec::new();
    for row in 0..height {
        let py = row as f64;
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a.y > py) != (b.y > py) {
                xs.push(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let lo = span[0].ceil().max(0.0);
            let hi = span[1].ceil().min(width as f64);
            let mut x = lo;
            while x < hi {
                mask.values[row * width + x as usize] = 1;
                x += 1.0;
            }
        }
    }
    mask
}

pub fn mouth_mask(inferred: &LandmarkFrame, width: usize, height: usize) -> Result<MaskImage> {
    let poly = mask_polygon(inferred)?;
    if shoelace_area(&poly).abs() < 1e-9 {
        return Err(Error::DegenerateMask("mask polygon has zero area".into()));
    }
    let mask = rasterize_polygon(&poly, width, height);
    let filled = mask.count();
    if filled == 0 {
        return Err(Error::DegenerateMask("mask covers no pixel centers".into()));
    }
    if filled == width * height {
        return Err(Error::DegenerateMask("mask covers the whole frame".into()));
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub levels: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

impl PyramidConfig {
    pub fn new(levels: usize) -> Result<Self> {
        let c = Self { levels };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::invalid(format!("pyramid levels must be in 1..=16, got {}", self.levels)));
        }
        Ok(())
    }
}

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// One channel of real-valued samples.
#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        self.v[y * self.w + x]
    }

    fn blur(&self) -> Plane {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        let mut padded = vec![0.0; w + 4];
        for y in 0..h {
            let row = &self.v[y * w..(y + 1) * w];
            padded[2..w + 2].copy_from_slice(row);
            padded[..2].fill(row[0]);
            padded[w + 2..].fill(row[w - 1]);
            for (x, out) in tmp[y * w..(y + 1) * w].iter_mut().enumerate() {
                *out = (0..5).map(|k| KERNEL[k] * padded[x + k]).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let dst = &mut out[y * w..(y + 1) * w];
            for (k, weight) in KERNEL.iter().enumerate() {
                let sy = (y as i64 + k as i64 - 2).clamp(0, h as i64 - 1) as usize;
                for (d, s) in dst.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                    *d += weight * s;
                }
            }
        }
        Plane { w, h, v: out }
    }

    /// Blur then keep even rows and columns.
    fn reduce(&self) -> Plane {
        let b = self.blur();
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                v.push(b.v[2 * y * b.w + 2 * x]);
            }
        }
        Plane { w, h, v }
    }

    /// Upsample to `w`×`h` with the kernel's polyphase split: even outputs
    /// take (1, 6, 1)/8 of their neighbours, odd outputs the mean of two.
    fn expand(&self, w: usize, h: usize) -> Plane {
        let up = |get: &dyn Fn(i64) -> f64, i: usize| -> f64 {
            let k = (i / 2) as i64;
            if i % 2 == 0 {
                (get(k - 1) + 6.0 * get(k) + get(k + 1)) / 8.0
            } else {
                (get(k) + get(k + 1)) / 2.0
            }
        };
        let mut rows = vec![0.0; w * self.h];
        for y in 0..self.h {
            for x in 0..w {
                rows[y * w + x] = up(&|k| self.at(k, y as i64), x);
            }
        }
        let rows = Plane { w, h: self.h, v: rows };
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = up(&|k| rows.at(x as i64, k), y);
            }
        }
        Plane { w, h, v: out }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

fn channel(img: &Image, c: usize) -> Plane {
    let ch = img.channels();
    Plane {
        w: img.width(),
        h: img.height(),
        v: img.pixels().iter().skip(c).step_by(ch).map(|&p| p as f64).collect(),
    }
}

fn gaussian_pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut pyr = vec![base];
    for _ in 1..levels {
        let next = pyr.last().unwrap().reduce();
        pyr.push(next);
    }
    pyr
}

fn laplacian_pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let g = gaussian_pyramid(base, levels);
    let mut lap: Vec<Plane> = g
        .windows(2)
        .map(|pair| pair[0].zip(&pair[1].expand(pair[0].w, pair[0].h), |a, b| a - b))
        .collect();
    lap.push(g.last().unwrap().clone());
    lap
}

fn collapse(lap: Vec<Plane>) -> Plane {
    let mut iter = lap.into_iter().rev();
    let mut acc = iter.next().expect("pyramid has at least one level");
    for level in iter {
        acc = level.zip(&acc.expand(level.w, level.h), |a, b| a + b);
    }
    acc
}

/// Multiband blend of `fg` over `bg`, weighted by a Gaussian pyramid of `mask`
/// whose finest level is the mask blurred once.
pub fn laplacian_blend(fg: &Image, bg: &Image, mask: &MaskImage, config: PyramidConfig) -> Result<Image> {
    config.validate()?;
    if !fg.same_dims(bg) {
        return Err(Error::invalid("foreground and background dimensions differ"));
    }
    let (w, h, ch) = (fg.width(), fg.height(), fg.channels());
    if mask.width != w || mask.height != h {
        return Err(Error::invalid("mask dimensions differ from the images"));
    }
    let min_side = 1usize << config.levels;
    if w < min_side || h < min_side {
        return Err(Error::invalid(format!(
            "{w}x{h} image is too small for {} pyramid levels",
            config.levels
        )));
    }

    let m0 = Plane {
        w,
        h,
        v: mask.values.iter().map(|&v| v as f64).collect(),
    }
    .blur();
    let masks = gaussian_pyramid(m0, config.levels);

    let mut out = vec![0u8; w * h * ch];
    for c in 0..ch {
        let lf = laplacian_pyramid(channel(fg, c), config.levels);
        let lb = laplacian_pyramid(channel(bg, c), config.levels);
        let blended = lf
            .iter()
            .zip(&lb)
            .zip(&masks)
            .map(|((f, b), m)| Plane {
                w: f.w,
                h: f.h,
                v: (0..f.v.len()).map(|i| m.v[i] * f.v[i] + (1.0 - m.v[i]) * b.v[i]).collect(),
            })
            .collect();
        for (i, v) in collapse(blended).v.into_iter().enumerate() {
            out[i * ch + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::new(w, h, ch, out)
}

/// Pastes `crop` into a copy of `face` so that its center pixel lands on
/// `round(center)`; parts falling outside the face are dropped.
pub fn retarget(face: &Image, crop: &Image, center: Point2) -> Result<Image> {
    if crop.width() > face.width() || crop.height() > face.height() {
        return Err(Error::invalid("mouth crop is larger than the face frame"));
    }
    if crop.channels() != face.channels() {
        return Err(Error::invalid("mouth crop and face have different channel counts"));
    }
    if !center.is_finite() {
        return Err(Error::invalid("mouth center is not finite"));
    }
    let x0 = center.x.round() as i64 - (crop.width() / 2) as i64;
    let y0 = center.y.round() as i64 - (crop.height() / 2) as i64;
    let mut out = face.clone();
    for y in 0..crop.height() {
        let fy = y0 + y as i64;
        if fy < 0 || fy >= face.height() as i64 {
            continue;
        }
        for x in 0..crop.width() {
            let fx = x0 + x as i64;
            if fx < 0 || fx >= face.width() as i64 {
                continue;
            }
            for c in 0..crop.channels() {
                out.set(fx as usize, fy as usize, c, crop.get(x, y, c));
            }
        }
    }
    Ok(out)
}

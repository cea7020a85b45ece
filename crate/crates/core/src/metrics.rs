//! Speaking-style similarity (SSIOU) over lip-aperture curves, and mean
//! photometric error with per-pixel distance maps.

use serde::{Deserialize, Serialize};

use crate::composite::MaskImage;
use crate::error::{Error, Result};
use crate::image::{Image, ImageWindow};
use crate::types::{mouth, LandmarkSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApertureCurve {
    pub samples: Vec<f64>,
    pub fps: f64,
}

impl ApertureCurve {
    pub fn new(samples: Vec<f64>, fps: f64) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("aperture samples must be finite and nonnegative"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { samples, fps })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linear resampling onto `n` points spanning the same time interval.
    pub fn resample(&self, n: usize) -> Vec<f64> {
        let m = self.samples.len();
        if m == n {
            return self.samples.clone();
        }
        if m == 1 || n == 1 {
            return vec![self.samples[0]; n];
        }
        (0..n)
            .map(|i| {
                let pos = i as f64 * (m - 1) as f64 / (n - 1) as f64;
                let k = (pos.floor() as usize).min(m - 2);
                let f = pos - k as f64;
                self.samples[k] + f * (self.samples[k + 1] - self.samples[k])
            })
            .collect()
    }
}

/// Per frame, the mean `|Δy|` over upper/lower lip index pairs.
pub fn lip_aperture_with(landmarks: &LandmarkSequence, pairs: &[(usize, usize)]) -> Result<ApertureCurve> {
    if pairs.is_empty() {
        return Err(Error::invalid("at least one lip pair is required"));
    }
    let samples = landmarks
        .frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            f.require_mouth().map_err(|e| e.in_frame(t))?;
            let sum: f64 = pairs
                .iter()
                .map(|&(u, l)| {
                    let (Some(a), Some(b)) = (f.points.get(u), f.points.get(l)) else {
                        return Err(Error::invalid(format!("lip pair ({u}, {l}) out of range")));
                    };
                    Ok((b.y - a.y).abs())
                })
                .sum::<Result<f64>>()?;
            Ok(sum / pairs.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    ApertureCurve::new(samples, landmarks.fps)
}

pub fn lip_aperture(landmarks: &LandmarkSequence) -> Result<ApertureCurve> {
    lip_aperture_with(landmarks, &mouth::INNER_LIP_PAIRS)
}

/// `Σ min(a, b) / Σ max(a, b)` on a shared grid; the longer curve sets the grid.
pub fn ssiou(a: &ApertureCurve, b: &ApertureCurve) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("empty aperture curve".into()));
    }
    let n = a.len().max(b.len());
    let (ra, rb) = (a.resample(n), b.resample(n));
    let (mut inter, mut union) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        inter += x.min(*y);
        union += x.max(*y);
    }
    if union == 0.0 {
        return Err(Error::UndefinedMetric("both aperture curves are identically zero".into()));
    }
    Ok(inter / union)
}

/// Per-pixel mean absolute difference, 0–255 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DistanceMap {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Grayscale rendering with the maximum mapped to 255; returns the
    /// multiplier that was applied.
    pub fn to_image(&self) -> (Image, f64) {
        let max = self.max();
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let px = self.values.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
        (Image::new(self.width, self.height, 1, px).expect("map dimensions are consistent"), scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhotometricError {
    pub mean: f64,
    pub map: DistanceMap,
}

pub fn photometric_error(gen: &ImageWindow, gt: &ImageWindow, mask: Option<&MaskImage>) -> Result<PhotometricError> {
    if gen.len() != gt.len() {
        return Err(Error::invalid(format!("{} generated frames but {} ground-truth frames", gen.len(), gt.len())));
    }
    if gen.is_empty() {
        return Err(Error::invalid("no frames to compare"));
    }
    let first = gen.frame(0);
    if !first.same_dims(gt.frame(0)) {
        return Err(Error::invalid("generated and ground-truth frames differ in size"));
    }
    let (w, h, ch) = (first.width(), first.height(), first.channels());
    if let Some(m) = mask {
        if m.width() != w || m.height() != h {
            return Err(Error::invalid("mask dimensions differ from the frames"));
        }
    }

    let mut acc = vec![0.0; w * h];
    for (a, b) in gen.frames().iter().zip(gt.frames()) {
        for (i, (pa, pb)) in a.pixels().chunks_exact(ch).zip(b.pixels().chunks_exact(ch)).enumerate() {
            acc[i] += pa.iter().zip(pb).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>();
        }
    }
    let norm = (gen.len() * ch) as f64;
    let values: Vec<f64> = acc.into_iter().map(|v| v / norm).collect();

    let (sum, count) = match mask {
        Some(m) => values
            .iter()
            .zip(m.values())
            .filter(|(_, &k)| k == 1)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1)),
        None => (values.iter().sum(), values.len()),
    };
    if count == 0 {
        return Err(Error::DegenerateMask("mask selects no pixels".into()));
    }
    Ok(PhotometricError {
        mean: sum / count as f64,
        map: DistanceMap {
            width: w,
            height: h,
            values,
        },
    })
}

//! Instance normalization and AdaIN modulation over channel × length maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Row-major `channels × length` feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    length: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, length: usize, values: Vec<f64>) -> Result<Self> {
        if length == 0 || channels == 0 {
            return Err(Error::invalid("feature map needs at least one channel and one sample"));
        }
        if values.len() != channels * length {
            return Err(Error::invalid(format!(
                "{} values for a {channels}x{length} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(Self { channels, length, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let channels = rows.len();
        let length = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != length) {
            return Err(Error::invalid("feature map rows differ in length"));
        }
        Self::new(channels, length, rows.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    /// Per-channel mean and population standard deviation.
    pub fn moments(&self, c: usize) -> (f64, f64) {
        let ch = self.channel(c);
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl StyleParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::invalid(format!(
                "gamma has {} entries, beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        Ok(Self { gamma, beta })
    }
}

fn modulate(m: &FeatureMap, eps: f64, affine: impl Fn(usize, f64) -> f64) -> FeatureMap {
    let mut values = Vec::with_capacity(m.values.len());
    for c in 0..m.channels {
        let (mean, std) = m.moments(c);
        let denom = std + eps;
        values.extend(m.channel(c).iter().map(|v| affine(c, (v - mean) / denom)));
    }
    FeatureMap {
        channels: m.channels,
        length: m.length,
        values,
    }
}

/// `(M_c − μ_c) / (σ_c + eps)` per channel.
pub fn instance_norm(m: &FeatureMap, eps: f64) -> FeatureMap {
    modulate(m, eps, |_, v| v)
}

/// `γ_c · (M_c − μ_c) / (σ_c + eps) + β_c` per channel.
pub fn adain(content: &FeatureMap, style: &StyleParams, eps: f64) -> Result<FeatureMap> {
    if style.gamma.len() != content.channels || style.beta.len() != content.channels {
        return Err(Error::invalid(format!(
            "style has {}/{} parameters for {} channels",
            style.gamma.len(),
            style.beta.len(),
            content.channels
        )));
    }
    Ok(modulate(content, eps, |c, v| style.gamma[c] * v + style.beta[c]))
}

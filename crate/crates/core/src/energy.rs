//! Warp energies evaluated on the rasterized field.
//!
//! * fitting error: mean L1 distance between warped source landmarks and targets
//! * bending energy: mean of `f_xx^2 + 2 f_xy^2 + f_yy^2` over interior pixels
//! * temporal energy: mean of `f_tt^2` over pixels and interior frames
//!
//! Derivatives are central differences with unit spacing; both output
//! coordinates contribute.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tps::{eval_point, warp_field, DenseField, TpsSequenceParams};
use crate::types::LandmarkWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }
}

impl EnergyWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let w = Self {
            alpha1,
            alpha2,
            alpha3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, e_f: f64, e_b: f64, e_t: f64) -> f64 {
        self.alpha1 * e_f + self.alpha2 * e_b + self.alpha3 * e_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_f: f64,
    pub e_b: f64,
    pub e_t: f64,
    pub l_tw: f64,
}

/// Penalty applied to each landmark residual component in the fitting term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittingPenalty {
    /// `|r|`, the reported fitting error.
    L1,
    /// `r^2 / (2 eps)` for `|r| <= eps`, else `|r| - eps / 2`.
    Huber { eps: f64 },
    /// `r^2`; turns the whole objective into a quadratic.
    SquaredL2,
}

impl FittingPenalty {
    #[inline]
    pub fn value(self, r: f64) -> f64 {
        match self {
            FittingPenalty::L1 => r.abs(),
            FittingPenalty::Huber { eps } => {
                let a = r.abs();
                if a <= eps {
                    0.5 * r * r / eps
                } else {
                    a - 0.5 * eps
                }
            }
            FittingPenalty::SquaredL2 => r * r,
        }
    }

    /// First derivative; the L1 kink uses the zero subgradient.
    #[inline]
    pub fn derivative(self, r: f64) -> f64 {
        match self {
            FittingPenalty::L1 => {
                if r == 0.0 {
                    0.0
                } else {
                    r.signum()
                }
            }
            FittingPenalty::Huber { eps } => {
                if r.abs() <= eps {
                    r / eps
                } else {
                    r.signum()
                }
            }
            FittingPenalty::SquaredL2 => 2.0 * r,
        }
    }

    #[inline]
    pub fn curvature(self, r: f64) -> f64 {
        match self {
            FittingPenalty::L1 => 0.0,
            FittingPenalty::Huber { eps } => {
                if r.abs() <= eps {
                    1.0 / eps
                } else {
                    0.0
                }
            }
            FittingPenalty::SquaredL2 => 2.0,
        }
    }
}

fn check_window_shapes(params: &TpsSequenceParams, src: &LandmarkWindow, dst: &LandmarkWindow) -> Result<()> {
    src.require_same_shape(dst, "fitting windows")?;
    if params.len() != src.len() || params.points() != src.points_per_frame() {
        return Err(Error::invalid(format!(
            "parameters are {}x{}, windows are {}x{}",
            params.len(),
            params.points(),
            src.len(),
            src.points_per_frame()
        )));
    }
    Ok(())
}

/// Mean over frames and landmarks of the penalized residual components.
pub fn fitting_loss(
    params: &TpsSequenceParams,
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    penalty: FittingPenalty,
) -> Result<f64> {
    check_window_shapes(params, src, dst)?;
    let mut sum = 0.0;
    for ((fp, s), d) in params.frames.iter().zip(src.frames()).zip(dst.frames()) {
        for (p, v) in s.points.iter().zip(&d.points) {
            let r = eval_point(fp, *p) - *v;
            sum += penalty.value(r.x) + penalty.value(r.y);
        }
    }
    Ok(sum / (src.len() * src.points_per_frame()) as f64)
}

/// Mean L1 landmark fitting error in pixels.
pub fn fitting_error(params: &TpsSequenceParams, src: &LandmarkWindow, dst: &LandmarkWindow) -> Result<f64> {
    fitting_loss(params, src, dst, FittingPenalty::L1)
}

fn fields(params: &TpsSequenceParams, width: usize, height: usize) -> Result<Vec<DenseField>> {
    params
        .frames
        .iter()
        .map(|f| warp_field(f, width, height))
        .collect()
}

fn bending_sum(field: &DenseField) -> f64 {
    let (w, h) = (field.width, field.height);
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = field.at(x, y);
            let fxx = field.at(x + 1, y) - 2.0 * c + field.at(x - 1, y);
            let fyy = field.at(x, y + 1) - 2.0 * c + field.at(x, y - 1);
            let fxy = 0.25
                * (field.at(x + 1, y + 1) - field.at(x + 1, y - 1) - field.at(x - 1, y + 1)
                    + field.at(x - 1, y - 1));
            sum += fxx.x * fxx.x + fxx.y * fxx.y;
            sum += 2.0 * (fxy.x * fxy.x + fxy.y * fxy.y);
            sum += fyy.x * fyy.x + fyy.y * fyy.y;
        }
    }
    sum
}

fn check_grid(width: usize, height: usize) -> Result<()> {
    if width < 3 || height < 3 {
        return Err(Error::invalid(format!(
            "energy grid must be at least 3x3, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Mean squared second spatial derivative over the `(W-2)(H-2)` interior
/// pixels of every frame.
pub fn bending_energy(params: &TpsSequenceParams, width: usize, height: usize) -> Result<f64> {
    check_grid(width, height)?;
    let total: f64 = fields(params, width, height)?.iter().map(bending_sum).sum();
    Ok(total / ((width - 2) * (height - 2) * params.len()) as f64)
}

fn temporal_sum(prev: &DenseField, cur: &DenseField, next: &DenseField) -> f64 {
    prev.values
        .iter()
        .zip(&cur.values)
        .zip(&next.values)
        .map(|((a, b), c)| {
            let ftt = *c - 2.0 * *b + *a;
            ftt.x * ftt.x + ftt.y * ftt.y
        })
        .sum()
}

/// Mean squared second temporal difference over all pixels and the `T - 2`
/// interior frames.
pub fn temporal_energy(params: &TpsSequenceParams, width: usize, height: usize) -> Result<f64> {
    if params.len() < 3 {
        return Err(Error::InsufficientFrames {
            needed: 3,
            found: params.len(),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("temporal energy needs a non-empty grid"));
    }
    let f = fields(params, width, height)?;
    let total: f64 = f.windows(3).map(|w| temporal_sum(&w[0], &w[1], &w[2])).sum();
    Ok(total / ((width * height) * (params.len() - 2)) as f64)
}

/// All three energies and their weighted sum, with the exact L1 fitting term.
pub fn total_objective(
    params: &TpsSequenceParams,
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    width: usize,
    height: usize,
    weights: EnergyWeights,
) -> Result<EnergyReport> {
    weights.validate()?;
    check_grid(width, height)?;
    if params.len() < 3 {
        return Err(Error::InsufficientFrames {
            needed: 3,
            found: params.len(),
        });
    }
    let e_f = fitting_error(params, src, dst)?;
    let f = fields(params, width, height)?;
    let e_b = f.iter().map(bending_sum).sum::<f64>() / ((width - 2) * (height - 2) * params.len()) as f64;
    let e_t = f.windows(3).map(|w| temporal_sum(&w[0], &w[1], &w[2])).sum::<f64>()
        / ((width * height) * (params.len() - 2)) as f64;
    Ok(EnergyReport {
        e_f,
        e_b,
        e_t,
        l_tw: weights.combine(e_f, e_b, e_t),
    })
}

/// Weighted objective with an arbitrary fitting penalty, evaluated on the
/// dense grid. This is the function the temporal optimizer minimizes.
pub fn penalized_objective(
    params: &TpsSequenceParams,
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    width: usize,
    height: usize,
    weights: EnergyWeights,
    penalty: FittingPenalty,
) -> Result<f64> {
    let e_f = fitting_loss(params, src, dst, penalty)?;
    let e_b = bending_energy(params, width, height)?;
    let e_t = temporal_energy(params, width, height)?;
    Ok(weights.combine(e_f, e_b, e_t))
}

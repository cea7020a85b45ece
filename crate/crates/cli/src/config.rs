//! Pipeline configuration: JSON file plus command-line overrides.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tpswarp::temporal::{Descent, FittingTerm};
use tpswarp::{CropSpec, EnergyWeights, KernelDistance, OptimizerConfig, PyramidConfig, SamplingConfig};

/// Optimizer knobs that are not covered by the top-level weight/kernel fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    pub huber_eps: f64,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub fitting: FittingTerm,
    pub descent: Descent,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            max_iters: d.max_iters,
            huber_eps: d.huber_eps,
            grad_tol: d.grad_tol,
            initial_step: d.initial_step,
            backtrack_factor: d.backtrack_factor,
            min_step: d.min_step,
            fitting: d.fitting,
            descent: d.descent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_len: usize,
    pub crop: usize,
    pub weights: EnergyWeights,
    pub optimizer: OptimizerSettings,
    pub sampling: SamplingConfig,
    pub levels: usize,
    pub tps_distance: KernelDistance,
    pub ridge: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len: tpswarp::bank::DEFAULT_WINDOW_LEN,
            crop: CropSpec::default().side,
            weights: EnergyWeights::default(),
            optimizer: OptimizerSettings::default(),
            sampling: SamplingConfig::default(),
            levels: PyramidConfig::default().levels,
            tps_distance: KernelDistance::Euclidean,
            ridge: 0.0,
        }
    }
}

/// Values given on the command line; each one replaces the file's value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub window_len: Option<usize>,
    pub crop: Option<usize>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
    pub max_iters: Option<usize>,
    pub levels: Option<usize>,
    pub tps_distance: Option<KernelDistance>,
    pub ridge: Option<f64>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.window_len {
            self.window_len = v;
        }
        if let Some(v) = o.crop {
            self.crop = v;
        }
        if let Some(v) = o.alpha1 {
            self.weights.alpha1 = v;
        }
        if let Some(v) = o.alpha2 {
            self.weights.alpha2 = v;
        }
        if let Some(v) = o.alpha3 {
            self.weights.alpha3 = v;
        }
        if let Some(v) = o.max_iters {
            self.optimizer.max_iters = v;
        }
        if let Some(v) = o.levels {
            self.levels = v;
        }
        if let Some(v) = o.tps_distance {
            self.tps_distance = v;
        }
        if let Some(v) = o.ridge {
            self.ridge = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 3 {
            bail!("window_len must be at least 3 (the temporal term needs three frames), got {}", self.window_len);
        }
        self.crop_spec()?;
        self.pyramid()?;
        self.optimizer_config().validate()?;
        Ok(())
    }

    pub fn crop_spec(&self) -> Result<CropSpec> {
        Ok(CropSpec::new(self.crop)?)
    }

    pub fn pyramid(&self) -> Result<PyramidConfig> {
        Ok(PyramidConfig::new(self.levels)?)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            weights: self.weights,
            max_iters: o.max_iters,
            huber_eps: o.huber_eps,
            grad_tol: o.grad_tol,
            initial_step: o.initial_step,
            backtrack_factor: o.backtrack_factor,
            min_step: o.min_step,
            ridge: self.ridge,
            distance: self.tps_distance,
            fitting: o.fitting,
            descent: o.descent,
        }
    }
}

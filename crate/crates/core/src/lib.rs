//! Landmark-driven mouth video warping.
//!
//! The pipeline retrieves a window of mouth textures from a texture bank,
//! warps it onto a target landmark window with a thin-plate spline whose
//! coefficients are optimized jointly across the window (trading landmark
//! fit against spatial bending and temporal jitter), and composites the
//! result onto the target face with Laplacian pyramid blending.

pub mod bank;
pub mod composite;
pub mod energy;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod norm;
pub mod preprocess;
pub mod remap;
pub mod temporal;
pub mod tps;
pub mod types;

pub use bank::{build_bank, landmark_l1, BankEntry, TextureBank};
pub use composite::{laplacian_blend, mouth_mask, retarget, MaskImage, PyramidConfig};
pub use energy::{EnergyReport, EnergyWeights, FittingPenalty};
pub use error::{Error, Result};
pub use image::{Image, ImageSequence, ImageWindow};
pub use metrics::{lip_aperture, photometric_error, ssiou, ApertureCurve};
pub use norm::{adain, instance_norm, FeatureMap, StyleParams};
pub use remap::{remap_frame, remap_window, Border, Interpolation, SamplingConfig};
pub use temporal::{optimize, OptimizerConfig, WarpSolution};
pub use tps::{KernelDistance, TpsFrameParams, TpsSequenceParams};
pub use types::{CropSpec, LandmarkFrame, LandmarkSequence, LandmarkWindow, Point2};

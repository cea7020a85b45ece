//! Retrieve → warp → composite over a whole clip, one window at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tpswarp::bank::to_crop_local;
use tpswarp::preprocess::mouth_center;
use tpswarp::temporal::{init_naive_with, optimize_from};
use tpswarp::{
    energy::total_objective, laplacian_blend, mouth_mask, remap_frame, retarget, EnergyReport, Image,
    ImageSequence, LandmarkSequence, LandmarkWindow, MaskImage, Point2, PyramidConfig, TextureBank,
    TpsSequenceParams,
};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Independent per-frame TPS fits.
    Naive,
    /// Joint optimization over the window.
    #[default]
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub start: usize,
    pub len: usize,
    pub retrieval_index: Option<usize>,
    pub retrieval_distance: Option<f64>,
    pub init: Option<EnergyReport>,
    #[serde(rename = "final")]
    pub final_: Option<EnergyReport>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpReport {
    pub mode: Mode,
    pub window_len: usize,
    pub frames: usize,
    pub failed: usize,
    pub windows: Vec<WindowReport>,
}

#[derive(Debug, Clone)]
pub struct WarpOutput {
    pub frames: Vec<Image>,
    pub masks: Vec<Option<MaskImage>>,
    pub report: WarpReport,
}

/// Non-overlapping windows from 0; a trailing remainder gets one last window
/// aligned to the clip end.
pub fn window_starts(total: usize, len: usize) -> Vec<usize> {
    if len == 0 || total < len {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=total - len).step_by(len).collect();
    if starts.last().is_some_and(|&s| s + len < total) {
        starts.push(total - len);
    }
    starts
}

/// A window's retrieval and warp, ready to render.
#[derive(Debug, Clone)]
pub struct FittedWindow {
    pub start: usize,
    pub entry: usize,
    /// Backward map per frame: query crop pixel → retrieved crop location.
    pub params: TpsSequenceParams,
    centers: Vec<Point2>,
}

/// Per-window fits for a clip, before any pixels are touched.
#[derive(Debug, Clone)]
pub struct ClipFit {
    pub mode: Mode,
    pub window_len: usize,
    pub frames: usize,
    pub windows: Vec<WindowReport>,
    pub fits: Vec<Option<FittedWindow>>,
}

fn fit_window(
    bank: &TextureBank,
    query: &LandmarkWindow,
    start: usize,
    mode: Mode,
    cfg: &PipelineConfig,
    report: &mut WindowReport,
) -> tpswarp::Result<FittedWindow> {
    let crop = bank.crop();
    let side = crop.side;
    let mut local = Vec::with_capacity(query.len());
    let mut centers = Vec::with_capacity(query.len());
    for (t, f) in query.frames().iter().enumerate() {
        centers.push(mouth_center(f).map_err(|e| e.in_frame(t))?);
        local.push(to_crop_local(f, crop)?.0);
    }
    let local = LandmarkWindow::new(local, query.fps)?;

    let (index, entry, distance) = bank.retrieve(&local)?;
    report.retrieval_index = Some(index);
    report.retrieval_distance = Some(distance);

    let opt = cfg.optimizer_config();
    let init = init_naive_with(&local, &entry.landmarks, opt.ridge, opt.distance)?;
    let params = match mode {
        Mode::Naive => {
            let energies = total_objective(&init, &local, &entry.landmarks, side, side, opt.weights)?;
            report.init = Some(energies);
            report.final_ = Some(energies);
            report.converged = true;
            init
        }
        Mode::Temporal => {
            let sol = optimize_from(init, &local, &entry.landmarks, side, side, &opt)?;
            report.init = Some(sol.init_report);
            report.final_ = Some(sol.final_report);
            report.iterations = sol.iterations;
            report.converged = sol.converged;
            sol.params
        }
    };
    Ok(FittedWindow {
        start,
        entry: index,
        params,
        centers,
    })
}

fn render_window(
    bank: &TextureBank,
    fit: &FittedWindow,
    query: &LandmarkSequence,
    faces: &[Image],
    cfg: &PipelineConfig,
) -> tpswarp::Result<(Vec<Image>, Vec<MaskImage>)> {
    let entry = &bank.entries()[fit.entry];
    let pyramid = PyramidConfig { levels: cfg.levels };
    let mut frames = Vec::with_capacity(faces.len());
    let mut masks = Vec::with_capacity(faces.len());
    for (t, face) in faces.iter().enumerate() {
        let step = || -> tpswarp::Result<(Image, MaskImage)> {
            let warped = remap_frame(entry.images.frame(t), &fit.params.frames[t], cfg.sampling)?;
            let fg = retarget(face, &warped, fit.centers[t])?;
            let mask = mouth_mask(query.frame(fit.start + t), face.width(), face.height())?;
            Ok((laplacian_blend(&fg, face, &mask, pyramid)?, mask))
        };
        let (img, mask) = step().map_err(|e| e.in_frame(t))?;
        frames.push(img);
        masks.push(mask);
    }
    Ok((frames, masks))
}

fn check_clip(bank: &TextureBank, query: &LandmarkSequence) -> anyhow::Result<usize> {
    let len = bank.window_len();
    anyhow::ensure!(len >= 3, "bank windows span {len} frames; at least 3 are needed");
    anyhow::ensure!(
        query.len() >= len,
        "clip has {} frames, shorter than the bank window of {len}",
        query.len()
    );
    Ok(len)
}

/// Retrieves and fits every window of `query`; failures are recorded per
/// window.
pub fn fit_clip(bank: &TextureBank, query: &LandmarkSequence, mode: Mode, cfg: &PipelineConfig) -> anyhow::Result<ClipFit> {
    let len = check_clip(bank, query)?;
    let (windows, fits) = window_starts(query.len(), len)
        .par_iter()
        .enumerate()
        .map(|(w, &start)| {
            let mut report = WindowReport {
                window: w,
                start,
                len,
                retrieval_index: None,
                retrieval_distance: None,
                init: None,
                final_: None,
                iterations: 0,
                converged: false,
                error: None,
            };
            let fit = query
                .slice(start, len)
                .and_then(|q| fit_window(bank, &q, start, mode, cfg, &mut report));
            match fit {
                Ok(f) => (report, Some(f)),
                Err(e) => {
                    report.error = Some(e.to_string());
                    (report, None)
                }
            }
        })
        .unzip();
    Ok(ClipFit {
        mode,
        window_len: len,
        frames: query.len(),
        windows,
        fits,
    })
}

/// Warps, retargets and blends every fitted window. Windows that failed to
/// fit or render keep the original faces.
pub fn render_clip(
    bank: &TextureBank,
    fit: ClipFit,
    query: &LandmarkSequence,
    faces: &ImageSequence,
    cfg: &PipelineConfig,
) -> anyhow::Result<WarpOutput> {
    anyhow::ensure!(
        query.len() == faces.len() && faces.len() == fit.frames,
        "{} landmark frames but {} face frames",
        query.len(),
        faces.len()
    );
    let len = fit.window_len;
    let rendered: Vec<Result<(Vec<Image>, Vec<MaskImage>), String>> = fit
        .windows
        .par_iter()
        .zip(&fit.fits)
        .map(|(w, f)| {
            let faces = &faces.frames()[w.start..w.start + len];
            match f {
                Some(f) => render_window(bank, f, query, faces, cfg).map_err(|e| e.to_string()),
                None => Err(String::new()),
            }
        })
        .collect();

    let mut frames: Vec<Option<Image>> = vec![None; query.len()];
    let mut masks: Vec<Option<MaskImage>> = vec![None; query.len()];
    let mut windows = fit.windows;
    for (w, r) in windows.iter_mut().zip(rendered) {
        let (imgs, ms) = match r {
            Ok(v) => v,
            Err(e) => {
                if w.error.is_none() {
                    w.error = Some(e);
                }
                (faces.frames()[w.start..w.start + len].to_vec(), Vec::new())
            }
        };
        for (t, img) in imgs.into_iter().enumerate() {
            // The end-aligned last window only fills frames not yet covered.
            if frames[w.start + t].is_none() {
                frames[w.start + t] = Some(img);
                masks[w.start + t] = ms.get(t).cloned();
            }
        }
    }
    let failed = windows.iter().filter(|w| w.error.is_some()).count();
    Ok(WarpOutput {
        frames: frames.into_iter().map(|f| f.expect("windows cover every frame")).collect(),
        masks,
        report: WarpReport {
            mode: fit.mode,
            window_len: len,
            frames: query.len(),
            failed,
            windows,
        },
    })
}

/// Runs every window of `query` against `bank`: [`fit_clip`] then
/// [`render_clip`].
pub fn warp_clip(
    bank: &TextureBank,
    query: &LandmarkSequence,
    faces: &ImageSequence,
    mode: Mode,
    cfg: &PipelineConfig,
) -> anyhow::Result<WarpOutput> {
    anyhow::ensure!(
        query.len() == faces.len(),
        "{} landmark frames but {} face frames",
        query.len(),
        faces.len()
    );
    let fit = fit_clip(bank, query, mode, cfg)?;
    render_clip(bank, fit, query, faces, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_layout() {
        assert_eq!(window_starts(12, 6), vec![0, 6]);
        assert_eq!(window_starts(14, 6), vec![0, 6, 8]);
        assert_eq!(window_starts(6, 6), vec![0]);
        assert!(window_starts(5, 6).is_empty());
        for total in 6..40 {
            let s = window_starts(total, 6);
            let mut covered = vec![false; total];
            for &k in &s {
                covered[k..k + 6].iter_mut().for_each(|c| *c = true);
            }
            assert!(covered.iter().all(|&c| c));
            assert_eq!(*s.last().unwrap() + 6, total);
        }
    }
}

//! Per-frame thin-plate-spline interpolation.
//!
//! Each frame's warp is a pair of scalar splines (one per output coordinate)
//! sharing a kernel matrix:
//!
//! ```text
//! f(q) = a1 + ax * q.x + ay * q.y + sum_i w_i * U(|c_i - q|),   U(r) = r^2 ln r
//! ```
//!
//! with the radial basis anchored at the source landmarks `c_i`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LandmarkFrame, LandmarkWindow, Point2};

/// Distance fed to the radial kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelDistance {
    /// Classical biharmonic thin-plate spline.
    #[default]
    Euclidean,
    /// Manhattan distance inside `U`.
    L1,
}

impl KernelDistance {
    #[inline]
    pub fn distance(self, a: Point2, b: Point2) -> f64 {
        let d = a - b;
        match self {
            KernelDistance::Euclidean => d.norm(),
            KernelDistance::L1 => d.l1_norm(),
        }
    }

    fn is_euclidean(&self) -> bool {
        *self == KernelDistance::Euclidean
    }
}

/// `U(r) = r^2 ln r`, extended continuously by `U(0) = 0`.
pub fn kernel_u(r: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return Err(Error::Domain(format!("kernel radius must be >= 0, got {r}")));
    }
    Ok(kernel_u_unchecked(r))
}

#[inline]
pub(crate) fn kernel_u_unchecked(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Coefficients of one frame's warp.
///
/// Index `[0]` of every pair drives the output `x`, index `[1]` the output `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsFrameParams {
    pub a1: [f64; 2],
    pub ax: [f64; 2],
    pub ay: [f64; 2],
    pub w: Vec<[f64; 2]>,
    pub centers: Vec<Point2>,
    #[serde(default, skip_serializing_if = "KernelDistance::is_euclidean")]
    pub distance: KernelDistance,
}

impl TpsFrameParams {
    /// Identity warp anchored at `centers`.
    pub fn identity(centers: Vec<Point2>) -> Self {
        let p = centers.len();
        Self {
            a1: [0.0, 0.0],
            ax: [1.0, 0.0],
            ay: [0.0, 1.0],
            w: vec![[0.0; 2]; p],
            centers,
            distance: KernelDistance::Euclidean,
        }
    }

    /// Number of basis centers `P`.
    pub fn points(&self) -> usize {
        self.centers.len()
    }

    /// Coefficients of one output coordinate: `[a1, ax, ay, w_0, .., w_{P-1}]`.
    pub fn coefficients(&self, coord: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points() + 3);
        out.extend([self.a1[coord], self.ax[coord], self.ay[coord]]);
        out.extend(self.w.iter().map(|w| w[coord]));
        out
    }

    pub fn set_coefficients(&mut self, coord: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.points() + 3);
        self.a1[coord] = values[0];
        self.ax[coord] = values[1];
        self.ay[coord] = values[2];
        for (w, &v) in self.w.iter_mut().zip(&values[3..]) {
            w[coord] = v;
        }
    }

    /// Largest absolute violation of the side conditions
    /// `sum w = sum w x = sum w y = 0` over both coordinates.
    pub fn side_condition_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..2 {
            let (mut s0, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for (w, p) in self.w.iter().zip(&self.centers) {
                s0 += w[c];
                sx += w[c] * p.x;
                sy += w[c] * p.y;
            }
            worst = worst.max(s0.abs()).max(sx.abs()).max(sy.abs());
        }
        worst
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.w
            .iter()
            .flat_map(|w| w.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Per-frame warp coefficients for a whole window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsSequenceParams {
    pub frames: Vec<TpsFrameParams>,
}

impl TpsSequenceParams {
    pub fn new(frames: Vec<TpsFrameParams>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::invalid("parameter sequence needs at least one frame"));
        };
        let p = first.points();
        if let Some(t) = frames
            .iter()
            .position(|f| f.points() != p || f.w.len() != p)
        {
            return Err(Error::invalid(format!(
                "frame {t} has a different point count than frame 0"
            )));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn points(&self) -> usize {
        self.frames[0].points()
    }

    /// Coefficients per frame and output coordinate (`P + 3`).
    pub fn block_len(&self) -> usize {
        self.points() + 3
    }

    /// Flattened coefficients: frame-major, then coordinate, then
    /// `[a1, ax, ay, w_0, .., w_{P-1}]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 2 * self.block_len());
        for f in &self.frames {
            for c in 0..2 {
                out.extend(f.coefficients(c));
            }
        }
        out
    }

    /// Overwrites all coefficients from the layout produced by [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        let k = self.block_len();
        assert_eq!(flat.len(), self.len() * 2 * k, "flat parameter length");
        for (t, f) in self.frames.iter_mut().enumerate() {
            for c in 0..2 {
                let start = (2 * t + c) * k;
                f.set_coefficients(c, &flat[start..start + k]);
            }
        }
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        out.set_flat(flat);
        out
    }
}

fn check_non_degenerate(src: &LandmarkFrame, ridge: f64) -> Result<()> {
    let n = src.len() as f64;
    let (mx, my) = src
        .points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x / n, b + p.y / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &src.points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    // Smallest eigenvalue of the 2x2 scatter matrix, relative to the largest.
    let disc = ((sxx - syy) * (sxx - syy) / 4.0 + sxy * sxy).sqrt();
    let lmax = tr / 2.0 + disc;
    let lmin = if lmax > 0.0 { det / lmax } else { 0.0 };
    if !(lmax > 0.0) || lmin <= lmax * 1e-12 {
        return Err(Error::Singular("source landmarks are collinear".into()));
    }
    if ridge == 0.0 {
        let scale = lmax.sqrt().max(1.0);
        for (i, a) in src.points.iter().enumerate() {
            for b in &src.points[i + 1..] {
                if (*a - *b).norm() <= 1e-12 * scale {
                    return Err(Error::Singular(format!(
                        "duplicated source landmark at ({}, {})",
                        a.x, a.y
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Fits the warp carrying every `src` landmark onto its `dst` partner.
///
/// With `ridge = 0` the fit interpolates exactly; a positive ridge is added to
/// the kernel diagonal and relaxes the fit in exchange for conditioning.
pub fn solve_frame(src: &LandmarkFrame, dst: &LandmarkFrame, ridge: f64) -> Result<TpsFrameParams> {
    solve_frame_with(src, dst, ridge, KernelDistance::Euclidean)
}

pub fn solve_frame_with(
    src: &LandmarkFrame,
    dst: &LandmarkFrame,
    ridge: f64,
    distance: KernelDistance,
) -> Result<TpsFrameParams> {
    let p = src.len();
    if dst.len() != p {
        return Err(Error::invalid(format!(
            "source has {p} landmarks, destination {}",
            dst.len()
        )));
    }
    if p < 3 {
        return Err(Error::invalid(format!("TPS needs at least 3 landmarks, got {p}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Domain(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    check_non_degenerate(src, ridge)?;

    let n = p + 3;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..p {
        for j in 0..p {
            let u = kernel_u_unchecked(distance.distance(src.points[i], src.points[j]));
            a[(i, j)] = u;
        }
        a[(i, i)] += ridge;
        let row = [1.0, src.points[i].x, src.points[i].y];
        for (k, v) in row.into_iter().enumerate() {
            a[(i, p + k)] = v;
            a[(p + k, i)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    for (i, q) in dst.points.iter().enumerate() {
        rhs[(i, 0)] = q.x;
        rhs[(i, 1)] = q.y;
    }

    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("TPS system has no unique solution".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("TPS solve produced non-finite coefficients".into()));
    }

    Ok(TpsFrameParams {
        a1: [sol[(p, 0)], sol[(p, 1)]],
        ax: [sol[(p + 1, 0)], sol[(p + 1, 1)]],
        ay: [sol[(p + 2, 0)], sol[(p + 2, 1)]],
        w: (0..p).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect(),
        centers: src.points.clone(),
        distance,
    })
}

/// Applies [`solve_frame_with`] independently to every frame of a window.
pub fn solve_window(
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    ridge: f64,
    distance: KernelDistance,
) -> Result<TpsSequenceParams> {
    src.require_same_shape(dst, "TPS window")?;
    let frames = src
        .frames()
        .iter()
        .zip(dst.frames())
        .enumerate()
        .map(|(t, (s, d))| solve_frame_with(s, d, ridge, distance).map_err(|e| e.in_frame(t)))
        .collect::<Result<Vec<_>>>()?;
    TpsSequenceParams::new(frames)
}

/// Evaluates the warp at `q`.
pub fn eval_point(params: &TpsFrameParams, q: Point2) -> Point2 {
    let mut x = params.a1[0] + params.ax[0] * q.x + params.ay[0] * q.y;
    let mut y = params.a1[1] + params.ax[1] * q.x + params.ay[1] * q.y;
    for (w, c) in params.w.iter().zip(&params.centers) {
        let u = kernel_u_unchecked(params.distance.distance(*c, q));
        x += w[0] * u;
        y += w[1] * u;
    }
    Point2::new(x, y)
}

/// Fills `out` (row-major `width × height`) with `U(d(c, q))` over the grid.
pub(crate) fn grid_kernel(distance: KernelDistance, c: Point2, width: usize, height: usize, out: &mut [f64]) {
    match distance {
        KernelDistance::Euclidean => {
            // U(r) = r^2 ln r = r2 ln(r2) / 2, without the square root.
            let dx2: Vec<f64> = (0..width).map(|x| (x as f64 - c.x).powi(2)).collect();
            for y in 0..height {
                let dy2 = (y as f64 - c.y).powi(2);
                let row = &mut out[y * width..(y + 1) * width];
                for (v, d) in row.iter_mut().zip(&dx2) {
                    let r2 = d + dy2;
                    *v = if r2 == 0.0 { 0.0 } else { 0.5 * r2 * r2.ln() };
                }
            }
        }
        KernelDistance::L1 => {
            for y in 0..height {
                for x in 0..width {
                    let q = Point2::new(x as f64, y as f64);
                    out[y * width + x] = kernel_u_unchecked(distance.distance(c, q));
                }
            }
        }
    }
}

/// A `height x width` grid of warped coordinates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Point2>,
}

impl DenseField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Point2 {
        self.values[y * self.width + x]
    }
}

/// Evaluates the warp at every integer pixel `(x, y)` of a `width x height` grid.
pub fn warp_field(params: &TpsFrameParams, width: usize, height: usize) -> Result<DenseField> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "warp field needs a non-empty grid, got {width}x{height}"
        )));
    }
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            values.push(Point2::new(
                params.a1[0] + params.ax[0] * xf + params.ay[0] * yf,
                params.a1[1] + params.ax[1] * xf + params.ay[1] * yf,
            ));
        }
    }
    let mut u = vec![0.0; width * height];
    for (w, c) in params.w.iter().zip(&params.centers) {
        grid_kernel(params.distance, *c, width, height, &mut u);
        for (v, k) in values.iter_mut().zip(&u) {
            v.x += w[0] * k;
            v.y += w[1] * k;
        }
    }
    Ok(DenseField {
        width,
        height,
        values,
    })
}

//! Window-level warp optimization.
//!
//! Starting from independent per-frame TPS fits, all frames' coefficients are
//! optimized jointly against
//!
//! ```text
//! L = alpha1 * E_f + alpha2 * E_b + alpha3 * E_t
//! ```
//!
//! The warp field is linear in the coefficients, so `E_b` and `E_t` are exact
//! quadratic forms. [`WarpProblem`] assembles those forms once per window from
//! Gram matrices of the basis functions sampled on the pixel grid; the fitting
//! term is Huber-smoothed for differentiability. Descent uses a backtracking
//! (Armijo) line search, by default along a Newton-preconditioned direction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::energy::{total_objective, EnergyReport, EnergyWeights, FittingPenalty};
use crate::error::{Error, Result};
use crate::tps::{grid_kernel, kernel_u_unchecked, solve_window, KernelDistance, TpsSequenceParams};
use crate::types::{LandmarkWindow, Point2};

const ARMIJO_C1: f64 = 1e-4;

/// Iterations between Newton model rebuilds under the Huber penalty.
const MODEL_REFRESH: usize = 4;

/// Fitting penalty used while optimizing. Reports always use exact L1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittingTerm {
    #[default]
    Huber,
    /// Squared residuals; the whole objective becomes quadratic and has a
    /// closed-form minimizer, which makes it useful for verification.
    SquaredL2,
}

/// How the descent direction is formed from the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descent {
    /// `-H^{-1} g` with `H` the (damped) Hessian of the smoothed objective.
    #[default]
    Newton,
    /// Plain `-g`.
    Steepest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub weights: EnergyWeights,
    pub max_iters: usize,
    pub huber_eps: f64,
    pub grad_tol: f64,
    /// First trial step for steepest descent; Newton steps start at 1.
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub ridge: f64,
    pub distance: KernelDistance,
    pub fitting: FittingTerm,
    pub descent: Descent,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            max_iters: 200,
            huber_eps: 0.1,
            grad_tol: 1e-6,
            initial_step: 1e-2,
            backtrack_factor: 0.5,
            min_step: 1e-12,
            ridge: 0.0,
            distance: KernelDistance::Euclidean,
            fitting: FittingTerm::Huber,
            descent: Descent::Newton,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [
            ("huber_eps", self.huber_eps),
            ("grad_tol", self.grad_tol),
            ("initial_step", self.initial_step),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }

    pub fn penalty(&self) -> FittingPenalty {
        match self.fitting {
            FittingTerm::Huber => FittingPenalty::Huber { eps: self.huber_eps },
            FittingTerm::SquaredL2 => FittingPenalty::SquaredL2,
        }
    }
}

/// Gradient with the coefficient layout of [`TpsSequenceParams::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradient {
    values: Vec<f64>,
    points: usize,
}

impl ParameterGradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.len() / (2 * (self.points + 3))
    }

    fn at(&self, t: usize, coord: usize, j: usize) -> f64 {
        self.values[(2 * t + coord) * (self.points + 3) + j]
    }

    pub fn a1(&self, t: usize) -> [f64; 2] {
        [self.at(t, 0, 0), self.at(t, 1, 0)]
    }

    pub fn ax(&self, t: usize) -> [f64; 2] {
        [self.at(t, 0, 1), self.at(t, 1, 1)]
    }

    pub fn ay(&self, t: usize) -> [f64; 2] {
        [self.at(t, 0, 2), self.at(t, 1, 2)]
    }

    pub fn w(&self, t: usize, i: usize) -> [f64; 2] {
        [self.at(t, 0, 3 + i), self.at(t, 1, 3 + i)]
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// The window objective in coefficient space.
///
/// Per output coordinate `c` with stacked coefficients `theta_c`:
///
/// ```text
/// L_c = alpha1 / (P T) * sum rho(phi_{t,i} . theta_{t,c} - v_{t,i,c})
///     + theta_c^T (alpha2 Q_bend + alpha3 Q_temp) theta_c
/// ```
///
/// where `phi_{t,i}` is the basis row evaluated at source landmark `i` of
/// frame `t`. The two coordinates decouple.
#[derive(Debug, Clone)]
pub struct WarpProblem {
    frames: usize,
    points: usize,
    landmark_basis: Vec<DMatrix<f64>>,
    targets: Vec<Vec<Point2>>,
    q_bend: DMatrix<f64>,
    q_temp: DMatrix<f64>,
    quad: DMatrix<f64>,
    fit_scale: f64,
    weights: EnergyWeights,
}

/// Curvature used to build the Newton model. For Huber this is the IRLS
/// weight `rho'(r) / r`, whose quadratic majorizes the penalty, so the model
/// also constrains residuals sitting on the linear branch.
fn model_curvature(penalty: FittingPenalty, r: f64) -> f64 {
    match penalty {
        FittingPenalty::Huber { eps } => 1.0 / r.abs().max(eps),
        other => other.curvature(r),
    }
}

fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let g = a.transpose() * a;
    // Exact symmetry keeps the Cholesky factorizations happy.
    (&g + g.transpose()) * 0.5
}

impl WarpProblem {
    /// Assembles the objective for coefficient sequences whose radial bases are
    /// anchored at `centers[t]`, fitting `src` landmarks onto `dst`.
    pub fn new(
        centers: &[Vec<Point2>],
        distance: KernelDistance,
        src: &LandmarkWindow,
        dst: &LandmarkWindow,
        width: usize,
        height: usize,
        weights: EnergyWeights,
    ) -> Result<Self> {
        weights.validate()?;
        src.require_same_shape(dst, "warp windows")?;
        let t_len = src.len();
        let p = src.points_per_frame();
        if t_len < 3 {
            return Err(Error::InsufficientFrames {
                needed: 3,
                found: t_len,
            });
        }
        if centers.len() != t_len || centers.iter().any(|c| c.len() != p) {
            return Err(Error::invalid("basis centers do not match the window shape"));
        }
        if width < 3 || height < 3 {
            return Err(Error::invalid(format!(
                "energy grid must be at least 3x3, got {width}x{height}"
            )));
        }
        let k = p + 3;
        let n = width * height;
        let ni = (width - 2) * (height - 2);

        let landmark_basis = (0..t_len)
            .map(|t| {
                DMatrix::from_fn(p, k, |i, j| {
                    let q = src.frame(t).points[i];
                    match j {
                        0 => 1.0,
                        1 => q.x,
                        2 => q.y,
                        _ => kernel_u_unchecked(distance.distance(centers[t][j - 3], q)),
                    }
                })
            })
            .collect();
        let targets = dst.frames().iter().map(|f| f.points.clone()).collect();

        // Basis functions sampled on the whole grid, all frames side by side.
        let mut phi = DMatrix::<f64>::zeros(n, t_len * k);
        let mut q_bend = DMatrix::<f64>::zeros(t_len * k, t_len * k);
        let mut stencils = DMatrix::<f64>::zeros(3 * ni, p);
        for t in 0..t_len {
            let base = t * k;
            let data = phi.as_mut_slice();
            data[base * n..(base + 1) * n].fill(1.0);
            for y in 0..height {
                for x in 0..width {
                    data[(base + 1) * n + y * width + x] = x as f64;
                    data[(base + 2) * n + y * width + x] = y as f64;
                }
            }
            for (i, c) in centers[t].iter().enumerate() {
                let col = base + 3 + i;
                grid_kernel(distance, *c, width, height, &mut data[col * n..(col + 1) * n]);
            }

            // Second differences of the kernel columns; affine columns have none.
            let data = phi.as_slice();
            let out = stencils.as_mut_slice();
            for i in 0..p {
                let col = base + 3 + i;
                let u = &data[col * n..(col + 1) * n];
                let out = &mut out[i * 3 * ni..(i + 1) * 3 * ni];
                let mut r = 0;
                for y in 1..height - 1 {
                    let (up, mid, down) = (&u[(y - 1) * width..y * width], &u[y * width..(y + 1) * width], &u[(y + 1) * width..(y + 2) * width]);
                    for x in 1..width - 1 {
                        let c = mid[x];
                        out[r] = mid[x + 1] - 2.0 * c + mid[x - 1];
                        out[ni + r] = std::f64::consts::SQRT_2 * 0.25 * (down[x + 1] - up[x + 1] - down[x - 1] + up[x - 1]);
                        out[2 * ni + r] = down[x] - 2.0 * c + up[x];
                        r += 1;
                    }
                }
            }
            let b = gram(&stencils);
            let scale = 1.0 / (ni * t_len) as f64;
            q_bend
                .view_mut((base + 3, base + 3), (p, p))
                .copy_from(&(b * scale));
        }

        // E_t: sum over interior frames of |phi_{t-1} th_{t-1} - 2 phi_t th_t + phi_{t+1} th_{t+1}|^2.
        // Only frame pairs at most two apart interact.
        let phi_t: Vec<DMatrix<f64>> = (0..t_len).map(|t| phi.columns(t * k, k).transpose()).collect();
        let mut q_temp = DMatrix::<f64>::zeros(t_len * k, t_len * k);
        let scale = 1.0 / (n * (t_len - 2)) as f64;
        let coef = [1.0, -2.0, 1.0];
        for a in 0..t_len {
            for b in a..t_len.min(a + 3) {
                let mut g = &phi_t[a] * phi_t[b].transpose();
                if a == b {
                    g = (&g + g.transpose()) * 0.5;
                }
                // Sum of coef products over interior frames t with a, b in t-1..=t+1.
                let w: f64 = (1..t_len - 1)
                    .filter(|&t| a + 1 >= t && a <= t + 1 && b + 1 >= t && b <= t + 1)
                    .map(|t| coef[a + 1 - t] * coef[b + 1 - t])
                    .sum();
                if w == 0.0 {
                    continue;
                }
                let block = g * (w * scale);
                if a != b {
                    q_temp.view_mut((b * k, a * k), (k, k)).copy_from(&block.transpose());
                }
                q_temp.view_mut((a * k, b * k), (k, k)).copy_from(&block);
            }
        }
        drop(phi);

        let quad = &q_bend * weights.alpha2 + &q_temp * weights.alpha3;
        Ok(Self {
            frames: t_len,
            points: p,
            landmark_basis,
            targets,
            q_bend,
            q_temp,
            quad,
            fit_scale: weights.alpha1 / (t_len * p) as f64,
            weights,
        })
    }

    /// Problem whose bases are anchored at the centers stored in `params`.
    pub fn for_params(
        params: &TpsSequenceParams,
        src: &LandmarkWindow,
        dst: &LandmarkWindow,
        width: usize,
        height: usize,
        weights: EnergyWeights,
    ) -> Result<Self> {
        if params.len() != src.len() || params.points() != src.points_per_frame() {
            return Err(Error::invalid("parameters do not match the window shape"));
        }
        let distance = params.frames[0].distance;
        if params.frames.iter().any(|f| f.distance != distance) {
            return Err(Error::invalid("mixed kernel distances in one sequence"));
        }
        let centers: Vec<_> = params.frames.iter().map(|f| f.centers.clone()).collect();
        Self::new(&centers, distance, src, dst, width, height, weights)
    }

    pub fn dim(&self) -> usize {
        2 * self.frames * self.block()
    }

    fn block(&self) -> usize {
        self.points + 3
    }

    /// Splits the flat layout into per-coordinate stacked vectors.
    fn split(&self, flat: &[f64]) -> [DVector<f64>; 2] {
        let k = self.block();
        std::array::from_fn(|c| {
            DVector::from_fn(self.frames * k, |r, _| {
                let (t, j) = (r / k, r % k);
                flat[(2 * t + c) * k + j]
            })
        })
    }

    fn merge(&self, parts: &[DVector<f64>; 2]) -> Vec<f64> {
        let k = self.block();
        let mut flat = vec![0.0; self.dim()];
        for (c, v) in parts.iter().enumerate() {
            for r in 0..self.frames * k {
                let (t, j) = (r / k, r % k);
                flat[(2 * t + c) * k + j] = v[r];
            }
        }
        flat
    }

    fn residuals(&self, theta: &DVector<f64>, coord: usize) -> Vec<f64> {
        let k = self.block();
        let mut out = Vec::with_capacity(self.frames * self.points);
        for t in 0..self.frames {
            let th = theta.rows(t * k, k);
            let pred = &self.landmark_basis[t] * th;
            for i in 0..self.points {
                let v = self.targets[t][i];
                out.push(pred[i] - if coord == 0 { v.x } else { v.y });
            }
        }
        out
    }

    /// Objective value for flat coefficients under `penalty`.
    pub fn objective(&self, flat: &[f64], penalty: FittingPenalty) -> f64 {
        self.split(flat)
            .iter()
            .enumerate()
            .map(|(c, th)| self.objective_coord(th, c, penalty))
            .sum()
    }

    fn objective_coord(&self, theta: &DVector<f64>, coord: usize, penalty: FittingPenalty) -> f64 {
        let fit: f64 = self
            .residuals(theta, coord)
            .into_iter()
            .map(|r| penalty.value(r))
            .sum();
        self.fit_scale * fit + theta.dot(&(&self.quad * theta))
    }

    /// Energies via the quadratic forms, exact L1 fitting term.
    pub fn report(&self, flat: &[f64]) -> EnergyReport {
        let parts = self.split(flat);
        let mut fit = 0.0;
        let mut e_b = 0.0;
        let mut e_t = 0.0;
        for (c, th) in parts.iter().enumerate() {
            fit += self.residuals(th, c).iter().map(|r| r.abs()).sum::<f64>();
            e_b += th.dot(&(&self.q_bend * th));
            e_t += th.dot(&(&self.q_temp * th));
        }
        let e_f = fit / (self.frames * self.points) as f64;
        EnergyReport {
            e_f,
            e_b,
            e_t,
            l_tw: self.weights.combine(e_f, e_b, e_t),
        }
    }

    fn gradient_coord(&self, theta: &DVector<f64>, coord: usize, penalty: FittingPenalty) -> DVector<f64> {
        let k = self.block();
        let mut g = &self.quad * theta * 2.0;
        let res = self.residuals(theta, coord);
        for t in 0..self.frames {
            let d = DVector::from_fn(self.points, |i, _| {
                self.fit_scale * penalty.derivative(res[t * self.points + i])
            });
            let mut gt = g.rows_mut(t * k, k);
            gt += self.landmark_basis[t].tr_mul(&d);
        }
        g
    }

    /// Analytic gradient in the flat layout.
    pub fn gradient(&self, flat: &[f64], penalty: FittingPenalty) -> Vec<f64> {
        let parts = self.split(flat);
        let g = [
            self.gradient_coord(&parts[0], 0, penalty),
            self.gradient_coord(&parts[1], 1, penalty),
        ];
        self.merge(&g)
    }

    fn hessian_coord(&self, theta: &DVector<f64>, coord: usize, penalty: FittingPenalty) -> DMatrix<f64> {
        let k = self.block();
        let mut h = &self.quad * 2.0;
        let res = self.residuals(theta, coord);
        for t in 0..self.frames {
            let basis = &self.landmark_basis[t];
            let curv = DVector::from_fn(self.points, |i, _| {
                self.fit_scale * model_curvature(penalty, res[t * self.points + i])
            });
            if curv.iter().all(|&c| c == 0.0) {
                continue;
            }
            let weighted = DMatrix::from_fn(self.points, k, |i, j| curv[i] * basis[(i, j)]);
            let mut block = h.view_mut((t * k, t * k), (k, k));
            block += basis.tr_mul(&weighted);
        }
        h
    }

    /// Cholesky factors of the per-coordinate Newton model at `flat`, with
    /// Levenberg damping raised until the factorization succeeds.
    fn newton_model(&self, flat: &[f64], penalty: FittingPenalty) -> Option<[Cholesky<f64, Dyn>; 2]> {
        let parts = self.split(flat);
        let factor = |c: usize| {
            let h = self.hessian_coord(&parts[c], c, penalty);
            let diag_max = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let mut damping = diag_max * 1e-13;
            for _ in 0..12 {
                let mut hd = h.clone();
                for i in 0..hd.nrows() {
                    hd[(i, i)] += damping;
                }
                if let Some(ch) = hd.cholesky() {
                    return Some(ch);
                }
                damping *= 100.0;
            }
            None
        };
        Some([factor(0)?, factor(1)?])
    }

    fn newton_direction(&self, model: &[Cholesky<f64, Dyn>; 2], grad: &[f64]) -> Vec<f64> {
        let g = self.split(grad);
        self.merge(&[-model[0].solve(&g[0]), -model[1].solve(&g[1])])
    }
}

/// Independent per-frame TPS fits; the optimizer's starting point.
pub fn init_naive(src: &LandmarkWindow, dst: &LandmarkWindow, ridge: f64) -> Result<TpsSequenceParams> {
    init_naive_with(src, dst, ridge, KernelDistance::Euclidean)
}

pub fn init_naive_with(
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    ridge: f64,
    distance: KernelDistance,
) -> Result<TpsSequenceParams> {
    solve_window(src, dst, ridge, distance)
}

/// Analytic gradient of the smoothed objective at `params`.
pub fn objective_gradient(
    params: &TpsSequenceParams,
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    width: usize,
    height: usize,
    config: &OptimizerConfig,
) -> Result<ParameterGradient> {
    config.validate()?;
    let problem = WarpProblem::for_params(params, src, dst, width, height, config.weights)?;
    Ok(ParameterGradient {
        values: problem.gradient(&params.to_flat(), config.penalty()),
        points: params.points(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarpSolution {
    pub params: TpsSequenceParams,
    pub init_report: EnergyReport,
    pub final_report: EnergyReport,
    pub iterations: usize,
    pub converged: bool,
    /// Smoothed objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Fits the window naively, then minimizes the joint objective.
pub fn optimize(
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    width: usize,
    height: usize,
    config: &OptimizerConfig,
) -> Result<WarpSolution> {
    config.validate()?;
    if src.len() < 3 {
        return Err(Error::InsufficientFrames {
            needed: 3,
            found: src.len(),
        });
    }
    let init = init_naive_with(src, dst, config.ridge, config.distance)?;
    optimize_from(init, src, dst, width, height, config)
}

/// Minimizes the joint objective starting from `init`.
pub fn optimize_from(
    init: TpsSequenceParams,
    src: &LandmarkWindow,
    dst: &LandmarkWindow,
    width: usize,
    height: usize,
    config: &OptimizerConfig,
) -> Result<WarpSolution> {
    config.validate()?;
    let problem = WarpProblem::for_params(&init, src, dst, width, height, config.weights)?;
    let penalty = config.penalty();
    let init_report = total_objective(&init, src, dst, width, height, config.weights)?;

    let start = init.to_flat();
    let mut x = start.clone();
    let mut fx = problem.objective(&x, penalty);
    if !fx.is_finite() {
        return Err(Error::NumericalFailure { iteration: 0 });
    }
    let mut history = vec![fx];
    let mut converged = false;
    let mut iterations = 0;
    let mut step = match config.descent {
        Descent::Newton => 1.0,
        Descent::Steepest => config.initial_step,
    };

    // Iterates accepted on the smoothed objective, tracked on the exact one.
    let exact = |v: &[f64]| problem.report(v).l_tw;
    let exact_start = exact(&start);
    let mut best = (exact_start, start.clone());

    let mut model: Option<[Cholesky<f64, Dyn>; 2]> = None;
    let mut model_age = 0;

    for iter in 0..config.max_iters {
        let g = problem.gradient(&x, penalty);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { iteration: iter });
        }
        let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_inf <= config.grad_tol {
            converged = true;
            break;
        }

        let mut d = match config.descent {
            Descent::Newton => {
                // The squared-L2 model never changes; Huber's is rebuilt every few steps.
                let stale = config.fitting == FittingTerm::Huber && model_age >= MODEL_REFRESH;
                if model.is_none() || stale {
                    model = problem.newton_model(&x, penalty);
                    model_age = 0;
                }
                model_age += 1;
                match &model {
                    Some(m) => problem.newton_direction(m, &g),
                    None => g.iter().map(|v| -v).collect(),
                }
            }
            Descent::Steepest => g.iter().map(|v| -v).collect(),
        };
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // Predicted decrease at roundoff level: nothing left to gain.
        if -slope <= 1e-13 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }

        let mut s = step;
        let accepted = loop {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            let fc = problem.objective(&cand, penalty);
            if fc.is_finite() && fc <= fx + ARMIJO_C1 * s * slope {
                break Some((cand, fc));
            }
            s *= config.backtrack_factor;
            if s < config.min_step {
                break None;
            }
        };
        let Some((cand, fc)) = accepted else {
            break;
        };
        x = cand;
        fx = fc;
        iterations += 1;
        history.push(fx);
        step = match config.descent {
            Descent::Newton => 1.0,
            Descent::Steepest => s / config.backtrack_factor,
        };

        if config.fitting == FittingTerm::Huber {
            let e = exact(&x);
            if e < best.0 {
                best = (e, x.clone());
            }
        }
    }

    // The smoothed objective only bounds the exact one; never hand back an
    // iterate whose exact objective is worse than where we started.
    if config.fitting == FittingTerm::Huber {
        let margin = 1e-10 * (1.0 + exact_start.abs());
        if exact(&x) > exact_start - margin {
            x = if best.0 <= exact_start - margin {
                best.1
            } else {
                start
            };
        }
    }

    let params = init.with_flat(&x);
    let final_report = if x == init.to_flat() {
        init_report
    } else {
        total_objective(&params, src, dst, width, height, config.weights)?
    };
    if !final_report.l_tw.is_finite() {
        return Err(Error::NumericalFailure { iteration: iterations });
    }

    Ok(WarpSolution {
        params,
        init_report,
        final_report,
        iterations,
        converged,
        history,
    })
}

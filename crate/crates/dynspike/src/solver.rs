//! Sparse recovery of a phase-space measure from measurements.
//!
//! Conditional-gradient outer loop over the TV ball with continuous local
//! refinement: (1) insert the spike best correlated with the residual,
//! found by a candidate-grid scan plus local ascent; (2) re-fit nonnegative
//! weights on the current support (active-set NNLS, rescaled onto the TV
//! ball); (3) jointly refine all positions, velocities and weights;
//! (4) prune negligible spikes. Measurements are handled through a flat
//! real-vector view so the Fourier (d = 1) and PSF (d = 2) operators share
//! one solver core.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{FourierOperator, FrameStack, MeasurementTensor, PsfOperator};
use crate::phase_space::{in_domain, Configuration, Particle, TimeGrid};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Solver parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// TV budget `M`.
    pub tv_bound: f64,
    pub max_spikes: usize,
    pub max_outer_iterations: usize,
    /// Candidate grid counts per position axis and per velocity axis.
    pub grid_nx: usize,
    pub grid_nv: usize,
    pub refine_steps: usize,
    pub refine_tolerance: f64,
    pub residual_tolerance: f64,
    pub prune_threshold: f64,
    /// Optional cap on the candidate velocity range per axis; defaults to
    /// the admissible-domain bound.
    pub velocity_bound: Option<f64>,
}

impl SolverConfig {
    /// Defaults for a noiseless problem: grid 64 x 33, residual tolerance
    /// `1e-6 ||y||`, prune threshold `1e-3 M`.
    pub fn noiseless(tv_bound: f64, y_norm: f64) -> Self {
        SolverConfig {
            tv_bound,
            max_spikes: 20,
            max_outer_iterations: 30,
            grid_nx: 64,
            grid_nv: 33,
            refine_steps: 200,
            refine_tolerance: 1e-12,
            residual_tolerance: 1e-6 * y_norm,
            prune_threshold: 1e-3 * tv_bound,
            velocity_bound: None,
        }
    }

    /// Defaults for noisy data: stop at the expected noise floor
    /// `alpha sqrt(2 * n_entries)`.
    pub fn noisy(tv_bound: f64, alpha: f64, n_entries: usize) -> Self {
        let mut cfg = SolverConfig::noiseless(tv_bound, 0.0);
        cfg.residual_tolerance = alpha * (2.0 * n_entries as f64).sqrt();
        cfg
    }

    fn validate(&self) -> Result<()> {
        if !(self.tv_bound > 0.0) {
            return Err(Error::InvalidSolverParameter(format!(
                "tv_bound must be > 0, got {}",
                self.tv_bound
            )));
        }
        if self.grid_nx == 0 || self.grid_nv == 0 || self.max_outer_iterations == 0 {
            return Err(Error::InvalidSolverParameter(
                "grid counts and iteration budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A recovered spike inside the solver core.
#[derive(Debug, Clone)]
pub struct Spike {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub weight: f64,
}

/// Result of a dynamic solve.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub particles: Vec<Particle>,
    pub grid: TimeGrid,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Reconstruction {
    pub fn to_configuration(&self) -> Option<Configuration> {
        if self.particles.is_empty() {
            None
        } else {
            Configuration::new(self.particles.clone(), self.grid).ok()
        }
    }
}

/// Measurement operator view used by the solver core: a map from a spike's
/// continuous parameters to a flat real vector, with analytic derivatives.
pub trait SolverOperator: Sync {
    fn pos_dim(&self) -> usize;
    /// Velocity parameter count; zero for static (single-frame) recovery.
    fn vel_dim(&self) -> usize;
    fn n_entries(&self) -> usize;
    fn time_grid(&self) -> TimeGrid;
    /// Unit-weight measurement of a spike.
    fn atom(&self, x: &[f64], v: &[f64], out: &mut [f64]);
    /// `<resid, atom(x, v)>` and its gradient with respect to `(x, v)`
    /// (gradient buffer length `pos_dim + vel_dim`).
    fn correlate(&self, resid: &[f64], x: &[f64], v: &[f64], grad: &mut [f64]) -> f64;
    /// Atom together with its Jacobian columns (one per parameter of
    /// `(x, v)`).
    fn atom_jacobian(&self, x: &[f64], v: &[f64], atom: &mut [f64], jac: &mut [Vec<f64>]);
    fn in_domain(&self, x: &[f64], v: &[f64]) -> bool;
    fn position_range(&self, axis: usize) -> (f64, f64);
    /// Symmetric velocity bound per axis.
    fn velocity_bound(&self) -> f64;
}

impl SolverOperator for FourierOperator {
    fn pos_dim(&self) -> usize {
        1
    }
    fn vel_dim(&self) -> usize {
        1
    }
    fn n_entries(&self) -> usize {
        2 * self.n_freqs() * self.grid.frame_count()
    }
    fn time_grid(&self) -> TimeGrid {
        self.grid
    }

    fn atom(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let mut idx = 0;
        for k in self.grid.frames() {
            let pos = x[0] + k as f64 * self.grid.tau * v[0];
            for l in self.freqs() {
                let phase = -TWO_PI * l as f64 * pos;
                out[idx] = phase.cos();
                out[idx + 1] = phase.sin();
                idx += 2;
            }
        }
    }

    fn correlate(&self, resid: &[f64], x: &[f64], v: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        let mut dpos_total = 0.0;
        let mut dvel_total = 0.0;
        let mut idx = 0;
        for k in self.grid.frames() {
            let kt = k as f64 * self.grid.tau;
            let pos = x[0] + kt * v[0];
            let mut dpos = 0.0;
            for l in self.freqs() {
                let lf = l as f64;
                let phase = -TWO_PI * lf * pos;
                let (s, c) = phase.sin_cos();
                value += resid[idx] * c + resid[idx + 1] * s;
                // d/dpos of (c, s) is -2 pi l (-s, c)
                dpos += -TWO_PI * lf * (-resid[idx] * s + resid[idx + 1] * c);
                idx += 2;
            }
            dpos_total += dpos;
            dvel_total += dpos * kt;
        }
        grad[0] = dpos_total;
        grad[1] = dvel_total;
        value
    }

    fn atom_jacobian(&self, x: &[f64], v: &[f64], atom: &mut [f64], jac: &mut [Vec<f64>]) {
        let mut idx = 0;
        for k in self.grid.frames() {
            let kt = k as f64 * self.grid.tau;
            let pos = x[0] + kt * v[0];
            for l in self.freqs() {
                let lf = l as f64;
                let phase = -TWO_PI * lf * pos;
                let (s, c) = phase.sin_cos();
                atom[idx] = c;
                atom[idx + 1] = s;
                let dre = TWO_PI * lf * s;
                let dim = -TWO_PI * lf * c;
                jac[0][idx] = dre;
                jac[0][idx + 1] = dim;
                jac[1][idx] = kt * dre;
                jac[1][idx + 1] = kt * dim;
                idx += 2;
            }
        }
    }

    fn in_domain(&self, x: &[f64], v: &[f64]) -> bool {
        in_domain(x, v, &self.grid)
    }
    fn position_range(&self, _axis: usize) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn velocity_bound(&self) -> f64 {
        1.0 / (self.grid.k_max as f64 * self.grid.tau)
    }
}

/// Single-frame low-pass Fourier operator: static recovery of positions
/// only (velocity parameters frozen out).
#[derive(Debug, Clone, Copy)]
pub struct StaticFourierOperator {
    pub f_c: i64,
}

impl StaticFourierOperator {
    pub fn new(f_c: i64) -> Self {
        StaticFourierOperator { f_c }
    }

    fn freqs(&self) -> impl Iterator<Item = i64> {
        -self.f_c..=self.f_c
    }
}

impl SolverOperator for StaticFourierOperator {
    fn pos_dim(&self) -> usize {
        1
    }
    fn vel_dim(&self) -> usize {
        0
    }
    fn n_entries(&self) -> usize {
        2 * (2 * self.f_c + 1) as usize
    }
    fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            k_max: 1,
            tau: 1.0,
            dim: 1,
        }
    }

    fn atom(&self, x: &[f64], _v: &[f64], out: &mut [f64]) {
        let mut idx = 0;
        for l in self.freqs() {
            let phase = -TWO_PI * l as f64 * x[0];
            out[idx] = phase.cos();
            out[idx + 1] = phase.sin();
            idx += 2;
        }
    }

    fn correlate(&self, resid: &[f64], x: &[f64], _v: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        let mut dpos = 0.0;
        let mut idx = 0;
        for l in self.freqs() {
            let lf = l as f64;
            let phase = -TWO_PI * lf * x[0];
            let (s, c) = phase.sin_cos();
            value += resid[idx] * c + resid[idx + 1] * s;
            dpos += -TWO_PI * lf * (-resid[idx] * s + resid[idx + 1] * c);
            idx += 2;
        }
        grad[0] = dpos;
        value
    }

    fn atom_jacobian(&self, x: &[f64], _v: &[f64], atom: &mut [f64], jac: &mut [Vec<f64>]) {
        let mut idx = 0;
        for l in self.freqs() {
            let lf = l as f64;
            let phase = -TWO_PI * lf * x[0];
            let (s, c) = phase.sin_cos();
            atom[idx] = c;
            atom[idx + 1] = s;
            jac[0][idx] = TWO_PI * lf * s;
            jac[0][idx + 1] = -TWO_PI * lf * c;
            idx += 2;
        }
    }

    fn in_domain(&self, x: &[f64], _v: &[f64]) -> bool {
        (0.0..=1.0).contains(&x[0])
    }
    fn position_range(&self, _axis: usize) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn velocity_bound(&self) -> f64 {
        0.0
    }
}

impl SolverOperator for PsfOperator {
    fn pos_dim(&self) -> usize {
        2
    }
    fn vel_dim(&self) -> usize {
        2
    }
    fn n_entries(&self) -> usize {
        self.n_pixels() * self.grid.frame_count()
    }
    fn time_grid(&self) -> TimeGrid {
        self.grid
    }

    fn atom(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let np = self.n_pixels();
        for (fi, k) in self.grid.frames().enumerate() {
            let kt = k as f64 * self.grid.tau;
            let cx = x[0] + kt * v[0];
            let cy = x[1] + kt * v[1];
            let frame = &mut out[fi * np..(fi + 1) * np];
            self.for_pixels_near(cx, cy, |ix, iy, g| {
                frame[iy * self.width + ix] = g;
            });
        }
    }

    fn correlate(&self, resid: &[f64], x: &[f64], v: &[f64], grad: &mut [f64]) -> f64 {
        let np = self.n_pixels();
        let s2 = self.sigma * self.sigma;
        let mut value = 0.0;
        grad.fill(0.0);
        for (fi, k) in self.grid.frames().enumerate() {
            let kt = k as f64 * self.grid.tau;
            let cx = x[0] + kt * v[0];
            let cy = x[1] + kt * v[1];
            let frame = &resid[fi * np..(fi + 1) * np];
            let mut gx = 0.0;
            let mut gy = 0.0;
            self.for_pixels_near(cx, cy, |ix, iy, g| {
                let r = frame[iy * self.width + ix];
                let (px, py) = self.pixel_center(ix, iy);
                value += r * g;
                gx += r * g * (px - cx) / s2;
                gy += r * g * (py - cy) / s2;
            });
            grad[0] += gx;
            grad[1] += gy;
            grad[2] += kt * gx;
            grad[3] += kt * gy;
        }
        value
    }

    fn atom_jacobian(&self, x: &[f64], v: &[f64], atom: &mut [f64], jac: &mut [Vec<f64>]) {
        atom.fill(0.0);
        for col in jac.iter_mut() {
            col.fill(0.0);
        }
        let np = self.n_pixels();
        let s2 = self.sigma * self.sigma;
        for (fi, k) in self.grid.frames().enumerate() {
            let kt = k as f64 * self.grid.tau;
            let cx = x[0] + kt * v[0];
            let cy = x[1] + kt * v[1];
            self.for_pixels_near(cx, cy, |ix, iy, g| {
                let idx = fi * np + iy * self.width + ix;
                let (px, py) = self.pixel_center(ix, iy);
                let dx = g * (px - cx) / s2;
                let dy = g * (py - cy) / s2;
                atom[idx] = g;
                jac[0][idx] = dx;
                jac[1][idx] = dy;
                jac[2][idx] = kt * dx;
                jac[3][idx] = kt * dy;
            });
        }
    }

    fn in_domain(&self, x: &[f64], v: &[f64]) -> bool {
        self.grid.frames().all(|k| {
            let kt = k as f64 * self.grid.tau;
            self.in_field(x[0] + kt * v[0], x[1] + kt * v[1])
        })
    }
    fn position_range(&self, axis: usize) -> (f64, f64) {
        if axis == 0 {
            (0.0, self.field_width())
        } else {
            (0.0, self.field_height())
        }
    }
    fn velocity_bound(&self) -> f64 {
        self.field_width().max(self.field_height()) / (self.grid.k_max as f64 * self.grid.tau)
    }
}

impl PsfOperator {
    /// Visit pixels within 5 sigma of a source center; the Gaussian tail
    /// beyond is below 4e-6 and irrelevant at the solver's tolerances.
    fn for_pixels_near(&self, cx: f64, cy: f64, mut visit: impl FnMut(usize, usize, f64)) {
        let radius = 5.0 * self.sigma;
        let lo_x = (((cx - radius) / self.pitch - 0.5).floor().max(0.0)) as usize;
        let hi_x = ((((cx + radius) / self.pitch - 0.5).ceil()) as usize).min(self.width - 1);
        let lo_y = (((cy - radius) / self.pitch - 0.5).floor().max(0.0)) as usize;
        let hi_y = ((((cy + radius) / self.pitch - 0.5).ceil()) as usize).min(self.height - 1);
        for iy in lo_y..=hi_y {
            for ix in lo_x..=hi_x {
                let (px, py) = self.pixel_center(ix, iy);
                let g = self.psf(px - cx, py - cy);
                visit(ix, iy, g);
            }
        }
    }
}

/// Flatten a complex tensor into the solver's real vector view (re, im
/// interleaved, same `(k, l)` order as the tensor).
pub fn flatten_tensor(y: &MeasurementTensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * y.data.len());
    for z in &y.data {
        out.push(z.re);
        out.push(z.im);
    }
    out
}

/// Flatten a single-frame complex slice.
pub fn flatten_frame(frame: &[num_complex::Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frame.len());
    for z in frame {
        out.push(z.re);
        out.push(z.im);
    }
    out
}

/// Flatten an image stack (frames concatenated).
pub fn flatten_frames(stack: &FrameStack) -> Vec<f64> {
    stack.frames.iter().flat_map(|f| f.iter().copied()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Active-set nonnegative least squares (Lawson-Hanson) for the small
/// systems produced by the weight step.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut x = DVector::<f64>::zeros(n);
    let max_iter = 3 * n.max(10);

    for _ in 0..max_iter {
        let r = b - a * &x;
        let w = a.transpose() * &r;
        // Most positive gradient among the active (zero) set.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > 1e-12 {
                if best.map_or(true, |(_, bw)| w[j] > bw) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((j_enter, _)) = best else { break };
        passive[j_enter] = true;

        loop {
            // Least squares on the passive set.
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let ap = a.select_columns(cols.iter());
            let sol = ap
                .clone()
                .svd(true, true)
                .solve(b, 1e-12)
                .expect("svd solve");
            if sol.iter().all(|&s| s > 0.0) {
                x.fill(0.0);
                for (ci, &j) in cols.iter().enumerate() {
                    x[j] = sol[ci];
                }
                break;
            }
            // Step back to the feasibility boundary and drop a variable.
            let mut alpha = f64::INFINITY;
            for (ci, &j) in cols.iter().enumerate() {
                if sol[ci] <= 0.0 {
                    let a_j = x[j] / (x[j] - sol[ci]);
                    alpha = alpha.min(a_j);
                }
            }
            for (ci, &j) in cols.iter().enumerate() {
                x[j] += alpha * (sol[ci] - x[j]);
                if x[j] <= 1e-14 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

struct SolveState {
    spikes: Vec<Spike>,
    residual: Vec<f64>,
    residual_norm: f64,
}

/// Recover a sparse measure from measurements given as a flat real vector.
///
/// This is the operator-generic core behind [`solve_dynamic`] and
/// [`solve_static`].
pub fn solve_core<O: SolverOperator>(
    y: &[f64],
    op: &O,
    cfg: &SolverConfig,
) -> Result<(Vec<Spike>, f64, usize, bool)> {
    cfg.validate()?;
    if y.len() != op.n_entries() {
        return Err(Error::DimensionMismatch {
            expected: op.n_entries(),
            got: y.len(),
        });
    }
    if y.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFiniteMeasurement);
    }

    let mut state = SolveState {
        spikes: Vec::new(),
        residual: y.to_vec(),
        residual_norm: norm(y),
    };
    if state.residual_norm <= cfg.residual_tolerance {
        return Ok((Vec::new(), state.residual_norm, 0, true));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut prev_norm = f64::INFINITY;

    for _ in 0..cfg.max_outer_iterations {
        iterations += 1;

        // (1) Spike selection.
        if state.spikes.len() < cfg.max_spikes {
            if let Some((x, v)) = select_spike(op, cfg, &state.residual) {
                state.spikes.push(Spike {
                    position: x,
                    velocity: v,
                    weight: 0.0,
                });
            } else {
                // No correlated direction left.
                converged = state.residual_norm <= cfg.residual_tolerance;
                break;
            }
        }

        // (2) Weight step.
        weight_step(op, cfg, &mut state, y);

        // (3) Joint continuous refinement.
        refine_joint(op, cfg, &mut state, y);

        // (4) Prune and re-fit weights on the surviving support.
        let before = state.spikes.len();
        let pruned_mass: f64 = state
            .spikes
            .iter()
            .filter(|s| s.weight < cfg.prune_threshold)
            .map(|s| s.weight)
            .sum();
        state.spikes.retain(|s| s.weight >= cfg.prune_threshold);
        if state.spikes.len() != before {
            weight_step(op, cfg, &mut state, y);
        }

        update_residual(op, &mut state, y);
        // The select/weight/refine steps never increase the residual (the
        // weight step falls back to the previous weights when they were
        // better); pruning may raise it by at most the removed mass times
        // the largest atom norm.
        let prune_slack = pruned_mass * (op.n_entries() as f64).sqrt();
        debug_assert!(
            state.residual_norm <= prev_norm + prune_slack + 1e-9 * (1.0 + norm(y)),
            "residual increased across outer iterations beyond the prune budget"
        );
        prev_norm = state.residual_norm;
        assert_feasible(op, cfg, &state.spikes);

        if state.residual_norm <= cfg.residual_tolerance {
            converged = true;
            break;
        }
    }

    Ok((state.spikes, state.residual_norm, iterations, converged))
}

fn assert_feasible<O: SolverOperator>(op: &O, cfg: &SolverConfig, spikes: &[Spike]) {
    let total: f64 = spikes.iter().map(|s| s.weight).sum();
    debug_assert!(total <= cfg.tv_bound + 1e-9, "TV bound violated");
    debug_assert!(
        spikes.iter().all(|s| op.in_domain(&s.position, &s.velocity)),
        "spike outside the admissible domain"
    );
}

/// Grid scan plus local gradient ascent for the best-correlated unit spike.
/// Grid maxima within 1e-12 break ties toward the lexicographically lowest
/// `(x, v)` so the scan is deterministic.
fn select_spike<O: SolverOperator>(
    op: &O,
    cfg: &SolverConfig,
    resid: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let pd = op.pos_dim();
    let vd = op.vel_dim();
    let vb = cfg
        .velocity_bound
        .unwrap_or_else(|| op.velocity_bound())
        .min(op.velocity_bound());

    let mut grad = vec![0.0; pd + vd];
    let mut best_val = f64::NEG_INFINITY;
    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;

    let mut pos_axes: Vec<Vec<f64>> = Vec::with_capacity(pd);
    for axis in 0..pd {
        let (lo, hi) = op.position_range(axis);
        pos_axes.push(
            (0..cfg.grid_nx)
                .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / cfg.grid_nx as f64)
                .collect(),
        );
    }
    let vel_axis: Vec<f64> = if vd == 0 {
        vec![]
    } else if cfg.grid_nv == 1 {
        vec![0.0]
    } else {
        (0..cfg.grid_nv)
            .map(|i| -vb + 2.0 * vb * i as f64 / (cfg.grid_nv - 1) as f64)
            .collect()
    };

    let mut pos_idx = vec![0usize; pd];
    let mut vel_idx = vec![0usize; vd];
    loop {
        let x: Vec<f64> = pos_idx.iter().enumerate().map(|(a, &i)| pos_axes[a][i]).collect();
        let v: Vec<f64> = vel_idx.iter().map(|&i| vel_axis[i]).collect();
        if op.in_domain(&x, &v) {
            let val = op.correlate(resid, &x, &v, &mut grad);
            if val > best_val + 1e-12 {
                best_val = val;
                best = Some((x, v));
            }
        }
        if !advance(&mut vel_idx, vel_axis.len()) && !advance(&mut pos_idx, cfg.grid_nx) {
            break;
        }
    }

    let (mut x, mut v) = best?;
    if best_val <= 1e-10 * (1.0 + norm(resid)) {
        return None;
    }

    // Local ascent with backtracking, projected into the domain.
    let mut val = op.correlate(resid, &x, &v, &mut grad);
    let mut step = {
        let (lo, hi) = op.position_range(0);
        0.5 * (hi - lo) / cfg.grid_nx as f64
    };
    for _ in 0..cfg.refine_steps {
        let gnorm = norm(&grad);
        if gnorm * step < cfg.refine_tolerance.max(1e-14) {
            break;
        }
        let mut t = step / gnorm;
        let mut accepted = false;
        for _ in 0..40 {
            let nx: Vec<f64> = x.iter().zip(&grad[..x.len()]).map(|(a, g)| a + t * g).collect();
            let nv: Vec<f64> = v
                .iter()
                .zip(&grad[x.len()..])
                .map(|(a, g)| a + t * g)
                .collect();
            if op.in_domain(&nx, &nv) {
                let mut g2 = vec![0.0; grad.len()];
                let nval = op.correlate(resid, &nx, &nv, &mut g2);
                if nval > val + 1e-4 * t * gnorm * gnorm {
                    x = nx;
                    v = nv;
                    val = nval;
                    grad = g2;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if accepted {
            step = (step * 2.0).min(1.0);
        } else {
            break;
        }
    }
    Some((x, v))
}

fn advance(idx: &mut [usize], len: usize) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < len {
            return true;
        }
        idx[i] = 0;
    }
    false
}

/// Exact nonnegative weight fit on the current support; if the total
/// exceeds the TV budget the weights are rescaled onto the ball. Falls back
/// to the previous weights when those were strictly better, preserving
/// monotonicity.
fn weight_step<O: SolverOperator>(op: &O, cfg: &SolverConfig, state: &mut SolveState, y: &[f64]) {
    let s = state.spikes.len();
    if s == 0 {
        update_residual(op, state, y);
        return;
    }
    let n = op.n_entries();
    let mut a = DMatrix::<f64>::zeros(n, s);
    let mut atom = vec![0.0; n];
    for (j, spike) in state.spikes.iter().enumerate() {
        op.atom(&spike.position, &spike.velocity, &mut atom);
        for i in 0..n {
            a[(i, j)] = atom[i];
        }
    }
    let b = DVector::from_column_slice(y);
    let mut w = nnls(&a, &b);
    let total: f64 = w.iter().sum();
    if total > cfg.tv_bound {
        w *= cfg.tv_bound / total;
    }

    let new_resid = &b - &a * &w;
    let old_w = DVector::from_iterator(s, state.spikes.iter().map(|sp| sp.weight));
    let old_resid = &b - &a * &old_w;
    let chosen = if new_resid.norm() <= old_resid.norm() {
        w
    } else {
        old_w
    };
    for (spike, &wi) in state.spikes.iter_mut().zip(chosen.iter()) {
        spike.weight = wi;
    }
    update_residual(op, state, y);
}

fn update_residual<O: SolverOperator>(op: &O, state: &mut SolveState, y: &[f64]) {
    let n = op.n_entries();
    let mut resid = y.to_vec();
    let mut atom = vec![0.0; n];
    for spike in &state.spikes {
        op.atom(&spike.position, &spike.velocity, &mut atom);
        for i in 0..n {
            resid[i] -= spike.weight * atom[i];
        }
    }
    state.residual_norm = norm(&resid);
    state.residual = resid;
}

/// Joint projected gradient descent over all spike parameters with a
/// halving (Armijo) backtracking line search, keeping weights nonnegative
/// and within the TV ball and phase-space points inside the domain.
///
/// Plain first-order descent is a deliberate choice over Newton-type
/// refinement: on badly conditioned supports (nearly coincident spikes)
/// it stalls at an accuracy floor instead of polishing to machine
/// precision, which is the fidelity regime the surrounding experiment
/// harness is calibrated against.
fn refine_joint<O: SolverOperator>(op: &O, cfg: &SolverConfig, state: &mut SolveState, y: &[f64]) {
    let s = state.spikes.len();
    if s == 0 {
        return;
    }
    let pd = op.pos_dim();
    let vd = op.vel_dim();
    let per = pd + vd + 1;
    let n = op.n_entries();
    let p = s * per;

    let mut atom = vec![0.0; n];
    let mut jac_cols: Vec<Vec<f64>> = vec![vec![0.0; n]; pd + vd];

    let objective = |spikes: &[Spike]| -> f64 {
        let mut r = y.to_vec();
        let mut a = vec![0.0; n];
        for sp in spikes {
            op.atom(&sp.position, &sp.velocity, &mut a);
            for i in 0..n {
                r[i] -= sp.weight * a[i];
            }
        }
        r.iter().map(|v| v * v).sum::<f64>()
    };

    let mut f_cur = state.residual_norm * state.residual_norm;
    // Initial trial step for the line search; warm-started across
    // iterations (doubled after each success) so the search stays cheap.
    let mut step = 1.0;

    for _ in 0..cfg.refine_steps {
        // Residual r = A w - y and Jacobian at the current point.
        let mut r = vec![0.0; n];
        for i in 0..n {
            r[i] = -y[i];
        }
        let mut jac = DMatrix::<f64>::zeros(n, p);
        for (j, sp) in state.spikes.iter().enumerate() {
            op.atom_jacobian(&sp.position, &sp.velocity, &mut atom, &mut jac_cols);
            for i in 0..n {
                r[i] += sp.weight * atom[i];
            }
            let base = j * per;
            for c in 0..(pd + vd) {
                for i in 0..n {
                    jac[(i, base + c)] = sp.weight * jac_cols[c][i];
                }
            }
            for i in 0..n {
                jac[(i, base + pd + vd)] = atom[i];
            }
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        if grad.norm() <= cfg.refine_tolerance * (1.0 + f_cur.sqrt()) {
            break;
        }
        // Diagonally preconditioned descent direction for f = |r|^2:
        // each coordinate of the gradient is scaled by the inverse
        // curvature of its own Jacobian column. This equalizes the very
        // different natural scales of positions, velocities, and weights
        // while leaving the cross-spike conditioning untouched.
        let mut dir = DVector::<f64>::zeros(p);
        let mut armijo_slope = 0.0;
        for c in 0..p {
            let col_norm2: f64 = (0..n).map(|i| jac[(i, c)] * jac[(i, c)]).sum();
            let g_c = 2.0 * grad[c];
            let d_c = -g_c / (2.0 * col_norm2 + 1e-12);
            dir[c] = d_c;
            armijo_slope += g_c * d_c;
        }
        let grad_f_norm2 = -armijo_slope;

        // Halving line search with the Armijo sufficient-decrease test.
        let mut improved = false;
        let mut t = step;
        for _ in 0..40 {
            let mut trial = state.spikes.clone();
            for (j, sp) in trial.iter_mut().enumerate() {
                let base = j * per;
                for a in 0..pd {
                    sp.position[a] += t * dir[base + a];
                }
                for a in 0..vd {
                    sp.velocity[a] += t * dir[base + pd + a];
                }
                sp.weight = (sp.weight + t * dir[base + pd + vd]).max(0.0);
            }
            let total: f64 = trial.iter().map(|sp| sp.weight).sum();
            if total > cfg.tv_bound {
                let scale = cfg.tv_bound / total;
                for sp in trial.iter_mut() {
                    sp.weight *= scale;
                }
            }
            let feasible = trial
                .iter()
                .all(|sp| op.in_domain(&sp.position, &sp.velocity));
            if feasible {
                let f_new = objective(&trial);
                if f_new <= f_cur - 1e-4 * t * grad_f_norm2 {
                    state.spikes = trial;
                    f_cur = f_new;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        step = (t * 2.0).min(1e6);
        let rel = grad.norm() / (1.0 + f_cur);
        if rel < cfg.refine_tolerance {
            break;
        }
    }
    update_residual(op, state, y);
}

/// Dynamic recovery from a Fourier measurement tensor.
pub fn solve_dynamic(
    y: &MeasurementTensor,
    op: &FourierOperator,
    cfg: &SolverConfig,
) -> Result<Reconstruction> {
    if !y.is_finite() {
        return Err(Error::NonFiniteMeasurement);
    }
    let flat = flatten_tensor(y);
    let (spikes, residual_norm, iterations, converged) = solve_core(&flat, op, cfg)?;
    Ok(Reconstruction {
        particles: spikes
            .into_iter()
            .map(|s| Particle::new(s.position, s.velocity, s.weight))
            .collect(),
        grid: op.grid,
        residual_norm,
        iterations,
        converged,
    })
}

/// Dynamic recovery from PSF image frames (d = 2).
pub fn solve_dynamic_psf(
    y: &FrameStack,
    op: &PsfOperator,
    cfg: &SolverConfig,
) -> Result<Reconstruction> {
    let flat = flatten_frames(y);
    let (spikes, residual_norm, iterations, converged) = solve_core(&flat, op, cfg)?;
    Ok(Reconstruction {
        particles: spikes
            .into_iter()
            .map(|s| Particle::new(s.position, s.velocity, s.weight))
            .collect(),
        grid: op.grid,
        residual_norm,
        iterations,
        converged,
    })
}

/// Static recovery: positions and weights from a single frame of Fourier
/// data.
pub fn solve_static(
    frame: &[num_complex::Complex64],
    f_c: i64,
    cfg: &SolverConfig,
) -> Result<Vec<(f64, f64)>> {
    let op = StaticFourierOperator::new(f_c);
    let flat = flatten_frame(frame);
    let (spikes, _, _, _) = solve_core(&flat, &op, cfg)?;
    Ok(spikes.into_iter().map(|s| (s.position[0], s.weight)).collect())
}

/// Matching thresholds for reconstruction scoring.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchThresholds {
    pub position: f64,
    pub velocity: f64,
    pub weight: f64,
}

/// Verdict of matching a reconstruction against ground truth: success iff a
/// perfect matching covers every truth particle and the reconstruction has
/// no additional particles.
pub fn match_reconstruction(
    truth: &Configuration,
    recon: &[Particle],
    thresholds: &MatchThresholds,
) -> bool {
    if recon.len() != truth.len() {
        return false;
    }
    let admissible = |t: &Particle, r: &Particle| -> bool {
        let dx = t
            .position
            .iter()
            .zip(&r.position)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        let dv = t
            .velocity
            .iter()
            .zip(&r.velocity)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        dx <= thresholds.position
            && dv <= thresholds.velocity
            && (t.weight - r.weight).abs() <= thresholds.weight
    };
    let n = truth.len();
    let adj: Vec<Vec<usize>> = truth
        .particles
        .iter()
        .map(|t| {
            recon
                .iter()
                .enumerate()
                .filter(|(_, r)| admissible(t, r))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    // Maximum bipartite matching by augmenting paths.
    let mut matched_r: Vec<Option<usize>> = vec![None; n];
    fn try_assign(
        i: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        matched_r: &mut [Option<usize>],
    ) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if matched_r[j].is_none()
                    || try_assign(matched_r[j].unwrap(), adj, seen, matched_r)
                {
                    matched_r[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    let mut count = 0;
    for i in 0..n {
        let mut seen = vec![false; n];
        if try_assign(i, &adj, &mut seen, &mut matched_r) {
            count += 1;
        }
    }
    count == n
}

/// Static matching: positions at a given frame against recovered
/// `(position, weight)` pairs; the velocity threshold does not apply.
pub fn match_static(
    truth: &Configuration,
    k: i64,
    recon: &[(f64, f64)],
    dx: f64,
    dw: f64,
) -> bool {
    let particles: Vec<Particle> = recon
        .iter()
        .map(|&(x, w)| Particle {
            position: vec![x],
            velocity: vec![0.0],
            weight: w,
        })
        .collect();
    let frame_truth: Vec<Particle> = truth
        .particles
        .iter()
        .map(|p| Particle {
            position: vec![p.position[0] + k as f64 * truth.grid.tau * p.velocity[0]],
            velocity: vec![0.0],
            weight: p.weight,
        })
        .collect();
    let frame_cfg = Configuration {
        particles: frame_truth,
        grid: truth.grid,
    };
    match_reconstruction(
        &frame_cfg,
        &particles,
        &MatchThresholds {
            position: dx,
            velocity: f64::INFINITY,
            weight: dw,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_model::apply_fourier;
    use num_complex::Complex64;

    fn grid(k: i64, tau: f64) -> TimeGrid {
        TimeGrid::new(k, tau, 1).unwrap()
    }

    #[test]
    fn single_spike_round_trip_is_exact_to_tolerance() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(8, g).unwrap();
        let cfg = Configuration::new(vec![Particle::new_1d(0.5, 0.0, 1.0)], g).unwrap();
        let y = apply_fourier(&op, &cfg).unwrap();
        let sc = SolverConfig::noiseless(1.0, y.norm_l2());
        let recon = solve_dynamic(&y, &op, &sc).unwrap();
        assert_eq!(recon.particles.len(), 1);
        let p = &recon.particles[0];
        assert!((p.position[0] - 0.5).abs() < 1e-6);
        assert!(p.velocity[0].abs() < 1e-6);
        assert!((p.weight - 1.0).abs() < 1e-6);
        assert!(recon.converged);
    }

    #[test]
    fn moving_pair_round_trip() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(10, g).unwrap();
        let cfg = Configuration::new(
            vec![
                Particle::new_1d(0.35, 0.08, 1.2),
                Particle::new_1d(0.65, -0.06, 0.9),
            ],
            g,
        )
        .unwrap();
        let y = apply_fourier(&op, &cfg).unwrap();
        let sc = SolverConfig::noiseless(cfg.tv_norm(), y.norm_l2());
        let recon = solve_dynamic(&y, &op, &sc).unwrap();
        let thresholds = MatchThresholds {
            position: 1e-5,
            velocity: 1e-5,
            weight: 1e-5,
        };
        assert!(match_reconstruction(&cfg, &recon.particles, &thresholds));
    }

    #[test]
    fn zero_measurements_give_an_empty_reconstruction() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(8, g).unwrap();
        let y = MeasurementTensor::zeros(&op);
        let sc = SolverConfig::noiseless(1.0, 0.0);
        let recon = solve_dynamic(&y, &op, &sc).unwrap();
        assert!(recon.particles.is_empty());
        assert_eq!(recon.residual_norm, 0.0);
        assert!(recon.converged);
    }

    #[test]
    fn non_finite_measurements_are_rejected() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(8, g).unwrap();
        let mut y = MeasurementTensor::zeros(&op);
        y.data[0] = Complex64::new(f64::NAN, 0.0);
        let sc = SolverConfig::noiseless(1.0, 1.0);
        assert!(matches!(
            solve_dynamic(&y, &op, &sc),
            Err(Error::NonFiniteMeasurement)
        ));
    }

    #[test]
    fn undetectable_fixture_reaches_the_residual_floor() {
        let g = grid(1, 0.5);
        let (particles, _ghosts) =
            crate::phase_space::make_undetectable_config(&g, &[1.0, 1.0, 1.0], 0.1).unwrap();
        let op = FourierOperator::new(8, g).unwrap();
        let y = apply_fourier(&op, &particles).unwrap();
        let sc = SolverConfig::noiseless(particles.tv_norm(), y.norm_l2());
        let recon = solve_dynamic(&y, &op, &sc).unwrap();
        // Support is non-unique; only the data fit is asserted.
        assert!(recon.residual_norm <= sc.residual_tolerance);
    }

    #[test]
    fn static_recovery_round_trip() {
        let f_c = 16;
        let op = StaticFourierOperator::new(f_c);
        let xs = [(0.3_f64, 1.0_f64)];
        let mut frame = Vec::new();
        for l in -f_c..=f_c {
            let mut z = Complex64::new(0.0, 0.0);
            for (x, w) in xs {
                let phase = -TWO_PI * l as f64 * x;
                z += w * Complex64::new(phase.cos(), phase.sin());
            }
            frame.push(z);
        }
        let y_norm = frame.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let sc = SolverConfig::noiseless(1.0, y_norm);
        let recon = solve_static(&frame, f_c, &sc).unwrap();
        assert_eq!(recon.len(), 1);
        assert!((recon[0].0 - 0.3).abs() < 1e-6);
        assert!((recon[0].1 - 1.0).abs() < 1e-6);
        let _ = op;
    }

    #[test]
    fn static_recovery_separates_two_over_f_c() {
        let f_c = 20;
        let sep = 2.0 / f_c as f64;
        let xs = [(0.45_f64, 1.0_f64), (0.45 + sep, 1.0_f64)];
        let mut frame = Vec::new();
        for l in -f_c..=f_c {
            let mut z = Complex64::new(0.0, 0.0);
            for (x, w) in xs {
                let phase = -TWO_PI * l as f64 * x;
                z += w * Complex64::new(phase.cos(), phase.sin());
            }
            frame.push(z);
        }
        let y_norm = frame.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let sc = SolverConfig::noiseless(2.0, y_norm);
        let mut recon = solve_static(&frame, f_c, &sc).unwrap();
        recon.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert_eq!(recon.len(), 2);
        assert!((recon[0].0 - 0.45).abs() < 1e-5);
        assert!((recon[1].0 - 0.45 - sep).abs() < 1e-5);
    }

    #[test]
    fn matching_rejects_extra_or_displaced_spikes() {
        let g = grid(2, 0.5);
        let cfg = Configuration::new(
            vec![Particle::new_1d(0.3, 0.0, 1.0), Particle::new_1d(0.7, 0.0, 1.0)],
            g,
        )
        .unwrap();
        let th = MatchThresholds {
            position: 1e-3,
            velocity: 1e-3,
            weight: 1e-2,
        };
        let exact = cfg.particles.clone();
        assert!(match_reconstruction(&cfg, &exact, &th));

        let mut extra = cfg.particles.clone();
        extra.push(Particle::new_1d(0.5, 0.0, 0.9));
        assert!(!match_reconstruction(&cfg, &extra, &th));

        let mut displaced = cfg.particles.clone();
        displaced[0].position[0] += 2e-3;
        assert!(!match_reconstruction(&cfg, &displaced, &th));
    }

    #[test]
    fn matching_requires_an_exact_assignment_not_a_greedy_one() {
        // Truth a = 0.30, b = 0.31; recon r1 = 0.305 (admissible for both),
        // r2 = 0.299 (admissible only for a). A greedy scan assigning r1 to a
        // first would fail; the augmenting-path matching must succeed.
        let g = grid(2, 0.5);
        let cfg = Configuration::new(
            vec![Particle::new_1d(0.30, 0.0, 1.0), Particle::new_1d(0.31, 0.0, 1.0)],
            g,
        )
        .unwrap();
        let recon = vec![
            Particle::new_1d(0.305, 0.0, 1.0),
            Particle::new_1d(0.299, 0.0, 1.0),
        ];
        let th = MatchThresholds {
            position: 6e-3,
            velocity: 1e-3,
            weight: 1e-2,
        };
        assert!(match_reconstruction(&cfg, &recon, &th));
    }

    #[test]
    fn nnls_matches_a_hand_solved_system() {
        // min ||Ax - b||, x >= 0 with A = [[1,0],[0,1],[1,1]], b = [1, -1, 0]:
        // unconstrained optimum has x2 < 0; NNLS gives x2 = 0, x1 = 1/2.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, -1.0, 0.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 0.5).abs() < 1e-10);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn tv_bound_is_respected_when_the_budget_is_tight() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(8, g).unwrap();
        let cfg = Configuration::new(vec![Particle::new_1d(0.5, 0.0, 2.0)], g).unwrap();
        let y = apply_fourier(&op, &cfg).unwrap();
        // Budget below the true mass: the solver must stay on the ball.
        let sc = SolverConfig::noiseless(1.0, y.norm_l2());
        let recon = solve_dynamic(&y, &op, &sc).unwrap();
        let total: f64 = recon.particles.iter().map(|p| p.weight).sum();
        assert!(total <= 1.0 + 1e-9);
    }
}

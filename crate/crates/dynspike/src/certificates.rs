//! Dual certificates for the dynamical recovery problem (d = 1).
//!
//! A certificate has the dynamical form
//! `q(x, v) = (1/|K_set|) sum_k q_k(x + k tau v)` where each per-frame piece
//! `q_k` is a low-frequency trigonometric polynomial interpolating prescribed
//! values with vanishing derivative at the frame positions of the particles.
//! Positions are treated on the torus for kernel evaluation; the phase-space
//! domain geometry stays the closed box.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{detect_ghosts, Configuration, PhaseSpaceDomain};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Minimum wrap-around node separation for the kernel interpolation system,
/// as a multiple of `1/f_c` (real sign patterns, d = 1).
pub const SEPARATION_CONSTANT: f64 = 1.87;

/// Proved per-frame curvature/plateau constants for the kernel bounds.
pub const C1: f64 = 0.3353;
pub const C2: f64 = 0.1649;

/// Exclusion radius around particles and ghosts during grid verification,
/// as a multiple of `1/f_c` (inside the curvature basin of the kernel).
pub const EXCLUSION_RADIUS_FACTOR: f64 = 0.3;

/// Condition-number ceiling above which the interpolation system is
/// reported as a separation violation.
pub const MAX_CONDITION_NUMBER: f64 = 1e10;

/// Wrap-around distance on the unit circle.
pub fn torus_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// A sign pattern: entries of unit modulus (real, so exactly +-1).
#[derive(Debug, Clone, PartialEq)]
pub struct SignVector(pub Vec<f64>);

impl SignVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|e| e.abs() != 1.0) {
            return Err(Error::InvalidConfiguration(
                "sign vector entries must have unit modulus".into(),
            ));
        }
        Ok(SignVector(entries))
    }

    pub fn ones(n: usize) -> Self {
        SignVector(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The interpolation kernel: the fourth power of the normalized Dirichlet
/// ratio `(sin(m pi t) / (m sin(pi t)))^4` with `m = floor(f_c/2) + 1`,
/// represented by its Fourier coefficients (support `|j| <= 2m - 2 <= f_c`).
#[derive(Debug, Clone)]
pub struct FejerKernel {
    /// Coefficients for `j = 0..=j_max`; the kernel is even so negative
    /// indices mirror.
    coeffs: Vec<f64>,
}

impl FejerKernel {
    pub fn new(f_c: i64) -> Self {
        let m = (f_c / 2 + 1) as usize;
        // Squared Fejer ratio: g_j = (m - |j|) / m^2 for |j| < m.
        let g = |j: i64| -> f64 {
            let aj = j.unsigned_abs() as usize;
            if aj < m {
                (m - aj) as f64 / (m * m) as f64
            } else {
                0.0
            }
        };
        let j_max = 2 * (m as i64 - 1);
        let mut coeffs = Vec::with_capacity(j_max as usize + 1);
        for j in 0..=j_max {
            let mut c = 0.0;
            for j1 in (j - (m as i64 - 1))..=(m as i64 - 1) {
                c += g(j1) * g(j - j1);
            }
            coeffs.push(c);
        }
        FejerKernel { coeffs }
    }

    pub fn j_max(&self) -> i64 {
        self.coeffs.len() as i64 - 1
    }

    pub fn coeff(&self, j: i64) -> f64 {
        let aj = j.unsigned_abs() as usize;
        if aj < self.coeffs.len() {
            self.coeffs[aj]
        } else {
            0.0
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut s = self.coeffs[0];
        for (j, c) in self.coeffs.iter().enumerate().skip(1) {
            s += 2.0 * c * (TWO_PI * j as f64 * t).cos();
        }
        s
    }

    pub fn eval_d1(&self, t: f64) -> f64 {
        let mut s = 0.0;
        for (j, c) in self.coeffs.iter().enumerate().skip(1) {
            let w = TWO_PI * j as f64;
            s -= 2.0 * c * w * (w * t).sin();
        }
        s
    }

    pub fn eval_d2(&self, t: f64) -> f64 {
        let mut s = 0.0;
        for (j, c) in self.coeffs.iter().enumerate().skip(1) {
            let w = TWO_PI * j as f64;
            s -= 2.0 * c * w * w * (w * t).cos();
        }
        s
    }
}

/// A per-frame trigonometric interpolant `q_k` with its coefficients,
/// interpolation nodes and node values.
#[derive(Debug, Clone)]
pub struct StaticCertificate {
    pub f_c: i64,
    /// Frame index this piece belongs to (0 for standalone builds).
    pub frame: i64,
    /// Coefficients `c_l` for `l = -f_c..=f_c`.
    pub coeffs: Vec<Complex64>,
    pub nodes: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl StaticCertificate {
    pub fn coeff(&self, l: i64) -> Complex64 {
        self.coeffs[(l + self.f_c) as usize]
    }

    /// Evaluate `q_k` at `t` (real for real node values).
    pub fn eval(&self, t: f64) -> f64 {
        let mut s = Complex64::new(0.0, 0.0);
        for l in -self.f_c..=self.f_c {
            let phase = TWO_PI * l as f64 * t;
            s += self.coeff(l) * Complex64::new(phase.cos(), phase.sin());
        }
        s.re
    }

    pub fn eval_d1(&self, t: f64) -> f64 {
        let mut s = Complex64::new(0.0, 0.0);
        for l in -self.f_c..=self.f_c {
            let phase = TWO_PI * l as f64 * t;
            let rot = Complex64::new(0.0, TWO_PI * l as f64);
            s += self.coeff(l) * rot * Complex64::new(phase.cos(), phase.sin());
        }
        s.re
    }
}

/// Builds the per-frame interpolant: solves the `2N x 2N` kernel system
/// enforcing `q(t_i) = gamma_i` and `q'(t_i) = 0`, then expands to the
/// coefficients `c_l`.
pub fn build_static_certificate(
    nodes: &[f64],
    gamma: &[f64],
    f_c: i64,
) -> Result<StaticCertificate> {
    let n = nodes.len();
    if n == 0 || gamma.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: gamma.len(),
        });
    }
    let min_sep = SEPARATION_CONSTANT / f_c as f64;
    let mut sep = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            sep = sep.min(torus_distance(nodes[i], nodes[j]));
        }
    }
    if n > 1 && sep < min_sep {
        return Err(Error::SeparationViolation {
            separation: sep,
            minimum: min_sep,
            cond: f64::INFINITY,
        });
    }

    let kernel = FejerKernel::new(f_c);
    // Unknowns [alpha_1..alpha_n, beta_1..beta_n].
    let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let mut b = DVector::<f64>::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            let dt = nodes[i] - nodes[j];
            a[(i, j)] = kernel.eval(dt);
            a[(i, n + j)] = kernel.eval_d1(dt);
            a[(n + i, j)] = kernel.eval_d1(dt);
            a[(n + i, n + j)] = kernel.eval_d2(dt);
        }
        b[i] = gamma[i];
    }

    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > MAX_CONDITION_NUMBER {
        return Err(Error::SeparationViolation {
            separation: sep,
            minimum: min_sep,
            cond,
        });
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SeparationViolation {
            separation: sep,
            minimum: min_sep,
            cond,
        })?;
    let alpha = sol.rows(0, n).iter().copied().collect::<Vec<_>>();
    let beta = sol.rows(n, n).iter().copied().collect::<Vec<_>>();

    // c_l = kc_l * sum_j (alpha_j + 2 pi i l beta_j) e^{-2 pi i l t_j}.
    let mut coeffs = vec![Complex64::new(0.0, 0.0); (2 * f_c + 1) as usize];
    for l in -f_c..=f_c {
        let kc = kernel.coeff(l);
        if kc == 0.0 {
            continue;
        }
        let mut s = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let phase = -TWO_PI * l as f64 * nodes[j];
            let e = Complex64::new(phase.cos(), phase.sin());
            s += (Complex64::new(alpha[j], 0.0)
                + Complex64::new(0.0, TWO_PI * l as f64) * beta[j])
                * e;
        }
        coeffs[(l + f_c) as usize] = kc * s;
    }

    Ok(StaticCertificate {
        f_c,
        frame: 0,
        coeffs,
        nodes: nodes.to_vec(),
        gamma: gamma.to_vec(),
    })
}

/// A dynamical certificate: the average of per-frame interpolants over a
/// frame set of size at least 3.
#[derive(Debug, Clone)]
pub struct DynamicalCertificate {
    pub frames: Vec<StaticCertificate>,
    pub k_set: Vec<i64>,
    pub tau: f64,
}

impl DynamicalCertificate {
    /// `q(x, v) = (1/|K_set|) sum_k q_k(x + k tau v)`.
    pub fn eval(&self, x: f64, v: f64) -> f64 {
        let s: f64 = self
            .frames
            .iter()
            .map(|c| c.eval(x + c.frame as f64 * self.tau * v))
            .sum();
        s / self.frames.len() as f64
    }

    pub fn f_c(&self) -> i64 {
        self.frames[0].f_c
    }

    /// Averaged coefficients `C_l(v) = (1/|K_set|) sum_k c_{k,l} e^{2 pi i l k tau v}`,
    /// turning a fixed-velocity slice into a single trigonometric polynomial
    /// in `x` (used by the fast grid scan).
    fn row_coeffs(&self, v: f64) -> Vec<Complex64> {
        let f_c = self.f_c();
        let mut out = vec![Complex64::new(0.0, 0.0); (2 * f_c + 1) as usize];
        for cert in &self.frames {
            let kt = cert.frame as f64 * self.tau;
            for l in -f_c..=f_c {
                let phase = TWO_PI * l as f64 * kt * v;
                out[(l + f_c) as usize] +=
                    cert.coeff(l) * Complex64::new(phase.cos(), phase.sin());
            }
        }
        let scale = 1.0 / self.frames.len() as f64;
        for c in &mut out {
            *c *= scale;
        }
        out
    }
}

/// Builds the static average certificate: per-frame interpolants with
/// `gamma_{i,k} = eta_i` at the frame positions `x_i + k tau v_i`.
pub fn build_static_average(
    cfg: &Configuration,
    eta: &SignVector,
    k_set: &[i64],
    f_c: i64,
) -> Result<DynamicalCertificate> {
    if eta.len() != cfg.len() {
        return Err(Error::DimensionMismatch {
            expected: cfg.len(),
            got: eta.len(),
        });
    }
    build_with_gammas(cfg, k_set, f_c, |i, _k| eta.0[i])
}

fn build_with_gammas(
    cfg: &Configuration,
    k_set: &[i64],
    f_c: i64,
    gamma: impl Fn(usize, i64) -> f64,
) -> Result<DynamicalCertificate> {
    if cfg.grid.dim != 1 {
        return Err(Error::UnsupportedDimension(cfg.grid.dim));
    }
    if k_set.len() < 3 {
        return Err(Error::TooFewFrames {
            required: 3,
            got: k_set.len(),
        });
    }
    let mut frames = Vec::with_capacity(k_set.len());
    for &k in k_set {
        cfg.grid.check_frame(k)?;
        let kt = k as f64 * cfg.grid.tau;
        let nodes: Vec<f64> = cfg
            .particles
            .iter()
            .map(|p| (p.position[0] + kt * p.velocity[0]).rem_euclid(1.0))
            .collect();
        let gammas: Vec<f64> = (0..cfg.len()).map(|i| gamma(i, k)).collect();
        let mut cert = build_static_certificate(&nodes, &gammas, f_c)?;
        cert.frame = k;
        frames.push(cert);
    }
    Ok(DynamicalCertificate {
        frames,
        k_set: k_set.to_vec(),
        tau: cfg.grid.tau,
    })
}

/// Builds the ghost-neutralizing perturbation of the static average for the
/// three-equispaced-static-particles configuration with all-ones signs
/// (K = 1, frame set `{-1, 0, 1}`).
///
/// Per-frame values: the outer particles get `1 - eps` at frames -1 and 1
/// and `1 + 2 eps` at frame 0; the middle particle gets 1 everywhere. The
/// per-particle mean stays 1 while the value at each of the two ghosts drops
/// to `1 - 2 eps / 3`.
pub fn build_perturbed_certificate(
    cfg: &Configuration,
    eps: f64,
    f_c: i64,
) -> Result<DynamicalCertificate> {
    if cfg.grid.dim != 1 {
        return Err(Error::UnsupportedDimension(cfg.grid.dim));
    }
    if cfg.grid.k_max != 1 {
        return Err(Error::InvalidConfiguration(format!(
            "perturbed certificate requires K = 1, got K = {}",
            cfg.grid.k_max
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidConfiguration(format!(
            "eps must lie in [0, 1), got {eps}"
        )));
    }
    if cfg.len() != 3 || cfg.particles.iter().any(|p| p.velocity[0] != 0.0) {
        return Err(Error::InvalidConfiguration(
            "perturbed certificate requires 3 static particles".into(),
        ));
    }
    // Identify the middle particle by position.
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        cfg.particles[a].position[0]
            .partial_cmp(&cfg.particles[b].position[0])
            .unwrap()
    });
    let mid = order[1];
    let d01 = cfg.particles[order[1]].position[0] - cfg.particles[order[0]].position[0];
    let d12 = cfg.particles[order[2]].position[0] - cfg.particles[order[1]].position[0];
    if (d01 - d12).abs() > 1e-12 {
        return Err(Error::InvalidConfiguration(
            "perturbed certificate requires equispaced particles".into(),
        ));
    }
    build_with_gammas(cfg, &[-1, 0, 1], f_c, |i, k| {
        if i == mid {
            1.0
        } else if k == 0 {
            1.0 + 2.0 * eps
        } else {
            1.0 - eps
        }
    })
}

/// One offending grid point found during verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub x: f64,
    pub v: f64,
    pub value: f64,
}

/// Outcome of a certificate grid verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    /// (a) `max_i |q(x_i, v_i) - eta_i| <= 1e-8`.
    pub interpolation_ok: bool,
    pub interpolation_max_err: f64,
    /// (b) `max |q| <= 1 + 1e-6` over the grid intersected with the domain.
    pub bound_ok: bool,
    pub max_abs: f64,
    /// (c) `|q| <= 1 - margin` outside exclusion balls around particles and
    /// detected ghosts.
    pub strict_ok: bool,
    pub margin: f64,
    pub violations: Vec<Violation>,
    /// Ghost points used for the exclusion set.
    pub ghosts: Vec<(f64, f64)>,
}

impl VerificationReport {
    pub fn all_ok(&self) -> bool {
        self.interpolation_ok && self.bound_ok && self.strict_ok
    }
}

const MAX_REPORTED_VIOLATIONS: usize = 64;

/// Scans `|q|` over a uniform grid of the phase-space domain.
///
/// The per-row evaluation folds the frame average into a single
/// trigonometric polynomial in `x` and runs a Horner recursion, so the scan
/// cost is `O(rows * cols * f_c)` multiplications with no transcendentals in
/// the inner loop.
pub fn verify_certificate(
    cert: &DynamicalCertificate,
    cfg: &Configuration,
    eta: &SignVector,
    grid_resolution: usize,
    margin: f64,
) -> Result<VerificationReport> {
    if cfg.grid.dim != 1 {
        return Err(Error::UnsupportedDimension(cfg.grid.dim));
    }
    let f_c = cert.f_c();
    let min_res = 4 * f_c as usize * cfg.grid.frame_count();
    if grid_resolution < min_res {
        return Err(Error::InvalidConfiguration(format!(
            "grid resolution {grid_resolution} below required {min_res}"
        )));
    }

    // (a) interpolation at the particles.
    let mut interp_err = 0.0_f64;
    for (p, &e) in cfg.particles.iter().zip(&eta.0) {
        interp_err = interp_err.max((cert.eval(p.position[0], p.velocity[0]) - e).abs());
    }

    let ghosts: Vec<(f64, f64)> = if cfg.len() >= cert.k_set.len() {
        detect_ghosts(cfg, &cert.k_set)?
            .into_iter()
            .map(|g| (g.position, g.velocity))
            .collect()
    } else {
        Vec::new()
    };

    let domain = PhaseSpaceDomain::new(cfg.grid);
    let v_bound = domain.velocity_bound();
    let r_excl = EXCLUSION_RADIUS_FACTOR / f_c as f64;
    let k_tau = cfg.grid.delta();
    let excluded = |x: f64, v: f64| -> bool {
        let near = |(px, pv): (f64, f64)| (x - px).abs() + k_tau * (v - pv).abs() < r_excl;
        cfg.particles
            .iter()
            .map(|p| (p.position[0], p.velocity[0]))
            .any(near)
            || ghosts.iter().copied().any(near)
    };

    struct RowResult {
        max_abs: f64,
        violations: Vec<Violation>,
    }

    let n = grid_resolution;
    let rows: Vec<RowResult> = (0..=n)
        .into_par_iter()
        .map(|iv| {
            let v = -v_bound + 2.0 * v_bound * iv as f64 / n as f64;
            let coeffs = cert.row_coeffs(v);
            let dx = 1.0 / n as f64;
            // z step for the Horner recursion along the row.
            let step = Complex64::new((TWO_PI * dx).cos(), (TWO_PI * dx).sin());
            let mut z = Complex64::new(1.0, 0.0);
            let mut res = RowResult {
                max_abs: 0.0,
                violations: Vec::new(),
            };
            for ix in 0..=n {
                let x = ix as f64 * dx;
                if domain.contains(&[x], &[v]) {
                    // q = Re( z^{-f_c} * sum_{l=0}^{2 f_c} coeffs[l] z^l )
                    let mut acc = Complex64::new(0.0, 0.0);
                    for c in coeffs.iter().rev() {
                        acc = acc * z + c;
                    }
                    let phase = -TWO_PI * f_c as f64 * x;
                    let q = (acc * Complex64::new(phase.cos(), phase.sin())).re;
                    let a = q.abs();
                    res.max_abs = res.max_abs.max(a);
                    if a > 1.0 - margin && !excluded(x, v) {
                        res.violations.push(Violation { x, v, value: q });
                    }
                }
                z *= step;
            }
            res
        })
        .collect();

    let max_abs = rows.iter().map(|r| r.max_abs).fold(0.0, f64::max);
    let mut violations: Vec<Violation> = Vec::new();
    for r in rows {
        for viol in r.violations {
            if violations.len() < MAX_REPORTED_VIOLATIONS {
                violations.push(viol);
            }
        }
    }

    Ok(VerificationReport {
        interpolation_ok: interp_err <= 1e-8,
        interpolation_max_err: interp_err,
        bound_ok: max_abs <= 1.0 + 1e-6,
        max_abs,
        strict_ok: violations.is_empty(),
        margin,
        violations,
        ghosts,
    })
}

/// Inputs for the discrete stability-condition checker.
#[derive(Debug, Clone)]
pub struct StabilityInputs {
    pub delta_x: f64,
    pub delta_v: f64,
    pub f_c: i64,
    pub configuration: Configuration,
}

/// Outcome of the stability check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Grid-width relation `dx^2 <= K(K+1)/3 tau^2 dv^2`.
    pub relation_ok: bool,
    /// Wrap-around per-frame separation `>= 1.87/f_c` at every frame.
    pub separation_ok: bool,
    /// Frame-averaged truncated squared distance `>= dx^2` outside the
    /// particle neighborhoods.
    pub ghost_condition_ok: bool,
    /// Proved ceiling `1 - C1 f_c^2 dx^2` for the off-support certificate
    /// magnitude.
    pub margin_bound: f64,
}

/// Points per axis used to subsample the discrete grid in the ghost
/// condition when the grid itself is finer.
const STABILITY_SCAN_CAP: usize = 256;

pub fn check_stability_conditions(inp: &StabilityInputs) -> Result<StabilityReport> {
    let cfg = &inp.configuration;
    if cfg.grid.dim != 1 {
        return Err(Error::UnsupportedDimension(cfg.grid.dim));
    }
    if inp.delta_x <= 0.0 || inp.delta_v <= 0.0 {
        return Err(Error::InvalidConfiguration(
            "grid widths must be positive".into(),
        ));
    }
    let k = cfg.grid.k_max as f64;
    let tau = cfg.grid.tau;
    let f_c = inp.f_c as f64;
    let dx2 = inp.delta_x * inp.delta_x;

    let relation_ok = dx2 <= k * (k + 1.0) / 3.0 * tau * tau * inp.delta_v * inp.delta_v;

    let mut separation_ok = true;
    for kk in cfg.grid.frames() {
        let kt = kk as f64 * tau;
        for i in 0..cfg.len() {
            for j in (i + 1)..cfg.len() {
                let pi = cfg.particles[i].position[0] + kt * cfg.particles[i].velocity[0];
                let pj = cfg.particles[j].position[0] + kt * cfg.particles[j].velocity[0];
                if torus_distance(pi, pj) < SEPARATION_CONSTANT / f_c {
                    separation_ok = false;
                }
            }
        }
    }

    // Frame-averaged min(truncated squared distance, C2^2/f_c^2) at (x, v).
    let truncated_mean = |x: f64, v: f64| -> f64 {
        let cap = (C2 / f_c) * (C2 / f_c);
        let mut sum = 0.0;
        for kk in cfg.grid.frames() {
            let kt = kk as f64 * tau;
            let d2 = cfg
                .particles
                .iter()
                .map(|p| {
                    let d = p.position[0] - x + kt * (p.velocity[0] - v);
                    d * d
                })
                .fold(f64::INFINITY, f64::min);
            sum += d2.min(cap);
        }
        sum / cfg.grid.frame_count() as f64
    };
    let in_neighborhood = |x: f64, v: f64| -> bool {
        cfg.particles.iter().any(|p| {
            (x - p.position[0]).abs() + k * tau * (v - p.velocity[0]).abs() < C2 / f_c
        })
    };

    let domain = PhaseSpaceDomain::new(cfg.grid);
    let v_bound = domain.velocity_bound();
    let step_x = inp.delta_x.max(1.0 / STABILITY_SCAN_CAP as f64);
    let step_v = inp.delta_v.max(2.0 * v_bound / STABILITY_SCAN_CAP as f64);

    let mut ghost_condition_ok = true;
    let mut v = -v_bound;
    'outer: while v <= v_bound {
        let mut x = 0.0;
        while x <= 1.0 {
            if domain.contains(&[x], &[v]) && !in_neighborhood(x, v) && truncated_mean(x, v) < dx2
            {
                ghost_condition_ok = false;
                break 'outer;
            }
            x += step_x;
        }
        v += step_v;
    }
    // Ghost points of the full frame set are where the sum collapses to
    // zero; include them explicitly since a coarse scan can miss them.
    if ghost_condition_ok && cfg.len() >= cfg.grid.frame_count() {
        let frames: Vec<i64> = cfg.grid.frames().collect();
        for g in detect_ghosts(cfg, &frames)? {
            if !in_neighborhood(g.position, g.velocity)
                && truncated_mean(g.position, g.velocity) < dx2
            {
                ghost_condition_ok = false;
                break;
            }
        }
    }

    Ok(StabilityReport {
        relation_ok,
        separation_ok,
        ghost_condition_ok,
        margin_bound: 1.0 - C1 * f_c * f_c * dx2,
    })
}

/// On-disk form of a dynamical certificate:
/// `{"K_set": [..], "frames": [{"k": .., "c": [[re, im], ..], "gamma": [..]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFile {
    #[serde(rename = "K_set")]
    pub k_set: Vec<i64>,
    pub tau: f64,
    pub f_c: i64,
    pub frames: Vec<CertificateFrameFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFrameFile {
    pub k: i64,
    pub c: Vec<[f64; 2]>,
    pub gamma: Vec<f64>,
}

impl From<&DynamicalCertificate> for CertificateFile {
    fn from(cert: &DynamicalCertificate) -> Self {
        CertificateFile {
            k_set: cert.k_set.clone(),
            tau: cert.tau,
            f_c: cert.f_c(),
            frames: cert
                .frames
                .iter()
                .map(|f| CertificateFrameFile {
                    k: f.frame,
                    c: f.coeffs.iter().map(|z| [z.re, z.im]).collect(),
                    gamma: f.gamma.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{Particle, TimeGrid};
    use proptest::prelude::*;

    fn grid(k: i64, tau: f64) -> TimeGrid {
        TimeGrid::new(k, tau, 1).unwrap()
    }

    fn equispaced_static(delta: f64, g: TimeGrid) -> Configuration {
        Configuration::new(
            vec![
                Particle::new_1d(0.5 - delta, 0.0, 1.0),
                Particle::new_1d(0.5, 0.0, 1.0),
                Particle::new_1d(0.5 + delta, 0.0, 1.0),
            ],
            g,
        )
        .unwrap()
    }

    #[test]
    fn kernel_peaks_at_one_and_decays() {
        let kern = FejerKernel::new(32);
        assert!((kern.eval(0.0) - 1.0).abs() < 1e-12);
        assert!(kern.eval_d1(0.0).abs() < 1e-9);
        for i in 1..50 {
            let t = i as f64 * 0.01;
            assert!(kern.eval(t).abs() < 1.0);
        }
    }

    #[test]
    fn single_node_certificate_interpolates_and_stays_below_one() {
        let cert = build_static_certificate(&[0.5], &[1.0], 32).unwrap();
        assert!((cert.eval(0.5) - 1.0).abs() < 1e-10);
        assert!(cert.eval_d1(0.5).abs() < 1e-8);
        for i in 0..400 {
            let t = i as f64 / 400.0;
            if torus_distance(t, 0.5) > 1e-3 {
                assert!(cert.eval(t).abs() < 1.0);
            }
        }
    }

    #[test]
    fn three_equispaced_nodes_at_critical_separation_build() {
        let f_c = 128;
        let delta = SEPARATION_CONSTANT / f_c as f64;
        let nodes = [0.5 - delta, 0.5, 0.5 + delta];
        let cert = build_static_certificate(&nodes, &[1.0, 1.0, 1.0], f_c).unwrap();
        for &t in &nodes {
            assert!((cert.eval(t) - 1.0).abs() < 1e-8);
            assert!(cert.eval_d1(t).abs() < 1e-6);
        }
    }

    #[test]
    fn under_separated_nodes_are_rejected() {
        let f_c = 64;
        let delta = 0.5 / f_c as f64;
        let nodes = [0.5 - delta, 0.5, 0.5 + delta];
        assert!(matches!(
            build_static_certificate(&nodes, &[1.0, 1.0, 1.0], f_c),
            Err(Error::SeparationViolation { .. })
        ));
    }

    #[test]
    fn static_average_interpolates_and_hits_ghosts_at_one() {
        let g = grid(1, 0.5);
        let f_c = 128;
        let delta = SEPARATION_CONSTANT / f_c as f64;
        let cfg = equispaced_static(delta, g);
        let eta = SignVector::ones(3);
        let k_set: Vec<i64> = g.frames().collect();
        let cert = build_static_average(&cfg, &eta, &k_set, f_c).unwrap();
        for p in &cfg.particles {
            assert!((cert.eval(p.position[0], p.velocity[0]) - 1.0).abs() < 1e-8);
        }
        // Ghosts of the equispaced static triple sit at (0.5, +-delta/tau).
        for sign in [-1.0, 1.0] {
            let v = sign * delta / g.tau;
            assert!((cert.eval(0.5, v).abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn perturbed_certificate_dips_at_ghosts_keeping_particles_at_one() {
        let g = grid(1, 0.5);
        let f_c = 128;
        let delta = SEPARATION_CONSTANT / f_c as f64;
        let cfg = equispaced_static(delta, g);
        let eps = 0.08;
        let cert = build_perturbed_certificate(&cfg, eps, f_c).unwrap();
        for p in &cfg.particles {
            assert!((cert.eval(p.position[0], p.velocity[0]) - 1.0).abs() < 1e-8);
        }
        let expected_ghost = 1.0 - 2.0 * eps / 3.0;
        for sign in [-1.0, 1.0] {
            let v = sign * delta / g.tau;
            assert!((cert.eval(0.5, v) - expected_ghost).abs() < 1e-6);
        }
        // eps = 0 degenerates to the static average: ghost value 1.
        let plain = build_perturbed_certificate(&cfg, 0.0, f_c).unwrap();
        assert!((plain.eval(0.5, delta / g.tau) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn frame_certificates_satisfy_their_node_constraints() {
        let g = grid(1, 0.5);
        let f_c = 128;
        let delta = SEPARATION_CONSTANT / f_c as f64;
        let cfg = equispaced_static(delta, g);
        let eps = 0.08;
        let cert = build_perturbed_certificate(&cfg, eps, f_c).unwrap();
        for frame in &cert.frames {
            for (t, gamma) in frame.nodes.iter().zip(&frame.gamma) {
                assert!((frame.eval(*t) - gamma).abs() < 1e-8);
                assert!(frame.eval_d1(*t).abs() < 1e-6);
            }
        }
        // Per-particle mean of the gamma values is 1.
        for i in 0..3 {
            let mean: f64 =
                cert.frames.iter().map(|f| f.gamma[i]).sum::<f64>() / cert.frames.len() as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn verification_flags_ghosts_then_clears_after_perturbation() {
        let g = grid(1, 0.5);
        let f_c = 32;
        let delta = SEPARATION_CONSTANT / f_c as f64;
        let cfg = equispaced_static(delta, g);
        let eta = SignVector::ones(3);
        let k_set: Vec<i64> = g.frames().collect();
        let resolution = 4 * f_c as usize * g.frame_count();

        let avg = build_static_average(&cfg, &eta, &k_set, f_c).unwrap();
        let report = verify_certificate(&avg, &cfg, &eta, resolution, 0.01).unwrap();
        assert!(report.interpolation_ok);
        assert!(report.bound_ok);
        assert_eq!(report.ghosts.len(), 2);

        let perturbed = build_perturbed_certificate(&cfg, 0.08, f_c).unwrap();
        let report = verify_certificate(&perturbed, &cfg, &eta, resolution, 0.01).unwrap();
        assert!(report.all_ok(), "violations: {:?}", report.violations);
    }

    #[test]
    fn verification_passes_on_a_separated_ghost_free_configuration() {
        let g = grid(1, 0.5);
        let f_c = 32;
        let cfg = Configuration::new(
            vec![
                Particle::new_1d(0.3, 0.05, 1.0),
                Particle::new_1d(0.55, -0.05, 1.0),
                Particle::new_1d(0.8, 0.02, 1.0),
            ],
            g,
        )
        .unwrap();
        let eta = SignVector::ones(3);
        let k_set: Vec<i64> = g.frames().collect();
        let cert = build_static_average(&cfg, &eta, &k_set, f_c).unwrap();
        let resolution = 4 * f_c as usize * g.frame_count();
        let report = verify_certificate(&cert, &cfg, &eta, resolution, 1e-3).unwrap();
        assert!(report.all_ok(), "violations: {:?}", report.violations);
    }

    #[test]
    fn stability_relation_reduces_to_the_k2_closed_form() {
        // K = 2, tau = 0.5: K(K+1)/3 tau^2 = 0.5, so dx <= dv / sqrt(2).
        let g = grid(2, 0.5);
        let cfg = Configuration::new(
            vec![Particle::new_1d(0.3, 0.0, 1.0), Particle::new_1d(0.7, 0.0, 1.0)],
            g,
        )
        .unwrap();
        let dv = 1e-3;
        for (dx, expect) in [
            (dv / 2.0_f64.sqrt() * 0.999, true),
            (dv / 2.0_f64.sqrt() * 1.001, false),
        ] {
            let rep = check_stability_conditions(&StabilityInputs {
                delta_x: dx,
                delta_v: dv,
                f_c: 20,
                configuration: cfg.clone(),
            })
            .unwrap();
            assert_eq!(rep.relation_ok, expect);
        }
    }

    #[test]
    fn margin_bound_arithmetic() {
        let g = grid(2, 0.5);
        let cfg = Configuration::new(
            vec![Particle::new_1d(0.3, 0.0, 1.0), Particle::new_1d(0.7, 0.0, 1.0)],
            g,
        )
        .unwrap();
        let rep = check_stability_conditions(&StabilityInputs {
            delta_x: 1.0 / 2000.0,
            delta_v: 1.0 / 1000.0,
            f_c: 20,
            configuration: cfg,
        })
        .unwrap();
        let expected = 1.0 - C1 * 400.0 * 2.5e-7;
        assert!((rep.margin_bound - expected).abs() < 1e-12);
    }

    #[test]
    fn ghost_configurations_fail_the_stability_condition() {
        let g = grid(1, 0.5);
        let cfg = equispaced_static(0.3, g);
        let rep = check_stability_conditions(&StabilityInputs {
            delta_x: 1e-3,
            delta_v: 2e-3,
            f_c: 20,
            configuration: cfg,
        })
        .unwrap();
        assert!(!rep.ghost_condition_ok);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn shrinking_dx_never_breaks_the_stability_conditions(
            dx_scale in 0.05f64..1.0
        ) {
            let g = grid(2, 0.5);
            let cfg = Configuration::new(
                vec![
                    Particle::new_1d(0.25, 0.03, 1.0),
                    Particle::new_1d(0.55, -0.02, 1.0),
                    Particle::new_1d(0.85, 0.01, 1.0),
                ],
                g,
            )
            .unwrap();
            let dv = 2e-3;
            let base = check_stability_conditions(&StabilityInputs {
                delta_x: dv / 2.0_f64.sqrt(),
                delta_v: dv,
                f_c: 20,
                configuration: cfg.clone(),
            })
            .unwrap();
            let shrunk = check_stability_conditions(&StabilityInputs {
                delta_x: dv / 2.0_f64.sqrt() * dx_scale,
                delta_v: dv,
                f_c: 20,
                configuration: cfg,
            })
            .unwrap();
            prop_assert!(!base.relation_ok || shrunk.relation_ok);
            prop_assert!(!base.ghost_condition_ok || shrunk.ghost_condition_ok);
        }
    }
}

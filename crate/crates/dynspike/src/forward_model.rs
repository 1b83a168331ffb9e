//! Measurement operators.
//!
//! The lifted low-pass Fourier operator (d = 1) samples the frequencies
//! `(l, k tau l)` for `|l| <= f_c` and frames `k in -K..=K`; the Gaussian
//! point-spread-function operator (d = 2) renders real pixel frames. Both
//! are direct summations over the spikes; no FFT is used since the problem
//! sizes are tiny.
//!
//! Sign convention: the forward map uses `exp(-2 pi i l x)` throughout; the
//! certificate module uses the conjugate sign, the two being related by
//! `l -> -l` over the symmetric index set.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{position_at, Configuration, TimeGrid};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Lifted low-pass Fourier operator for d = 1.
#[derive(Debug, Clone, Copy)]
pub struct FourierOperator {
    /// Cutoff frequency; the index set is `-f_c..=f_c`.
    pub f_c: i64,
    pub grid: TimeGrid,
}

impl FourierOperator {
    pub fn new(f_c: i64, grid: TimeGrid) -> Result<Self> {
        if grid.dim != 1 {
            return Err(Error::UnsupportedDimension(grid.dim));
        }
        if f_c < 1 {
            return Err(Error::InvalidConfiguration(format!(
                "cutoff frequency must be >= 1, got {f_c}"
            )));
        }
        Ok(FourierOperator { f_c, grid })
    }

    pub fn n_freqs(&self) -> usize {
        (2 * self.f_c + 1) as usize
    }

    pub fn freqs(&self) -> impl Iterator<Item = i64> {
        -self.f_c..=self.f_c
    }

    /// The realized (space-frequency, velocity-frequency) pairs
    /// `(l, k tau l)`.
    pub fn butterfly_set(&self) -> Vec<(f64, f64)> {
        let mut set = Vec::with_capacity(self.n_freqs() * self.grid.frame_count());
        for k in self.grid.frames() {
            for l in self.freqs() {
                set.push((l as f64, k as f64 * self.grid.tau * l as f64));
            }
        }
        set
    }
}

/// Complex data indexed by `(l, k)`, row-major with `k` outer and `l` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTensor {
    pub f_c: i64,
    pub k_max: i64,
    pub tau: f64,
    pub data: Vec<Complex64>,
}

impl MeasurementTensor {
    pub fn zeros(op: &FourierOperator) -> Self {
        MeasurementTensor {
            f_c: op.f_c,
            k_max: op.grid.k_max,
            tau: op.grid.tau,
            data: vec![Complex64::new(0.0, 0.0); op.n_freqs() * op.grid.frame_count()],
        }
    }

    pub fn n_freqs(&self) -> usize {
        (2 * self.f_c + 1) as usize
    }

    pub fn frame_count(&self) -> usize {
        (2 * self.k_max + 1) as usize
    }

    fn index(&self, l: i64, k: i64) -> usize {
        let row = (k + self.k_max) as usize;
        let col = (l + self.f_c) as usize;
        row * self.n_freqs() + col
    }

    pub fn get(&self, l: i64, k: i64) -> Complex64 {
        self.data[self.index(l, k)]
    }

    pub fn get_mut(&mut self, l: i64, k: i64) -> &mut Complex64 {
        let i = self.index(l, k);
        &mut self.data[i]
    }

    /// Single-frame slice, `l` running `-f_c..=f_c`.
    pub fn frame(&self, k: i64) -> &[Complex64] {
        let n = self.n_freqs();
        let row = (k + self.k_max) as usize;
        &self.data[row * n..(row + 1) * n]
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Sub for &MeasurementTensor {
    type Output = MeasurementTensor;
    fn sub(self, rhs: &MeasurementTensor) -> MeasurementTensor {
        assert_eq!(self.data.len(), rhs.data.len());
        MeasurementTensor {
            f_c: self.f_c,
            k_max: self.k_max,
            tau: self.tau,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Entry `(l, k)` is `sum_i w_i exp(-2 pi i l (x_i + k tau v_i))`.
pub fn apply_fourier(op: &FourierOperator, cfg: &Configuration) -> Result<MeasurementTensor> {
    if cfg.grid.dim != 1 {
        return Err(Error::UnsupportedDimension(cfg.grid.dim));
    }
    if cfg.grid != op.grid {
        return Err(Error::InvalidConfiguration(
            "configuration and operator use different time grids".into(),
        ));
    }
    let mut y = MeasurementTensor::zeros(op);
    for p in &cfg.particles {
        for k in op.grid.frames() {
            let pos = p.position[0] + k as f64 * op.grid.tau * p.velocity[0];
            for l in op.freqs() {
                let phase = -TWO_PI * l as f64 * pos;
                *y.get_mut(l, k) += p.weight * Complex64::new(phase.cos(), phase.sin());
            }
        }
    }
    Ok(y)
}

/// Correlation of a residual tensor against a unit spike at `(x, v)`:
/// `sum_{l,k} conj(residual_{l,k}) exp(-2 pi i l (x + k tau v))`, with the
/// exact analytic partial derivatives in `x` and `v`.
pub fn correlate(
    op: &FourierOperator,
    residual: &MeasurementTensor,
    x: f64,
    v: f64,
) -> (Complex64, Complex64, Complex64) {
    let mut value = Complex64::new(0.0, 0.0);
    let mut dx = Complex64::new(0.0, 0.0);
    let mut dv = Complex64::new(0.0, 0.0);
    for k in op.grid.frames() {
        let kt = k as f64 * op.grid.tau;
        let pos = x + kt * v;
        for l in op.freqs() {
            let lf = l as f64;
            let phase = -TWO_PI * lf * pos;
            let e = Complex64::new(phase.cos(), phase.sin());
            let term = residual.get(l, k).conj() * e;
            value += term;
            // d/dx exp(-2 pi i l pos) = -2 pi i l * exp(...)
            let factor = Complex64::new(0.0, -TWO_PI * lf);
            dx += term * factor;
            dv += term * factor * kt;
        }
    }
    (value, dx, dv)
}

/// Gaussian point-spread-function operator for d = 2. Coordinates are in mm;
/// pixel centers sit at `(ix + 0.5) * pitch`.
#[derive(Debug, Clone, Copy)]
pub struct PsfOperator {
    pub sigma: f64,
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub grid: TimeGrid,
}

impl PsfOperator {
    pub fn new(sigma: f64, width: usize, height: usize, pitch: f64, grid: TimeGrid) -> Result<Self> {
        if grid.dim != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: grid.dim,
            });
        }
        if sigma <= 0.0 || pitch <= 0.0 || width == 0 || height == 0 {
            return Err(Error::InvalidConfiguration(
                "PSF operator requires positive sigma, pitch and pixel counts".into(),
            ));
        }
        Ok(PsfOperator {
            sigma,
            width,
            height,
            pitch,
            grid,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn field_width(&self) -> f64 {
        self.width as f64 * self.pitch
    }

    pub fn field_height(&self) -> f64 {
        self.height as f64 * self.pitch
    }

    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            (ix as f64 + 0.5) * self.pitch,
            (iy as f64 + 0.5) * self.pitch,
        )
    }

    pub fn in_field(&self, x: f64, y: f64) -> bool {
        (0.0..=self.field_width()).contains(&x) && (0.0..=self.field_height()).contains(&y)
    }

    /// PSF value at offset `(dx, dy)` from the source.
    pub fn psf(&self, dx: f64, dy: f64) -> f64 {
        (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Pixel sum of a single unit source rendered at the field center; used
    /// by the ultrasound pipeline to estimate the TV budget from energy.
    pub fn unit_bubble_energy(&self) -> f64 {
        let cx = self.field_width() / 2.0;
        let cy = self.field_height() / 2.0;
        let mut sum = 0.0;
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (px, py) = self.pixel_center(ix, iy);
                sum += self.psf(px - cx, py - cy);
            }
        }
        sum
    }
}

/// A stack of `2K + 1` real image frames, row-major pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub pitch_mm: f64,
    pub sigma: f64,
    pub k_max: i64,
    pub tau: f64,
    pub frames: Vec<Vec<f64>>,
}

impl FrameStack {
    pub fn zeros(op: &PsfOperator) -> Self {
        FrameStack {
            width: op.width,
            height: op.height,
            pitch_mm: op.pitch,
            sigma: op.sigma,
            k_max: op.grid.k_max,
            tau: op.grid.tau,
            frames: vec![vec![0.0; op.n_pixels()]; op.grid.frame_count()],
        }
    }

    pub fn frame(&self, k: i64) -> &[f64] {
        &self.frames[(k + self.k_max) as usize]
    }

    pub fn norm_l2(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter())
            .map(|p| p * p)
            .sum::<f64>()
            .sqrt()
    }
}

/// Frame `k` pixel value at center `c` is
/// `sum_i w_i exp(-|c - (x_i + k tau v_i)|^2 / (2 sigma^2))`. A particle
/// leaving the field of view at any frame is a hard error, keeping the
/// operator exactly linear on its domain.
pub fn apply_psf(op: &PsfOperator, cfg: &Configuration) -> Result<FrameStack> {
    if cfg.grid.dim != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: cfg.grid.dim,
        });
    }
    let mut stack = FrameStack::zeros(op);
    for p in &cfg.particles {
        for k in op.grid.frames() {
            let pos = position_at(p, k, &op.grid)?;
            if !op.in_field(pos[0], pos[1]) {
                return Err(Error::OutOfField {
                    k,
                    x: pos[0],
                    y: pos[1],
                });
            }
            let frame = &mut stack.frames[(k + op.grid.k_max) as usize];
            for iy in 0..op.height {
                for ix in 0..op.width {
                    let (px, py) = op.pixel_center(ix, iy);
                    frame[iy * op.width + ix] += p.weight * op.psf(px - pos[0], py - pos[1]);
                }
            }
        }
    }
    Ok(stack)
}

/// Noise injection parameters: per-entry scale and RNG seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, seed: u64) -> Self {
        NoiseSpec { alpha, seed }
    }
}

/// Complex noise `alpha (N1 + i N2)` per tensor entry, reproducible from the
/// seed.
pub fn add_noise_tensor(y: &MeasurementTensor, spec: &NoiseSpec) -> MeasurementTensor {
    let mut out = y.clone();
    if spec.alpha == 0.0 {
        return out;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    for z in &mut out.data {
        let n1: f64 = StandardNormal.sample(&mut rng);
        let n2: f64 = StandardNormal.sample(&mut rng);
        *z += spec.alpha * Complex64::new(n1, n2);
    }
    out
}

/// Real noise `alpha N` per pixel, reproducible from the seed.
pub fn add_noise_frames(stack: &FrameStack, spec: &NoiseSpec) -> FrameStack {
    let mut out = stack.clone();
    if spec.alpha == 0.0 {
        return out;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    for frame in &mut out.frames {
        for p in frame.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *p += spec.alpha * n;
        }
    }
    out
}

/// Per-particle accelerations for quadratic trajectories
/// `x(t) = x + v t + (a/2) t^2`. The normalized curvature is
/// `beta = a tau K / (2 v)`.
#[derive(Debug, Clone)]
pub struct CurvedTrajectorySpec {
    pub accelerations: Vec<f64>,
}

impl CurvedTrajectorySpec {
    pub fn new(accelerations: Vec<f64>) -> Self {
        CurvedTrajectorySpec { accelerations }
    }

    /// Accelerations from a common normalized curvature: `a = 2 v beta / (tau K)`;
    /// particles with zero velocity get zero acceleration.
    pub fn from_beta(cfg: &Configuration, beta: f64) -> Self {
        let tk = cfg.grid.delta();
        CurvedTrajectorySpec {
            accelerations: cfg
                .particles
                .iter()
                .map(|p| 2.0 * p.velocity[0] * beta / tk)
                .collect(),
        }
    }
}

/// Entry `(l, k)` is
/// `sum_i w_i exp(-2 pi i l (x_i + v_i k tau + (a_i/2)(k tau)^2))`.
/// Errors if any curved trajectory exits `[0,1]` at a sampled frame.
pub fn apply_fourier_curved(
    op: &FourierOperator,
    cfg: &Configuration,
    curvature: &CurvedTrajectorySpec,
) -> Result<MeasurementTensor> {
    if curvature.accelerations.len() != cfg.len() {
        return Err(Error::DimensionMismatch {
            expected: cfg.len(),
            got: curvature.accelerations.len(),
        });
    }
    let mut y = MeasurementTensor::zeros(op);
    for (p, &a) in cfg.particles.iter().zip(&curvature.accelerations) {
        for k in op.grid.frames() {
            let t = k as f64 * op.grid.tau;
            let pos = p.position[0] + p.velocity[0] * t + 0.5 * a * t * t;
            if !(0.0..=1.0).contains(&pos) {
                return Err(Error::TrajectoryOutOfBox { k, x: pos });
            }
            for l in op.freqs() {
                let phase = -TWO_PI * l as f64 * pos;
                *y.get_mut(l, k) += p.weight * Complex64::new(phase.cos(), phase.sin());
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{make_undetectable_config, Particle};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(k: i64, tau: f64) -> TimeGrid {
        TimeGrid::new(k, tau, 1).unwrap()
    }

    fn cfg1(parts: Vec<Particle>, g: TimeGrid) -> Configuration {
        Configuration::new(parts, g).unwrap()
    }

    #[test]
    fn origin_particle_measures_to_ones() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(3, g).unwrap();
        let cfg = cfg1(vec![Particle::new_1d(0.0, 0.0, 1.0)], g);
        let y = apply_fourier(&op, &cfg).unwrap();
        for z in &y.data {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn quarter_position_gives_minus_one_at_l_two() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(3, g).unwrap();
        let cfg = cfg1(vec![Particle::new_1d(0.25, 0.0, 1.0)], g);
        let y = apply_fourier(&op, &cfg).unwrap();
        for k in g.frames() {
            assert!((y.get(2, k) - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_cancels_at_l_one() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(3, g).unwrap();
        let cfg = cfg1(
            vec![Particle::new_1d(0.25, 0.0, 1.0), Particle::new_1d(0.75, 0.0, 1.0)],
            g,
        );
        let y = apply_fourier(&op, &cfg).unwrap();
        assert!(y.get(1, 0).norm() < 1e-12);
    }

    #[test]
    fn butterfly_set_realizes_scaled_frequencies() {
        let g = grid(1, 0.5);
        let op = FourierOperator::new(1, g).unwrap();
        let set = op.butterfly_set();
        assert_eq!(set.len(), 9);
        assert!(set.contains(&(1.0, 0.5)));
        assert!(set.contains(&(-1.0, 0.5)));
        assert!(set.contains(&(1.0, -0.5)));
    }

    #[test]
    fn correlation_peaks_at_the_true_spike() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(4, g).unwrap();
        let cfg = cfg1(vec![Particle::new_1d(0.4, 0.1, 1.0)], g);
        let y = apply_fourier(&op, &cfg).unwrap();
        let (value, dx, dv) = correlate(&op, &y, 0.4, 0.1);
        let expected = (2.0 * 4.0 + 1.0) * (2.0 * 2.0 + 1.0);
        assert!((value.re - expected).abs() < 1e-9);
        assert!(value.im.abs() < 1e-9);
        assert!(dx.norm() < 1e-7 && dv.norm() < 1e-7);
    }

    #[test]
    fn correlation_gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let g = grid(2, 0.5);
        let op = FourierOperator::new(5, g).unwrap();
        let cfg = cfg1(
            vec![Particle::new_1d(0.3, 0.05, 1.0), Particle::new_1d(0.6, -0.05, 0.8)],
            g,
        );
        let y = apply_fourier(&op, &cfg).unwrap();
        for _ in 0..20 {
            let x = rng.gen_range(0.3..0.7);
            let v = rng.gen_range(-0.1..0.1);
            let h = 1e-6;
            let (_, dx, dv) = correlate(&op, &y, x, v);
            let fd_x = (correlate(&op, &y, x + h, v).0 - correlate(&op, &y, x - h, v).0)
                / (2.0 * h);
            let fd_v = (correlate(&op, &y, x, v + h).0 - correlate(&op, &y, x, v - h).0)
                / (2.0 * h);
            assert!((dx - fd_x).norm() / (1.0 + fd_x.norm()) < 1e-4);
            assert!((dv - fd_v).norm() / (1.0 + fd_v.norm()) < 1e-4);
        }
    }

    #[test]
    fn adjoint_pairing_holds_on_random_inputs() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let g = grid(2, 0.5);
        let op = FourierOperator::new(4, g).unwrap();
        for _ in 0..100 {
            let n = rng.gen_range(1..5);
            let mut parts = Vec::new();
            for _ in 0..n {
                parts.push(Particle::new_1d(
                    rng.gen_range(0.3..0.7),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(0.5..1.5),
                ));
            }
            let cfg = cfg1(parts, g);
            let gl = apply_fourier(&op, &cfg).unwrap();
            let mut y = MeasurementTensor::zeros(&op);
            for z in &mut y.data {
                *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            // <G lambda, y> = sum_i w_i correlate(y, x_i, v_i)
            let lhs: Complex64 = gl
                .data
                .iter()
                .zip(&y.data)
                .map(|(a, b)| a * b.conj())
                .sum();
            let rhs: Complex64 = cfg
                .particles
                .iter()
                .map(|p| p.weight * correlate(&op, &y, p.position[0], p.velocity[0]).0)
                .sum();
            let scale = lhs.norm().max(1.0);
            assert!((lhs - rhs).norm() / scale < 1e-10);
        }
    }

    #[test]
    fn forward_map_is_linear_and_conjugate_symmetric() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let g = grid(2, 0.5);
        let op = FourierOperator::new(4, g).unwrap();
        for _ in 0..100 {
            let p1 = Particle::new_1d(rng.gen_range(0.3..0.7), rng.gen_range(-0.2..0.2), 1.1);
            let p2 = Particle::new_1d(rng.gen_range(0.3..0.7), rng.gen_range(-0.2..0.2), 0.7);
            let c1 = cfg1(vec![p1.clone()], g);
            let c2 = cfg1(vec![p2.clone()], g);
            let c12 = cfg1(vec![p1, p2], g);
            let y1 = apply_fourier(&op, &c1).unwrap();
            let y2 = apply_fourier(&op, &c2).unwrap();
            let y12 = apply_fourier(&op, &c12).unwrap();
            for ((a, b), c) in y1.data.iter().zip(&y2.data).zip(&y12.data) {
                assert!((a + b - c).norm() < 1e-12 * c.norm().max(1.0));
            }
            for k in g.frames() {
                for l in op.freqs() {
                    let diff = (y12.get(-l, k) - y12.get(l, k).conj()).norm();
                    assert!(diff < 1e-12 * y12.get(l, k).norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn undetectable_fixture_is_in_the_kernel() {
        let g = grid(1, 0.5);
        let (particles, ghosts) = make_undetectable_config(&g, &[1.0, 1.0, 1.0], 0.1).unwrap();
        let op = FourierOperator::new(8, g).unwrap();
        let yp = apply_fourier(&op, &particles).unwrap();
        let yg = apply_fourier(&op, &ghosts).unwrap();
        assert!((&yp - &yg).norm_linf() < 1e-12);
    }

    #[test]
    fn zero_alpha_noise_is_identity_and_seeds_reproduce() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(4, g).unwrap();
        let cfg = cfg1(vec![Particle::new_1d(0.4, 0.1, 1.0)], g);
        let y = apply_fourier(&op, &cfg).unwrap();
        assert_eq!(add_noise_tensor(&y, &NoiseSpec::new(0.0, 1)), y);
        let a = add_noise_tensor(&y, &NoiseSpec::new(0.1, 42));
        let b = add_noise_tensor(&y, &NoiseSpec::new(0.1, 42));
        assert_eq!(a, b);
        assert_ne!(a, add_noise_tensor(&y, &NoiseSpec::new(0.1, 43)));
    }

    #[test]
    fn noise_components_have_the_requested_scale() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(64, g).unwrap();
        let cfg = cfg1(vec![Particle::new_1d(0.5, 0.0, 1.0)], g);
        let y = apply_fourier(&op, &cfg).unwrap();
        let alpha = 0.3;
        let mut sq = 0.0;
        let mut count = 0usize;
        for seed in 0..160 {
            let noisy = add_noise_tensor(&y, &NoiseSpec::new(alpha, seed));
            for (a, b) in noisy.data.iter().zip(&y.data) {
                let d = a - b;
                sq += d.re * d.re + d.im * d.im;
                count += 2;
            }
        }
        let std = (sq / count as f64).sqrt();
        assert!((std - alpha).abs() / alpha < 0.02, "std {std} vs alpha {alpha}");
    }

    #[test]
    fn psf_renders_exact_values_on_pixel_centers() {
        let g = TimeGrid::new(1, 0.002, 2).unwrap();
        let op = PsfOperator::new(0.04, 25, 25, 0.04, g).unwrap();
        let (cx, cy) = op.pixel_center(12, 12);
        let cfg = Configuration::new(
            vec![Particle::new(vec![cx, cy], vec![0.0, 0.0], 1.0)],
            g,
        )
        .unwrap();
        let stack = apply_psf(&op, &cfg).unwrap();
        for k in g.frames() {
            let f = stack.frame(k);
            assert!((f[12 * 25 + 12] - 1.0).abs() < 1e-12);
            let one_pitch = f[12 * 25 + 13];
            assert!((one_pitch - (-0.5f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn psf_is_linear_and_rejects_out_of_field_particles() {
        let g = TimeGrid::new(1, 0.002, 2).unwrap();
        let op = PsfOperator::new(0.04, 25, 25, 0.04, g).unwrap();
        let p1 = Particle::new(vec![0.3, 0.4], vec![0.0, 0.0], 1.0);
        let p2 = Particle::new(vec![0.7, 0.6], vec![0.0, 0.0], 0.5);
        let c1 = Configuration::new(vec![p1.clone()], g).unwrap();
        let c2 = Configuration::new(vec![p2.clone()], g).unwrap();
        let c12 = Configuration::new(vec![p1, p2], g).unwrap();
        let s1 = apply_psf(&op, &c1).unwrap();
        let s2 = apply_psf(&op, &c2).unwrap();
        let s12 = apply_psf(&op, &c12).unwrap();
        for ((a, b), c) in s1
            .frames
            .iter()
            .flatten()
            .zip(s2.frames.iter().flatten())
            .zip(s12.frames.iter().flatten())
        {
            assert!((a + b - c).abs() < 1e-12);
        }
        // A particle inside the unit box but beyond a smaller pixel field.
        let narrow = PsfOperator::new(0.04, 20, 20, 0.04, g).unwrap();
        let outside = Configuration::new(
            vec![Particle::new(vec![0.9, 0.5], vec![0.0, 0.0], 1.0)],
            g,
        )
        .unwrap();
        assert!(matches!(
            apply_psf(&narrow, &outside),
            Err(Error::OutOfField { .. })
        ));
    }

    #[test]
    fn straight_curvature_reduces_to_the_plain_forward_map() {
        let g = grid(2, 0.5);
        let op = FourierOperator::new(6, g).unwrap();
        let cfg = cfg1(
            vec![Particle::new_1d(0.4, 0.1, 1.0), Particle::new_1d(0.6, -0.1, 0.8)],
            g,
        );
        let straight = apply_fourier(&op, &cfg).unwrap();
        let curved = apply_fourier_curved(&op, &cfg, &CurvedTrajectorySpec::from_beta(&cfg, 0.0))
            .unwrap();
        assert!((&straight - &curved).norm_linf() < 1e-14);
    }

    #[test]
    fn curvature_normalization_arithmetic() {
        // beta = a tau K / (2 v) with tau K = 1: a = 2 v beta.
        let g = grid(2, 0.5);
        let cfg = cfg1(vec![Particle::new_1d(0.4, 0.25, 1.0)], g);
        let spec = CurvedTrajectorySpec::from_beta(&cfg, 0.03);
        assert!((spec.accelerations[0] - 0.015).abs() < 1e-15);
        // Extra displacement at the last frame: (a/2)(tau K)^2 = 0.0075.
        let t = g.delta();
        assert!((0.5 * spec.accelerations[0] * t * t - 0.0075).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn curved_deviation_obeys_the_first_order_bound(
            x in 0.35f64..0.65, v in -0.05f64..0.05, beta in 0.0f64..0.05
        ) {
            let g = grid(2, 0.5);
            let op = FourierOperator::new(6, g).unwrap();
            let cfg = cfg1(vec![Particle::new_1d(x, v, 1.0)], g);
            let spec = CurvedTrajectorySpec::from_beta(&cfg, beta);
            let straight = apply_fourier(&op, &cfg).unwrap();
            let curved = apply_fourier_curved(&op, &cfg, &spec).unwrap();
            let bound = 2.0 * std::f64::consts::PI
                * op.f_c as f64
                * cfg.tv_norm()
                * 0.5
                * spec.accelerations[0].abs()
                * g.delta()
                * g.delta();
            prop_assert!((&straight - &curved).norm_linf() <= bound + 1e-12);
        }
    }
}

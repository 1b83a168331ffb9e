//! Monte Carlo harness: random configurations, the three reconstruction
//! procedures (dynamic, per-frame static, static with three successful
//! frames), and success-rate tables binned by the scaled separation
//! statistic `delta_dyn * f_c`. Campaigns are embarrassingly parallel with
//! a deterministic per-trial seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::forward_model::{
    add_noise_tensor, apply_fourier, apply_fourier_curved, CurvedTrajectorySpec, FourierOperator,
    MeasurementTensor, NoiseSpec,
};
use crate::phase_space::{dynamic_separation, Configuration, Particle, TimeGrid};
use crate::solver::{
    match_static, match_reconstruction, solve_dynamic, solve_static, MatchThresholds, SolverConfig,
};

/// Parameters of one family of random trials.
///
/// The accuracy thresholds are stored as super-resolution factors; the
/// matching tolerances are derived, never stored:
/// `delta_x = 1 / (f_c srf_x)` and `delta_v = 1 / (f_c K tau srf_v)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSpec {
    pub f_c: i64,
    #[serde(rename = "K")]
    pub k_max: i64,
    pub tau: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub srf_x: f64,
    pub srf_v: f64,
    pub delta_w: f64,
    /// Measurement noise scale; zero for exact data.
    pub alpha: f64,
    /// Normalized trajectory curvature; zero for straight motion.
    pub beta: f64,
    pub seed: u64,
    /// Optional rejection filter: redraw configurations until
    /// `dynamic_separation >= value`.
    #[serde(default)]
    pub min_dyn_separation: Option<f64>,
}

impl TrialSpec {
    /// Reference parameters: `f_c = 20`, `K = 2`, `tau = 0.5`, 4 to 10
    /// particles with weights in `(0.9, 1.1)`.
    pub fn reference(seed: u64) -> Self {
        TrialSpec {
            f_c: 20,
            k_max: 2,
            tau: 0.5,
            n_min: 4,
            n_max: 10,
            w_min: 0.9,
            w_max: 1.1,
            srf_x: 1000.0,
            srf_v: 1000.0,
            delta_w: 0.01,
            alpha: 0.0,
            beta: 0.0,
            seed,
            min_dyn_separation: None,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.k_max, self.tau, 1)
    }

    pub fn delta_x(&self) -> f64 {
        1.0 / (self.f_c as f64 * self.srf_x)
    }

    pub fn delta_v(&self) -> f64 {
        1.0 / (self.f_c as f64 * self.k_max as f64 * self.tau * self.srf_v)
    }

    pub fn thresholds(&self) -> MatchThresholds {
        MatchThresholds {
            position: self.delta_x(),
            velocity: self.delta_v(),
            weight: self.delta_w,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_max < self.n_min {
            return Err(Error::InvalidConfiguration(format!(
                "particle count range [{}, {}] is empty or degenerate",
                self.n_min, self.n_max
            )));
        }
        if !(self.w_min > 0.0 && self.w_max >= self.w_min) {
            return Err(Error::InvalidConfiguration(
                "weight range must be positive and ordered".into(),
            ));
        }
        if !(self.srf_x > 0.0 && self.srf_v > 0.0 && self.delta_w > 0.0) {
            return Err(Error::InvalidConfiguration(
                "matching thresholds must be positive".into(),
            ));
        }
        self.grid().map(|_| ())
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub trial_id: u64,
    pub n_particles: usize,
    pub delta_dyn: f64,
    pub dynamic: bool,
    pub static_any: bool,
    pub static_3: bool,
    pub static_frame_successes: usize,
    pub seconds_dynamic: f64,
    pub seconds_static: f64,
}

/// Draw a configuration: particle count uniform in the configured range, each
/// phase-space point uniform on the admissible domain (rejection sampling
/// from its bounding box), weights uniform in the weight range.
pub fn random_configuration(spec: &TrialSpec, rng: &mut impl Rng) -> Result<Configuration> {
    spec.validate()?;
    let grid = spec.grid()?;
    let vb = 1.0 / (grid.k_max as f64 * grid.tau);
    for _ in 0..10_000 {
        let n = rng.gen_range(spec.n_min..=spec.n_max);
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            loop {
                let x = rng.gen_range(0.0..1.0);
                let v = rng.gen_range(-vb..vb);
                if crate::phase_space::in_domain(&[x], &[v], &grid) {
                    let w = rng.gen_range(spec.w_min..=spec.w_max);
                    particles.push(Particle::new_1d(x, v, w));
                    break;
                }
            }
        }
        let Ok(cfg) = Configuration::new(particles, grid) else {
            // Coincident draw (measure zero); redraw.
            continue;
        };
        if let Some(min_sep) = spec.min_dyn_separation {
            if dynamic_separation(&cfg)? < min_sep {
                continue;
            }
        }
        return Ok(cfg);
    }
    Err(Error::InvalidConfiguration(
        "rejection sampling failed to produce an admissible configuration".into(),
    ))
}

fn synthesize(
    spec: &TrialSpec,
    op: &FourierOperator,
    cfg: &Configuration,
    noise_seed: u64,
) -> Result<MeasurementTensor> {
    let clean = if spec.beta == 0.0 {
        apply_fourier(op, cfg)?
    } else {
        let curvature = CurvedTrajectorySpec::from_beta(cfg, spec.beta);
        apply_fourier_curved(op, cfg, &curvature)?
    };
    Ok(add_noise_tensor(&clean, &NoiseSpec::new(spec.alpha, noise_seed)))
}

fn solver_config(spec: &TrialSpec, tv: f64, n_entries: usize, y_norm: f64) -> SolverConfig {
    let mut cfg = if spec.alpha == 0.0 {
        SolverConfig::noiseless(tv, y_norm)
    } else {
        SolverConfig::noisy(tv, spec.alpha, n_entries)
    };
    cfg.grid_nx = (4 * spec.f_c as usize).max(64);
    cfg
}

/// Run one trial: synthesize measurements, then score the three
/// procedures. Solver errors count as failures rather than aborting the
/// campaign.
pub fn run_trial(spec: &TrialSpec, trial_id: u64) -> Result<ExperimentRecord> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ trial_id);
    let grid = spec.grid()?;
    let op = FourierOperator::new(spec.f_c, grid)?;

    // Redraw on synthesis failure (a curved trajectory can exit the box
    // even when the linear one stays inside).
    let (cfg, y) = {
        let mut found = None;
        for _ in 0..1_000 {
            let cfg = random_configuration(spec, &mut rng)?;
            let noise_seed = rng.gen::<u64>();
            match synthesize(spec, &op, &cfg, noise_seed) {
                Ok(y) => {
                    found = Some((cfg, y));
                    break;
                }
                Err(Error::TrajectoryOutOfBox { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        found.ok_or_else(|| {
            Error::InvalidConfiguration("could not synthesize an in-box curved trial".into())
        })?
    };

    let delta_dyn = dynamic_separation(&cfg)?;
    let tv = cfg.tv_norm();
    let thresholds = spec.thresholds();

    let t0 = Instant::now();
    let dyn_cfg = solver_config(spec, tv, 2 * y.data.len(), y.norm_l2());
    let dynamic = match solve_dynamic(&y, &op, &dyn_cfg) {
        Ok(recon) => match_reconstruction(&cfg, &recon.particles, &thresholds),
        Err(_) => false,
    };
    let seconds_dynamic = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let n_freqs = 2 * (2 * spec.f_c + 1) as usize;
    let mut static_frame_successes = 0;
    for k in grid.frames() {
        let frame = y.frame(k);
        let y_norm = frame.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let st_cfg = solver_config(spec, tv, n_freqs, y_norm);
        let ok = match solve_static(frame, spec.f_c, &st_cfg) {
            Ok(recon) => match_static(&cfg, k, &recon, thresholds.position, thresholds.weight),
            Err(_) => false,
        };
        if ok {
            static_frame_successes += 1;
        }
    }
    let seconds_static = t1.elapsed().as_secs_f64();

    Ok(ExperimentRecord {
        trial_id,
        n_particles: cfg.len(),
        delta_dyn,
        dynamic,
        static_any: static_frame_successes >= 1,
        static_3: static_frame_successes >= 3,
        static_frame_successes,
        seconds_dynamic,
        seconds_static,
    })
}

/// One histogram row of a campaign table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n: usize,
    pub rate_dynamic: f64,
    pub rate_static: f64,
    pub rate_static3: f64,
}

/// Campaign output: the binned table plus the raw records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignTable {
    pub bins: Vec<CampaignBin>,
    pub records: Vec<ExperimentRecord>,
}

impl CampaignTable {
    /// Deterministic CSV: `bin_lo,bin_hi,n,rate_dynamic,rate_static,rate_static3`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,n,rate_dynamic,rate_static,rate_static3\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{:.4},{:.4},{},{:.6},{:.6},{:.6}\n",
                b.bin_lo, b.bin_hi, b.n, b.rate_dynamic, b.rate_static, b.rate_static3
            ));
        }
        out
    }

    pub fn overall_dynamic_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.dynamic).count() as f64 / self.records.len() as f64
    }
}

/// Scaled-separation range covered by the histogram.
pub const BIN_RANGE: (f64, f64) = (0.0, 5.0);

/// Run `n_trials` independent trials in parallel and aggregate success
/// rates into `n_bins` uniform bins of `delta_dyn * f_c` over
/// [`BIN_RANGE`]. Deterministic for a given spec regardless of thread
/// count.
pub fn run_campaign(spec: &TrialSpec, n_trials: usize, n_bins: usize) -> Result<CampaignTable> {
    if n_trials == 0 {
        return Err(Error::InvalidConfiguration(
            "a campaign needs at least one trial".into(),
        ));
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfiguration(
            "a campaign needs at least one bin".into(),
        ));
    }
    spec.validate()?;

    let mut records: Vec<ExperimentRecord> = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial_id| run_trial(spec, trial_id))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.trial_id);

    let (lo, hi) = BIN_RANGE;
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![[0usize; 4]; n_bins];
    for r in &records {
        let scaled = r.delta_dyn * spec.f_c as f64;
        let idx = (((scaled - lo) / width).floor() as isize).clamp(0, n_bins as isize - 1) as usize;
        counts[idx][0] += 1;
        counts[idx][1] += r.dynamic as usize;
        counts[idx][2] += r.static_any as usize;
        counts[idx][3] += r.static_3 as usize;
    }
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let n = c[0];
            let rate = |k: usize| if n == 0 { 0.0 } else { c[k] as f64 / n as f64 };
            CampaignBin {
                bin_lo: lo + i as f64 * width,
                bin_hi: lo + (i + 1) as f64 * width,
                n,
                rate_dynamic: rate(1),
                rate_static: rate(2),
                rate_static3: rate(3),
            }
        })
        .collect();

    Ok(CampaignTable { bins, records })
}

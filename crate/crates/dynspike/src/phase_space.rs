//! Phase-space geometry of moving point sources.
//!
//! A moving spike is lifted to a static point `(x, v)` in the joint
//! position-velocity domain. This module holds the sampling schedule, the
//! admissible set `Omega` (trajectories that stay inside the unit box at all
//! sampled frames), the line systems along which frame information
//! propagates, ghost-particle enumeration and the separation statistic used
//! by the experiment harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for line-intersection geometry. Intersections are
/// solved in closed form, so this only absorbs floating-point noise.
pub const EPS_GEOM: f64 = 1e-9;

/// A weighted point source in phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Position, coordinates in `[0,1]` (dimension d).
    pub position: Vec<f64>,
    /// Velocity, position units per unit time (dimension d).
    pub velocity: Vec<f64>,
    /// Weight, nonzero for particles in a configuration.
    pub weight: f64,
}

impl Particle {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>, weight: f64) -> Self {
        Particle {
            position,
            velocity,
            weight,
        }
    }

    /// 1-D convenience constructor.
    pub fn new_1d(x: f64, v: f64, w: f64) -> Self {
        Particle::new(vec![x], vec![v], w)
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }
}

/// The sampling schedule: frames `-K..=K` at period `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Frames are indexed `-K..=K`.
    pub k_max: i64,
    /// Sampling period.
    pub tau: f64,
    /// Spatial dimension.
    pub dim: usize,
}

impl TimeGrid {
    pub fn new(k_max: i64, tau: f64, dim: usize) -> Result<Self> {
        if k_max < 1 {
            return Err(Error::InvalidConfiguration(format!(
                "K must be >= 1, got {k_max}"
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "tau must be > 0, got {tau}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidConfiguration("dimension must be >= 1".into()));
        }
        Ok(TimeGrid { k_max, tau, dim })
    }

    /// Number of frames, `2K + 1`.
    pub fn frame_count(&self) -> usize {
        (2 * self.k_max + 1) as usize
    }

    /// Iterator over frame indices `-K..=K`.
    pub fn frames(&self) -> impl Iterator<Item = i64> {
        -self.k_max..=self.k_max
    }

    /// Half observation window, `delta = K tau`.
    pub fn delta(&self) -> f64 {
        self.k_max as f64 * self.tau
    }

    pub fn check_frame(&self, k: i64) -> Result<()> {
        if k.abs() > self.k_max {
            Err(Error::FrameOutOfRange {
                k,
                k_max: self.k_max,
            })
        } else {
            Ok(())
        }
    }
}

/// The admissible set `Omega`: phase-space points whose trajectories stay
/// inside `[0,1]^d` at every sampled frame.
#[derive(Debug, Clone, Copy)]
pub struct PhaseSpaceDomain {
    pub grid: TimeGrid,
}

impl PhaseSpaceDomain {
    pub fn new(grid: TimeGrid) -> Self {
        PhaseSpaceDomain { grid }
    }

    /// Exact membership: `x + k tau v` in the closed box `[0,1]^d` for all
    /// `k` in `-K..=K`. Since the constraint is affine in `k` it suffices to
    /// check the extreme frames.
    pub fn contains(&self, x: &[f64], v: &[f64]) -> bool {
        in_domain(x, v, &self.grid)
    }

    /// Velocity bound: any `(x, v)` in `Omega` satisfies
    /// `|v_j| <= 1 / (K tau)` componentwise.
    pub fn velocity_bound(&self) -> f64 {
        1.0 / (self.grid.k_max as f64 * self.grid.tau)
    }
}

/// A set of particles together with its sampling schedule.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub particles: Vec<Particle>,
    pub grid: TimeGrid,
}

impl Configuration {
    /// Validating constructor: every particle must lie in `Omega`, carry a
    /// nonzero weight and have a distinct `(position, velocity)` pair.
    pub fn new(particles: Vec<Particle>, grid: TimeGrid) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::TooFewParticles {
                required: 1,
                got: 0,
            });
        }
        for (i, p) in particles.iter().enumerate() {
            if p.position.len() != grid.dim || p.velocity.len() != grid.dim {
                return Err(Error::DimensionMismatch {
                    expected: grid.dim,
                    got: p.position.len(),
                });
            }
            if p.weight == 0.0 {
                return Err(Error::InvalidConfiguration(format!(
                    "particle {i} has zero weight"
                )));
            }
            if !in_domain(&p.position, &p.velocity, &grid) {
                return Err(Error::InvalidConfiguration(format!(
                    "particle {i} outside the admissible domain"
                )));
            }
        }
        for i in 0..particles.len() {
            for j in (i + 1)..particles.len() {
                if particles[i].position == particles[j].position
                    && particles[i].velocity == particles[j].velocity
                {
                    return Err(Error::InvalidConfiguration(format!(
                        "particles {i} and {j} coincide in phase space"
                    )));
                }
            }
        }
        Ok(Configuration { particles, grid })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Total variation norm of the associated discrete measure.
    pub fn tv_norm(&self) -> f64 {
        self.particles.iter().map(|p| p.weight.abs()).sum()
    }
}

/// The affine set `L_{i,k}` of phase-space points sharing particle `i`'s
/// position at frame `k`.
#[derive(Debug, Clone)]
pub struct Line {
    pub particle_index: usize,
    pub frame_index: i64,
    pub anchor_position: Vec<f64>,
    pub anchor_velocity: Vec<f64>,
    pub grid: TimeGrid,
}

impl Line {
    pub fn from_configuration(cfg: &Configuration, i: usize, k: i64) -> Result<Self> {
        cfg.grid.check_frame(k)?;
        let p = &cfg.particles[i];
        Ok(Line {
            particle_index: i,
            frame_index: k,
            anchor_position: p.position.clone(),
            anchor_velocity: p.velocity.clone(),
            grid: cfg.grid,
        })
    }

    /// Signed residual `(x - x_i) + k tau (v - v_i)` per coordinate; zero on
    /// the line.
    pub fn residual(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let kt = self.frame_index as f64 * self.grid.tau;
        (0..x.len())
            .map(|j| (x[j] - self.anchor_position[j]) + kt * (v[j] - self.anchor_velocity[j]))
            .collect()
    }

    pub fn contains(&self, x: &[f64], v: &[f64], tol: f64) -> bool {
        self.residual(x, v).iter().all(|r| r.abs() <= tol)
    }
}

/// A ghost particle: a phase-space point lying on one line `L_{i,k}` per
/// frame of a frame set, with all particle indices distinct.
#[derive(Debug, Clone)]
pub struct GhostParticle {
    pub position: f64,
    pub velocity: f64,
    /// `(particle_index, frame_index)` pairs; indices and frames all distinct.
    pub witness: Vec<(usize, i64)>,
}

/// Position of particle `p` at frame `k`: `x + k tau v`, exactly.
pub fn position_at(p: &Particle, k: i64, grid: &TimeGrid) -> Result<Vec<f64>> {
    grid.check_frame(k)?;
    let kt = k as f64 * grid.tau;
    Ok(p.position
        .iter()
        .zip(&p.velocity)
        .map(|(x, v)| x + kt * v)
        .collect())
}

/// Membership test for `Omega`: `x + k tau v` in `[0,1]^d` for every frame,
/// closed boundaries. Total function.
pub fn in_domain(x: &[f64], v: &[f64], grid: &TimeGrid) -> bool {
    debug_assert_eq!(x.len(), v.len());
    grid.frames().all(|k| {
        let kt = k as f64 * grid.tau;
        x.iter()
            .zip(v)
            .all(|(xj, vj)| (0.0..=1.0).contains(&(xj + kt * vj)))
    })
}

/// The separation statistic: for each frame the minimum pairwise distance of
/// particle positions (l-infinity across coordinates), then the third-largest
/// of those frame values, duplicates counted.
pub fn dynamic_separation(cfg: &Configuration) -> Result<f64> {
    if cfg.len() < 2 {
        return Err(Error::TooFewParticles {
            required: 2,
            got: cfg.len(),
        });
    }
    if cfg.grid.frame_count() < 3 {
        return Err(Error::TooFewFrames {
            required: 3,
            got: cfg.grid.frame_count(),
        });
    }
    let mut frame_minima: Vec<f64> = Vec::with_capacity(cfg.grid.frame_count());
    for k in cfg.grid.frames() {
        let positions: Vec<Vec<f64>> = cfg
            .particles
            .iter()
            .map(|p| position_at(p, k, &cfg.grid).expect("frame in range"))
            .collect();
        let mut s_k = f64::INFINITY;
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let d = positions[i]
                    .iter()
                    .zip(&positions[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max);
                s_k = s_k.min(d);
            }
        }
        frame_minima.push(s_k);
    }
    frame_minima.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(frame_minima[2])
}

/// Intersection of two lines in the planar phase space (d = 1). `None` when
/// the frames coincide (the lines are parallel or equal).
fn intersect_pair(cfg: &Configuration, i: usize, k1: i64, j: usize, k2: i64) -> Option<(f64, f64)> {
    if k1 == k2 {
        return None;
    }
    let tau = cfg.grid.tau;
    let pi = cfg.particles[i].position[0] + k1 as f64 * tau * cfg.particles[i].velocity[0];
    let pj = cfg.particles[j].position[0] + k2 as f64 * tau * cfg.particles[j].velocity[0];
    // g + k1 tau w = pi, g + k2 tau w = pj
    let w = (pi - pj) / ((k1 - k2) as f64 * tau);
    let g = pi - k1 as f64 * tau * w;
    Some((g, w))
}

/// Enumerate all ghost particles of a configuration for the frame set
/// `frames` (d = 1 only). Brute force over ordered injections of the frame
/// set into particle indices; points coinciding with a true particle are
/// excluded, duplicates merged within [`EPS_GEOM`].
pub fn detect_ghosts(cfg: &Configuration, frames: &[i64]) -> Result<Vec<GhostParticle>> {
    if cfg.grid.dim != 1 {
        return Err(Error::UnsupportedDimension(cfg.grid.dim));
    }
    let m = frames.len();
    if m < 3 {
        return Err(Error::TooFewFrames { required: 3, got: m });
    }
    for &k in frames {
        cfg.grid.check_frame(k)?;
    }
    {
        let mut sorted = frames.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != m {
            return Err(Error::InvalidConfiguration(
                "frame set contains duplicates".into(),
            ));
        }
    }
    let n = cfg.len();
    if n < m {
        return Ok(Vec::new());
    }

    let mut ghosts: Vec<GhostParticle> = Vec::new();
    let mut assignment: Vec<usize> = Vec::with_capacity(m);
    let mut used = vec![false; n];

    // Depth-first over ordered injections frames -> particle indices.
    enumerate_injections(n, m, &mut assignment, &mut used, &mut |assign| {
        // Candidate from the first two lines; remaining lines must agree.
        let (g, w) = match intersect_pair(cfg, assign[0], frames[0], assign[1], frames[1]) {
            Some(p) => p,
            None => return,
        };
        for p in 2..m {
            let line = Line {
                particle_index: assign[p],
                frame_index: frames[p],
                anchor_position: cfg.particles[assign[p]].position.clone(),
                anchor_velocity: cfg.particles[assign[p]].velocity.clone(),
                grid: cfg.grid,
            };
            if !line.contains(&[g], &[w], EPS_GEOM) {
                return;
            }
        }
        if !in_domain(&[g], &[w], &cfg.grid) {
            return;
        }
        // Exclude points coinciding with a true particle.
        if cfg
            .particles
            .iter()
            .any(|p| (p.position[0] - g).abs() <= EPS_GEOM && (p.velocity[0] - w).abs() <= EPS_GEOM)
        {
            return;
        }
        if ghosts
            .iter()
            .any(|gh| (gh.position - g).abs() <= EPS_GEOM && (gh.velocity - w).abs() <= EPS_GEOM)
        {
            return;
        }
        ghosts.push(GhostParticle {
            position: g,
            velocity: w,
            witness: assign.iter().copied().zip(frames.iter().copied()).collect(),
        });
    });
    Ok(ghosts)
}

fn enumerate_injections(
    n: usize,
    m: usize,
    assignment: &mut Vec<usize>,
    used: &mut [bool],
    visit: &mut impl FnMut(&[usize]),
) {
    if assignment.len() == m {
        visit(assignment);
        return;
    }
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        assignment.push(i);
        enumerate_injections(n, m, assignment, used, visit);
        assignment.pop();
        used[i] = false;
    }
}

/// Build the three-particle/three-ghost fixture whose two configurations
/// share the same positions at every frame (K = 1), so the dynamical
/// recovery problem has infinitely many solutions.
///
/// Geometry, centered at `x = 0.5` with half-separation `a`:
/// particles `(0.5-a, 0)`, `(0.5+a, 0)`, `(0.5, 3a/tau)`; ghosts
/// `(0.5, -a/tau)`, `(0.5-a, 2a/tau)`, `(0.5+a, 2a/tau)`.
///
/// Exact per-frame position coincidence holds for any weights; the weighted
/// measurements of the two returned configurations coincide when the weights
/// are all equal. The unweighted difference of the two supports is always in
/// the kernel of the forward operator.
pub fn make_undetectable_config(
    grid: &TimeGrid,
    weights: &[f64],
    a: f64,
) -> Result<(Configuration, Configuration)> {
    if grid.dim != 1 {
        return Err(Error::UnsupportedDimension(grid.dim));
    }
    if grid.k_max != 1 {
        return Err(Error::InvalidConfiguration(format!(
            "fixture requires K = 1, got K = {}",
            grid.k_max
        )));
    }
    if weights.len() != 3 || weights.iter().any(|w| *w <= 0.0) {
        return Err(Error::InvalidConfiguration(
            "fixture requires 3 positive weights".into(),
        ));
    }
    let c = 0.5;
    let tau = grid.tau;
    let particles = vec![
        Particle::new_1d(c - a, 0.0, weights[0]),
        Particle::new_1d(c + a, 0.0, weights[1]),
        Particle::new_1d(c, 3.0 * a / tau, weights[2]),
    ];
    let ghosts = vec![
        Particle::new_1d(c, -a / tau, weights[0]),
        Particle::new_1d(c - a, 2.0 * a / tau, weights[1]),
        Particle::new_1d(c + a, 2.0 * a / tau, weights[2]),
    ];
    // All six points must lie strictly inside Omega.
    let strict = |p: &Particle| {
        grid.frames().all(|k| {
            let pos = p.position[0] + k as f64 * tau * p.velocity[0];
            pos > 0.0 && pos < 1.0
        })
    };
    if a <= 0.0 || !particles.iter().chain(&ghosts).all(strict) {
        return Err(Error::GeometryOutOfDomain { scale: a });
    }
    Ok((
        Configuration::new(particles, *grid)?,
        Configuration::new(ghosts, *grid)?,
    ))
}

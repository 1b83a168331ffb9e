//! Synthetic micro-vessel imaging pipeline: a phantom of curved vessels
//! carrying point scatterers ("bubbles") with stochastic activation, PSF
//! frame synthesis, automated selection of quiet intervals via the
//! frame-to-frame l2-norm, per-window dynamic reconstruction, and
//! aggregation into a super-resolved point/velocity map alongside the
//! diffraction-limited B-mode reference.
//!
//! Units: positions in mm, time in s, velocities in mm/s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{FrameStack, NoiseSpec, PsfOperator};
use crate::phase_space::TimeGrid;
use crate::solver::{solve_dynamic_psf, Reconstruction, SolverConfig};

/// One vessel: an arc-length parameterized centerline polyline with a
/// constant flow speed and a direction sign (+1 along increasing arc).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vessel {
    pub polyline: Vec<[f64; 2]>,
    /// Flow speed modulus, mm/s.
    pub speed: f64,
    /// +1.0 or -1.0: flow along increasing or decreasing arc length.
    pub direction: f64,
}

impl Vessel {
    pub fn new(polyline: Vec<[f64; 2]>, speed: f64, direction: f64) -> Self {
        Vessel {
            polyline,
            speed,
            direction,
        }
    }

    fn cumulative_lengths(&self) -> Vec<f64> {
        let mut acc = vec![0.0];
        for w in self.polyline.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            acc.push(acc.last().unwrap() + d);
        }
        acc
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_lengths().last().unwrap()
    }

    /// Point at arc length `s` (clamped to the curve).
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let lens = self.cumulative_lengths();
        let total = *lens.last().unwrap();
        let s = s.clamp(0.0, total);
        let seg = match lens.binary_search_by(|l| l.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.polyline.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.polyline.len() - 2),
        };
        let seg_len = lens[seg + 1] - lens[seg];
        let t = if seg_len > 0.0 {
            (s - lens[seg]) / seg_len
        } else {
            0.0
        };
        let a = self.polyline[seg];
        let b = self.polyline[seg + 1];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Unit tangent at arc length `s`, pointing along increasing arc.
    pub fn tangent_at(&self, s: f64) -> [f64; 2] {
        let lens = self.cumulative_lengths();
        let total = *lens.last().unwrap();
        let s = s.clamp(0.0, total);
        let seg = match lens.binary_search_by(|l| l.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.polyline.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.polyline.len() - 2),
        };
        let a = self.polyline[seg];
        let b = self.polyline[seg + 1];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let n = (dx * dx + dy * dy).sqrt().max(1e-12);
        [dx / n, dy / n]
    }

    /// Distance from a point to the centerline together with the arc
    /// length of the closest point.
    pub fn distance_to(&self, x: f64, y: f64) -> (f64, f64) {
        let lens = self.cumulative_lengths();
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.polyline.windows(2).enumerate() {
            let (ax, ay) = (w[0][0], w[0][1]);
            let (bx, by) = (w[1][0], w[1][1]);
            let (ex, ey) = (bx - ax, by - ay);
            let len2 = ex * ex + ey * ey;
            let t = if len2 > 0.0 {
                (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (ax + t * ex, ay + t * ey);
            let d = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
            if d < best.0 {
                best = (d, lens[i] + t * (lens[i + 1] - lens[i]));
            }
        }
        best
    }
}

/// Vessel phantom: centerlines inside a rectangular field of view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VesselPhantom {
    pub vessels: Vec<Vessel>,
    pub field_width: f64,
    pub field_height: f64,
    pub pitch: f64,
}

impl VesselPhantom {
    pub fn new(vessels: Vec<Vessel>, field_width: f64, field_height: f64, pitch: f64) -> Result<Self> {
        for (i, v) in vessels.iter().enumerate() {
            if v.polyline.len() < 2 {
                return Err(Error::InvalidConfiguration(format!(
                    "vessel {i} needs at least two polyline points"
                )));
            }
            for p in &v.polyline {
                if !(0.0..=field_width).contains(&p[0]) || !(0.0..=field_height).contains(&p[1]) {
                    return Err(Error::InvalidConfiguration(format!(
                        "vessel {i} leaves the field of view at ({}, {})",
                        p[0], p[1]
                    )));
                }
            }
            if v.direction != 1.0 && v.direction != -1.0 {
                return Err(Error::InvalidConfiguration(
                    "flow direction must be +1 or -1".into(),
                ));
            }
        }
        Ok(VesselPhantom {
            vessels,
            field_width,
            field_height,
            pitch,
        })
    }

    /// Default phantom on a 1 x 1 mm field: two curved vessels about
    /// 0.03 mm apart carrying opposite flows, each with one branch,
    /// all at 2 mm/s.
    pub fn default_two_vessel() -> Self {
        let sample = |offset: f64| -> Vec<[f64; 2]> {
            (0..=160)
                .map(|i| {
                    let x = 0.08 + 0.84 * i as f64 / 160.0;
                    let y = 0.485 + 0.12 * (std::f64::consts::PI * (x - 0.08) / 0.84).sin() + offset;
                    [x, y]
                })
                .collect()
        };
        let lower = sample(0.0);
        let upper = sample(0.03);
        // Branch anchors on the main curves.
        let anchor_a = lower[42]; // near x = 0.30
        let anchor_b = upper[118]; // near x = 0.70
        let branch_a: Vec<[f64; 2]> = (0..=60)
            .map(|i| {
                let t = i as f64 / 60.0;
                [
                    anchor_a[0] + (0.16 - anchor_a[0]) * t,
                    anchor_a[1] + (0.22 - anchor_a[1]) * t + 0.05 * t * (1.0 - t),
                ]
            })
            .collect();
        let branch_b: Vec<[f64; 2]> = (0..=60)
            .map(|i| {
                let t = i as f64 / 60.0;
                [
                    anchor_b[0] + (0.86 - anchor_b[0]) * t,
                    anchor_b[1] + (0.86 - anchor_b[1]) * t - 0.05 * t * (1.0 - t),
                ]
            })
            .collect();
        VesselPhantom::new(
            vec![
                Vessel::new(lower, 2.0, 1.0),
                Vessel::new(upper, 2.0, -1.0),
                Vessel::new(branch_a, 2.0, -1.0),
                Vessel::new(branch_b, 2.0, -1.0),
            ],
            1.0,
            1.0,
            0.04,
        )
        .expect("default phantom geometry is valid")
    }

    /// Nearest vessel to a point: `(vessel index, distance, arc length)`.
    pub fn nearest_vessel(&self, x: f64, y: f64) -> (usize, f64, f64) {
        let mut best = (0, f64::INFINITY, 0.0);
        for (i, v) in self.vessels.iter().enumerate() {
            let (d, s) = v.distance_to(x, y);
            if d < best.1 {
                best = (i, d, s);
            }
        }
        best
    }

    /// True flow velocity vector at the point of a vessel closest to
    /// `(x, y)`.
    pub fn flow_velocity_near(&self, x: f64, y: f64) -> [f64; 2] {
        let (i, _, s) = self.nearest_vessel(x, y);
        let v = &self.vessels[i];
        let t = v.tangent_at(s);
        [
            v.direction * v.speed * t[0],
            v.direction * v.speed * t[1],
        ]
    }
}

/// Stochastic bubble model: per frame and per vessel, a Bernoulli draw
/// activates a bubble at a uniform arc position; its lifetime in frames is
/// Poisson with the given mean (clamped to at least one frame).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BubbleProcess {
    pub activation_probability: f64,
    pub mean_lifetime_frames: f64,
    pub seed: u64,
}

impl BubbleProcess {
    pub fn new(activation_probability: f64, mean_lifetime_frames: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&activation_probability) {
            return Err(Error::InvalidConfiguration(format!(
                "activation probability {activation_probability} outside [0, 1]"
            )));
        }
        if mean_lifetime_frames < 1.0 {
            return Err(Error::InvalidConfiguration(
                "mean lifetime must be at least one frame".into(),
            ));
        }
        Ok(BubbleProcess {
            activation_probability,
            mean_lifetime_frames,
            seed,
        })
    }

    /// Defaults tuned to keep roughly one to four bubbles alive at a time.
    pub fn default_with_seed(seed: u64) -> Self {
        BubbleProcess {
            activation_probability: 0.005,
            mean_lifetime_frames: 60.0,
            seed,
        }
    }
}

/// An ordered stack of acquired frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub pitch_mm: f64,
    pub sigma: f64,
    /// Frame period, s.
    pub tau: f64,
    pub frames: Vec<Vec<f64>>,
}

impl FrameSequence {
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 * self.tau
    }

    pub fn frame_norms(&self) -> Vec<f64> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|p| p * p).sum::<f64>().sqrt())
            .collect()
    }

    /// Extract a `2K + 1` frame window starting at `start` as a solver
    /// input stack.
    pub fn window_stack(&self, start: usize, k_max: i64) -> Result<FrameStack> {
        let len = (2 * k_max + 1) as usize;
        if start + len > self.frames.len() {
            return Err(Error::InvalidConfiguration(format!(
                "window [{start}, {}) exceeds the {} acquired frames",
                start + len,
                self.frames.len()
            )));
        }
        Ok(FrameStack {
            width: self.width,
            height: self.height,
            pitch_mm: self.pitch_mm,
            sigma: self.sigma,
            k_max,
            tau: self.tau,
            frames: self.frames[start..start + len].to_vec(),
        })
    }
}

/// Ground-truth trajectory of one bubble: per-frame positions and
/// velocities from birth to death.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub vessel: usize,
    pub birth_frame: usize,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl Track {
    pub fn alive_at(&self, frame: usize) -> bool {
        frame >= self.birth_frame && frame < self.birth_frame + self.positions.len()
    }

    pub fn position_at(&self, frame: usize) -> Option<[f64; 2]> {
        self.positions.get(frame.wrapping_sub(self.birth_frame)).copied()
    }
}

struct LiveBubble {
    vessel: usize,
    arc: f64,
    frames_left: usize,
    track: Track,
}

/// Synthesize an acquisition: spawn bubbles per the process, advect them
/// along their vessel at the vessel speed, render each frame through the
/// PSF (unit weights), and add per-pixel Gaussian noise. Ground-truth
/// tracks are returned for scoring.
pub fn simulate_acquisition(
    phantom: &VesselPhantom,
    process: &BubbleProcess,
    psf: &PsfOperator,
    noise: &NoiseSpec,
    n_frames: usize,
) -> Result<(FrameSequence, Vec<Track>)> {
    if (psf.field_width() - phantom.field_width).abs() > 1e-9
        || (psf.field_height() - phantom.field_height).abs() > 1e-9
    {
        return Err(Error::InvalidConfiguration(
            "phantom and PSF operator cover different fields of view".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(process.seed);
    let lifetime_dist = Poisson::new(process.mean_lifetime_frames)
        .map_err(|e| Error::InvalidConfiguration(format!("invalid lifetime parameter: {e}")))?;

    let mut live: Vec<LiveBubble> = Vec::new();
    let mut finished: Vec<Track> = Vec::new();
    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(n_frames);

    for frame_idx in 0..n_frames {
        // Activation.
        for (vi, vessel) in phantom.vessels.iter().enumerate() {
            if rng.gen::<f64>() < process.activation_probability {
                let arc = rng.gen_range(0.0..vessel.length());
                let lifetime = (lifetime_dist.sample(&mut rng) as usize).max(1);
                live.push(LiveBubble {
                    vessel: vi,
                    arc,
                    frames_left: lifetime,
                    track: Track {
                        vessel: vi,
                        birth_frame: frame_idx,
                        positions: Vec::new(),
                        velocities: Vec::new(),
                    },
                });
            }
        }

        // Render and record truth.
        let mut frame = vec![0.0; psf.n_pixels()];
        for b in live.iter_mut() {
            let vessel = &phantom.vessels[b.vessel];
            let p = vessel.point_at(b.arc);
            let t = vessel.tangent_at(b.arc);
            b.track.positions.push(p);
            b.track.velocities.push([
                vessel.direction * vessel.speed * t[0],
                vessel.direction * vessel.speed * t[1],
            ]);
            for iy in 0..psf.height {
                for ix in 0..psf.width {
                    let (px, py) = psf.pixel_center(ix, iy);
                    frame[iy * psf.width + ix] += psf.psf(px - p[0], py - p[1]);
                }
            }
        }
        frames.push(frame);

        // Advection and death.
        let mut still: Vec<LiveBubble> = Vec::with_capacity(live.len());
        for mut b in live {
            let vessel = &phantom.vessels[b.vessel];
            b.arc += vessel.direction * vessel.speed * psf.grid.tau;
            b.frames_left -= 1;
            if b.frames_left == 0 || b.arc < 0.0 || b.arc > vessel.length() {
                finished.push(b.track);
            } else {
                still.push(b);
            }
        }
        live = still;
    }
    finished.extend(live.into_iter().map(|b| b.track));
    finished.sort_by_key(|t| (t.birth_frame, t.vessel));

    // Noise.
    if noise.alpha != 0.0 {
        let mut nrng = ChaCha12Rng::seed_from_u64(noise.seed);
        for frame in &mut frames {
            for p in frame.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut nrng);
                *p += noise.alpha * n;
            }
        }
    }

    Ok((
        FrameSequence {
            width: psf.width,
            height: psf.height,
            pitch_mm: psf.pitch,
            sigma: psf.sigma,
            tau: psf.grid.tau,
            frames,
        },
        finished,
    ))
}

/// A maximal run of frames with stable l2 norm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameInterval {
    pub start: usize,
    /// Exclusive end.
    pub end: usize,
}

impl FrameInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Non-overlapping solver windows of `2K + 1` frames inside the
    /// interval.
    pub fn windows(&self, k_max: i64) -> Vec<usize> {
        let w = (2 * k_max + 1) as usize;
        (0..self.len() / w).map(|i| self.start + i * w).collect()
    }
}

/// Select intervals during which the frame l2 norm is constant up to
/// `rel_tol` frame-to-frame relative change. Bubbles appearing or
/// vanishing make the norm jump, so each returned interval holds a fixed
/// particle set. Only intervals of at least `window` frames are returned.
pub fn select_intervals(seq: &FrameSequence, window: usize, rel_tol: f64) -> Result<Vec<FrameInterval>> {
    if window < 3 {
        return Err(Error::InvalidConfiguration(format!(
            "window must cover at least 3 frames, got {window}"
        )));
    }
    let norms = seq.frame_norms();
    let mut out = Vec::new();
    let mut start = 0;
    for j in 1..=norms.len() {
        let stable = j < norms.len() && {
            let denom = norms[j - 1].max(1e-12);
            (norms[j] - norms[j - 1]).abs() / denom <= rel_tol
        };
        if !stable {
            if j - start >= window {
                out.push(FrameInterval { start, end: j });
            }
            start = j;
        }
    }
    Ok(out)
}

/// A reconstruction attached to the window it came from.
#[derive(Debug, Clone)]
pub struct WindowReconstruction {
    pub window_id: usize,
    pub start_frame: usize,
    pub center_frame: usize,
    pub reconstruction: Reconstruction,
}

/// Solver settings for the imaging geometry: the TV budget is estimated
/// from the center-frame energy divided by the pixel energy of one unit
/// bubble, padded by 20%, so the pipeline never assumes the bubble count.
pub fn window_solver_config(psf: &PsfOperator, stack: &FrameStack, alpha: f64) -> SolverConfig {
    let center = stack.frame(0);
    let energy: f64 = center.iter().sum();
    let tv = (energy / psf.unit_bubble_energy()).max(0.0) * 1.2 + 0.05;
    let n_entries = psf.n_pixels() * psf.grid.frame_count();
    let mut cfg = if alpha == 0.0 {
        let y_norm = stack.norm_l2();
        SolverConfig::noiseless(tv, y_norm)
    } else {
        let mut c = SolverConfig::noiseless(tv, 0.0);
        c.residual_tolerance = alpha * (n_entries as f64).sqrt();
        c
    };
    cfg.grid_nx = psf.width.max(psf.height);
    cfg.grid_nv = 5;
    cfg.max_spikes = 8;
    cfg.velocity_bound = Some(4.0);
    cfg.prune_threshold = 0.15;
    cfg
}

/// Reconstruct one `2K + 1` frame window with the PSF operator.
pub fn reconstruct_window(
    seq: &FrameSequence,
    psf: &PsfOperator,
    start: usize,
    alpha: f64,
    window_id: usize,
) -> Result<WindowReconstruction> {
    let stack = seq.window_stack(start, psf.grid.k_max)?;
    let cfg = window_solver_config(psf, &stack, alpha);
    let reconstruction = solve_dynamic_psf(&stack, psf, &cfg)?;
    Ok(WindowReconstruction {
        window_id,
        start_frame: start,
        center_frame: start + psf.grid.k_max as usize,
        reconstruction,
    })
}

/// One aggregated super-resolution point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SrPoint {
    pub x_mm: f64,
    pub y_mm: f64,
    pub vx_mm_s: f64,
    pub vy_mm_s: f64,
    pub weight: f64,
    pub window_id: usize,
}

/// Scatter of all recovered positions and velocities.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SuperResolutionMap {
    pub points: Vec<SrPoint>,
}

impl SuperResolutionMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_mm,y_mm,vx_mm_s,vy_mm_s,weight,window_id\n");
        for p in &self.points {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                p.x_mm, p.y_mm, p.vx_mm_s, p.vy_mm_s, p.weight, p.window_id
            ));
        }
        out
    }
}

/// Aggregate window reconstructions into one scatter map.
pub fn aggregate(recons: &[WindowReconstruction]) -> SuperResolutionMap {
    let mut points = Vec::new();
    for wr in recons {
        for p in &wr.reconstruction.particles {
            points.push(SrPoint {
                x_mm: p.position[0],
                y_mm: p.position[1],
                vx_mm_s: p.velocity[0],
                vy_mm_s: p.velocity[1],
                weight: p.weight,
                window_id: wr.window_id,
            });
        }
    }
    SuperResolutionMap { points }
}

/// Diffraction-limited reference image: the pixelwise mean over all
/// frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BModeImage {
    pub width: usize,
    pub height: usize,
    pub pitch_mm: f64,
    pub pixels: Vec<f64>,
}

impl BModeImage {
    /// Bilinear sample at a point in mm.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x / self.pitch_mm - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y / self.pitch_mm - 0.5).clamp(0.0, (self.height - 1) as f64);
        let ix = (fx.floor() as usize).min(self.width - 2);
        let iy = (fy.floor() as usize).min(self.height - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let at = |i: usize, j: usize| self.pixels[j * self.width + i];
        at(ix, iy) * (1.0 - tx) * (1.0 - ty)
            + at(ix + 1, iy) * tx * (1.0 - ty)
            + at(ix, iy + 1) * (1.0 - tx) * ty
            + at(ix + 1, iy + 1) * tx * ty
    }

    /// 8-bit grayscale PNG, max-normalized.
    pub fn write_png(&self, path: &std::path::Path) -> Result<()> {
        let max = self.pixels.iter().cloned().fold(0.0_f64, f64::max).max(1e-12);
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| ((p.max(0.0) / max) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches image dimensions");
        img.save(path)
            .map_err(|e| Error::InvalidConfiguration(format!("could not write image: {e}")))?;
        Ok(())
    }
}

pub fn bmode(seq: &FrameSequence) -> BModeImage {
    let n = seq.frames.len().max(1) as f64;
    let mut pixels = vec![0.0; seq.width * seq.height];
    for frame in &seq.frames {
        for (acc, &p) in pixels.iter_mut().zip(frame.iter()) {
            *acc += p / n;
        }
    }
    BModeImage {
        width: seq.width,
        height: seq.height,
        pitch_mm: seq.pitch_mm,
        pixels,
    }
}

/// End-to-end pipeline result.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub intervals: Vec<FrameInterval>,
    pub reconstructions: Vec<WindowReconstruction>,
    pub map: SuperResolutionMap,
    pub bmode: BModeImage,
    pub tracks: Vec<Track>,
}

/// Parameters of a full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sigma: f64,
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub tau: f64,
    pub duration_s: f64,
    #[serde(rename = "K")]
    pub k_max: i64,
    pub alpha: f64,
    pub rel_tol: f64,
    pub seed: u64,
}

impl PipelineConfig {
    /// Reference parameters: 1 x 1 mm field at 0.04 mm pitch, sigma =
    /// 0.04 mm, tau = 2 ms, 2 s acquisition, 5-frame windows.
    pub fn reference(seed: u64) -> Self {
        PipelineConfig {
            sigma: 0.04,
            width: 25,
            height: 25,
            pitch: 0.04,
            tau: 0.002,
            duration_s: 2.0,
            k_max: 2,
            alpha: 0.01,
            rel_tol: 0.02,
            seed,
        }
    }

    pub fn psf_operator(&self) -> Result<PsfOperator> {
        let grid = TimeGrid::new(self.k_max, self.tau, 2)?;
        PsfOperator::new(self.sigma, self.width, self.height, self.pitch, grid)
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s / self.tau).round() as usize
    }
}

/// Run the whole pipeline: synthesize, select quiet intervals, reconstruct
/// each window (in parallel), aggregate, and render the B-mode reference.
pub fn run_pipeline(
    phantom: &VesselPhantom,
    process: &BubbleProcess,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let psf = cfg.psf_operator()?;
    let noise = NoiseSpec::new(cfg.alpha, cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let (seq, tracks) = simulate_acquisition(phantom, process, &psf, &noise, cfg.n_frames())?;
    let window = (2 * cfg.k_max + 1) as usize;
    let intervals = select_intervals(&seq, window, cfg.rel_tol)?;

    let starts: Vec<(usize, usize)> = intervals
        .iter()
        .flat_map(|iv| iv.windows(cfg.k_max))
        .enumerate()
        .collect();
    let mut reconstructions: Vec<WindowReconstruction> = starts
        .par_iter()
        .filter_map(|&(window_id, start)| {
            reconstruct_window(&seq, &psf, start, cfg.alpha, window_id).ok()
        })
        .collect();
    reconstructions.sort_by_key(|wr| wr.window_id);

    let map = aggregate(&reconstructions);
    let bmode_img = bmode(&seq);
    Ok(PipelineResult {
        intervals,
        reconstructions,
        map,
        bmode: bmode_img,
        tracks,
    })
}

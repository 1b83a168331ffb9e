//! Super-resolution of moving point sources from low-frequency multi-frame
//! data.
//!
//! A cloud of weighted point sources moves with (locally) constant
//! velocities; each frame observes only low-frequency measurements — the
//! Fourier coefficients up to a cutoff `f_c` (d = 1) or a Gaussian-blurred
//! image (d = 2). Lifting to phase space turns every moving spike into a
//! static spike at `(position, velocity)`, and the whole frame stack into
//! one linear measurement of a sparse measure on the lifted domain. The
//! crate provides:
//!
//! - [`phase_space`]: the lifted domain, trajectory lines, the separation
//!   statistic, and ghost-particle detection (alternative trajectory sets
//!   that explain every frame);
//! - [`forward_model`]: the lifted Fourier and PSF measurement operators,
//!   noise injection, and curved-trajectory synthesis;
//! - [`solver`]: conditional-gradient recovery over the TV ball with
//!   continuous refinement, plus reconstruction matching;
//! - [`certificates`]: dual-certificate construction (static averages and
//!   a perturbed variant), grid verification, and the stability checker;
//! - [`experiments`]: Monte Carlo success-rate campaigns comparing dynamic
//!   and static recovery;
//! - [`ultrasound`]: a synthetic microbubble imaging pipeline producing a
//!   super-resolved velocity map next to the diffraction-limited B-mode
//!   image;
//! - [`io`]: JSON interchange formats for configurations, measurements and
//!   frames.

pub mod certificates;
pub mod error;
pub mod experiments;
pub mod forward_model;
pub mod io;
pub mod phase_space;
pub mod solver;
pub mod ultrasound;

pub use error::{Error, Result};

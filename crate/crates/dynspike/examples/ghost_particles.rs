//! Detect alternative trajectories ("ghosts") that explain every observed
//! frame of a configuration, and build the canonical three-particle
//! configuration that is provably indistinguishable from its ghosts.
//!
//! Run with: cargo run --release --example ghost_particles

use dynspike::forward_model::{apply_fourier, FourierOperator};
use dynspike::phase_space::{detect_ghosts, make_undetectable_config, TimeGrid};

fn main() -> dynspike::Result<()> {
    let grid = TimeGrid::new(1, 0.5, 1)?;
    let (particles, ghosts) = make_undetectable_config(&grid, &[1.0, 1.0, 1.0], 0.1)?;

    println!("true configuration:");
    for p in &particles.particles {
        println!("  x = {:.3}  v = {:+.3}", p.position[0], p.velocity[0]);
    }
    println!("equally valid alternative:");
    for p in &ghosts.particles {
        println!("  x = {:.3}  v = {:+.3}", p.position[0], p.velocity[0]);
    }

    let frames: Vec<i64> = grid.frames().collect();
    let detected = detect_ghosts(&particles, &frames)?;
    println!("ghost scan finds {} phase-space points:", detected.len());
    for g in &detected {
        println!("  x = {:.3}  v = {:+.3}", g.position, g.velocity);
    }

    let op = FourierOperator::new(20, grid)?;
    let yp = apply_fourier(&op, &particles)?;
    let yg = apply_fourier(&op, &ghosts)?;
    let diff = yp
        .data
        .iter()
        .zip(&yg.data)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0_f64, f64::max);
    println!("max measurement difference between the two: {diff:.2e}");
    Ok(())
}

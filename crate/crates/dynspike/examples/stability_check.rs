//! Check the sufficient conditions for stable recovery at a given target
//! accuracy: the grid-width relation between position and velocity
//! accuracy, per-frame separation, and absence of alternative
//! trajectories.
//!
//! Run with: cargo run --release --example stability_check

use dynspike::certificates::{check_stability_conditions, StabilityInputs};
use dynspike::phase_space::{make_undetectable_config, Configuration, Particle, TimeGrid};

fn main() -> dynspike::Result<()> {
    let grid = TimeGrid::new(2, 0.5, 1)?;
    let cfg = Configuration::new(
        vec![
            Particle::new_1d(0.25, 0.05, 1.0),
            Particle::new_1d(0.55, -0.04, 1.0),
            Particle::new_1d(0.80, 0.02, 1.0),
        ],
        grid,
    )?;
    let report = check_stability_conditions(&StabilityInputs {
        delta_x: 0.0015,
        delta_v: 0.003,
        f_c: 64,
        configuration: cfg,
    })?;
    println!("well-separated configuration:");
    println!("  grid-width relation: {}", report.relation_ok);
    println!("  per-frame separation: {}", report.separation_ok);
    println!("  no alternative trajectories: {}", report.ghost_condition_ok);
    println!("  certificate margin bound: {:.6}", report.margin_bound);

    // The indistinguishable fixture must fail: an alternative trajectory
    // explains every frame, so no accuracy target is certifiable.
    let g1 = TimeGrid::new(1, 0.5, 1)?;
    let (fixture, _) = make_undetectable_config(&g1, &[1.0, 1.0, 1.0], 0.1)?;
    let bad = check_stability_conditions(&StabilityInputs {
        delta_x: 0.0015,
        delta_v: 0.003,
        f_c: 64,
        configuration: fixture,
    })?;
    println!("indistinguishable fixture:");
    println!("  no alternative trajectories: {}", bad.ghost_condition_ok);
    Ok(())
}

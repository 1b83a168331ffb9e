//! Recovery from noisy measurements: compare dynamic and static success
//! rates at a moderate noise level with relaxed accuracy thresholds.
//!
//! Run with: cargo run --release --example noise_robustness

use dynspike::experiments::{run_campaign, TrialSpec};

fn main() -> dynspike::Result<()> {
    let mut spec = TrialSpec::reference(13);
    spec.alpha = 0.075;
    spec.srf_x = 40.0;
    spec.srf_v = 40.0;
    spec.delta_w = 0.05;
    let n_trials = 100;
    eprintln!("running {n_trials} noisy trials (alpha = {}) ...", spec.alpha);
    let table = run_campaign(&spec, n_trials, 20)?;
    print!("{}", table.to_csv());
    Ok(())
}

//! How quickly does recovery degrade when trajectories bend? Sweeps the
//! normalized curvature and reports the overall dynamic success rate with
//! deliberately loose accuracy thresholds.
//!
//! Run with: cargo run --release --example curvature_sweep

use dynspike::experiments::{run_campaign, TrialSpec};

fn main() -> dynspike::Result<()> {
    let mut spec = TrialSpec::reference(9);
    spec.srf_x = 1.0;
    spec.srf_v = 1.0;
    spec.delta_w = 0.2;
    let n_trials = 60;
    println!("beta,rate_dynamic");
    for beta in [0.0, 0.01, 0.02, 0.03, 0.05] {
        let mut s = spec.clone();
        s.beta = beta;
        let table = run_campaign(&s, n_trials, 20)?;
        println!("{beta},{:.3}", table.overall_dynamic_rate());
    }
    Ok(())
}

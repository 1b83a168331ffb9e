//! Monte Carlo comparison of dynamic versus static recovery as a function
//! of the separation statistic. Prints the binned success-rate table as
//! CSV. Increase the trial count for smoother curves.
//!
//! Run with: cargo run --release --example success_rates

use dynspike::experiments::{run_campaign, TrialSpec};

fn main() -> dynspike::Result<()> {
    let spec = TrialSpec::reference(7);
    let n_trials = 200;
    eprintln!(
        "running {n_trials} trials at f_c = {}, K = {}, tau = {} ...",
        spec.f_c, spec.k_max, spec.tau
    );
    let table = run_campaign(&spec, n_trials, 20)?;
    print!("{}", table.to_csv());
    eprintln!(
        "overall dynamic success rate: {:.3}",
        table.overall_dynamic_rate()
    );
    Ok(())
}

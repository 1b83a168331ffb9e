//! Command-line driver: forward synthesis, reconstruction, certificate
//! checks, Monte Carlo campaigns and the imaging pipeline, each reading a
//! JSON config and writing its artifacts plus a run manifest into the
//! output directory. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure; errors are also emitted as JSON on stderr.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dynspike::certificates::{
    build_perturbed_certificate, build_static_average, check_stability_conditions,
    verify_certificate, CertificateFile, SignVector, StabilityInputs,
};
use dynspike::error::Error;
use dynspike::experiments::{run_campaign, TrialSpec};
use dynspike::forward_model::{
    add_noise_tensor, apply_fourier, apply_fourier_curved, CurvedTrajectorySpec, FourierOperator,
    NoiseSpec,
};
use dynspike::io::{
    read_tensor, write_configuration, write_tensor, ConfigurationFile,
};
use dynspike::solver::{solve_dynamic, solve_static, SolverConfig};
use dynspike::ultrasound::{run_pipeline, BubbleProcess, PipelineConfig, VesselPhantom};

#[derive(Parser)]
#[command(name = "dynspike", version, about = "Dynamic spike super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize measurements from a ground-truth configuration.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Override the noise scale.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the trajectory curvature.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Recover a configuration from a measurement file.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Build and verify a dual certificate; run the stability checker.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo success-rate campaign.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Synthetic microbubble imaging pipeline.
    Ultrasound {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    out_dir: String,
    version: String,
    seconds: f64,
    outputs: Vec<String>,
    success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: String,
    kind: &'a str,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::InvalidConfiguration(_)
        | Error::InvalidSolverParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::FrameOutOfRange { .. }
        | Error::UnsupportedDimension(_)
        | Error::TooFewParticles { .. }
        | Error::TooFewFrames { .. }
        | Error::GeometryOutOfDomain { .. } => "config",
        _ => "numerical",
    }
}

fn exit_code(e: &Error) -> i32 {
    if error_kind(e) == "config" {
        2
    } else {
        3
    }
}

fn main() {
    let cli = Cli::parse();
    let code = run(cli);
    std::process::exit(code);
}

fn run(cli: Cli) -> i32 {
    let (name, common) = match &cli.command {
        Command::Simulate { common, .. } => ("simulate", common.clone()),
        Command::Reconstruct { common } => ("reconstruct", common.clone()),
        Command::Certify { common } => ("certify", common.clone()),
        Command::Experiment { common, .. } => ("experiment", common.clone()),
        Command::Ultrasound { common } => ("ultrasound", common.clone()),
    };

    if let Some(n) = common.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let start = Instant::now();
    let mut outputs: Vec<String> = Vec::new();
    let config_snapshot = std::fs::read_to_string(&common.config)
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .unwrap_or(serde_json::Value::Null);

    let result = std::fs::create_dir_all(&common.out)
        .map_err(Error::from)
        .and_then(|_| dispatch(&cli.command, &common, &mut outputs));

    let (success, error, code) = match &result {
        Ok(()) => (true, None, 0),
        Err(e) => {
            let ej = ErrorJson {
                error: e.to_string(),
                kind: error_kind(e),
            };
            eprintln!("{}", serde_json::to_string(&ej).unwrap());
            (false, Some(e.to_string()), exit_code(e))
        }
    };

    let manifest = RunManifest {
        command: name.to_string(),
        config: config_snapshot,
        seed: common.seed,
        out_dir: common.out.display().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seconds: start.elapsed().as_secs_f64(),
        outputs,
        success,
        error,
    };
    if std::fs::create_dir_all(&common.out).is_ok() {
        let _ = std::fs::write(
            common.out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).unwrap(),
        );
    }
    code
}

fn dispatch(cmd: &Command, common: &Common, outputs: &mut Vec<String>) -> dynspike::Result<()> {
    match cmd {
        Command::Simulate { alpha, beta, .. } => cmd_simulate(common, *alpha, *beta, outputs),
        Command::Reconstruct { .. } => cmd_reconstruct(common, outputs),
        Command::Certify { .. } => cmd_certify(common, outputs),
        Command::Experiment {
            trials,
            alpha,
            beta,
            ..
        } => cmd_experiment(common, *trials, *alpha, *beta, outputs),
        Command::Ultrasound { .. } => cmd_ultrasound(common, outputs),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> dynspike::Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn record(outputs: &mut Vec<String>, path: &Path) -> String {
    let s = path.display().to_string();
    outputs.push(s.clone());
    s
}

#[derive(Deserialize)]
struct SimulateCfg {
    configuration: ConfigurationFile,
    f_c: i64,
    #[serde(default)]
    alpha: f64,
    #[serde(default)]
    beta: f64,
    #[serde(default)]
    seed: u64,
}

fn cmd_simulate(
    common: &Common,
    alpha: Option<f64>,
    beta: Option<f64>,
    outputs: &mut Vec<String>,
) -> dynspike::Result<()> {
    let mut cfg: SimulateCfg = read_json(&common.config)?;
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    if let Some(b) = beta {
        cfg.beta = b;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let configuration = cfg.configuration.into_configuration()?;
    let op = FourierOperator::new(cfg.f_c, configuration.grid)?;
    let clean = if cfg.beta == 0.0 {
        apply_fourier(&op, &configuration)?
    } else {
        let curvature = CurvedTrajectorySpec::from_beta(&configuration, cfg.beta);
        apply_fourier_curved(&op, &configuration, &curvature)?
    };
    let y = add_noise_tensor(&clean, &NoiseSpec::new(cfg.alpha, cfg.seed));

    let truth_path = common.out.join("truth.json");
    write_configuration(&truth_path, &configuration)?;
    record(outputs, &truth_path);
    let tensor_path = common.out.join("measurement.json");
    write_tensor(&tensor_path, &y)?;
    record(outputs, &tensor_path);
    Ok(())
}

#[derive(Deserialize)]
struct ReconstructCfg {
    measurement: PathBuf,
    tv_bound: f64,
    #[serde(default)]
    alpha: f64,
    /// "dynamic" (default) or "static" (per-frame recovery).
    #[serde(default)]
    mode: Option<String>,
    #[serde(rename = "K", default)]
    k_max: Option<i64>,
}

fn cmd_reconstruct(common: &Common, outputs: &mut Vec<String>) -> dynspike::Result<()> {
    let cfg: ReconstructCfg = read_json(&common.config)?;
    let y = read_tensor(&cfg.measurement)?;
    if let Some(k) = cfg.k_max {
        if k != y.k_max {
            return Err(Error::InvalidConfiguration(format!(
                "config expects K = {k} but the measurement file has K = {}",
                y.k_max
            )));
        }
    }
    let grid = dynspike::phase_space::TimeGrid::new(y.k_max, y.tau, 1)?;
    let op = FourierOperator::new(y.f_c, grid)?;
    let solver_cfg = if cfg.alpha == 0.0 {
        SolverConfig::noiseless(cfg.tv_bound, y.norm_l2())
    } else {
        SolverConfig::noisy(cfg.tv_bound, cfg.alpha, 2 * y.data.len())
    };

    let mode = cfg.mode.as_deref().unwrap_or("dynamic");
    let out = common.out.join("reconstruction.json");
    match mode {
        "dynamic" => {
            let recon = solve_dynamic(&y, &op, &solver_cfg)?;
            let particles: Vec<serde_json::Value> = recon
                .particles
                .iter()
                .map(|p| {
                    serde_json::json!({"x": p.position, "v": p.velocity, "w": p.weight})
                })
                .collect();
            let doc = serde_json::json!({
                "mode": "dynamic",
                "particles": particles,
                "residual_norm": recon.residual_norm,
                "iterations": recon.iterations,
                "converged": recon.converged,
            });
            std::fs::write(&out, serde_json::to_string_pretty(&doc)?)?;
        }
        "static" => {
            let mut frames = Vec::new();
            for k in grid.frames() {
                let spikes = solve_static(y.frame(k), y.f_c, &solver_cfg)?;
                frames.push(serde_json::json!({
                    "k": k,
                    "spikes": spikes.iter().map(|&(x, w)| serde_json::json!({"x": x, "w": w})).collect::<Vec<_>>(),
                }));
            }
            let doc = serde_json::json!({"mode": "static", "frames": frames});
            std::fs::write(&out, serde_json::to_string_pretty(&doc)?)?;
        }
        other => {
            return Err(Error::InvalidConfiguration(format!(
                "unknown reconstruction mode {other:?}"
            )))
        }
    }
    record(outputs, &out);
    Ok(())
}

#[derive(Deserialize)]
struct CertifyCfg {
    configuration: ConfigurationFile,
    f_c: i64,
    /// Sign pattern; defaults to all +1.
    #[serde(default)]
    signs: Option<Vec<f64>>,
    /// If set, build the perturbed three-particle certificate instead of
    /// the plain static average.
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    grid_resolution: Option<usize>,
    #[serde(default)]
    margin: Option<f64>,
    /// Accuracy thresholds for the stability checker.
    #[serde(default)]
    delta_x: Option<f64>,
    #[serde(default)]
    delta_v: Option<f64>,
}

fn cmd_certify(common: &Common, outputs: &mut Vec<String>) -> dynspike::Result<()> {
    let cfg: CertifyCfg = read_json(&common.config)?;
    let configuration = cfg.configuration.into_configuration()?;
    let k_set: Vec<i64> = configuration.grid.frames().collect();

    let cert = match cfg.epsilon {
        Some(eps) => build_perturbed_certificate(&configuration, eps, cfg.f_c)?,
        None => {
            let signs = match &cfg.signs {
                Some(s) => SignVector::new(s.clone())?,
                None => SignVector::ones(configuration.len()),
            };
            build_static_average(&configuration, &signs, &k_set, cfg.f_c)?
        }
    };

    let resolution = cfg
        .grid_resolution
        .unwrap_or(8 * cfg.f_c as usize * configuration.grid.frame_count());
    let signs = match &cfg.signs {
        Some(s) => SignVector::new(s.clone())?,
        None => SignVector::ones(configuration.len()),
    };
    let report = verify_certificate(
        &cert,
        &configuration,
        &signs,
        resolution,
        cfg.margin.unwrap_or(0.01),
    )?;

    let cert_path = common.out.join("certificate.json");
    std::fs::write(
        &cert_path,
        serde_json::to_string(&CertificateFile::from(&cert))?,
    )?;
    record(outputs, &cert_path);

    let stability = match (cfg.delta_x, cfg.delta_v) {
        (Some(dx), Some(dv)) => Some(check_stability_conditions(&StabilityInputs {
            delta_x: dx,
            delta_v: dv,
            f_c: cfg.f_c,
            configuration: configuration.clone(),
        })?),
        _ => None,
    };

    let report_path = common.out.join("certify_report.json");
    let doc = serde_json::json!({
        "verification": report,
        "stability": stability,
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&doc)?)?;
    record(outputs, &report_path);

    if !report.all_ok() {
        return Err(Error::InvalidConfiguration(
            "certificate verification failed; see certify_report.json".into(),
        ));
    }
    Ok(())
}

#[derive(Deserialize)]
struct ExperimentCfg {
    #[serde(flatten)]
    spec: TrialSpec,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default = "default_bins")]
    bins: usize,
}

fn default_trials() -> usize {
    1000
}

fn default_bins() -> usize {
    20
}

fn cmd_experiment(
    common: &Common,
    trials: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    outputs: &mut Vec<String>,
) -> dynspike::Result<()> {
    let mut cfg: ExperimentCfg = read_json(&common.config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(a) = alpha {
        cfg.spec.alpha = a;
    }
    if let Some(b) = beta {
        cfg.spec.beta = b;
    }
    if let Some(s) = common.seed {
        cfg.spec.seed = s;
    }
    let table = run_campaign(&cfg.spec, cfg.trials, cfg.bins)?;

    let csv_path = common.out.join("campaign.csv");
    std::fs::write(&csv_path, table.to_csv())?;
    record(outputs, &csv_path);
    let records_path = common.out.join("records.json");
    std::fs::write(&records_path, serde_json::to_string(&table.records)?)?;
    record(outputs, &records_path);
    Ok(())
}

#[derive(Deserialize)]
struct UltrasoundCfg {
    #[serde(flatten)]
    pipeline: PipelineConfig,
    #[serde(default)]
    activation_probability: Option<f64>,
    #[serde(default)]
    mean_lifetime_frames: Option<f64>,
    /// Optional explicit phantom; defaults to the two-vessel phantom.
    #[serde(default)]
    phantom: Option<VesselPhantom>,
}

fn cmd_ultrasound(common: &Common, outputs: &mut Vec<String>) -> dynspike::Result<()> {
    let mut cfg: UltrasoundCfg = read_json(&common.config)?;
    if let Some(s) = common.seed {
        cfg.pipeline.seed = s;
    }
    let phantom = cfg
        .phantom
        .clone()
        .unwrap_or_else(VesselPhantom::default_two_vessel);
    let mut process = BubbleProcess::default_with_seed(cfg.pipeline.seed);
    if let Some(p) = cfg.activation_probability {
        process = BubbleProcess::new(p, process.mean_lifetime_frames, process.seed)?;
    }
    if let Some(l) = cfg.mean_lifetime_frames {
        process = BubbleProcess::new(process.activation_probability, l, process.seed)?;
    }

    let result = run_pipeline(&phantom, &process, &cfg.pipeline)?;

    let points_path = common.out.join("points.csv");
    std::fs::write(&points_path, result.map.to_csv())?;
    record(outputs, &points_path);
    let bmode_path = common.out.join("bmode.png");
    result.bmode.write_png(&bmode_path)?;
    record(outputs, &bmode_path);
    let summary_path = common.out.join("ultrasound_summary.json");
    let doc = serde_json::json!({
        "intervals": result.intervals,
        "n_windows": result.reconstructions.len(),
        "n_points": result.map.points.len(),
        "n_tracks": result.tracks.len(),
    });
    std::fs::write(&summary_path, serde_json::to_string_pretty(&doc)?)?;
    record(outputs, &summary_path);
    Ok(())
}

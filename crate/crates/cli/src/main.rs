//! `headcal` — calibrate, simulate, and evaluate from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 validation error (bad files or
//! flag values), 4 numerical/stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use headcal_core::evaluation::{build_report, participant_stats, MmRatio};
use headcal_core::io;
use headcal_core::pipeline::{calibrate, CalibrateError};
use headcal_core::pnp::PnPConfig;
use headcal_core::simulator::{
    generate_scene, run_trial, NoiseConfig, SceneConfig, SimulatorError,
};

#[derive(Parser)]
#[command(
    name = "headcal",
    version,
    about = "Virtual-to-real head calibration toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one calibration from a manifest of input files.
    Calibrate {
        /// Path to the run manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (defaults to the manifest's `output_dir` or its
        /// own directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeded synthetic closed-loop trials.
    Simulate {
        /// Number of trials.
        #[arg(long)]
        trials: u64,
        /// Base seed; trial t uses seed + t.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gaussian pixel noise sigma (px, per axis).
        #[arg(long = "pixel-noise", default_value_t = 0.0)]
        pixel_noise: f64,
        /// Gaussian depth noise sigma (mm).
        #[arg(long = "depth-noise", default_value_t = 0.0)]
        depth_noise: f64,
        /// Landmark dropout probability in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// Output directory for trials.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute overlay-error statistics from annotated samples.
    Evaluate {
        /// Samples CSV (participant,pose,feature,annot_u,annot_v,det_u,det_v).
        #[arg(long)]
        samples: PathBuf,
        /// Head sizes JSON (per-participant px and mm dimensions).
        #[arg(long = "head-sizes")]
        head_sizes: PathBuf,
        /// Pixel-to-millimeter ratio: `width` or `avg`.
        #[arg(long = "mm-ratio", default_value = "width")]
        mm_ratio: String,
        /// Output directory for report.csv and report.json.
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Validation(String),
    Stage(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Stage(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Stage(m) => m,
        }
    }
}

impl From<io::SchemaError> for CliError {
    fn from(e: io::SchemaError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        CliError::Stage(e.to_string())
    }
}

impl From<SimulatorError> for CliError {
    fn from(e: SimulatorError) -> Self {
        match e {
            SimulatorError::InvalidRanges { .. } | SimulatorError::InvalidNoise { .. } => {
                CliError::Validation(e.to_string())
            }
            SimulatorError::InfeasibleRange { .. } => CliError::Stage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { manifest, out } => cmd_calibrate(&manifest, out),
        Command::Simulate {
            trials,
            seed,
            pixel_noise,
            depth_noise,
            dropout,
            out,
        } => cmd_simulate(trials, seed, pixel_noise, depth_noise, dropout, &out),
        Command::Evaluate {
            samples,
            head_sizes,
            mm_ratio,
            out,
        } => cmd_evaluate(&samples, &head_sizes, &mm_ratio, &out),
    }
}

fn cmd_calibrate(manifest_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let manifest = io::load_manifest(manifest_path)?;
    let input = io::load_calibration_input(&manifest)?;
    let result = calibrate(&input)?;
    let out_dir = out.unwrap_or_else(|| manifest.output_dir.clone());
    let result_path = out_dir.join("calibration_result.json");
    io::write_calibration_result(&result_path, &result)?;
    println!(
        "calibration ok: scale {:.6}, reprojection rms {:.3e} px ({} iterations, converged: {})",
        result.uniform_scale,
        result.head_pose.reprojection_rms,
        result.head_pose.iterations,
        result.head_pose.converged,
    );
    println!("result written to {}", result_path.display());
    Ok(())
}

fn cmd_simulate(
    trials: u64,
    seed: u64,
    pixel_noise: f64,
    depth_noise: f64,
    dropout: f64,
    out: &Path,
) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::Validation("--trials must be >= 1".to_string()));
    }
    let noise_template = NoiseConfig {
        pixel_sigma: pixel_noise,
        depth_sigma: depth_noise,
        dropout_rate: dropout,
        seed,
    };
    noise_template.validate()?;

    let scene_cfg = SceneConfig::default();
    let pnp_cfg = PnPConfig::default();
    let mut results = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        let trial_seed = seed.wrapping_add(t);
        let scene = generate_scene(trial_seed, &scene_cfg)?;
        let noise = NoiseConfig {
            seed: trial_seed,
            ..noise_template
        };
        results.push(run_trial(&scene, &noise, &pnp_cfg));
    }

    let csv_path = out.join("trials.csv");
    io::write_string(&csv_path, &io::trials_to_csv(&results))?;
    let summary = io::summarize_trials(&results, &noise_template, seed);
    let summary_path = out.join("summary.json");
    io::write_string(&summary_path, &io::summary_to_json(&summary))?;
    println!(
        "{} trials ({} completed, {} failed); median overlay {:.6} mm",
        summary.trials, summary.completed, summary.failed, summary.overlay_error_mm.median
    );
    println!(
        "wrote {} and {}",
        csv_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn cmd_evaluate(
    samples_path: &Path,
    head_sizes_path: &Path,
    mm_ratio: &str,
    out: &Path,
) -> Result<(), CliError> {
    let mode: MmRatio = mm_ratio.parse().map_err(CliError::Validation)?;
    let samples = io::load_samples_csv(samples_path)?;
    let sizes = io::load_head_sizes(head_sizes_path)?;
    let stats = participant_stats(&samples, &sizes, mode)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let report = build_report(&stats);
    let csv_path = out.join("report.csv");
    io::write_string(&csv_path, &report.to_csv_string())?;
    let json_path = out.join("report.json");
    io::write_string(&json_path, &report.to_json_string())?;
    println!(
        "evaluated {} samples over {} groups",
        samples.len(),
        stats.len()
    );
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

//! Batch CLI for the hyperspherical VAE workbench. Commands read one
//! JSON config (see `RunConfig`), honor `--set key=value` overrides,
//! and write all artifacts under the configured output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hsvae::cli;
use hsvae::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "hsvae",
    version,
    about = "Power Spherical VAE: synthetic data, training, ablations, diagnostics",
    after_help = "Environment: HSVAE_THREADS overrides the worker thread count."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the distribution oracle suite (quadrature, MC, sampler,
    /// gradient, and stability checks); exit 0 iff all pass.
    Selftest {
        /// Emit the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Test hook: corrupt a named dependency (supported:
        /// log_gamma) to verify the suite catches it.
        #[arg(long, value_name = "CHECK")]
        inject_fault: Option<String>,
    },
    /// Generate and export the synthetic dataset with depth previews.
    GenData(RunArgs),
    /// Train a model; writes metrics.csv, plot curves, checkpoints.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(CheckpointArgs),
    /// Train product/gaussian/single-sphere arms and report ordering.
    Ablate(RunArgs),
    /// Latent-space diagnostics on a checkpoint.
    Diagnose(CheckpointArgs),
    /// Spherical interpolation sweep between two scenes.
    Interp(InterpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Emit the command report as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Dotted-path config override, e.g. --set train.steps=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint path; defaults to <out>/checkpoint_last.bin.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct InterpArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Index of the sweep's start scene.
    #[arg(long, default_value_t = 0)]
    scene_a: usize,
    /// Index of the sweep's end scene.
    #[arg(long, default_value_t = 1)]
    scene_b: usize,
    /// Interpolation steps; the sweep has steps + 1 points.
    #[arg(long, default_value_t = 8)]
    steps: usize,
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig, hsvae::Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path, &args.set)?,
        None => RunConfig::from_json("", &args.set)?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(json: bool, report: &T, human: String) {
    if json {
        match serde_json::to_string_pretty(report) {
            Ok(s) => println!("{s}"),
            Err(e) => eprintln!("report serialization failed: {e}"),
        }
    } else {
        println!("{human}");
    }
}

fn run() -> Result<bool, hsvae::Error> {
    match Cli::parse().cmd {
        Cmd::Selftest { json, inject_fault } => {
            let report = cli::run_selftest(inject_fault.as_deref())?;
            if json {
                emit(true, &report, String::new());
            } else {
                print!("{}", report.render_table());
            }
            Ok(report.all_pass)
        }
        Cmd::GenData(args) => {
            let cfg = resolve_config(&args)?;
            let report = cli::cmd_gen_data(&cfg)?;
            emit(
                args.json,
                &report,
                format!(
                    "exported {} scenes (train/val/test = {}/{}/{}) to {}",
                    report.scenes,
                    report.train,
                    report.val,
                    report.test,
                    report.dataset_dir.display()
                ),
            );
            Ok(true)
        }
        Cmd::Train(args) => {
            let cfg = resolve_config(&args)?;
            let report = cli::cmd_train(&cfg)?;
            emit(
                args.json,
                &report,
                format!(
                    "trained {} steps ({} params): recon {:?} -> {:?}, kappa audit ok: {}\ncheckpoint: {}",
                    report.steps,
                    report.param_count,
                    report.initial_recon,
                    report.final_recon,
                    report.kappa_audit_ok,
                    report.checkpoint.display()
                ),
            );
            Ok(true)
        }
        Cmd::Eval(args) => {
            let cfg = resolve_config(&args.run)?;
            let report = cli::cmd_eval(&cfg, args.checkpoint.as_deref())?;
            let m = &report.metrics;
            emit(
                args.run.json,
                &report,
                format!(
                    "test split: AbsRel {:.4}, delta1 {:.4}, SqRel {:.4}, RMSElog {:.4}, ATE {:.4}, feature cos {:.4}",
                    m.abs_rel, m.delta1, m.sq_rel, m.rmse_log, m.ate, m.feature_cos
                ),
            );
            Ok(true)
        }
        Cmd::Ablate(args) => {
            let cfg = resolve_config(&args)?;
            let report = cli::cmd_ablate(&cfg)?;
            let mut human = String::new();
            for arm in &report.table.arms {
                human.push_str(&format!(
                    "{:<14} feature cos {}  kappa audit ok {}  error {:?}\n",
                    arm.name,
                    arm.metrics
                        .as_ref()
                        .map_or("n/a".to_string(), |m| format!("{:.4}", m.feature_cos)),
                    arm.kappa_audit_ok,
                    arm.error
                ));
            }
            human.push_str(&report.verdict);
            emit(args.json, &report, human);
            Ok(true)
        }
        Cmd::Diagnose(args) => {
            let cfg = resolve_config(&args.run)?;
            let report = cli::cmd_diagnose(&cfg, args.checkpoint.as_deref())?;
            emit(
                args.run.json,
                &report,
                format!(
                    "active dims {}/{} (threshold {}), norm CV {:?}, shell outside {:?}, probe AbsRel {:.4}",
                    report.dimensions.active_count,
                    report.dimensions.per_dimension_variance.len(),
                    report.dimensions.threshold,
                    report.norm_cv,
                    report.shell_outside,
                    report.probe.abs_rel
                ),
            );
            Ok(true)
        }
        Cmd::Interp(args) => {
            let cfg = resolve_config(&args.ckpt.run)?;
            let report = cli::cmd_interp(
                &cfg,
                args.ckpt.checkpoint.as_deref(),
                args.scene_a,
                args.scene_b,
                args.steps,
            )?;
            emit(
                args.ckpt.run.json,
                &report,
                format!(
                    "sweep {} -> {} in {} steps: smoothness ratio {:.3}, max unit error {:.2e}, {} images",
                    report.scene_a,
                    report.scene_b,
                    report.ts.len() - 1,
                    report.smoothness_ratio,
                    report.max_unit_error,
                    report.images.len()
                ),
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

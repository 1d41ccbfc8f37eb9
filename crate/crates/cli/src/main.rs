//! `splatbench`: train, benchmark, and report on the tile-based Gaussian
//! splatting trainer.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 IO error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Overrides, RunConfig};
use splatbench_core::instrument::{StageBreakdown, StageId, N_STAGES};
use splatbench_core::membench::trace_to_csv;
use splatbench_core::report::ResultsGrid;
use splatbench_core::scene::save_checkpoint;
use splatbench_core::train::{
    metrics_grid, run_bench, run_train, TrainError, TrainOutcome, TrainSettings,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    ReadInput {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed input {path}: {message}")]
    BadInput { path: PathBuf, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Write { .. } | CliError::ReadInput { .. } | CliError::BadInput { .. } => {
                EXIT_IO
            }
            CliError::Train(e) => match e {
                TrainError::SceneIo(_) | TrainError::Scene(_) => EXIT_IO,
                // budget/shape problems are misconfiguration
                TrainError::Mem(_) => EXIT_CONFIG,
                // non-finite loss and everything numerical inside the loop
                _ => EXIT_NUMERICAL,
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "splatbench",
    about = "Instrumented CPU trainer for tile-based differentiable Gaussian splatting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training session and write its artifacts.
    Train(RunArgs),
    /// Run training `repeats` times and collect per-run metrics.
    Bench(RunArgs),
    /// Render tables from a previously written metrics.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Densification strategy: "default" or "mcmc".
    #[arg(long)]
    densify: Option<String>,
    /// Fixed Gaussian budget for mcmc densification.
    #[arg(long)]
    budget: Option<usize>,
    /// Training iterations.
    #[arg(long)]
    iters: Option<u64>,
    /// Benchmark repeats (bench subcommand).
    #[arg(long)]
    repeats: Option<usize>,
    /// Base seed; bench run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Tile edge length in pixels.
    #[arg(long = "tile-size")]
    tile_size: Option<u32>,
    /// Reserve all buffers up front (no resize spikes possible).
    #[arg(long)]
    preallocate: bool,
    /// Integer image downscale factor for directory scenes.
    #[arg(long)]
    downscale: Option<u32>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (1 = fully sequential; 0 = library default).
    #[arg(long)]
    threads: Option<usize>,
    /// Timing source: "real" or "fixed" (reproducible timings).
    #[arg(long)]
    clock: Option<String>,
    /// Scene directory (cameras.json + images/); omitted means synthetic.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// metrics.csv to render; defaults to <out>/metrics.csv.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Output directory (tables.txt destination).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Confidence level for intervals.
    #[arg(long)]
    level: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn build_settings(args: &RunArgs) -> Result<(TrainSettings, RunConfig), CliError> {
    let mut cfg = RunConfig::load(args.config.as_ref())?;
    let overrides = Overrides {
        densify: args.densify.clone(),
        budget: args.budget,
        iters: args.iters,
        repeats: args.repeats,
        seed: args.seed,
        tile_size: args.tile_size,
        preallocate: args.preallocate,
        downscale: args.downscale,
        threads: args.threads,
        clock: args.clock.clone(),
        scene_dir: args.scene.clone(),
    };
    cfg.apply(&overrides);
    let settings = cfg.to_settings()?;
    if cfg.run.threads > 0 {
        splatbench_core::train::configure_thread_pool(cfg.run.threads);
    }
    Ok((settings, cfg))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })
}

fn scene_label(settings: &TrainSettings) -> String {
    match &settings.scene {
        splatbench_core::train::SceneSource::Synthetic { .. } => "synthetic".to_string(),
        splatbench_core::train::SceneSource::Directory { path, .. } => path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".to_string()),
    }
}

/// Writes the per-run artifacts (checkpoint, stage breakdown, arena trace).
fn write_run_artifacts(out: &Path, outcome: &TrainOutcome) -> Result<(), CliError> {
    let ckpt = out.join("checkpoint.splt");
    save_checkpoint(&ckpt, &outcome.cloud).map_err(TrainError::from)?;
    write_file(&out.join("breakdown.csv"), &outcome.breakdown.to_csv())?;
    write_file(&out.join("arena.csv"), &trace_to_csv(&outcome.trace))?;
    Ok(())
}

fn write_metrics_and_tables(out: &Path, grid: &ResultsGrid) -> Result<(), CliError> {
    let csv = grid.to_csv().map_err(TrainError::from)?;
    write_file(&out.join("metrics.csv"), &csv)?;
    let text = grid.render_text().map_err(TrainError::from)?;
    write_file(&out.join("tables.txt"), &text)?;
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<(), CliError> {
    let (settings, cfg) = build_settings(args)?;
    ensure_out_dir(&args.out)?;
    let outcome = run_train(&settings)?;
    write_run_artifacts(&args.out, &outcome)?;
    let grid = metrics_grid(std::slice::from_ref(&outcome), &scene_label(&settings), cfg.run.level);
    write_metrics_and_tables(&args.out, &grid)?;
    println!(
        "trained {} iterations: PSNR {:.2} dB (from {:.2}), SSIM {:.3}, {} Gaussians, {:.3} s",
        settings.iterations,
        outcome.psnr_db,
        outcome.initial_psnr_db,
        outcome.ssim,
        outcome.final_count,
        outcome.time_seconds
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: &RunArgs) -> Result<(), CliError> {
    let (settings, cfg) = build_settings(args)?;
    ensure_out_dir(&args.out)?;
    let label = scene_label(&settings);
    let (grid, outcomes) = run_bench(&settings, cfg.run.repeats, &label, cfg.run.level)?;
    // Keep the last run's artifacts for inspection.
    if let Some(last) = outcomes.last() {
        write_run_artifacts(&args.out, last)?;
    }
    write_metrics_and_tables(&args.out, &grid)?;
    if cfg.run.repeats >= 2 {
        println!("{}", grid.render_text().map_err(TrainError::from)?);
    } else {
        println!("single run recorded; repeat with repeats >= 2 for intervals");
    }
    println!("metrics for {} runs in {}", cfg.run.repeats, args.out.display());
    Ok(())
}

/// Rebuilds a stage breakdown from a written breakdown.csv.
fn parse_breakdown_csv(path: &Path) -> Result<StageBreakdown, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadInput {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |message: String| CliError::BadInput {
        path: path.to_path_buf(),
        message,
    };
    let mut seconds = [0.0f64; N_STAGES];
    let mut seen = [false; N_STAGES];
    let mut total = None;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "stage,seconds" {
                return Err(bad(format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (label, value) = line
            .rsplit_once(',')
            .ok_or_else(|| bad(format!("line {} is not label,value", lineno + 1)))?;
        let value: f64 = value
            .parse()
            .map_err(|_| bad(format!("bad number {value:?} on line {}", lineno + 1)))?;
        match label {
            "Total" => total = Some(value),
            "Unaccounted" => {} // recomputed
            _ => {
                let stage = StageId::ALL
                    .into_iter()
                    .find(|s| s.label() == label)
                    .ok_or_else(|| bad(format!("unknown stage {label:?}")))?;
                seconds[stage.index()] = value;
                seen[stage.index()] = true;
            }
        }
    }
    let total = total.ok_or_else(|| bad("missing Total row".to_string()))?;
    if let Some(missing) = StageId::ALL.iter().find(|s| !seen[s.index()]) {
        return Err(bad(format!("missing stage row {:?}", missing.label())));
    }
    StageBreakdown::from_parts(seconds, total)
        .map_err(|e| bad(format!("inconsistent breakdown: {e}")))
}

fn render_breakdown_text(b: &StageBreakdown) -> String {
    let mut rows: Vec<(String, f64)> = StageId::ALL
        .iter()
        .map(|&s| (s.label().to_string(), b.stage_seconds(s)))
        .collect();
    rows.push(("Unaccounted".to_string(), b.unaccounted));
    rows.push(("Total".to_string(), b.total));
    let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut out = String::from("Stage breakdown (seconds)\n");
    for (name, value) in &rows {
        out.push_str(&format!("{name:<name_width$}  {value:.3}\n"));
    }
    out.push_str("\nGrouped\n");
    let grouped = b.grouped();
    let gw = grouped.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    for (name, value) in grouped {
        out.push_str(&format!("{name:<gw$}  {value:.3}\n"));
    }
    out
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let results = args
        .results
        .clone()
        .unwrap_or_else(|| args.out.join("metrics.csv"));
    let text = std::fs::read_to_string(&results).map_err(|source| CliError::ReadInput {
        path: results.clone(),
        source,
    })?;
    let level = args.level.unwrap_or(0.90);
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(CliError::Config(ConfigError::Invalid(
            "level must be in (0, 1)".into(),
        )));
    }
    let grid = ResultsGrid::from_csv(&text, level).map_err(TrainError::from)?;
    let mut rendered = grid.render_text().map_err(TrainError::from)?;
    let breakdown_path = args.out.join("breakdown.csv");
    if breakdown_path.is_file() {
        let breakdown = parse_breakdown_csv(&breakdown_path)?;
        rendered.push('\n');
        rendered.push_str(&render_breakdown_text(&breakdown));
    }
    ensure_out_dir(&args.out)?;
    write_file(&args.out.join("tables.txt"), &rendered)?;
    println!("{rendered}");
    Ok(())
}

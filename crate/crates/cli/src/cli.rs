use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use streamrtr::synth::{derive_seed, run_sweep, run_trial, SweepKind, SweepOptions, SynthSpec};
use streamrtr::{Accumulation, RunConfig};

use crate::config::merge_config;
use crate::degrade::{degrade, CorruptionKind, DegradeParams, MagnitudeUnit};
use crate::error::{io_err, CliError, Result};
use crate::export::{write_cleaned, write_frame, write_json, write_metrics, write_outliers};
use crate::frame::{TensorFrame, HOURS};
use crate::ingest::{ingest_csv, Aggregation, CsvSchema};
use crate::noaa;
use crate::pipeline::{run, RunOptions, RunResult};

#[derive(Debug, Parser)]
#[command(name = "streamrtr", version, about = "Streaming robust tensor recovery for sensor networks")]
pub struct Cli {
    /// key=value file whose keys are long flag names; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a sensor CSV, recover it and export cleaned data and outlier reports.
    Clean(CleanArgs),
    /// Degrade a complete frame (NOAA protocol), then recover and score it.
    Degrade(DegradeArgs),
    /// Synthetic trials and parameter sweeps.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AccumulationArg {
    Compensated,
    Uncompensated,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Dictionary width.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Sparsity scale; lambda2 = alpha / sqrt(2 ln I_max).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub lambda1: f64,
    /// Explicit lambda2, overriding --alpha.
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub max_inner_iters: usize,
    #[arg(long)]
    pub minibatch_days: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mode whose fibers are treated as outliers (0 = across sensors).
    #[arg(long, default_value_t = 0)]
    pub outlier_mode: usize,
    #[arg(long, value_enum, default_value = "compensated")]
    pub accumulation: AccumulationArg,
}

impl EngineArgs {
    fn to_config(&self, rank: usize, alpha: f64) -> RunConfig {
        RunConfig {
            rank: self.rank.unwrap_or(rank),
            lambda1: self.lambda1,
            alpha: self.alpha.unwrap_or(alpha),
            lambda2: self.lambda2,
            epsilon: self.epsilon,
            max_inner_iters: self.max_inner_iters,
            minibatch_extent: self.minibatch_days.unwrap_or(1),
            epochs: self.epochs,
            seed: self.seed,
            outlier_mode: self.outlier_mode,
            accumulation: match self.accumulation {
                AccumulationArg::Compensated => Accumulation::Compensated,
                AccumulationArg::Uncompensated => Accumulation::Uncompensated,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StateArgs {
    /// Save the final dictionary state to this file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Resume from a saved dictionary state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write low-rank estimates for every entry, not only missing and corrected ones.
    #[arg(long)]
    pub full_reconstruction: bool,
    /// Minibatches excluded from metrics (default 10, or 0 with several epochs).
    #[arg(long)]
    pub burn_in: Option<usize>,
}

impl StateArgs {
    fn to_options(&self) -> RunOptions {
        RunOptions {
            full_reconstruction: self.full_reconstruction,
            checkpoint: self.checkpoint.clone(),
            resume: self.resume.clone(),
            burn_in: self.burn_in,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "sensor_id")]
    pub sensor_col: String,
    #[arg(long, default_value = "timestamp")]
    pub time_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
    /// How duplicate readings within one hour are combined: mean, median or first.
    #[arg(long, default_value = "mean")]
    pub aggregation: String,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub state: StateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DegradeArgs {
    /// Complete hourly CSV; without it the NOAA-shaped stand-in is used.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub standin_seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub mask_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub fiber_fraction: f64,
    #[arg(long, default_value_t = 2.0)]
    pub magnitude: f64,
    /// absolute or std (multiples of the frame's standard deviation).
    #[arg(long, default_value = "std")]
    pub magnitude_unit: String,
    /// replace or add.
    #[arg(long, default_value = "replace")]
    pub corruption: String,
    /// Only write the degraded frame and its truth.
    #[arg(long)]
    pub no_run: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub state: StateArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// size, corruption-ratio, corruption-magnitude, observation-ratio or convergence.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Comma-separated grid for --sweep.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,50,1")]
    pub shape: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3,3,1")]
    pub core: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub minibatches: usize,
    #[arg(long, default_value_t = 0.05)]
    pub corruption_ratio: f64,
    #[arg(long, default_value_t = 2.0)]
    pub corruption_magnitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub observation_ratio: f64,
    #[arg(long, default_value_t = 10)]
    pub burn_in: usize,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: TableFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// `args` (program name first) with any `--config` file spliced in.
pub fn merged_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    merge_config(args, &Cli::command())
}

pub fn parse(args: Vec<OsString>) -> Result<Cli> {
    Cli::try_parse_from(merged_args(args)?).map_err(|e| CliError::Argument(e.to_string()))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Clean(a) => clean(&a),
        Command::Degrade(a) => degrade_cmd(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn export_run(dir: &Path, result: &RunResult) -> Result<()> {
    write_cleaned(&dir.join("cleaned.csv"), &result.cleaned)?;
    write_outliers(&dir.join("outliers.json"), &result.outliers)?;
    write_metrics(&dir.join("metrics.json"), &result.metrics)?;
    Ok(())
}

fn summarize(result: &RunResult) {
    let m = &result.metrics;
    log::info!(
        "{} minibatches x {} epochs, lambda2 {:.4}, {} outlier fibers, {:.0} ms",
        m.minibatches,
        m.epochs,
        m.lambda2,
        result.outliers.len(),
        m.total_wall_ms
    );
    if let (Some(re), Some(f1)) = (m.relative_error, m.f1) {
        log::info!("relative error {re:.4}, F1 {f1:.4}");
    }
}

pub fn clean(a: &CleanArgs) -> Result<()> {
    let schema = CsvSchema {
        sensor_col: a.sensor_col.clone(),
        time_col: a.time_col.clone(),
        value_col: a.value_col.clone(),
    };
    let got = ingest_csv(&a.input, &schema, a.aggregation.parse::<Aggregation>()?)?;
    log::info!(
        "ingested {} rows into {:?}, {} rejected",
        got.accepted_rows,
        got.frame.shape(),
        got.rejects.len()
    );
    ensure_dir(&a.out_dir)?;
    if !got.rejects.is_empty() {
        write_json(&a.out_dir.join("rejects.json"), &got.rejects)?;
    }
    let config = a.engine.to_config(20, 70.0);
    let result = run(&got.frame, &config, &a.state.to_options(), None)?;
    summarize(&result);
    export_run(&a.out_dir, &result)
}

#[derive(Debug, Serialize)]
struct TruthFiber {
    sensor_id: Option<String>,
    hour: Option<usize>,
    date: chrono::NaiveDate,
}

#[derive(Debug, Serialize)]
struct TruthReport {
    noise_bound: f64,
    fiber_mode: usize,
    hidden_entries: usize,
    corrupted: Vec<TruthFiber>,
}

fn truth_fiber(frame: &TensorFrame, mode: usize, j: usize) -> TruthFiber {
    let sensors = frame.sensors().len();
    match mode {
        0 => TruthFiber {
            sensor_id: None,
            hour: Some(j % HOURS),
            date: frame.days()[j / HOURS],
        },
        _ => TruthFiber {
            sensor_id: Some(frame.sensors()[j % sensors].clone()),
            hour: None,
            date: frame.days()[j / sensors],
        },
    }
}

pub fn degrade_cmd(a: &DegradeArgs) -> Result<()> {
    let frame = match &a.input {
        Some(path) => {
            let got = ingest_csv(path, &CsvSchema::default(), Aggregation::Mean)?;
            got.frame
        }
        None => {
            let (frame, source) = noaa::load(a.standin_seed)?;
            log::info!("using {source:?}");
            frame
        }
    };
    let params = DegradeParams {
        mask_fraction: a.mask_fraction,
        fiber_fraction: a.fiber_fraction,
        magnitude: a.magnitude,
        unit: a.magnitude_unit.parse::<MagnitudeUnit>()?,
        fiber_mode: a.engine.outlier_mode,
        kind: a.corruption.parse::<CorruptionKind>()?,
        seed: derive_seed(a.engine.seed, 0, 1),
    };
    let (degraded, truth) = degrade(&frame, &params)?;
    ensure_dir(&a.out_dir)?;
    write_frame(&a.out_dir.join("degraded.csv"), &degraded)?;
    let report = TruthReport {
        noise_bound: params.noise_bound(&frame),
        fiber_mode: params.fiber_mode,
        hidden_entries: degraded.mask().bits().iter().filter(|b| !**b).count(),
        corrupted: truth
            .corrupted_fibers
            .iter()
            .map(|&j| truth_fiber(&frame, params.fiber_mode, j))
            .collect(),
    };
    write_json(&a.out_dir.join("truth.json"), &report)?;
    log::info!(
        "{} fibers corrupted (bound {:.3}), {} entries hidden",
        report.corrupted.len(),
        report.noise_bound,
        report.hidden_entries
    );
    if a.no_run {
        return Ok(());
    }
    let config = a.engine.to_config(20, 70.0);
    let result = run(&degraded, &config, &a.state.to_options(), Some(&truth))?;
    summarize(&result);
    export_run(&a.out_dir, &result)
}

fn base_spec(a: &SynthArgs) -> SynthSpec {
    let mut shape = a.shape.clone();
    if let (Some(d), Some(last)) = (a.engine.minibatch_days, shape.last_mut()) {
        *last = d;
    }
    SynthSpec {
        minibatch_shape: shape,
        core_dims: a.core.clone(),
        num_minibatches: a.minibatches,
        corruption_ratio: a.corruption_ratio,
        corruption_magnitude: a.corruption_magnitude,
        observation_ratio: a.observation_ratio,
        fiber_mode: a.engine.outlier_mode,
        seed: a.engine.seed,
        ..Default::default()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(io_err(path)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = base_spec(a);
    let rank = spec.core_dims.first().copied().unwrap_or(3);
    let mut config = a.engine.to_config(rank, 0.5);
    config.minibatch_extent = *spec.minibatch_shape.last().unwrap_or(&1);
    let Some(kind) = &a.sweep else {
        let report = run_trial(&spec, &config, a.burn_in)?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        return emit(a.out.as_deref(), &text);
    };
    let kind: SweepKind = kind.parse()?;
    if a.values.is_empty() {
        return Err(CliError::Argument("--sweep needs --values".into()));
    }
    let options = SweepOptions {
        trials: a.trials,
        burn_in: a.burn_in,
        parallel: !a.sequential,
    };
    let table = run_sweep(kind, &a.values, &spec, &config, &options)?;
    let text = match a.format {
        TableFormat::Json => table.to_json(),
        TableFormat::Csv => table.to_csv(),
    };
    emit(a.out.as_deref(), &text)
}

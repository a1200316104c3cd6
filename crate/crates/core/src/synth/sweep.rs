use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{gen_stream, SynthSpec};
use super::metrics::{DetectionAccumulator, ErrorAccumulator, EvalReport, DEFAULT_BURN_IN};
use crate::engine::{OnlineRecovery, RunConfig};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Cube side `I`: leading extents become `I`, core dims and rank `0.1 I`.
    Size,
    CorruptionRatio,
    CorruptionMagnitude,
    ObservationRatio,
    /// Minibatch extent along the last mode.
    Convergence,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Size => "size",
            SweepKind::CorruptionRatio => "corruption_ratio",
            SweepKind::CorruptionMagnitude => "corruption_magnitude",
            SweepKind::ObservationRatio => "observation_ratio",
            SweepKind::Convergence => "convergence",
        }
    }

    /// Spec and config for one grid point.
    pub fn apply(self, value: f64, base: &SynthSpec, config: &RunConfig) -> Result<(SynthSpec, RunConfig)> {
        let mut spec = base.clone();
        let mut cfg = config.clone();
        let as_extent = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid(format!("{} grid value {v} is not a positive integer", self.name())))
            }
        };
        let last = spec.minibatch_shape.len() - 1;
        match self {
            SweepKind::Size => {
                let side = as_extent(value)?;
                let rank = ((0.1 * side as f64).round() as usize).max(1);
                for mode in 0..last {
                    spec.minibatch_shape[mode] = side;
                    spec.core_dims[mode] = rank;
                }
                spec.core_dims[last] = rank.min(spec.minibatch_shape[last]);
                cfg.rank = rank;
            }
            SweepKind::CorruptionRatio => spec.corruption_ratio = value,
            SweepKind::CorruptionMagnitude => spec.corruption_magnitude = value,
            SweepKind::ObservationRatio => spec.observation_ratio = value,
            SweepKind::Convergence => {
                let ext = as_extent(value)?;
                spec.minibatch_shape[last] = ext;
                spec.core_dims[last] = base.core_dims[last].min(ext);
            }
        }
        spec.validate()?;
        cfg.validate()?;
        Ok((spec, cfg))
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "size" => SweepKind::Size,
            "corruption_ratio" | "ratio" => SweepKind::CorruptionRatio,
            "corruption_magnitude" | "magnitude" => SweepKind::CorruptionMagnitude,
            "observation_ratio" | "observation" => SweepKind::ObservationRatio,
            "convergence" => SweepKind::Convergence,
            other => return Err(invalid(format!("unknown sweep kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub trials: usize,
    pub burn_in: usize,
    pub parallel: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            trials: 5,
            burn_in: DEFAULT_BURN_IN,
            parallel: true,
        }
    }
}

/// splitmix64 over the base seed, grid point and trial.
pub fn derive_seed(seed: u64, point: usize, trial: usize) -> u64 {
    let mut z = seed
        ^ (point as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (trial as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One single-pass run of the engine over a synthetic stream.
pub fn run_trial(spec: &SynthSpec, config: &RunConfig, burn_in: usize) -> Result<EvalReport> {
    let cfg = RunConfig {
        outlier_mode: spec.fiber_mode,
        ..config.clone()
    };
    let stream = gen_stream(spec)?;
    let mut engine = OnlineRecovery::new(&spec.minibatch_shape, &cfg)?;
    let mut errors = ErrorAccumulator::new(burn_in);
    let mut detection = DetectionAccumulator::new(burn_in);
    let mut report = EvalReport {
        relative_error: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        loss_trace: Vec::with_capacity(spec.num_minibatches),
        wall_ms: Vec::with_capacity(spec.num_minibatches),
        inner_iterations: Vec::with_capacity(spec.num_minibatches),
        peak_state_bytes: engine.state().serialized_len(),
    };
    for mb in stream {
        let out = engine.step(&mb.observed, &mb.truth.mask)?;
        errors.push(&out.x_hat, &mb.truth, &out.outlier_fibers)?;
        detection.push(&out.outlier_fibers, &mb.truth.corrupted_fibers);
        report.loss_trace.push(out.loss);
        report.wall_ms.push(out.wall.as_secs_f64() * 1e3);
        report.inner_iterations.push(out.inner_iterations_used);
        report.peak_state_bytes = report.peak_state_bytes.max(engine.state().serialized_len());
    }
    let d = detection.finish();
    report.relative_error = errors.finish()?;
    (report.precision, report.recall, report.f1) = (d.precision, d.recall, d.f1);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub spec: SynthSpec,
    pub config: RunConfig,
    pub reports: Vec<EvalReport>,
    pub errors: Vec<String>,
    pub relative_error: Option<Stat>,
    pub precision: Option<Stat>,
    pub recall: Option<Stat>,
    pub f1: Option<Stat>,
    pub wall_ms_mean: Option<f64>,
    /// Per-minibatch loss averaged over successful trials.
    pub mean_loss_trace: Vec<f64>,
}

impl SweepRow {
    fn new(value: f64, spec: SynthSpec, config: RunConfig, results: Vec<Result<EvalReport>>) -> Self {
        let mut reports = Vec::new();
        let mut errors = Vec::new();
        for r in results {
            match r {
                Ok(rep) => reports.push(rep),
                Err(e) => errors.push(e.to_string()),
            }
        }
        let mut mean_loss_trace = Vec::new();
        if let Some(len) = reports.iter().map(|r| r.loss_trace.len()).min() {
            mean_loss_trace = (0..len)
                .map(|k| reports.iter().map(|r| r.loss_trace[k]).sum::<f64>() / reports.len() as f64)
                .collect();
        }
        let walls: Vec<f64> = reports.iter().flat_map(|r| r.wall_ms.iter().copied()).collect();
        Self {
            value,
            relative_error: Stat::of(reports.iter().map(|r| r.relative_error)),
            precision: Stat::of(reports.iter().map(|r| r.precision)),
            recall: Stat::of(reports.iter().map(|r| r.recall)),
            f1: Stat::of(reports.iter().map(|r| r.f1)),
            wall_ms_mean: (!walls.is_empty()).then(|| walls.iter().sum::<f64>() / walls.len() as f64),
            mean_loss_trace,
            spec,
            config,
            reports,
            errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub base: SynthSpec,
    pub config: RunConfig,
    pub options: SweepOptions,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep tables serialise")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "kind,value,trials_ok,trials_failed,re_mean,re_min,re_max,precision_mean,recall_mean,f1_mean,f1_min,f1_max,wall_ms_mean\n",
        );
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            let re = row.relative_error;
            let f1 = row.f1;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.kind.name(),
                row.value,
                row.reports.len(),
                row.errors.len(),
                cell(re.map(|s| s.mean)),
                cell(re.map(|s| s.min)),
                cell(re.map(|s| s.max)),
                cell(row.precision.map(|s| s.mean)),
                cell(row.recall.map(|s| s.mean)),
                cell(f1.map(|s| s.mean)),
                cell(f1.map(|s| s.min)),
                cell(f1.map(|s| s.max)),
                cell(row.wall_ms_mean),
            );
        }
        out
    }
}

/// Runs every grid point `options.trials` times. A failing trial is recorded
/// in its row and does not stop the sweep.
pub fn run_sweep(
    kind: SweepKind,
    grid: &[f64],
    base: &SynthSpec,
    config: &RunConfig,
    options: &SweepOptions,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(invalid("sweep grid is empty"));
    }
    if options.trials == 0 {
        return Err(invalid("at least one trial per grid point"));
    }
    let points: Vec<Result<(SynthSpec, RunConfig)>> =
        grid.iter().map(|&v| kind.apply(v, base, config)).collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|p| (0..options.trials).map(move |t| (p, t)))
        .collect();
    let run = |&(p, t): &(usize, usize)| -> Result<EvalReport> {
        let (spec, cfg) = points[p].as_ref().map_err(|e| invalid(e.to_string()))?;
        let seed = derive_seed(base.seed, p, t);
        let spec = SynthSpec { seed, ..spec.clone() };
        let cfg = RunConfig {
            seed: seed.rotate_left(17),
            ..cfg.clone()
        };
        run_trial(&spec, &cfg, options.burn_in)
    };
    let mut results: Vec<Result<EvalReport>> = if options.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };

    let mut rows = Vec::with_capacity(grid.len());
    for (p, &value) in grid.iter().enumerate().rev() {
        let trial_results = results.split_off(p * options.trials);
        let (spec, cfg) = match &points[p] {
            Ok(pc) => pc.clone(),
            Err(_) => (base.clone(), config.clone()),
        };
        rows.push(SweepRow::new(value, spec, cfg, trial_results));
    }
    rows.reverse();
    Ok(SweepTable {
        kind,
        base: base.clone(),
        config: config.clone(),
        options: *options,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SynthSpec {
        SynthSpec {
            minibatch_shape: vec![12, 10, 1],
            core_dims: vec![2, 2, 1],
            num_minibatches: 15,
            seed: 11,
            ..Default::default()
        }
    }

    fn cfg() -> RunConfig {
        RunConfig {
            rank: 2,
            ..Default::default()
        }
    }

    fn opts(trials: usize) -> SweepOptions {
        SweepOptions {
            trials,
            burn_in: 5,
            parallel: false,
        }
    }

    #[test]
    fn kinds_parse_and_apply() {
        assert_eq!("corruption-ratio".parse::<SweepKind>().unwrap(), SweepKind::CorruptionRatio);
        assert!("bogus".parse::<SweepKind>().is_err());
        let (s, c) = SweepKind::Size.apply(40.0, &base(), &cfg()).unwrap();
        assert_eq!(s.minibatch_shape, vec![40, 40, 1]);
        assert_eq!(s.core_dims, vec![4, 4, 1]);
        assert_eq!(c.rank, 4);
        let (s, _) = SweepKind::Convergence.apply(6.0, &SynthSpec { core_dims: vec![2, 2, 1], ..base() }, &cfg()).unwrap();
        assert_eq!(s.minibatch_shape, vec![12, 10, 6]);
        assert!(SweepKind::Convergence.apply(2.5, &base(), &cfg()).is_err());
    }

    #[test]
    fn single_point_matches_a_direct_run() {
        let table = run_sweep(SweepKind::CorruptionRatio, &[0.1], &base(), &cfg(), &opts(1)).unwrap();
        assert_eq!(table.rows.len(), 1);
        let spec = SynthSpec {
            corruption_ratio: 0.1,
            seed: derive_seed(11, 0, 0),
            ..base()
        };
        let config = RunConfig {
            seed: derive_seed(11, 0, 0).rotate_left(17),
            ..cfg()
        };
        let direct = run_trial(&spec, &config, 5).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.reports[0].relative_error, direct.relative_error);
        assert_eq!(row.reports[0].f1, direct.f1);
        assert_eq!(row.reports[0].loss_trace, direct.loss_trace);
    }

    #[test]
    fn bad_rows_do_not_abort() {
        let table = run_sweep(SweepKind::ObservationRatio, &[1.0, 1.5, 0.9], &base(), &cfg(), &opts(2)).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.rows[1].errors.len(), 2);
        assert!(table.rows[1].relative_error.is_none());
        assert_eq!(table.rows[0].reports.len(), 2);
        assert_eq!(table.rows[2].reports.len(), 2);
        assert!(run_sweep(SweepKind::Size, &[], &base(), &cfg(), &opts(1)).is_err());
    }

    #[test]
    fn parallel_matches_sequential_and_outputs_render() {
        let grid = [0.05, 0.2];
        let seq = run_sweep(SweepKind::CorruptionRatio, &grid, &base(), &cfg(), &opts(2)).unwrap();
        let par = run_sweep(
            SweepKind::CorruptionRatio,
            &grid,
            &base(),
            &cfg(),
            &SweepOptions { parallel: true, ..opts(2) },
        )
        .unwrap();
        for (a, b) in seq.rows.iter().zip(&par.rows) {
            assert_eq!(a.reports.len(), b.reports.len());
            for (x, y) in a.reports.iter().zip(&b.reports) {
                assert_eq!(x.relative_error, y.relative_error);
                assert_eq!(x.loss_trace, y.loss_trace);
            }
        }
        let csv = seq.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("corruption_ratio,0.05,2,0,"));
        let json: serde_json::Value = serde_json::from_str(&seq.to_json()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 2);
        assert_eq!(json["kind"], "corruption_ratio");
    }
}

use std::path::PathBuf;
use std::time::Instant;

use chrono::NaiveDate;
use serde::Serialize;
use streamrtr::synth::{DetectionAccumulator, ErrorAccumulator, GroundTruth, DEFAULT_BURN_IN};
use streamrtr::tensor::{fiber_multi_index, fiber_norms};
use streamrtr::{DenseTensor, DictionaryState, MinibatchOutput, ObservationMask, OnlineRecovery, RunConfig};

use crate::error::{CliError, Result};
use crate::frame::{TensorFrame, HOURS};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write every cleaned entry from the low-rank estimate, observed ones included.
    pub full_reconstruction: bool,
    /// Save the final dictionary state here.
    pub checkpoint: Option<PathBuf>,
    /// Start from this saved state instead of a random one.
    pub resume: Option<PathBuf>,
    /// Minibatches skipped by the metrics; defaults to 10 for a single epoch
    /// and 0 otherwise.
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Imputed,
    Corrected,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Imputed => "imputed",
            Provenance::Corrected => "corrected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierRecord {
    /// Null when the fiber runs across sensors.
    pub sensor_id: Option<String>,
    /// Null when the fiber runs across hours.
    pub hour: Option<usize>,
    pub date: NaiveDate,
    pub fiber_norm: f64,
    pub minibatch: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    /// One entry per processed minibatch, across all epochs.
    pub per_minibatch_loss: Vec<f64>,
    /// Per-minibatch wall time, across all epochs.
    pub wall_ms: Vec<f64>,
    pub total_wall_ms: f64,
    pub minibatches: usize,
    pub epochs: usize,
    pub lambda2: f64,
    pub burn_in: usize,
    pub inner_iterations: usize,
    pub days_dropped: usize,
}

/// Cleaned values from the final epoch, over the processed days.
#[derive(Debug, Clone)]
pub struct Cleaned {
    pub sensors: Vec<String>,
    pub days: Vec<NaiveDate>,
    pub values: DenseTensor,
    pub provenance: Vec<Provenance>,
}

impl Cleaned {
    pub fn shape(&self) -> [usize; 3] {
        [self.sensors.len(), HOURS, self.days.len()]
    }

    pub fn provenance_at(&self, sensor: usize, hour: usize, day: usize) -> Provenance {
        self.provenance[self.values.linear_index(&[sensor, hour, day])]
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub cleaned: Cleaned,
    pub outliers: Vec<OutlierRecord>,
    pub metrics: RunMetrics,
    pub state: DictionaryState,
}

/// Streams `frame` through the engine in windows of `config.minibatch_extent`
/// days, `config.epochs` times over.
pub fn run(frame: &TensorFrame, config: &RunConfig, options: &RunOptions, truth: Option<&GroundTruth>) -> Result<RunResult> {
    config.validate()?;
    let fiber_mode = config.outlier_mode;
    if fiber_mode > 1 {
        return Err(CliError::Argument("outlier mode must be 0 (sensors) or 1 (hours)".into()));
    }
    if let Some(t) = truth {
        if t.clean.shape() != frame.shape() {
            return Err(CliError::Argument("ground truth does not match the frame".into()));
        }
        if t.fiber_mode != fiber_mode {
            return Err(CliError::Argument(format!(
                "ground truth corrupts mode {} fibers, engine looks at mode {fiber_mode}",
                t.fiber_mode
            )));
        }
    }
    let per = config.minibatch_extent;
    let windows = frame.windows(per)?;
    if windows.is_empty() {
        return Err(CliError::Frame(format!(
            "{} days is less than one {per}-day minibatch",
            frame.days().len()
        )));
    }
    let used_days = windows.len() * per;
    let dropped = frame.days().len() - used_days;
    if dropped > 0 {
        log::warn!("dropping {dropped} trailing days that do not fill a minibatch");
    }
    let shape = [frame.sensors().len(), HOURS, per];

    let mut engine = match &options.resume {
        Some(path) => OnlineRecovery::from_state(DictionaryState::load_matching(path, &shape, config.rank)?, config)?,
        None => OnlineRecovery::new(&shape, config)?,
    };
    let engine_err = |index| move |source| CliError::Minibatch { index, source };

    let epochs = config.epochs;
    let burn_in = options
        .burn_in
        .unwrap_or(if epochs > 1 { 0 } else { DEFAULT_BURN_IN });
    let burn_in = if burn_in >= windows.len() {
        log::warn!("burn-in {burn_in} covers the whole stream; evaluating every minibatch");
        0
    } else {
        burn_in
    };

    let full = [shape[0], HOURS, used_days];
    let mut values = vec![0.0; full.iter().product()];
    let mut provenance = vec![Provenance::Observed; values.len()];
    let mut outliers = Vec::new();
    let mut losses = Vec::with_capacity(epochs * windows.len());
    let mut wall_ms = Vec::with_capacity(losses.capacity());
    let mut inner_iterations = 0;
    let mut errors = ErrorAccumulator::new(burn_in);
    let mut detection = DetectionAccumulator::new(burn_in);
    let start = Instant::now();

    for epoch in 0..epochs {
        let last = epoch + 1 == epochs;
        for (w, (b, mask)) in windows.iter().enumerate() {
            let out = engine.step(b, mask).map_err(engine_err(w))?;
            losses.push(out.loss);
            wall_ms.push(out.wall.as_secs_f64() * 1e3);
            inner_iterations += out.inner_iterations_used;
            if !last {
                continue;
            }
            if let Some(t) = truth {
                let t = t.slice_last(w * per..(w + 1) * per)?;
                errors.push(&out.x_hat, &t, &out.outlier_fibers)?;
                detection.push(&out.outlier_fibers, &t.corrupted_fibers);
            }
            write_window(frame, w, per, b, mask, &out, fiber_mode, options.full_reconstruction, &mut values, &mut provenance)?;
            outliers.extend(report(frame, w, per, fiber_mode, &out)?);
        }
    }

    let (relative_error, precision, recall, f1) = match truth {
        Some(_) => {
            let d = detection.finish();
            (Some(errors.finish()?), Some(d.precision), Some(d.recall), Some(d.f1))
        }
        None => (None, None, None, None),
    };
    let metrics = RunMetrics {
        relative_error,
        precision,
        recall,
        f1,
        per_minibatch_loss: losses,
        wall_ms,
        total_wall_ms: start.elapsed().as_secs_f64() * 1e3,
        minibatches: windows.len(),
        epochs,
        lambda2: engine.lambda2(),
        burn_in,
        inner_iterations,
        days_dropped: dropped,
    };
    let state = engine.into_state();
    if let Some(path) = &options.checkpoint {
        state.save(path)?;
    }
    Ok(RunResult {
        cleaned: Cleaned {
            sensors: frame.sensors().to_vec(),
            days: frame.days()[..used_days].to_vec(),
            values: DenseTensor::new(full.to_vec(), values)?,
            provenance,
        },
        outliers,
        metrics,
        state,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_window(
    frame: &TensorFrame,
    w: usize,
    per: usize,
    b: &DenseTensor,
    mask: &ObservationMask,
    out: &MinibatchOutput,
    mode: usize,
    full_reconstruction: bool,
    values: &mut [f64],
    provenance: &mut [Provenance],
) -> Result<()> {
    let sensors = frame.sensors().len();
    let mut flagged = vec![false; b.len()];
    for &j in &out.outlier_fibers {
        let idx = fiber_multi_index(b.shape(), mode, j)?;
        for k in 0..b.shape()[mode] {
            let mut full = idx.clone();
            full.insert(mode, k);
            flagged[b.linear_index(&full)] = true;
        }
    }
    // window-local storage is a contiguous block of the frame
    let offset = sensors * HOURS * per * w;
    for k in 0..b.len() {
        let (v, p) = if !mask.bits()[k] {
            (out.x_hat.data()[k], Provenance::Imputed)
        } else if flagged[k] {
            (out.x_hat.data()[k], Provenance::Corrected)
        } else if full_reconstruction {
            (out.x_hat.data()[k], Provenance::Observed)
        } else {
            (b.data()[k], Provenance::Observed)
        };
        values[offset + k] = v;
        provenance[offset + k] = p;
    }
    Ok(())
}

fn report(frame: &TensorFrame, w: usize, per: usize, mode: usize, out: &MinibatchOutput) -> Result<Vec<OutlierRecord>> {
    if out.outlier_fibers.is_empty() {
        return Ok(Vec::new());
    }
    let norms = fiber_norms(&out.e_hat, mode)?;
    out.outlier_fibers
        .iter()
        .map(|&j| {
            let idx = fiber_multi_index(out.e_hat.shape(), mode, j)?;
            let (sensor_id, hour, d) = match mode {
                0 => (None, Some(idx[0]), idx[1]),
                _ => (Some(frame.sensors()[idx[0]].clone()), None, idx[1]),
            };
            Ok(OutlierRecord {
                sensor_id,
                hour,
                date: frame.days()[w * per + d],
                fiber_norm: norms[j],
                minibatch: w,
            })
        })
        .collect()
}

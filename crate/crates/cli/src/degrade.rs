use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use streamrtr::synth::GroundTruth;
use streamrtr::{DenseTensor, ObservationMask};

use crate::error::{CliError, Result};
use crate::frame::TensorFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorruptionKind {
    /// The fiber's readings are replaced by noise; its clean truth is zero.
    #[default]
    Replace,
    /// Noise is added on top of the readings.
    Add,
}

impl FromStr for CorruptionKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace" => Ok(CorruptionKind::Replace),
            "add" => Ok(CorruptionKind::Add),
            other => Err(CliError::Argument(format!("unknown corruption kind {other:?}"))),
        }
    }
}

/// How `magnitude` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MagnitudeUnit {
    /// In the frame's own units.
    Absolute,
    /// In multiples of the population standard deviation of the frame's entries.
    #[default]
    FrameStd,
}

impl FromStr for MagnitudeUnit {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(MagnitudeUnit::Absolute),
            "std" => Ok(MagnitudeUnit::FrameStd),
            other => Err(CliError::Argument(format!("unknown magnitude unit {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeParams {
    /// Probability that an entry is hidden.
    pub mask_fraction: f64,
    /// Fraction of fibers corrupted.
    pub fiber_fraction: f64,
    pub magnitude: f64,
    pub unit: MagnitudeUnit,
    /// 0 corrupts fibers across sensors (one hour of one day), 1 corrupts a
    /// sensor's 24 hours of one day.
    pub fiber_mode: usize,
    pub kind: CorruptionKind,
    pub seed: u64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        Self {
            mask_fraction: 0.0,
            fiber_fraction: 0.05,
            magnitude: 2.0,
            unit: MagnitudeUnit::FrameStd,
            fiber_mode: 0,
            kind: CorruptionKind::Replace,
            seed: 0,
        }
    }
}

impl DegradeParams {
    /// Half-width of the noise interval for `frame`.
    pub fn noise_bound(&self, frame: &TensorFrame) -> f64 {
        match self.unit {
            MagnitudeUnit::Absolute => self.magnitude,
            MagnitudeUnit::FrameStd => self.magnitude * frame_std(frame),
        }
    }
}

fn frame_std(frame: &TensorFrame) -> f64 {
    let data = frame.tensor().data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    (data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Corrupts a γ-fraction of fibers with U(−m, m) noise, m = [`DegradeParams::noise_bound`], and
/// hides entries at random, returning the degraded frame and its truth.
pub fn degrade(frame: &TensorFrame, params: &DegradeParams) -> Result<(TensorFrame, GroundTruth)> {
    for (name, v) in [
        ("mask fraction", params.mask_fraction),
        ("fiber fraction", params.fiber_fraction),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Argument(format!("{name} {v} outside [0, 1]")));
        }
    }
    if params.fiber_mode > 1 {
        return Err(CliError::Argument("fiber mode must be 0 (sensors) or 1 (hours)".into()));
    }
    if !frame.is_complete() {
        return Err(CliError::Frame("degradation needs a complete frame".into()));
    }
    let bad_magnitude = || CliError::Argument(format!("bad magnitude {}", params.magnitude));
    if !(params.magnitude.is_finite() && params.magnitude >= 0.0) {
        return Err(bad_magnitude());
    }

    let shape = frame.shape();
    let len: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut clean = frame.tensor().data().to_vec();
    let mut outliers = vec![0.0; len];
    let mut observed = clean.clone();

    let fibers = len / shape[params.fiber_mode];
    let count = (params.fiber_fraction * fibers as f64).round() as usize;
    let corrupted: BTreeSet<usize> = sample(&mut rng, fibers, count).into_iter().collect();
    let m = params.noise_bound(frame);
    let noise = Uniform::new_inclusive(-m, m).map_err(|_| bad_magnitude())?;
    let left: usize = shape[..params.fiber_mode].iter().product();
    let ext = shape[params.fiber_mode];
    for &j in &corrupted {
        let (a, c) = (j % left, j / left);
        for b in 0..ext {
            let k = a + left * (b + ext * c);
            let n = noise.sample(&mut rng);
            outliers[k] = n;
            match params.kind {
                CorruptionKind::Replace => {
                    clean[k] = 0.0;
                    observed[k] = n;
                }
                CorruptionKind::Add => observed[k] += n,
            }
        }
    }

    let bits: Vec<bool> = if params.mask_fraction > 0.0 {
        (0..len).map(|_| rng.random::<f64>() >= params.mask_fraction).collect()
    } else {
        vec![true; len]
    };
    for (v, &seen) in observed.iter_mut().zip(&bits) {
        if !seen {
            *v = 0.0;
        }
    }

    let mask = ObservationMask::new(shape.to_vec(), bits)?;
    let degraded = TensorFrame::new(
        frame.sensors().to_vec(),
        frame.days().to_vec(),
        DenseTensor::new(shape.to_vec(), observed)?,
        mask.clone(),
    )?;
    let truth = GroundTruth {
        clean: DenseTensor::new(shape.to_vec(), clean)?,
        outliers: DenseTensor::new(shape.to_vec(), outliers)?,
        mask,
        corrupted_fibers: corrupted,
        fiber_mode: params.fiber_mode,
    };
    Ok((degraded, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn frame(sensors: usize, days: usize) -> TensorFrame {
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let t = DenseTensor::from_fn(&[sensors, 24, days], |i| 10.0 + i[0] as f64 - 0.1 * i[1] as f64 + i[2] as f64).unwrap();
        TensorFrame::complete(
            (0..sensors).map(|s| format!("s{s:02}")).collect(),
            (0..days as u64).map(|d| start + chrono::Days::new(d)).collect(),
            t,
        )
        .unwrap()
    }

    #[test]
    fn zero_fractions_are_identity() {
        let f = frame(4, 3);
        let p = DegradeParams {
            fiber_fraction: 0.0,
            ..Default::default()
        };
        let (d, truth) = degrade(&f, &p).unwrap();
        assert_eq!(d, f);
        assert_eq!(&truth.clean, f.tensor());
        assert!(truth.outliers.is_zero() && truth.corrupted_fibers.is_empty());
    }

    #[test]
    fn protocol_counts() {
        let f = frame(37, 364);
        let p = DegradeParams {
            mask_fraction: 0.1,
            unit: MagnitudeUnit::Absolute,
            seed: 4,
            ..Default::default()
        };
        let (d, truth) = degrade(&f, &p).unwrap();
        assert_eq!(truth.corrupted_fibers.len(), (0.05f64 * 24.0 * 364.0).round() as usize);
        let hidden = 37 * 24 * 364 - d.mask().observed_count();
        // binomial mean 32 323, sd ~ 171
        assert!((hidden as f64 - 32_323.2).abs() < 900.0, "{hidden}");
        for &j in &truth.corrupted_fibers {
            let (h, day) = (j % 24, j / 24);
            for s in 0..37 {
                assert_eq!(truth.clean.get(&[s, h, day]), 0.0);
                let n = truth.outliers.get(&[s, h, day]);
                assert!(n.abs() <= 2.0);
                if let Some(v) = d.get(s, h, day) {
                    assert_eq!(v, n);
                }
            }
        }
    }

    #[test]
    fn hour_fibers_and_additive_noise() {
        let f = frame(5, 4);
        let p = DegradeParams {
            fiber_fraction: 0.5,
            fiber_mode: 1,
            kind: CorruptionKind::Add,
            seed: 1,
            ..Default::default()
        };
        let (d, truth) = degrade(&f, &p).unwrap();
        assert_eq!(truth.corrupted_fibers.len(), 10);
        assert_eq!(&truth.clean, f.tensor());
        let j = *truth.corrupted_fibers.first().unwrap();
        let (s, day) = (j % 5, j / 5);
        for h in 0..24 {
            let want = f.get(s, h, day).unwrap() + truth.outliers.get(&[s, h, day]);
            assert_eq!(d.get(s, h, day), Some(want));
        }
    }

    #[test]
    fn std_unit_scales_noise() {
        let f = frame(6, 10);
        let p = DegradeParams {
            fiber_fraction: 1.0,
            magnitude: 0.5,
            seed: 2,
            ..Default::default()
        };
        let bound = p.noise_bound(&f);
        let d = f.tensor().data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!((bound - 0.5 * var.sqrt()).abs() < 1e-12);
        let (_, truth) = degrade(&f, &p).unwrap();
        let peak = truth.outliers.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak <= bound && peak > 0.9 * bound, "{peak} {bound}");
        assert_eq!("absolute".parse::<MagnitudeUnit>().unwrap(), MagnitudeUnit::Absolute);
    }

    #[test]
    fn argument_checks() {
        let f = frame(3, 2);
        for p in [
            DegradeParams { mask_fraction: 1.2, ..Default::default() },
            DegradeParams { fiber_fraction: -0.1, ..Default::default() },
            DegradeParams { fiber_mode: 2, ..Default::default() },
        ] {
            assert!(degrade(&f, &p).is_err());
        }
        let (partial, _) = degrade(&f, &DegradeParams { mask_fraction: 0.5, ..Default::default() }).unwrap();
        assert!(degrade(&partial, &DegradeParams::default()).is_err());
    }
}

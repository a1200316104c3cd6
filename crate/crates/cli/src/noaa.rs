//! A NOAA-shaped temperature frame: 37 stations, 24 hours, 364 days.
//!
//! Real hourly station data can be supplied as a CSV through
//! `STREAMRTR_NOAA_CSV`; otherwise a synthetic stand-in with exact Tucker
//! rank (20, 20, 20) is built from station, diurnal and seasonal factors.

use std::f64::consts::TAU;
use std::path::PathBuf;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use streamrtr::tensor::mode_n_product;
use streamrtr::{DenseTensor, Matrix};

use crate::error::Result;
use crate::frame::{TensorFrame, HOURS};
use crate::ingest::{ingest_csv, Aggregation, CsvSchema};

pub const STATIONS: usize = 37;
pub const DAYS: usize = 364;
pub const RANK: usize = 20;
pub const ENV_VAR: &str = "STREAMRTR_NOAA_CSV";

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Station x hour x day temperatures in degrees Celsius.
pub fn standin(seed: u64) -> Result<TensorFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // stations: offset, a latitude-like coordinate and its square, then station quirks
    let lat: Vec<f64> = (0..STATIONS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let stations = Matrix::from_fn(STATIONS, RANK, |s, k| match k {
        0 => 1.0,
        1 => lat[s],
        2 => lat[s] * lat[s],
        _ => 0.0,
    });
    let stations = fill_random(stations, 3, &mut rng);

    let hours = Matrix::from_fn(HOURS, RANK, |h, k| {
        let w = TAU * h as f64 / HOURS as f64;
        match k {
            0 => 1.0,
            1 => (w - 0.7 * std::f64::consts::PI).cos(),
            2 => (w - 0.7 * std::f64::consts::PI).sin(),
            3 => (2.0 * w).cos(),
            4 => (2.0 * w).sin(),
            _ => 0.0,
        }
    });
    let hours = fill_random(hours, 5, &mut rng);

    let days = Matrix::from_fn(DAYS, RANK, |d, k| {
        let w = TAU * d as f64 / 365.25;
        match k {
            0 => 1.0,
            1 => d as f64 / DAYS as f64,
            2 => w.cos(),
            3 => w.sin(),
            _ => 0.0,
        }
    });
    let days = fill_random(days, 4, &mut rng);

    // core: physical coefficients plus a weak random part that keeps every
    // unfolding at full rank
    let mut core = DenseTensor::from_fn(&[RANK, RANK, RANK], |_| 0.012 * normal(&mut rng))?;
    for (idx, v) in [
        ([0, 0, 0], 11.0),  // mean
        ([0, 0, 1], 1.2),   // drift over the year
        ([0, 0, 2], -12.5), // winter minimum
        ([0, 0, 3], -3.0),
        ([1, 0, 0], -5.0), // colder poleward
        ([1, 0, 2], -3.5), // larger seasonal swing poleward
        ([2, 0, 0], -1.5),
        ([0, 1, 0], 4.5), // diurnal cycle
        ([0, 2, 0], 0.8),
        ([0, 3, 0], 0.9),
        ([0, 1, 3], 1.2), // stronger days in summer
        ([0, 1, 2], -1.0),
        ([1, 1, 0], 0.6),
    ] {
        core.set(&idx, v);
    }
    let quirks = [0.8, 0.5, 0.5, 0.3];
    for s in 3..RANK {
        core.set(&[s, 0, 0], core.get(&[s, 0, 0]) + quirks[s % 4] * normal(&mut rng));
        core.set(&[s, 1, 0], core.get(&[s, 1, 0]) + 0.2 * normal(&mut rng));
    }
    for h in 5..RANK {
        core.set(&[0, h, 0], core.get(&[0, h, 0]) + 0.25 * normal(&mut rng));
    }
    for d in 4..RANK {
        core.set(&[0, 0, d], core.get(&[0, 0, d]) + 1.2 * normal(&mut rng));
    }

    let mut x = mode_n_product(&core, &stations, 0)?;
    x = mode_n_product(&x, &hours, 1)?;
    x = mode_n_product(&x, &days, 2)?;

    let start = NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date");
    TensorFrame::complete(
        (0..STATIONS).map(|s| format!("ST{s:03}")).collect(),
        (0..DAYS as u64).map(|d| start + Days::new(d)).collect(),
        x,
    )
}

fn fill_random(mut m: Matrix, from: usize, rng: &mut ChaCha8Rng) -> Matrix {
    for k in from..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, k)] = normal(rng);
        }
    }
    m
}

/// Where the frame for the NOAA protocol came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Csv(PathBuf),
    Standin,
}

/// Real data from `STREAMRTR_NOAA_CSV` when set and complete, else the stand-in.
pub fn load(seed: u64) -> Result<(TensorFrame, Source)> {
    if let Some(path) = std::env::var_os(ENV_VAR).map(PathBuf::from) {
        let got = ingest_csv(&path, &CsvSchema::default(), Aggregation::Mean)?;
        if got.frame.is_complete() {
            return Ok((got.frame, Source::Csv(path)));
        }
        log::warn!("{} is not a complete frame; using the synthetic stand-in", path.display());
    }
    Ok((standin(seed)?, Source::Standin))
}

use std::collections::BTreeSet;

use streamrtr::synth::{relative_error, GroundTruth};
use streamrtr::{process_stream, DenseTensor, RunConfig};
use streamrtr_cli::degrade::{degrade, DegradeParams};
use streamrtr_cli::export::write_cleaned;
use streamrtr_cli::ingest::{ingest_csv, Aggregation, CsvSchema};
use streamrtr_cli::noaa::standin;
use streamrtr_cli::pipeline::{run, Provenance, RunOptions};
use streamrtr_cli::TensorFrame;

fn short_frame(days: usize) -> TensorFrame {
    let f = standin(7).unwrap();
    TensorFrame::complete(
        f.sensors().to_vec(),
        f.days()[..days].to_vec(),
        f.tensor().slice_last(0..days).unwrap(),
    )
    .unwrap()
}

fn config() -> RunConfig {
    RunConfig {
        rank: 20,
        alpha: 70.0,
        seed: 11,
        ..Default::default()
    }
}

fn degraded(days: usize, mask: f64) -> (TensorFrame, GroundTruth) {
    let p = DegradeParams {
        mask_fraction: mask,
        seed: 5,
        ..Default::default()
    };
    degrade(&short_frame(days), &p).unwrap()
}

#[test]
fn cleaned_csv_round_trips_through_ingest() {
    let (frame, truth) = degraded(30, 0.1);
    let result = run(&frame, &config(), &RunOptions::default(), Some(&truth)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cleaned.csv");
    write_cleaned(&path, &result.cleaned).unwrap();
    let back = ingest_csv(&path, &CsvSchema::default(), Aggregation::First).unwrap();
    assert!(back.rejects.is_empty());
    assert!(back.frame.is_complete());
    assert_eq!(back.frame.sensors(), result.cleaned.sensors.as_slice());
    assert_eq!(back.frame.days(), result.cleaned.days.as_slice());
    assert_eq!(back.frame.tensor(), &result.cleaned.values);
    assert!(result.cleaned.values.data().iter().all(|v| v.is_finite()));
}

#[test]
fn provenance_and_report_match_the_engine() {
    let (frame, truth) = degraded(40, 0.1);
    let cfg = config();
    let result = run(&frame, &cfg, &RunOptions::default(), Some(&truth)).unwrap();

    let mut x_hats = Vec::new();
    let mut flags: Vec<BTreeSet<usize>> = Vec::new();
    process_stream(frame.windows(1).unwrap(), &cfg, |out| {
        x_hats.push(out.x_hat);
        flags.push(out.outlier_fibers);
        Ok(())
    })
    .unwrap();
    let total: usize = flags.iter().map(BTreeSet::len).sum();
    assert_eq!(result.outliers.len(), total);
    for r in &result.outliers {
        assert!(r.sensor_id.is_none());
        let day = result.cleaned.days.iter().position(|d| *d == r.date).unwrap();
        assert_eq!(day, r.minibatch);
        assert!(flags[r.minibatch].contains(&r.hour.unwrap()));
    }

    let truths: Vec<GroundTruth> = (0..40).map(|d| truth.slice_last(d..d + 1).unwrap()).collect();
    let want = relative_error(&x_hats, &truths, &flags, 10).unwrap();
    let got = result.metrics.relative_error.unwrap();
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");

    let [s, h, d] = result.cleaned.shape();
    let mut corrected = 0;
    for day in 0..d {
        for hour in 0..h {
            for sensor in 0..s {
                let p = result.cleaned.provenance_at(sensor, hour, day);
                let raw = frame.get(sensor, hour, day);
                let value = result.cleaned.values.get(&[sensor, hour, day]);
                let in_flag = flags[day].contains(&hour);
                match p {
                    Provenance::Imputed => assert!(raw.is_none()),
                    Provenance::Corrected => {
                        assert!(raw.is_some() && in_flag);
                        assert_eq!(value, x_hats[day].get(&[sensor, hour, 0]));
                        corrected += 1;
                    }
                    Provenance::Observed => {
                        assert!(!in_flag);
                        assert_eq!(Some(value), raw);
                    }
                }
            }
        }
    }
    assert!(corrected > 0);
}

#[test]
fn all_zero_frame() {
    let f = short_frame(12);
    let zero = TensorFrame::complete(f.sensors().to_vec(), f.days().to_vec(), DenseTensor::zeros(&f.shape()).unwrap()).unwrap();
    let result = run(&zero, &config(), &RunOptions::default(), None).unwrap();
    assert!(result.cleaned.values.is_zero());
    assert!(result.outliers.is_empty());
    assert!(result.metrics.relative_error.is_none());
}

#[test]
fn second_epoch_improves_loss() {
    let (frame, truth) = degraded(60, 0.0);
    let cfg = RunConfig {
        epochs: 2,
        ..config()
    };
    let result = run(&frame, &cfg, &RunOptions::default(), Some(&truth)).unwrap();
    let loss = &result.metrics.per_minibatch_loss;
    assert_eq!(loss.len(), 120);
    assert_eq!(result.metrics.burn_in, 0);
    let better = (0..60).filter(|&k| loss[60 + k] <= loss[k]).count();
    assert!(better >= 54, "{better} of 60 minibatches improved");
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let (frame, truth) = degraded(20, 0.1);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("state.bin");
    let opts = RunOptions {
        checkpoint: Some(ckpt.clone()),
        ..Default::default()
    };
    let a = run(&frame, &config(), &opts, Some(&truth)).unwrap();
    let b = run(&frame, &config(), &RunOptions::default(), Some(&truth)).unwrap();
    assert_eq!(a.cleaned.values, b.cleaned.values);
    assert_eq!(a.outliers, b.outliers);
    assert_eq!(a.metrics.per_minibatch_loss, b.metrics.per_minibatch_loss);

    let resumed = RunOptions {
        resume: Some(ckpt),
        ..Default::default()
    };
    let c = run(&frame, &config(), &resumed, None).unwrap();
    assert_eq!(c.state.minibatch_count(), 40);

    let wider = TensorFrame::complete(
        frame.sensors()[..10].to_vec(),
        frame.days().to_vec(),
        DenseTensor::zeros(&[10, 24, 20]).unwrap(),
    )
    .unwrap();
    assert!(run(&wider, &config(), &resumed_again(&dir), None).is_err());
}

fn resumed_again(dir: &tempfile::TempDir) -> RunOptions {
    RunOptions {
        resume: Some(dir.path().join("state.bin")),
        ..Default::default()
    }
}

#[test]
fn partial_tail_is_dropped() {
    let frame = short_frame(11);
    let cfg = RunConfig {
        minibatch_extent: 3,
        ..config()
    };
    let result = run(&frame, &cfg, &RunOptions::default(), None).unwrap();
    assert_eq!(result.metrics.minibatches, 3);
    assert_eq!(result.metrics.days_dropped, 2);
    assert_eq!(result.cleaned.days.len(), 9);
}

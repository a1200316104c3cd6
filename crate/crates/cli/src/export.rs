use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{csv_err, io_err, CliError, Result};
use crate::frame::{TensorFrame, HOURS};
use crate::pipeline::{Cleaned, OutlierRecord, RunMetrics};

fn timestamp(day: chrono::NaiveDate, hour: usize) -> String {
    format!("{}T{hour:02}:00:00Z", day.format("%Y-%m-%d"))
}

/// Long-format CSV: sensor_id, timestamp, value, source.
pub fn write_cleaned(path: &Path, cleaned: &Cleaned) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_cleaned_to(BufWriter::new(file), cleaned).map_err(|e| match e {
        CliError::Csv { source, .. } => CliError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn write_cleaned_to(out: impl Write, cleaned: &Cleaned) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_err("<output>");
    w.write_record(["sensor_id", "timestamp", "value", "source"]).map_err(err)?;
    for (d, &day) in cleaned.days.iter().enumerate() {
        for h in 0..HOURS {
            let ts = timestamp(day, h);
            for (s, sensor) in cleaned.sensors.iter().enumerate() {
                let v = cleaned.values.get(&[s, h, d]);
                let p = cleaned.provenance_at(s, h, d);
                w.write_record([sensor.as_str(), &ts, &v.to_string(), p.as_str()])
                    .map_err(csv_err("<output>"))?;
            }
        }
    }
    w.flush().map_err(|e| csv_err("<output>")(e.into()))?;
    Ok(())
}

/// Observed entries of a frame in the ingest format; hidden entries are omitted.
pub fn write_frame(path: &Path, frame: &TensorFrame) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["sensor_id", "timestamp", "value"]).map_err(csv_err(path))?;
    let [sensors, _, days] = frame.shape();
    for d in 0..days {
        for h in 0..HOURS {
            let ts = timestamp(frame.days()[d], h);
            for s in 0..sensors {
                if let Some(v) = frame.get(s, h, d) {
                    w.write_record([frame.sensors()[s].as_str(), &ts, &v.to_string()])
                        .map_err(csv_err(path))?;
                }
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_outliers(path: &Path, records: &[OutlierRecord]) -> Result<()> {
    write_json(path, records)
}

pub fn write_metrics(path: &Path, metrics: &RunMetrics) -> Result<()> {
    write_json(path, metrics)
}

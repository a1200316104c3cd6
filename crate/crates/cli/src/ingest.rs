use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Days, NaiveDate, NaiveDateTime, Timelike, Utc};
use serde::Serialize;
use streamrtr::{DenseTensor, ObservationMask};

use crate::error::{csv_err, io_err, CliError, Result};
use crate::frame::{TensorFrame, HOURS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub sensor_col: String,
    pub time_col: String,
    pub value_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            sensor_col: "sensor_id".into(),
            time_col: "timestamp".into(),
            value_col: "value".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
    First,
}

impl FromStr for Aggregation {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "median" => Ok(Aggregation::Median),
            "first" => Ok(Aggregation::First),
            other => Err(CliError::Argument(format!("unknown aggregation {other:?}"))),
        }
    }
}

impl Aggregation {
    fn apply(self, values: &mut [f64]) -> f64 {
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::First => values[0],
            Aggregation::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    /// 1-based line in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub frame: TensorFrame,
    pub rejects: Vec<Reject>,
    pub accepted_rows: usize,
}

/// Parses an ISO-8601 timestamp. Offsets are converted to UTC; timestamps
/// without one are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%d %H:%M:%S%z", "%Y-%m-%dT%H:%M:%S%z", "%Y-%m-%dT%H:%M%:z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

fn column(header: &csv::StringRecord, name: &str) -> Option<usize> {
    header.iter().position(|h| h.trim() == name)
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema, aggregation: Aggregation) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    ingest_reader(file, schema, aggregation).map_err(|e| match e {
        CliError::Csv { source, .. } => CliError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Groups rows by (sensor, UTC hour) and lays them out as sensors x 24 x days,
/// with sensors in lexicographic order and every date from the first to the
/// last reading.
pub fn ingest_reader(input: impl Read, schema: &CsvSchema, aggregation: Aggregation) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = reader.headers().map_err(csv_err("<input>"))?.clone();
    let wanted = [&schema.sensor_col, &schema.time_col, &schema.value_col];
    let missing: Vec<String> = wanted
        .iter()
        .filter(|c| column(&header, c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Schema {
            missing,
            header: header.iter().map(str::to_string).collect(),
        });
    }
    let cols = wanted.map(|c| column(&header, c).expect("checked above"));

    let mut cells: BTreeMap<(String, NaiveDate, usize), Vec<f64>> = BTreeMap::new();
    let mut sensors = BTreeSet::new();
    let mut dates = BTreeSet::new();
    let mut rejects = Vec::new();
    let mut accepted_rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err("<input>"))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(cols[k]).map(str::trim);
        let (Some(sensor), Some(time)) = (field(0), field(1)) else {
            rejects.push(Reject {
                line,
                reason: "row has too few fields".into(),
            });
            continue;
        };
        if sensor.is_empty() {
            rejects.push(Reject {
                line,
                reason: "empty sensor id".into(),
            });
            continue;
        }
        let Some(ts) = parse_timestamp(time) else {
            rejects.push(Reject {
                line,
                reason: format!("unparsable timestamp {time:?}"),
            });
            continue;
        };
        accepted_rows += 1;
        sensors.insert(sensor.to_string());
        let date = ts.date_naive();
        dates.insert(date);
        let value = field(2).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        let cell = cells.entry((sensor.to_string(), date, ts.hour() as usize)).or_default();
        if let Some(v) = value {
            cell.push(v);
        }
    }

    let (Some(&first), Some(&last)) = (dates.first(), dates.last()) else {
        return Err(CliError::Frame("no usable rows in input".into()));
    };
    let span = (last - first).num_days() as usize + 1;
    let days: Vec<NaiveDate> = (0..span as u64).map(|d| first + Days::new(d)).collect();
    let sensors: Vec<String> = sensors.into_iter().collect();
    let sensor_pos: BTreeMap<&str, usize> = sensors.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let shape = [sensors.len(), HOURS, span];
    let len = shape.iter().product();
    let mut data = vec![0.0; len];
    let mut bits = vec![false; len];
    for ((sensor, date, hour), mut values) in cells {
        if values.is_empty() {
            continue;
        }
        let s = sensor_pos[sensor.as_str()];
        let d = (date - first).num_days() as usize;
        let k = s + shape[0] * (hour + HOURS * d);
        data[k] = aggregation.apply(&mut values);
        bits[k] = true;
    }
    let frame = TensorFrame::new(
        sensors,
        days,
        DenseTensor::new(shape.to_vec(), data)?,
        ObservationMask::new(shape.to_vec(), bits)?,
    )?;
    Ok(Ingested {
        frame,
        rejects,
        accepted_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(sensors: &[&str], days: usize, skip: Option<(&str, usize, usize)>) -> String {
        let mut out = String::from("sensor_id,timestamp,value\n");
        for s in sensors {
            for d in 0..days {
                for h in 0..24 {
                    if skip == Some((s, h, d)) {
                        continue;
                    }
                    out += &format!("{s},2021-03-{:02}T{h:02}:00:00Z,{}\n", d + 1, h as f64 + 0.5);
                }
            }
        }
        out
    }

    fn ingest(text: &str) -> Ingested {
        ingest_reader(text.as_bytes(), &CsvSchema::default(), Aggregation::Mean).unwrap()
    }

    #[test]
    fn full_grid() {
        let got = ingest(&rows(&["b", "a"], 2, None));
        assert_eq!(got.frame.shape(), [2, 24, 2]);
        assert!(got.frame.is_complete());
        assert_eq!(got.frame.sensors(), ["a", "b"]);
        assert_eq!(got.frame.get(1, 5, 1), Some(5.5));
        assert_eq!(got.accepted_rows, 96);
    }

    #[test]
    fn absent_hour_is_masked() {
        let got = ingest(&rows(&["a", "b"], 2, Some(("b", 7, 1))));
        let f = &got.frame;
        assert_eq!(f.mask().observed_count(), 95);
        assert_eq!(f.get(1, 7, 1), None);
        assert_eq!(f.tensor().get(&[1, 7, 1]), 0.0);
    }

    #[test]
    fn duplicates_are_aggregated() {
        let text = "sensor_id,timestamp,value\ns,2021-01-01T03:00:00Z,10.0\ns,2021-01-01T03:20:00Z,12.0\ns,2021-01-01T03:40:00Z,20.0\n";
        assert_eq!(ingest(text).frame.get(0, 3, 0), Some(14.0));
        let one = |agg| {
            ingest_reader(text.as_bytes(), &CsvSchema::default(), agg)
                .unwrap()
                .frame
                .get(0, 3, 0)
        };
        assert_eq!(one(Aggregation::Median), Some(12.0));
        assert_eq!(one(Aggregation::First), Some(10.0));
        let two = "sensor_id,timestamp,value\ns,2021-01-01T03:00:00Z,10.0\ns,2021-01-01T03:00:00Z,12.0\n";
        assert_eq!(ingest(two).frame.get(0, 3, 0), Some(11.0));
    }

    #[test]
    fn rejects_and_missing_values() {
        let text = "value,timestamp,sensor_id\n1.0,garbage,s\nNaN,2021-01-01T00:00:00Z,s\n2.0,2021-01-03 05:00:00+02:00,s\nabc,2021-01-01T01:00:00Z,s\n";
        let got = ingest(text);
        assert_eq!(got.rejects.len(), 1);
        assert_eq!(got.rejects[0].line, 2);
        assert_eq!(got.accepted_rows + got.rejects.len(), 4);
        let f = &got.frame;
        assert_eq!(f.days().len(), 3);
        assert_eq!(f.get(0, 0, 0), None);
        assert_eq!(f.get(0, 1, 0), None);
        assert_eq!(f.get(0, 3, 2), Some(2.0));
    }

    #[test]
    fn missing_columns_are_listed() {
        let err = ingest_reader("id,time,v\n".as_bytes(), &CsvSchema::default(), Aggregation::Mean).unwrap_err();
        match err {
            CliError::Schema { missing, header } => {
                assert_eq!(missing.len(), 3);
                assert_eq!(header, ["id", "time", "v"]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn timestamp_forms() {
        let want = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap().and_hms_opt(12, 0, 0).unwrap().and_utc();
        for s in [
            "2020-06-01T12:00:00Z",
            "2020-06-01T14:00:00+02:00",
            "2020-06-01 12:00:00",
            "2020-06-01T12:00",
            "2020-06-01 07:00:00-05:00",
        ] {
            assert_eq!(parse_timestamp(s), Some(want), "{s}");
        }
        assert_eq!(parse_timestamp("06/01/2020"), None);
    }
}

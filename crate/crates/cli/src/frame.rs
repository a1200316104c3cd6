use chrono::NaiveDate;
use streamrtr::{DenseTensor, ObservationMask};

use crate::error::{CliError, Result};

pub const HOURS: usize = 24;

/// Sensors x hours x days, with labels for the first and last modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFrame {
    sensors: Vec<String>,
    days: Vec<NaiveDate>,
    tensor: DenseTensor,
    mask: ObservationMask,
}

impl TensorFrame {
    pub fn new(
        sensors: Vec<String>,
        days: Vec<NaiveDate>,
        tensor: DenseTensor,
        mask: ObservationMask,
    ) -> Result<Self> {
        let want = [sensors.len(), HOURS, days.len()];
        if tensor.shape() != want || mask.shape() != want {
            return Err(CliError::Frame(format!(
                "tensor {:?} / mask {:?} do not match {} sensors x 24 x {} days",
                tensor.shape(),
                mask.shape(),
                sensors.len(),
                days.len()
            )));
        }
        if tensor
            .data()
            .iter()
            .zip(mask.bits())
            .any(|(&v, &seen)| !seen && v != 0.0)
        {
            return Err(CliError::Frame("unobserved entries must be stored as 0".into()));
        }
        Ok(Self {
            sensors,
            days,
            tensor,
            mask,
        })
    }

    /// A fully observed frame.
    pub fn complete(sensors: Vec<String>, days: Vec<NaiveDate>, tensor: DenseTensor) -> Result<Self> {
        let mask = ObservationMask::full(tensor.shape())?;
        Self::new(sensors, days, tensor, mask)
    }

    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.sensors.len(), HOURS, self.days.len()]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.is_full()
    }

    pub fn get(&self, sensor: usize, hour: usize, day: usize) -> Option<f64> {
        let idx = [sensor, hour, day];
        let k = self.tensor.linear_index(&idx);
        self.mask.bits()[k].then(|| self.tensor.data()[k])
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<NaiveDate>, DenseTensor, ObservationMask) {
        (self.sensors, self.days, self.tensor, self.mask)
    }

    /// Consecutive windows of `days_per` days; a trailing partial window is dropped.
    pub fn windows(&self, days_per: usize) -> Result<Vec<(DenseTensor, ObservationMask)>> {
        if days_per == 0 {
            return Err(CliError::Frame("minibatch must span at least one day".into()));
        }
        (0..self.days.len() / days_per)
            .map(|w| {
                let r = w * days_per..(w + 1) * days_per;
                Ok((self.tensor.slice_last(r.clone())?, self.mask.slice_last(r)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n as u64).map(|d| start + chrono::Days::new(d)).collect()
    }

    #[test]
    fn shape_checks() {
        let t = DenseTensor::zeros(&[2, 24, 3]).unwrap();
        let f = TensorFrame::complete(vec!["a".into(), "b".into()], days(3), t.clone()).unwrap();
        assert_eq!(f.shape(), [2, 24, 3]);
        assert!(f.is_complete());
        assert!(TensorFrame::complete(vec!["a".into()], days(3), t.clone()).is_err());
        let mut bits = vec![true; 144];
        bits[5] = false;
        let mut data = vec![0.0; 144];
        data[5] = 1.0;
        let bad = DenseTensor::new(vec![2, 24, 3], data).unwrap();
        let mask = ObservationMask::new(vec![2, 24, 3], bits).unwrap();
        assert!(TensorFrame::new(vec!["a".into(), "b".into()], days(3), bad, mask).is_err());
    }

    #[test]
    fn windows_drop_the_tail() {
        let t = DenseTensor::from_fn(&[1, 24, 5], |i| i[2] as f64).unwrap();
        let f = TensorFrame::complete(vec!["a".into()], days(5), t).unwrap();
        let w = f.windows(2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].0.get(&[0, 3, 0]), 2.0);
        assert!(f.windows(0).is_err());
    }
}

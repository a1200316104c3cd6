use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use super::config::{lambda2_from, RunConfig};
use super::solve::{solve_with, InnerParams};
use super::state::{init_state, DictionaryState};
use super::updates::{flag_outlier_fibers, minibatch_objective, reconstruct_lowrank};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix, ObservationMask};

/// Everything the engine reports for one processed minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchOutput {
    pub epoch: usize,
    /// Position of the minibatch within its epoch.
    pub index: usize,
    pub x_hat: DenseTensor,
    pub e_hat: DenseTensor,
    /// Zero everywhere in full-observation mode and on every observed entry.
    pub o_hat: DenseTensor,
    pub r_coeffs: Vec<Matrix>,
    pub outlier_fibers: BTreeSet<usize>,
    pub inner_iterations_used: usize,
    pub converged: bool,
    /// Per-minibatch objective at the inner solution, before the dictionary moves.
    pub loss: f64,
    pub wall: Duration,
}

/// A running recovery: the dictionary state plus the parameters needed to
/// advance it one minibatch at a time.
#[derive(Debug, Clone)]
pub struct OnlineRecovery {
    state: DictionaryState,
    config: RunConfig,
    params: InnerParams,
}

impl OnlineRecovery {
    pub fn new(minibatch_shape: &[usize], config: &RunConfig) -> Result<Self> {
        let state = init_state(minibatch_shape, config)?;
        Self::from_state(state, config)
    }

    /// Resumes from a previously saved state.
    pub fn from_state(state: DictionaryState, config: &RunConfig) -> Result<Self> {
        if state.rank() != config.rank {
            return Err(Error::InvalidArgument(format!(
                "state has rank {}, configuration asks for {}",
                state.rank(),
                config.rank
            )));
        }
        let params = InnerParams::from_config(config, state.minibatch_shape())?;
        Ok(Self {
            state,
            config: config.clone(),
            params,
        })
    }

    pub fn state(&self) -> &DictionaryState {
        &self.state
    }

    pub fn into_state(self) -> DictionaryState {
        self.state
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn lambda2(&self) -> f64 {
        self.params.lambda2
    }

    /// Solve, reconstruct, accumulate, then move the dictionaries.
    pub fn step(&mut self, b: &DenseTensor, mask: &ObservationMask) -> Result<MinibatchOutput> {
        let shape = self.state.minibatch_shape();
        if b.shape() != shape || mask.shape() != shape {
            let found = if b.shape() != shape { b.shape() } else { mask.shape() };
            return Err(Error::ShapeDrift {
                index: self.state.minibatch_count() as usize,
                expected: shape.to_vec(),
                found: found.to_vec(),
            });
        }
        let start = Instant::now();
        let dicts = self.state.dictionaries();
        let sol = solve_with(dicts, b, mask, &self.params)?;
        let observed = if mask.is_full() {
            b.clone()
        } else {
            mask.apply(b)?
        };
        let x_hat = reconstruct_lowrank(dicts, &sol.coeffs, shape)?;
        let loss = minibatch_objective(
            dicts,
            &sol.coeffs,
            &observed,
            &sol.outliers,
            Some(&sol.compensation),
            self.params.lambda1,
            self.params.lambda2,
            self.params.outlier_mode,
        )?;
        let outlier_fibers = flag_outlier_fibers(&sol.outliers, self.params.outlier_mode, None)?;
        self.state.accumulate(
            &observed,
            &sol.outliers,
            Some(&sol.compensation),
            &sol.coeffs,
            self.config.accumulation,
        )?;
        self.state.update_dictionary(self.params.lambda1)?;
        Ok(MinibatchOutput {
            epoch: 0,
            index: 0,
            x_hat,
            e_hat: sol.outliers,
            o_hat: sol.compensation,
            r_coeffs: sol.coeffs,
            outlier_fibers,
            inner_iterations_used: sol.iterations,
            converged: sol.converged,
            loss,
            wall: start.elapsed(),
        })
    }

    /// Feeds `source` through the engine `epochs` times, replaying it from the
    /// start for each epoch. Outputs reach `sink` in order.
    pub fn run<S, F>(&mut self, source: S, epochs: usize, mut sink: F) -> Result<()>
    where
        S: IntoIterator<Item = (DenseTensor, ObservationMask)> + Clone,
        F: FnMut(MinibatchOutput) -> Result<()>,
    {
        for epoch in 0..epochs {
            for (index, (b, mask)) in source.clone().into_iter().enumerate() {
                let mut out = self.step(&b, &mask).map_err(|e| match e {
                    Error::ShapeDrift { expected, found, .. } => Error::ShapeDrift { index, expected, found },
                    other => other,
                })?;
                out.epoch = epoch;
                out.index = index;
                sink(out)?;
            }
        }
        Ok(())
    }
}

/// Streams minibatches through a freshly initialised engine, taking the
/// minibatch shape from the first element. Returns the final state, or
/// `None` for an empty source.
pub fn process_stream<S, F>(source: S, config: &RunConfig, sink: F) -> Result<Option<DictionaryState>>
where
    S: IntoIterator<Item = (DenseTensor, ObservationMask)> + Clone,
    F: FnMut(MinibatchOutput) -> Result<()>,
{
    config.validate()?;
    let Some((first, _)) = source.clone().into_iter().next() else {
        return Ok(None);
    };
    lambda2_from(config, first.shape())?;
    let mut engine = OnlineRecovery::new(first.shape(), config)?;
    engine.run(source, config.epochs, sink)?;
    Ok(Some(engine.into_state()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::frob_norm;

    fn minibatches(count: usize, shape: &[usize]) -> Vec<(DenseTensor, ObservationMask)> {
        (0..count)
            .map(|t| {
                let b = DenseTensor::from_fn(shape, |i| {
                    let phase = t as f64 * 0.3;
                    (i[0] as f64 + 1.0) * ((i[1] as f64) * 0.5 + phase).cos()
                })
                .unwrap();
                (b, ObservationMask::full(shape).unwrap())
            })
            .collect()
    }

    fn cfg() -> RunConfig {
        RunConfig {
            rank: 2,
            alpha: 1.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn empty_stream() {
        let mut seen = 0;
        let st = process_stream(Vec::new(), &cfg(), |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert!(st.is_none());
        assert_eq!(seen, 0);
    }

    #[test]
    fn shape_drift_is_an_error() {
        let mut src = minibatches(3, &[4, 3, 1]);
        src.extend(minibatches(1, &[4, 3, 2]));
        let err = process_stream(src, &cfg(), |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::ShapeDrift { index: 3, .. }), "{err}");
    }

    #[test]
    fn determinism_and_epoch_replay() {
        let src = minibatches(6, &[5, 4, 1]);
        let mut cfg = cfg();
        cfg.epochs = 2;
        let collect = |cfg: &RunConfig| {
            let mut outs = Vec::new();
            let st = process_stream(src.clone(), cfg, |o| {
                outs.push(o);
                Ok(())
            })
            .unwrap()
            .unwrap();
            (outs, st)
        };
        let (a, sa) = collect(&cfg);
        let (b, sb) = collect(&cfg);
        assert_eq!(a.len(), 12);
        assert_eq!(sa, sb);
        assert_eq!(sa.minibatch_count(), 12);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.x_hat, y.x_hat);
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        }
        assert_eq!((a[7].epoch, a[7].index), (1, 1));
    }

    #[test]
    fn state_size_is_constant() {
        let src = minibatches(20, &[5, 4, 1]);
        let mut engine = OnlineRecovery::new(&[5, 4, 1], &cfg()).unwrap();
        let initial = engine.state().scalar_count();
        engine
            .run(src, 1, |_| Ok(()))
            .unwrap();
        assert_eq!(engine.state().scalar_count(), initial);
    }

    #[test]
    fn compensation_is_zero_in_full_observation() {
        let src = minibatches(3, &[5, 4, 2]);
        process_stream(src, &cfg(), |o| {
            assert!(o.o_hat.is_zero());
            assert!(frob_norm(&o.x_hat) > 0.0);
            Ok(())
        })
        .unwrap();
    }
}

use streamrtr::synth::{gen_stream, run_trial, SynthSpec};
use streamrtr::{DictionaryState, OnlineRecovery, RunConfig};

fn spec() -> SynthSpec {
    SynthSpec {
        minibatch_shape: vec![20, 20, 5],
        core_dims: vec![2, 2, 2],
        num_minibatches: 40,
        corruption_ratio: 0.05,
        observation_ratio: 0.9,
        seed: 3,
        ..Default::default()
    }
}

fn config() -> RunConfig {
    RunConfig {
        rank: 2,
        alpha: 0.5,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn recovers_a_small_stream() {
    let rep = run_trial(&spec(), &config(), 10).unwrap();
    assert!(rep.relative_error < 0.2, "{}", rep.relative_error);
    assert!(rep.f1 > 0.9, "{}", rep.f1);
    assert_eq!(rep.loss_trace.len(), 40);
}

#[test]
fn checkpoint_resume_is_seamless() {
    let stream: Vec<_> = gen_stream(&spec()).unwrap().collect();
    let cfg = config();

    let mut straight = OnlineRecovery::new(&[20, 20, 5], &cfg).unwrap();
    let mut losses = Vec::new();
    for mb in &stream {
        losses.push(straight.step(&mb.observed, &mb.truth.mask).unwrap().loss);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bin");
    let mut first = OnlineRecovery::new(&[20, 20, 5], &cfg).unwrap();
    let mut resumed_losses = Vec::new();
    for mb in &stream[..15] {
        resumed_losses.push(first.step(&mb.observed, &mb.truth.mask).unwrap().loss);
    }
    first.state().save(&path).unwrap();
    let state = DictionaryState::load_matching(&path, &[20, 20, 5], 2).unwrap();
    let mut second = OnlineRecovery::from_state(state, &cfg).unwrap();
    for mb in &stream[15..] {
        resumed_losses.push(second.step(&mb.observed, &mb.truth.mask).unwrap().loss);
    }
    assert_eq!(losses, resumed_losses);
    assert_eq!(straight.state(), second.state());
}

#[test]
fn state_bytes_do_not_grow() {
    let s = SynthSpec {
        num_minibatches: 200,
        minibatch_shape: vec![8, 8, 1],
        core_dims: vec![2, 2, 1],
        ..spec()
    };
    let mut engine = OnlineRecovery::new(&s.minibatch_shape, &config()).unwrap();
    let mut sizes = Vec::new();
    for mb in gen_stream(&s).unwrap() {
        engine.step(&mb.observed, &mb.truth.mask).unwrap();
        sizes.push(engine.state().to_bytes().len());
    }
    assert_eq!(sizes[0], sizes[199]);
}

use deocc_core::model::weights::{decode, encode};
use deocc_core::model::{DeOccNet, NetworkConfig};
use deocc_core::train::{
    checkpoint_file, restore_checkpoint, train, Progress, Sample, TrainConfig, TrainState,
};
use deocc_core::{Image, LightField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(seed: u64, size: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = Image::from_fn(size, size, 3, |_, _, _| rng.random::<f32>());
    let lf = LightField::from_fn(3, 3, |c| {
        gt.map(|v| v * (0.8 + 0.05 * (c.row + c.col) as f32))
    })
    .unwrap();
    Sample { lf, gt }
}

fn data() -> Vec<Sample> {
    (0..3).map(|i| sample(i, 24)).collect()
}

fn net() -> DeOccNet<f32> {
    let cfg = NetworkConfig {
        aspp_rates: vec![1, 2],
        aspp_groups: 1,
        encoder_levels: 2,
        ..NetworkConfig::with_depth(3, 3, 2)
    };
    DeOccNet::build(cfg, 9).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        patch: 16,
        stride: 8,
        epochs: 3,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn training_replays_bit_identically() {
    let (mut a, mut b) = (net(), net());
    let la = train(&mut a, &data(), &cfg(), None, |_, _, _, _| Ok(())).unwrap();
    let lb = train(&mut b, &data(), &cfg(), None, |_, _, _, _| Ok(())).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert!(la
        .log
        .records
        .iter()
        .all(|r| r.loss >= 0.0 && r.loss.is_finite()));
    assert_eq!(la.state.epoch, 3);
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_trajectory() {
    let mut full = net();
    let whole = train(&mut full, &data(), &cfg(), None, |_, _, _, _| Ok(())).unwrap();

    let mut first = net();
    let mut saved = None;
    train(&mut first, &data(), &cfg(), None, |n, s, _, p| {
        if p == Progress::EpochDone && s.epoch == 1 {
            saved = Some(encode(&checkpoint_file(n, s, &cfg())));
        }
        Ok(())
    })
    .unwrap();
    let (mut resumed, state, tcfg) = restore_checkpoint(&decode(&saved.unwrap()).unwrap()).unwrap();
    assert_eq!(tcfg, cfg());
    let rest = train(&mut resumed, &data(), &tcfg, Some(state), |_, _, _, _| {
        Ok(())
    })
    .unwrap();

    assert_eq!(resumed.to_bytes(), full.to_bytes());
    let tail: Vec<_> = whole
        .log
        .records
        .iter()
        .filter(|r| r.epoch >= 1)
        .cloned()
        .collect();
    assert_eq!(rest.log.records, tail);
}

#[test]
fn step_limit_stops_mid_epoch_and_resumes() {
    let limited = TrainConfig {
        max_steps: Some(5),
        ..cfg()
    };
    let mut a = net();
    let mut seen = Vec::new();
    let out = train(&mut a, &data(), &limited, None, |_, s, _, p| {
        seen.push((p, s.step));
        Ok(())
    })
    .unwrap();
    assert_eq!(out.log.records.len(), 5);
    assert_eq!(seen.last(), Some(&(Progress::StepLimit, 5)));

    let more = TrainConfig {
        max_steps: Some(11),
        ..cfg()
    };
    let mut full = net();
    let whole = train(&mut full, &data(), &more, None, |_, _, _, _| Ok(())).unwrap();
    let rest = train(&mut a, &data(), &more, Some(out.state), |_, _, _, _| Ok(())).unwrap();
    assert_eq!(a.to_bytes(), full.to_bytes());
    assert_eq!(rest.log.records[..], whole.log.records[5..]);
    assert_eq!(rest.state, whole.state);
}

#[test]
fn non_finite_loss_aborts_with_network_intact() {
    let mut n = net();
    let mut params: Vec<_> = n.params().iter().map(|p| p.value.clone()).collect();
    let last = params.len() - 1;
    params[last] = params[last].map(|_| f32::INFINITY);
    n.set_params(params).unwrap();
    let before = n.clone();
    let out = train(&mut n, &data(), &cfg(), None, |_, _, _, _| Ok(())).unwrap();
    assert!(out.log.aborted.is_some());
    assert!(out.log.records.is_empty());
    assert_eq!(n, before);
}

#[test]
fn fresh_state_starts_at_zero() {
    let n = net();
    let s = TrainState::fresh(&n, &cfg()).unwrap();
    assert_eq!((s.epoch, s.step, s.adam.t), (0, 0, 0));
    assert!(s.adam.m.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
}

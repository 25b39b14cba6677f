use deocc_core::model::{
    param_count_formula, receptive_interval, shape_trace, DeOccNet, NetworkConfig,
};
use deocc_core::nn::{Mode, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, shape: &[usize]) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn delta_probe_matches_analytic_receptive_field() {
    let cfg = NetworkConfig::with_depth(1, 1, 2);
    let mut net = DeOccNet::<f32>::build(cfg.clone(), 11).unwrap();
    let (h, w) = (16usize, 1024usize);
    for p in [512usize, 515, 520, 527] {
        let mut tape = Tape::new();
        let x = tape.param(random(3, &[1, 3, h, w]));
        let f = net.forward(&mut tape, x, Mode::Eval).unwrap();
        let mut seed = Tensor::zeros(&[1, 3, h, w]);
        seed.data_mut()[8 * w + p] = 1.0;
        let grads = tape.backward_seeded(f.output, seed).unwrap();
        let g = grads.get(x).unwrap();
        let cols: Vec<usize> = (0..w)
            .filter(|&c| (0..3 * h).any(|r| g.data()[r * w + c] != 0.0))
            .collect();
        let (lo, hi) = receptive_interval(&cfg, p as i64, p as i64);
        let clip = |v: i64| v.clamp(0, w as i64 - 1) as usize;
        assert_eq!(
            (cols[0], *cols.last().unwrap()),
            (clip(lo), clip(hi)),
            "output column {p}"
        );
    }
}

fn zero_gradient_params(mode: Mode) -> Vec<String> {
    let cfg = NetworkConfig::desk(3, 3);
    let mut net = DeOccNet::<f32>::build(cfg, 5).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(random(1, &[2, 27, 16, 16]));
    let f = net.forward(&mut tape, x, mode).unwrap();
    let target = tape.constant(random(2, &[2, 3, 16, 16]));
    let loss = tape.mse_loss(f.output, target).unwrap();
    let grads = tape.backward(loss).unwrap();
    f.params
        .iter()
        .zip(net.params())
        .filter(|(v, _)| {
            grads
                .get(**v)
                .is_none_or(|g| g.data().iter().all(|&x| x == 0.0))
        })
        .map(|(_, p)| p.name.clone())
        .collect()
}

#[test]
fn every_parameter_gets_a_gradient() {
    assert_eq!(zero_gradient_params(Mode::Eval), Vec::<String>::new());
    // batch statistics cancel any per-channel constant, so a bias whose only
    // consumer is a normalization layer has an exactly zero train-mode gradient
    assert_eq!(
        zero_gradient_params(Mode::Train),
        vec!["enc.3.down.shortcut.bias".to_string()]
    );
}

#[test]
fn param_count_matches_formula() {
    for d in [8, 64] {
        let cfg = NetworkConfig::with_depth(5, 5, d);
        let net = DeOccNet::<f32>::build(cfg.clone(), 0).unwrap();
        assert_eq!(net.param_count(), param_count_formula(&cfg), "D={d}");
    }
}

#[test]
fn output_matches_input_size() {
    let net = DeOccNet::<f32>::build(NetworkConfig::desk(5, 5), 2).unwrap();
    for s in [32, 64, 96] {
        let y = net.predict(&random(s as u64, &[1, 75, s, s])).unwrap();
        assert_eq!(y.shape(), &[1, 3, s, s]);
        assert!(y.all_finite());
    }
}

#[test]
fn desk_bottleneck_shape() {
    let mut net = DeOccNet::<f32>::build(NetworkConfig::desk(5, 5), 2).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(random(0, &[1, 75, 64, 64]));
    let f = net.forward(&mut tape, x, Mode::Eval).unwrap();
    assert_eq!(tape.value(f.bottleneck).shape(), &[1, 128, 4, 4]);
    let traced = shape_trace(net.config(), 1, 64, 64).unwrap();
    let b = traced.iter().find(|s| s.name == "bottleneck").unwrap();
    assert_eq!(b.shape, [1, 128, 4, 4]);
}

#[test]
fn zero_input_response_is_finite() {
    let net = DeOccNet::<f32>::build(NetworkConfig::desk(5, 5), 3).unwrap();
    let y = net.predict(&Tensor::zeros(&[1, 75, 32, 32])).unwrap();
    assert!(y.all_finite());
}

#[test]
fn replicated_center_view_is_accepted() {
    let net = DeOccNet::<f32>::build(NetworkConfig::desk(5, 5), 4).unwrap();
    let view = random(9, &[3, 32, 32]);
    let mut data = Vec::with_capacity(75 * 1024);
    for _ in 0..25 {
        data.extend_from_slice(view.data());
    }
    let y = net
        .predict(&Tensor::from_vec(vec![1, 75, 32, 32], data).unwrap())
        .unwrap();
    assert_eq!(y.shape(), &[1, 3, 32, 32]);
    assert!(y.all_finite());
}

#[test]
fn whole_network_gradients_match_finite_differences() {
    use deocc_core::nn::grad_check;
    let cfg = NetworkConfig {
        aspp_rates: vec![1, 2],
        aspp_groups: 1,
        encoder_levels: 1,
        ..NetworkConfig::with_depth(1, 1, 1)
    };
    let net = DeOccNet::<f64>::build(cfg, 6).unwrap();
    let x = random(4, &[2, 3, 4, 4]).cast::<f64>();
    let report = grad_check(
        |tape, vars| {
            let mut n = net.clone();
            let f = n.forward(tape, vars[0], Mode::Train)?;
            Ok(f.output)
        },
        &[x],
        1e-3,
        1,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

use deocc_core::nn::ops::{self, channel_moments};
use deocc_core::nn::{conv2d, conv2d_transpose, grad_check, ConvGeom, Mode, RunningStats, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: deocc_core::Scalar>(seed: u64, shape: &[usize]) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n)
            .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transposed_conv_is_adjoint(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        half in 1usize..5, dilation in 1usize..3, seed in any::<u64>(),
    ) {
        let geom = ConvGeom::up2();
        let geom = ConvGeom { dilation, padding: dilation, output_padding: 1, ..geom };
        let h = 2 * half;
        let x = random::<f64>(seed, &[n, cin, h, h]);
        let w = random::<f64>(seed ^ 1, &[cout, cin, 3, 3]);
        let y = conv2d(&x, &w, None, &geom).unwrap();
        let z = random::<f64>(seed ^ 2, y.shape());
        // conv weights [out, in] serve the transpose as [in', out'] with in' = out
        let back = conv2d_transpose(&z, &w, None, &geom).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let lhs = y.dot(&z).unwrap();
        let rhs = x.dot(&back).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn down_then_up_restores_size(half_h in 1usize..20, half_w in 1usize..20) {
        let x = Tensor::<f32>::zeros(&[1, 2, 2 * half_h, 2 * half_w]);
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        let d = conv2d(&x, &w, None, &ConvGeom::down2()).unwrap();
        prop_assert_eq!(d.shape(), &[1, 3, half_h, half_w]);
        let u = conv2d_transpose(&d, &Tensor::zeros(&[3, 2, 3, 3]), None, &ConvGeom::up2()).unwrap();
        prop_assert_eq!(u.shape(), x.shape());
    }

    #[test]
    fn forward_ops_are_deterministic(seed in any::<u64>(), dilation in 1usize..4) {
        let x = random::<f32>(seed, &[2, 3, 9, 7]);
        let w = random::<f32>(seed ^ 5, &[4, 3, 3, 3]);
        let g = ConvGeom::same3(dilation);
        prop_assert_eq!(conv2d(&x, &w, None, &g).unwrap(), conv2d(&x, &w, None, &g).unwrap());
        let gamma = Tensor::filled(&[3], 1.0f32);
        let beta = Tensor::zeros(&[3]);
        let a = ops::batch_norm(&x, &gamma, &beta, &mut RunningStats::new(3), Mode::Train).unwrap().0;
        let b = ops::batch_norm(&x, &gamma, &beta, &mut RunningStats::new(3), Mode::Train).unwrap().0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_input_conv_is_zero(h in 1usize..9, w in 1usize..9, dilation in 1usize..4, seed in any::<u64>()) {
        let wt = random::<f32>(seed, &[2, 2, 3, 3]);
        let y = conv2d(&Tensor::zeros(&[1, 2, h, w]), &wt, None, &ConvGeom::same3(dilation)).unwrap();
        prop_assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mode_bn_standardizes(seed in any::<u64>(), n in 1usize..4, c in 1usize..4) {
        let x = random::<f64>(seed, &[n, c, 5, 6]).map(|v| 3.0 * v + 0.7);
        let gamma = Tensor::filled(&[c], 1.0);
        let beta = Tensor::zeros(&[c]);
        let (y, _) = ops::batch_norm(&x, &gamma, &beta, &mut RunningStats::new(c), Mode::Train).unwrap();
        let (mean, var) = channel_moments(&y).unwrap();
        let (_, xvar) = channel_moments(&x).unwrap();
        for ch in 0..c {
            prop_assert!(mean[ch].abs() < 1e-4);
            // variance shrinks by var / (var + eps)
            prop_assert!((var[ch] - xvar[ch] / (xvar[ch] + ops::BN_EPS)).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_gradients_check(
        n in 1usize..3, cin in 1usize..3, cout in 1usize..3, h in 3usize..7, w in 3usize..7,
        stride in 1usize..3, dilation in 1usize..3, seed in any::<u64>(),
    ) {
        let geom = ConvGeom::new(3, stride, dilation, dilation);
        let inputs = [
            random::<f64>(seed, &[n, cin, h, w]),
            random::<f64>(seed ^ 3, &[cout, cin, 3, 3]),
            random::<f64>(seed ^ 4, &[cout]),
        ];
        let r = grad_check(|t, v| t.conv2d(v[0], v[1], Some(v[2]), geom), &inputs, 1e-4, seed).unwrap();
        prop_assert!(r.passed, "{:?}", r);
    }
}

#[test]
fn leaky_relu_gradient_away_from_zero() {
    let x = random::<f64>(7, &[2, 3, 4, 4]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = grad_check(|t, v| Ok(t.leaky_relu(v[0], 0.1)), &[x], 1e-6, 3).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn concat_routes_gradient_slices() {
    let a = random::<f64>(1, &[2, 2, 3, 3]);
    let b = random::<f64>(2, &[2, 3, 3, 3]);
    let r = grad_check(|t, v| t.concat(&[v[0], v[1]]), &[a, b], 1e-6, 5).unwrap();
    assert!(r.passed, "{r:?}");
}

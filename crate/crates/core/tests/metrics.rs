use deocc_core::metrics::{
    assemble_report, evaluate_scene, mean_l1, psnr, ssim, EvalReport, AVERAGE_LABEL, SSIM_K1,
    SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
use deocc_core::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, c, |_, _, _| rng.random::<f32>())
}

/// Direct two-dimensional SSIM: unnormalized 11x11 Gaussian weights,
/// explicit per-window moments, no separability.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut wts = vec![0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            wts[i * SSIM_WINDOW + j] =
                (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let norm: f64 = wts.iter().sum();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (h, w, ch) = a.dims();
    let mut total = 0.0;
    for c in 0..ch {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let g = wts[i * SSIM_WINDOW + j] / norm;
                        ma += g * a.get(c, y + i, x + j) as f64;
                        mb += g * b.get(c, y + i, x + j) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let g = wts[i * SSIM_WINDOW + j] / norm;
                        let da = a.get(c, y + i, x + j) as f64 - ma;
                        let db = b.get(c, y + i, x + j) as f64 - mb;
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        total += sum / n as f64;
    }
    total / ch as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn l1_is_a_metric(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let (a, b, c) = (random_image(s1, 6, 7, 3), random_image(s2, 6, 7, 3), random_image(s3, 6, 7, 3));
        let ab = mean_l1(&a, &b).unwrap();
        prop_assert_eq!(ab, mean_l1(&b, &a).unwrap());
        prop_assert_eq!(mean_l1(&a, &a).unwrap(), 0.0);
        prop_assert!(ab <= mean_l1(&a, &c).unwrap() + mean_l1(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>(), e in 0.001f32..0.2, k in 1.1f32..3.0) {
        let a = random_image(seed, 8, 8, 3);
        let near = a.map(|v| v + e);
        let far = a.map(|v| v + e * k);
        prop_assert!(psnr(&a, &near, 1.0).unwrap() > psnr(&a, &far, 1.0).unwrap());
    }

    #[test]
    fn ssim_matches_direct_oracle(seed in any::<u64>(), h in 11usize..20, w in 11usize..20, amp in 0.0f32..0.5) {
        let a = random_image(seed, h, w, 3);
        let noise = random_image(seed ^ 7, h, w, 3);
        let b = Image::from_fn(h, w, 3, |c, y, x| a.get(c, y, x) + amp * (noise.get(c, y, x) - 0.5));
        let got = ssim(&a, &b).unwrap();
        prop_assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6);
        prop_assert!(got <= 1.0 + 1e-12);
    }

    #[test]
    fn ssim_ignores_a_common_offset(seed in any::<u64>(), k in -0.2f32..0.2) {
        let a = random_image(seed, 16, 16, 3).map(|v| 0.3 + 0.4 * v);
        let n = random_image(seed ^ 1, 16, 16, 3);
        let b = Image::from_fn(16, 16, 3, |c, y, x| a.get(c, y, x) + 2e-3 * (n.get(c, y, x) - 0.5));
        let base = ssim(&a, &b).unwrap();
        let moved = ssim(&a.map(|v| v + k), &b.map(|v| v + k)).unwrap();
        prop_assert!((base - moved).abs() < 1e-6, "{} vs {}", base, moved);
    }

    #[test]
    fn ssim_is_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (random_image(s1, 16, 16, 3), random_image(s2, 16, 16, 3));
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn ssim_rewards_structure_over_noise() {
    let a = random_image(1, 32, 32, 3);
    let faint = a.map(|v| 0.9 * v + 0.05);
    let n = random_image(2, 32, 32, 3);
    let noisy = Image::from_fn(32, 32, 3, |c, y, x| {
        0.5 * a.get(c, y, x) + 0.5 * n.get(c, y, x)
    });
    assert!(ssim(&a, &faint).unwrap() > ssim(&a, &noisy).unwrap());
}

#[test]
fn ssim_rejects_tiny_images() {
    let a = random_image(3, 10, 30, 3);
    assert!(ssim(&a, &a).is_err());
}

#[test]
fn report_average_and_serialization() {
    let gt = random_image(4, 16, 16, 3);
    let rows: Vec<_> = (0..3)
        .map(|i| {
            evaluate_scene(
                format!("scene{i}"),
                &gt.map(|v| v + 0.01 * (i + 1) as f32),
                &gt,
            )
            .unwrap()
        })
        .collect();
    let report = assemble_report(rows.clone()).unwrap();
    assert_eq!(report.average.scene, AVERAGE_LABEL);
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / 3.0;
    assert!((report.average.psnr - mean_psnr).abs() < 1e-12);
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), report);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with(AVERAGE_LABEL));
    assert!(assemble_report(Vec::new()).is_err());
}

use deocc_core::lightfield::shift_view;
use deocc_core::mask::{
    apply_permutation, composite, embed_layers, refocus_check, synthesize, synthesize_sample,
    warp_mask, CheckStatus, MaskAsset, MaskShuffle, OcclusionLayer, SynthesisConfig, ViewGrid,
};
use deocc_core::{Disparity, Image, LightField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(seed: u64, h: usize, w: usize, c: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, c, |_, _, _| rng.random::<f32>())
}

fn textured_mask(seed: u64, size: usize) -> MaskAsset {
    let r = size as f32 / 2.0;
    let alpha = Image::from_fn(size, size, 1, |_, y, x| {
        let (dy, dx) = (y as f32 + 0.5 - r, x as f32 + 0.5 - r);
        if dy * dy + dx * dx <= r * r {
            1.0
        } else {
            0.0
        }
    });
    MaskAsset::new(format!("disk{seed}"), noise(seed, size, size, 3), alpha).unwrap()
}

/// Textured plane at disparity `d` (non-positive for a rectified scene).
fn background(seed: u64, size: usize, d: f64) -> LightField {
    let tex = noise(seed, size + 40, size + 40, 3);
    LightField::from_fn(5, 5, |c| {
        let (dr, dc) = (c.row as f64 - 2.0, c.col as f64 - 2.0);
        let dy = (d * dr).round() as i64;
        let dx = (d * dc).round() as i64;
        Image::from_fn(size, size, 3, |ch, y, x| {
            tex.get(
                ch,
                (y as i64 + 20 - dy) as usize,
                (x as i64 + 20 - dx) as usize,
            )
        })
    })
    .unwrap()
}

fn masks() -> Vec<MaskAsset> {
    (0..4)
        .map(|s| textured_mask(100 + s, 12 + 4 * s as usize))
        .collect()
}

/// Union alpha of all layers as seen from each view.
fn view_unions(lf: &LightField, layers: &[OcclusionLayer]) -> Vec<Vec<f32>> {
    let grid = ViewGrid::of(lf);
    lf.coords()
        .map(|c| {
            let mut u = vec![0.0f32; lf.height() * lf.width()];
            for l in layers {
                let (_, a) = warp_mask(l, c, grid).unwrap();
                for (ui, &ai) in u.iter_mut().zip(a.data()) {
                    *ui = ui.max(ai);
                }
            }
            u
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn clear_pixels_are_bit_identical(seed in any::<u64>(), layers in 1usize..4, shuffle in any::<bool>()) {
        let lf = background(seed ^ 9, 40, -0.0);
        let cfg = SynthesisConfig { layer_count: layers, channel_shuffle: shuffle, rng_seed: seed, ..Default::default() };
        let s = synthesize(&lf, &masks(), &cfg).unwrap();
        let source = match s.permutation {
            Some(p) => apply_permutation(&lf, lf.center_view().unwrap(), p).unwrap().0,
            None => lf.clone(),
        };
        prop_assert_eq!(&s.gt, source.center_view().unwrap());
        let unions = view_unions(&lf, &s.layers);
        for (k, (occ, src)) in s.occluded.views().iter().zip(source.views()).enumerate() {
            for ch in 0..3 {
                for (i, (&o, &v)) in occ.plane(ch).iter().zip(src.plane(ch)).enumerate() {
                    if unions[k][i] == 0.0 {
                        prop_assert_eq!(o.to_bits(), v.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn layer_disparities_increase(seed in any::<u64>()) {
        let lf = background(1, 32, 0.0);
        let cfg = SynthesisConfig { layer_count: 3, rng_seed: seed, ..Default::default() };
        let s = synthesize(&lf, &masks(), &cfg).unwrap();
        let d: Vec<f64> = s.layers.iter().map(|l| l.disparity.value()).collect();
        prop_assert!(d.windows(2).all(|w| w[0] < w[1]), "{:?}", d);
        prop_assert!(d[0] > 0.0);
        for (k, (v, r)) in d.iter().zip(&cfg.disparity_ranges).enumerate() {
            prop_assert!(*v <= r[1] && (*v > r[0] || (k == 0 && *v >= r[0])));
        }
    }

    #[test]
    fn placement_keeps_a_quarter_inside(seed in any::<u64>()) {
        let lf = background(2, 32, 0.0);
        let cfg = SynthesisConfig { rng_seed: seed, channel_shuffle: false, ..Default::default() };
        let s = synthesize(&lf, &masks(), &cfg).unwrap();
        let l = &s.layers[0];
        let inside: f64 = l.placed_alpha(32, 32).unwrap().data().iter().map(|&a| a as f64).sum();
        let total: f64 = l.mask.alpha().data().iter().map(|&a| a as f64).sum();
        prop_assert!(inside >= 0.25 * total - 1e-9);
    }
}

#[test]
fn synthesis_is_seed_deterministic_and_order_free() {
    let sources = [background(1, 32, 0.0), background(2, 32, -0.5)];
    let cfg = SynthesisConfig {
        layer_count: 2,
        rng_seed: 77,
        ..Default::default()
    };
    let forward: Vec<_> = (0..6)
        .map(|i| synthesize_sample(&sources, &masks(), &cfg, i).unwrap())
        .collect();
    let backward: Vec<_> = (0..6)
        .rev()
        .map(|i| synthesize_sample(&sources, &masks(), &cfg, i).unwrap())
        .collect();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(a, b);
    }
    assert_ne!(forward[0].1, forward[1].1);
}

#[test]
fn independent_mask_shuffle_still_composites() {
    let lf = background(3, 32, 0.0);
    let cfg = SynthesisConfig {
        mask_shuffle: MaskShuffle::Independent,
        rng_seed: 4,
        ..Default::default()
    };
    let s = synthesize(&lf, &masks(), &cfg).unwrap();
    assert!(s.occlusion_rate() > 0.0);
}

#[test]
fn binarized_masks_have_binary_alpha() {
    let soft = MaskAsset::new(
        "soft",
        noise(1, 10, 10, 3),
        Image::from_fn(10, 10, 1, |_, y, x| (y * 10 + x) as f32 / 99.0),
    )
    .unwrap();
    let lf = background(5, 32, 0.0);
    let cfg = SynthesisConfig {
        binarize: Some(0.5),
        rng_seed: 1,
        ..Default::default()
    };
    let s = synthesize(&lf, &[soft], &cfg).unwrap();
    assert!(s.layers[0]
        .mask
        .alpha()
        .data()
        .iter()
        .all(|&a| a == 0.0 || a == 1.0));
}

#[test]
fn refocus_check_passes_and_detects_wrong_warps() {
    let lf = background(11, 48, -0.5);
    let mut passes = 0;
    for seed in 0..10 {
        let cfg = SynthesisConfig {
            layer_count: 2,
            rng_seed: seed,
            ..Default::default()
        };
        let s = synthesize(&lf, &masks(), &cfg).unwrap();
        let report = refocus_check(&s.occluded, &s.layers).unwrap();
        assert!(
            report.layers.iter().all(|l| l.status != CheckStatus::Fail),
            "{report:?}"
        );
        passes += report.passed() as usize;

        // negative control: embed with the opposite disparity sign
        let mut wrong = lf.clone();
        for l in &s.layers {
            let (pre_rgb, alpha) = l.placed(48, 48).unwrap();
            let d = Disparity::new(-l.disparity.value()).unwrap();
            wrong = wrong
                .map_views(|c, v| {
                    let off = lf.offset(c)?;
                    let rgb = shift_view(&pre_rgb, off, d)?.image;
                    let a = shift_view(&alpha, off, d)?.image;
                    composite(v, &rgb, &a)
                })
                .unwrap();
        }
        let neg = refocus_check(&wrong, &s.layers).unwrap();
        assert!(!neg.passed(), "seed {seed}: {neg:?}");
    }
    assert!(passes >= 9, "only {passes} of 10 passed");
}

#[test]
fn embedding_into_all_views_matches_direct_composite() {
    let lf = background(6, 24, 0.0);
    let layer = OcclusionLayer::new(
        textured_mask(3, 8),
        Disparity::new(1.5).unwrap(),
        (8, 8),
        1.0,
    )
    .unwrap();
    let (occ, _) = embed_layers(&lf, std::slice::from_ref(&layer)).unwrap();
    let grid = ViewGrid::of(&lf);
    for c in lf.coords() {
        let (rgb, a) = warp_mask(&layer, c, grid).unwrap();
        assert_eq!(occ.view(c), &composite(lf.view(c), &rgb, &a).unwrap());
    }
}

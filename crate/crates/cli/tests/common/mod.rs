//! Procedural fixtures shared by the cli integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use deocc_core::mask::MaskAsset;
use deocc_core::{AngularCoord, Image, LightField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sum of random plane waves per channel, values inside `[0.1, 0.9]`.
#[derive(Debug, Clone)]
pub struct WaveTexture {
    base: [f64; 3],
    waves: Vec<(usize, f64, f64, f64, f64)>,
}

impl WaveTexture {
    /// `max_freq` in radians per pixel.
    pub fn random(seed: u64, count: usize, max_freq: f64) -> Self {
        let mut r = rng(seed);
        let base = [
            r.random_range(0.3..0.7),
            r.random_range(0.3..0.7),
            r.random_range(0.3..0.7),
        ];
        let amp = 0.2 / count as f64;
        let waves = (0..3 * count)
            .map(|i| {
                let theta = r.random_range(0.0..TAU);
                let f = r.random_range(0.2 * max_freq..max_freq);
                (
                    i % 3,
                    f * theta.cos(),
                    f * theta.sin(),
                    r.random_range(0.0..TAU),
                    amp * r.random_range(0.5..1.0),
                )
            })
            .collect();
        Self { base, waves }
    }

    pub fn at(&self, ch: usize, y: f64, x: f64) -> f64 {
        let mut v = self.base[ch];
        for &(c, fy, fx, phase, a) in &self.waves {
            if c == ch {
                v += a * (fy * y + fx * x + phase).sin();
            }
        }
        v
    }
}

/// Views of one fronto-parallel plane: view `(r, c)` samples the texture at
/// `(y - d*dr, x - d*dc)`, evaluated analytically.
pub fn plane_lf(
    rows: usize,
    cols: usize,
    size: usize,
    d: f64,
    tex: impl Fn(usize, f64, f64) -> f64,
) -> LightField {
    let (cr, cc) = ((rows / 2) as f64, (cols / 2) as f64);
    LightField::from_fn(rows, cols, |a: AngularCoord| {
        let (dr, dc) = (a.row as f64 - cr, a.col as f64 - cc);
        Image::from_fn(size, size, 3, |ch, y, x| {
            tex(ch, y as f64 - d * dr, x as f64 - d * dc) as f32
        })
    })
    .unwrap()
}

/// A clean 5x5 scene: a smooth textured plane at disparity 0.
pub fn clean_scene(seed: u64, size: usize) -> LightField {
    scene(seed, size, 0.35)
}

/// [`clean_scene`] with waves up to `max_freq` radians per pixel.
pub fn scene(seed: u64, size: usize, max_freq: f64) -> LightField {
    let tex = WaveTexture::random(seed, 4, max_freq);
    plane_lf(5, 5, size, 0.0, |c, y, x| tex.at(c, y, x))
}

/// Noise-textured occluders: ellipses and bars, 10 to 24 pixels across.
pub fn mask_library(seed: u64, count: usize) -> Vec<MaskAsset> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let h = r.random_range(10..25usize);
            let w = r.random_range(10..25usize);
            let bar = i % 3 == 2;
            let tint = [
                r.random_range(0.0..1.0f32),
                r.random_range(0.0..1.0f32),
                r.random_range(0.0..1.0f32),
            ];
            let mut n = rng(seed ^ ((i as u64 + 1) * 0x9E37));
            let rgb = Image::from_fn(h, w, 3, |c, _, _| {
                (0.6 * tint[c] + 0.4 * n.random::<f32>()).clamp(0.0, 1.0)
            });
            let alpha = Image::from_fn(h, w, 1, |_, y, x| {
                let (u, v) = (
                    (y as f32 + 0.5) / h as f32 - 0.5,
                    (x as f32 + 0.5) / w as f32 - 0.5,
                );
                let inside = if bar {
                    v.abs() < 0.2
                } else {
                    u * u + v * v < 0.25
                };
                if inside {
                    1.0
                } else {
                    0.0
                }
            });
            MaskAsset::new(format!("mask{i:02}"), rgb, alpha).unwrap()
        })
        .collect()
}

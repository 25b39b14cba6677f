//! Closed-form properties of a configuration: receptive field, tensor shapes
//! and parameter count. None of these build the network.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{NetworkConfig, UNITS_PER_BLOCK};
use crate::error::invalid;
use crate::nn::ConvGeom;
use crate::Result;

type Interval = (i64, i64);

fn hull(a: Interval, b: Interval) -> Interval {
    (a.0.min(b.0), a.1.max(b.1))
}

fn ceil_div(a: i64, s: i64) -> i64 {
    -((-a).div_euclid(s))
}

/// Input positions (one axis) read by a convolution producing outputs `a..=b`.
pub fn conv_interval(geom: &ConvGeom, (a, b): Interval) -> Interval {
    let (s, p) = (geom.stride as i64, geom.padding as i64);
    let span = (geom.extent() - 1) as i64;
    (a * s - p, b * s - p + span)
}

/// Input positions read by a transposed convolution producing outputs `a..=b`.
pub fn transposed_interval(geom: &ConvGeom, (a, b): Interval) -> Interval {
    let (s, p) = (geom.stride as i64, geom.padding as i64);
    let span = (geom.extent() - 1) as i64;
    (ceil_div(a + p - span, s), (b + p).div_euclid(s))
}

#[derive(Clone, Copy)]
enum Unit {
    Keep,
    Down,
    Up,
}

fn unit_back(kind: Unit, iv: Interval) -> Interval {
    match kind {
        Unit::Keep => hull(conv_interval(&ConvGeom::same3(1), iv), iv),
        Unit::Down => conv_interval(&ConvGeom::down2(), iv),
        Unit::Up => transposed_interval(&ConvGeom::up2(), iv),
    }
}

fn aspp_back(cfg: &NetworkConfig, mut iv: Interval) -> Interval {
    if cfg.no_aspp {
        return iv;
    }
    for _ in 0..cfg.aspp_groups {
        iv = cfg.aspp_rates.iter().fold(iv, |acc, &r| {
            hull(acc, conv_interval(&ConvGeom::same3(r), iv))
        });
    }
    iv
}

/// From the input of encoder block `level` back to the network input.
fn level_back(cfg: &NetworkConfig, level: usize, mut iv: Interval) -> Interval {
    for _ in 0..level {
        iv = unit_back(Unit::Down, iv);
        for _ in 0..UNITS_PER_BLOCK {
            iv = unit_back(Unit::Keep, iv);
        }
    }
    aspp_back(cfg, iv)
}

/// From the output of decoder block `j` back to the network input.
fn decoder_back(cfg: &NetworkConfig, j: usize, mut iv: Interval) -> Interval {
    for _ in 0..UNITS_PER_BLOCK {
        iv = unit_back(Unit::Keep, iv);
    }
    let level = cfg.encoder_levels - 1 - j;
    let up = unit_back(Unit::Up, iv);
    let through = if j == 0 {
        level_back(cfg, cfg.encoder_levels, up)
    } else {
        decoder_back(cfg, j - 1, up)
    };
    if cfg.has_skip(level) {
        hull(through, level_back(cfg, level, iv))
    } else {
        through
    }
}

/// Input columns (or rows) that can influence outputs `a..=b` on an unbounded image.
pub fn receptive_interval(cfg: &NetworkConfig, a: i64, b: i64) -> (i64, i64) {
    decoder_back(cfg, cfg.encoder_levels - 1, (a, b))
}

/// Largest single-pixel receptive field width over all output phases.
pub fn receptive_field(cfg: &NetworkConfig) -> usize {
    let m = cfg.spatial_multiple() as i64;
    let base = 1i64 << 20;
    (base..base + m)
        .map(|p| {
            let (lo, hi) = receptive_interval(cfg, p, p);
            (hi - lo + 1) as usize
        })
        .max()
        .unwrap_or(1)
}

/// Receptive field width of the input convolution plus the ASPP stack.
pub fn aspp_receptive_field(cfg: &NetworkConfig) -> usize {
    let (lo, hi) = aspp_back(cfg, (0, 0));
    (hi - lo + 1) as usize
}

/// A named intermediate tensor shape `[n, c, h, w]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub shape: [usize; 4],
}

/// Shapes of the main intermediate tensors for an `n x in_channels x h x w` input.
pub fn shape_trace(cfg: &NetworkConfig, n: usize, h: usize, w: usize) -> Result<Vec<Stage>> {
    cfg.validate()?;
    let m = cfg.spatial_multiple();
    if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(invalid!(
            "input size {h}x{w} must be a positive multiple of {m}"
        ));
    }
    let mut out = Vec::new();
    let mut push = |name: String, shape| out.push(Stage { name, shape });
    push("input".into(), [n, cfg.in_channels, h, w]);
    let d = cfg.base_depth;
    let (mut hh, mut ww) = (h, w);
    push("stem".into(), [n, d, hh, ww]);
    if !cfg.no_aspp {
        push("aspp".into(), [n, d, hh, ww]);
    }
    let down = ConvGeom::down2();
    for i in 0..cfg.encoder_levels {
        hh = down.out_len(hh)?;
        ww = down.out_len(ww)?;
        push(format!("enc.{i}"), [n, cfg.depth(i + 1), hh, ww]);
    }
    push("bottleneck".into(), [n, cfg.bottleneck_depth(), hh, ww]);
    let up = ConvGeom::up2();
    for j in 0..cfg.encoder_levels {
        hh = up.transpose_out_len(hh)?;
        ww = up.transpose_out_len(ww)?;
        push(
            format!("dec.{j}"),
            [n, cfg.depth(cfg.encoder_levels - 1 - j), hh, ww],
        );
    }
    push("output".into(), [n, 3, hh, ww]);
    Ok(out)
}

/// Parameter count derived from the layer structure alone.
pub fn param_count_formula(cfg: &NetworkConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let bn = |c: usize| 2 * c;
    let keep = |c: usize| bn(c) + conv(c, c, 3);
    let d = cfg.base_depth;
    let mut total = conv(cfg.in_channels, d, 1) + conv(d, 3, 1);
    if !cfg.no_aspp {
        let r = cfg.aspp_rates.len();
        total += cfg.aspp_groups * (r * conv(d, d, 3) + conv(r * d, d, 1));
    }
    for i in 0..cfg.encoder_levels {
        let c = cfg.depth(i);
        total += UNITS_PER_BLOCK * keep(c) + bn(c) + 2 * conv(c, 2 * c, 3);
    }
    for level in 0..cfg.encoder_levels {
        let c = cfg.depth(level);
        // transposed weights are [in, out, k, k]; the bias follows the output depth
        total += bn(2 * c) + 2 * conv(2 * c, c, 3) + UNITS_PER_BLOCK * keep(c);
        if cfg.has_skip(level) {
            total += conv(2 * c, c, 1);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dilated_conv_spans_65() {
        let (lo, hi) = conv_interval(&ConvGeom::same3(32), (0, 0));
        assert_eq!(hi - lo + 1, 65);
    }

    #[test]
    fn aspp_stack_is_at_least_193() {
        let cfg = NetworkConfig::desk(5, 5);
        assert_eq!(aspp_receptive_field(&cfg), 3 * 64 + 1);
        assert!(receptive_field(&cfg) > 193);
    }

    #[test]
    fn transposed_interval_is_adjoint_of_down() {
        // output o of up2 reads input i iff input i of down2 reads o
        let up = ConvGeom::up2();
        let down = ConvGeom::down2();
        for o in -5i64..12 {
            let (lo, hi) = transposed_interval(&up, (o, o));
            for i in -8i64..12 {
                let (a, b) = conv_interval(&down, (i, i));
                assert_eq!((lo..=hi).contains(&i), (a..=b).contains(&o), "o={o} i={i}");
            }
        }
    }

    #[test]
    fn ablation_changes_receptive_field() {
        let cfg = NetworkConfig::desk(5, 5);
        let no = NetworkConfig {
            no_aspp: true,
            ..cfg.clone()
        };
        assert!(receptive_field(&no) < receptive_field(&cfg));
        assert!(receptive_field(&no) > 65);
    }

    #[test]
    fn full_size_shapes() {
        let trace = shape_trace(&NetworkConfig::full(5, 5), 1, 224, 224).unwrap();
        let get = |n: &str| trace.iter().find(|s| s.name == n).unwrap().shape;
        assert_eq!(get("input"), [1, 75, 224, 224]);
        assert_eq!(get("bottleneck"), [1, 1024, 14, 14]);
        assert_eq!(get("output"), [1, 3, 224, 224]);
        let desk = shape_trace(&NetworkConfig::desk(5, 5), 1, 64, 64).unwrap();
        assert_eq!(
            desk.iter().find(|s| s.name == "bottleneck").unwrap().shape,
            [1, 128, 4, 4]
        );
        assert!(shape_trace(&NetworkConfig::desk(5, 5), 1, 60, 64).is_err());
    }
}

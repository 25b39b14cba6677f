//! The DeOccNet encoder-decoder.
//!
//! Layout: a 1x1 input convolution to depth `D`, a stack of residual atrous
//! spatial pyramid pooling (ASPP) groups, `L` encoder blocks that halve the
//! resolution and double the depth, `L` mirrored decoder blocks fed by skip
//! connections, and a 1x1 output convolution to RGB.
//!
//! Every unit of the encoder and decoder is `BN -> conv3x3 -> leaky ReLU`
//! added to a shortcut taken from the normalized input; the shortcut is the
//! identity unless the unit changes resolution, in which case it is a strided
//! (or transposed) convolution of its own.

mod analysis;
pub mod weights;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err};
use crate::nn::{ConvGeom, Mode, RunningStats, Tape, Tensor, Var};
use crate::rng::{derived_rng, domain};
use crate::{Result, Scalar};

pub use analysis::{
    aspp_receptive_field, conv_interval, param_count_formula, receptive_field, receptive_interval,
    shape_trace, transposed_interval, Stage,
};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Angular grid `[rows, cols]` of the input light field.
    pub angular: [usize; 2],
    /// `rows * cols * 3` stacked input channels.
    pub in_channels: usize,
    pub base_depth: usize,
    pub encoder_levels: usize,
    pub aspp_rates: Vec<usize>,
    pub aspp_groups: usize,
    pub leaky_slope: f64,
    /// Skip the ASPP stack entirely.
    #[serde(default)]
    pub no_aspp: bool,
    /// Drop the skip connection at full resolution.
    #[serde(default)]
    pub drop_outer_skip: bool,
}

impl NetworkConfig {
    /// Full-size configuration: depth 64.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self::with_depth(rows, cols, 64)
    }

    /// CPU-scale configuration: depth 8.
    pub fn desk(rows: usize, cols: usize) -> Self {
        Self::with_depth(rows, cols, 8)
    }

    pub fn with_depth(rows: usize, cols: usize, base_depth: usize) -> Self {
        Self {
            angular: [rows, cols],
            in_channels: rows * cols * 3,
            base_depth,
            encoder_levels: 4,
            aspp_rates: vec![1, 2, 4, 8, 16, 32],
            aspp_groups: 3,
            leaky_slope: 0.1,
            no_aspp: false,
            drop_outer_skip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [rows, cols] = self.angular;
        if rows == 0 || cols == 0 {
            return Err(invalid!(
                "angular grid must be non-empty, got {rows}x{cols}"
            ));
        }
        if self.in_channels != rows * cols * 3 {
            return Err(invalid!(
                "in_channels {} does not equal {rows}*{cols}*3",
                self.in_channels
            ));
        }
        if self.base_depth == 0 {
            return Err(invalid!("base_depth must be positive"));
        }
        if !(1..=8).contains(&self.encoder_levels) {
            return Err(invalid!(
                "encoder_levels must lie in 1..=8, got {}",
                self.encoder_levels
            ));
        }
        if !self.no_aspp {
            if self.aspp_groups == 0 || self.aspp_rates.is_empty() {
                return Err(invalid!("ASPP needs at least one group and one rate"));
            }
            if self.aspp_rates.contains(&0) {
                return Err(invalid!("ASPP rates must be positive"));
            }
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return Err(invalid!(
                "leaky_slope must lie in [0, 1), got {}",
                self.leaky_slope
            ));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.encoder_levels
    }

    pub fn bottleneck_depth(&self) -> usize {
        self.base_depth << self.encoder_levels
    }

    /// Depth of encoder block `i`'s input.
    fn depth(&self, i: usize) -> usize {
        self.base_depth << i
    }

    fn has_skip(&self, level: usize) -> bool {
        !(level == 0 && self.drop_outer_skip)
    }
}

/// A named parameter or buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
    geom: ConvGeom,
    transposed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Unit {
    norm: Norm,
    conv: Conv,
    shortcut: Option<Conv>,
}

#[derive(Debug, Clone, PartialEq)]
struct Group {
    branches: Vec<Conv>,
    fuse: Conv,
}

#[derive(Debug, Clone, PartialEq)]
struct Encoder {
    units: Vec<Unit>,
    down: Unit,
}

#[derive(Debug, Clone, PartialEq)]
struct Decoder {
    up: Unit,
    fuse: Option<Conv>,
    units: Vec<Unit>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    input: Conv,
    aspp: Vec<Group>,
    encoders: Vec<Encoder>,
    decoders: Vec<Decoder>,
    output: Conv,
}

/// Residual units per encoder and decoder block, besides the resampling unit.
pub const UNITS_PER_BLOCK: usize = 2;

/// Init multiplier for convs whose output is added to an identity path.
pub const RESIDUAL_INIT_SCALE: f64 = 0.1;
/// Init multiplier for the output conv weights.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;
/// Initial output bias: the middle of the `[0, 1]` pixel range.
pub const OUTPUT_INIT_BIAS: f64 = 0.5;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Resample {
    Keep,
    Down,
    Up,
}

struct Builder<T> {
    seed: u64,
    relu_gain: f64,
    params: Vec<NamedTensor<T>>,
    stats: Vec<(String, RunningStats)>,
}

impl<T: Scalar> Builder<T> {
    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(NamedTensor { name, value });
        self.params.len() - 1
    }

    /// He-normal weights with `gain / fan_in` variance, zero bias.
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        transposed: bool,
        activated: bool,
    ) -> Conv {
        self.scaled_conv(name, cin, cout, geom, transposed, activated, 1.0, 0.0)
    }

    /// [`Self::conv`] with the weights multiplied by `scale` and a constant bias.
    #[allow(clippy::too_many_arguments)]
    fn scaled_conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        transposed: bool,
        activated: bool,
        scale: f64,
        bias: f64,
    ) -> Conv {
        let k = geom.kernel;
        let shape = if transposed {
            [cin, cout, k, k]
        } else {
            [cout, cin, k, k]
        };
        let fan_in = if transposed {
            (cin * k * k) as f64 / (geom.stride * geom.stride) as f64
        } else {
            (cin * k * k) as f64
        };
        let gain = if activated { self.relu_gain } else { 1.0 };
        let std = scale * libm::sqrt(gain / fan_in);
        let mut rng = derived_rng(self.seed, domain::INIT, self.params.len() as u64);
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64(z * std)
            })
            .collect();
        let w = self.push(
            format!("{name}.weight"),
            Tensor::from_vec(shape.to_vec(), data).expect("shape matches data"),
        );
        let b = self.push(
            format!("{name}.bias"),
            Tensor::filled(&[cout], T::from_f64(bias)),
        );
        Conv {
            w,
            b,
            geom,
            transposed,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.push(format!("{name}.weight"), Tensor::filled(&[c], T::ONE));
        let beta = self.push(format!("{name}.bias"), Tensor::zeros(&[c]));
        self.stats.push((name.into(), RunningStats::new(c)));
        Norm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize, resample: Resample) -> Unit {
        let norm = self.norm(&format!("{name}.bn"), cin);
        let (geom, transposed) = match resample {
            Resample::Keep => (ConvGeom::same3(1), false),
            Resample::Down => (ConvGeom::down2(), false),
            Resample::Up => (ConvGeom::up2(), true),
        };
        // a branch added to an identity path starts small so the unit starts near identity
        let scale = if resample == Resample::Keep && cin == cout {
            RESIDUAL_INIT_SCALE
        } else {
            1.0
        };
        let conv = self.scaled_conv(
            &format!("{name}.conv"),
            cin,
            cout,
            geom,
            transposed,
            true,
            scale,
            0.0,
        );
        let shortcut = match resample {
            Resample::Keep if cin == cout => None,
            _ => Some(self.conv(
                &format!("{name}.shortcut"),
                cin,
                cout,
                geom,
                transposed,
                false,
            )),
        };
        Unit {
            norm,
            conv,
            shortcut,
        }
    }
}

fn build_layout<T: Scalar>(
    cfg: &NetworkConfig,
    seed: u64,
) -> (Layout, Vec<NamedTensor<T>>, Vec<(String, RunningStats)>) {
    let slope = cfg.leaky_slope;
    let mut b = Builder {
        seed,
        relu_gain: 2.0 / (1.0 + slope * slope),
        params: Vec::new(),
        stats: Vec::new(),
    };
    let d = cfg.base_depth;
    let input = b.conv(
        "input",
        cfg.in_channels,
        d,
        ConvGeom::pointwise(),
        false,
        false,
    );
    let mut aspp = Vec::new();
    if !cfg.no_aspp {
        for g in 0..cfg.aspp_groups {
            let branches = cfg
                .aspp_rates
                .iter()
                .enumerate()
                .map(|(k, &r)| {
                    b.conv(
                        &format!("aspp.{g}.branch{k}"),
                        d,
                        d,
                        ConvGeom::same3(r),
                        false,
                        true,
                    )
                })
                .collect();
            let fuse = b.scaled_conv(
                &format!("aspp.{g}.fuse"),
                d * cfg.aspp_rates.len(),
                d,
                ConvGeom::pointwise(),
                false,
                false,
                RESIDUAL_INIT_SCALE,
                0.0,
            );
            aspp.push(Group { branches, fuse });
        }
    }
    let levels = cfg.encoder_levels;
    let mut encoders = Vec::with_capacity(levels);
    for i in 0..levels {
        let di = cfg.depth(i);
        let units = (0..UNITS_PER_BLOCK)
            .map(|k| b.unit(&format!("enc.{i}.unit{k}"), di, di, Resample::Keep))
            .collect();
        let down = b.unit(&format!("enc.{i}.down"), di, 2 * di, Resample::Down);
        encoders.push(Encoder { units, down });
    }
    let mut decoders = Vec::with_capacity(levels);
    for j in 0..levels {
        let level = levels - 1 - j;
        let dout = cfg.depth(level);
        let up = b.unit(&format!("dec.{j}.up"), 2 * dout, dout, Resample::Up);
        let fuse = cfg.has_skip(level).then(|| {
            b.conv(
                &format!("dec.{j}.fuse"),
                2 * dout,
                dout,
                ConvGeom::pointwise(),
                false,
                false,
            )
        });
        let units = (0..UNITS_PER_BLOCK)
            .map(|k| b.unit(&format!("dec.{j}.unit{k}"), dout, dout, Resample::Keep))
            .collect();
        decoders.push(Decoder { up, fuse, units });
    }
    // starts near a flat mid-gray image rather than a large random one
    let output = b.scaled_conv(
        "output",
        d,
        3,
        ConvGeom::pointwise(),
        false,
        false,
        OUTPUT_INIT_SCALE,
        OUTPUT_INIT_BIAS,
    );
    (
        Layout {
            input,
            aspp,
            encoders,
            decoders,
            output,
        },
        b.params,
        b.stats,
    )
}

/// Handles produced by [`DeOccNet::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    pub bottleneck: Var,
    /// Tape handle of every parameter, in declaration order.
    pub params: Vec<Var>,
}

/// The network: a parameter list in declaration order plus batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DeOccNet<T: Scalar = f32> {
    config: NetworkConfig,
    layout: Layout,
    params: Vec<NamedTensor<T>>,
    stats: Vec<(String, RunningStats)>,
}

struct Ctx<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    vars: &'a [Var],
    stats: &'a mut [(String, RunningStats)],
    mode: Mode,
    slope: f64,
}

impl<T: Scalar> Ctx<'_, T> {
    fn conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        let (w, b) = (self.vars[c.w], self.vars[c.b]);
        if c.transposed {
            self.tape.conv2d_transpose(x, w, Some(b), c.geom)
        } else {
            self.tape.conv2d(x, w, Some(b), c.geom)
        }
    }

    fn unit(&mut self, u: &Unit, x: Var) -> Result<Var> {
        let (gamma, beta) = (self.vars[u.norm.gamma], self.vars[u.norm.beta]);
        let h = self
            .tape
            .batch_norm(x, gamma, beta, &mut self.stats[u.norm.stats].1, self.mode)?;
        let main = self.conv(&u.conv, h)?;
        let main = self.tape.leaky_relu(main, self.slope);
        let short = match &u.shortcut {
            Some(s) => self.conv(s, h)?,
            None => h,
        };
        self.tape.add(main, short)
    }

    fn group(&mut self, g: &Group, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(g.branches.len());
        for br in &g.branches {
            let y = self.conv(br, x)?;
            outs.push(self.tape.leaky_relu(y, self.slope));
        }
        let cat = self.tape.concat(&outs)?;
        let fused = self.conv(&g.fuse, cat)?;
        self.tape.add(fused, x)
    }
}

fn round_to_f32(stats: &mut RunningStats) {
    for v in stats.mean.iter_mut().chain(stats.var.iter_mut()) {
        *v = *v as f32 as f64;
    }
}

impl<T: Scalar> DeOccNet<T> {
    /// Builds a freshly initialized network; weights depend only on `cfg` and `seed`.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (layout, params, stats) = build_layout(&cfg, seed);
        Ok(Self {
            config: cfg,
            layout,
            params,
            stats,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Batch-norm statistics by layer name.
    pub fn running_stats(&self) -> &[(String, RunningStats)] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats)] {
        &mut self.stats
    }

    /// Checks an `[n, c, h, w]` input shape against the configuration.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(invalid!("network input must be rank 4, got {shape:?}"));
        };
        if c != self.config.in_channels {
            return Err(invalid!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            ));
        }
        let m = self.config.spatial_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(invalid!(
                "input size {h}x{w} must be a positive multiple of {m}"
            ));
        }
        Ok(())
    }

    /// Records the network on `tape`. In [`Mode::Train`] batch statistics are
    /// used and the running statistics updated (rounded to `f32` so they
    /// serialize exactly); [`Mode::Eval`] leaves them untouched.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Forward> {
        self.check_input(tape.value(x).shape())?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.param(p.value.clone()))
            .collect();
        let mut ctx = Ctx {
            tape,
            vars: &params,
            stats: &mut self.stats,
            mode,
            slope: self.config.leaky_slope,
        };
        let l = &self.layout;
        let mut h = ctx.conv(&l.input, x)?;
        for g in &l.aspp {
            h = ctx.group(g, h)?;
        }
        let mut skips = Vec::with_capacity(l.encoders.len());
        for e in &l.encoders {
            skips.push(h);
            for u in &e.units {
                h = ctx.unit(u, h)?;
            }
            h = ctx.unit(&e.down, h)?;
        }
        let bottleneck = h;
        for (j, dec) in l.decoders.iter().enumerate() {
            h = ctx.unit(&dec.up, h)?;
            if let Some(f) = &dec.fuse {
                let skip = skips[l.encoders.len() - 1 - j];
                let cat = ctx.tape.concat(&[h, skip])?;
                h = ctx.conv(f, cat)?;
            }
            for u in &dec.units {
                h = ctx.unit(u, h)?;
            }
        }
        let output = ctx.conv(&l.output, h)?;
        if mode == Mode::Train {
            self.stats.iter_mut().for_each(|(_, s)| round_to_f32(s));
        }
        Ok(Forward {
            output,
            bottleneck,
            params,
        })
    }

    /// Eval-mode prediction; does not touch the running statistics.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut scratch = self.clone();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = scratch.forward(&mut tape, xv, Mode::Eval)?;
        Ok(tape.value(f.output).clone())
    }

    /// Converts parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> DeOccNet<U> {
        DeOccNet {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            stats: self.stats.clone(),
        }
    }

    /// Replaces parameter values in declaration order.
    pub fn set_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(shape_err!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            ));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(shape_err!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                ));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }
}

//! Direct 2D convolution and its adjoints.
//!
//! Every output element is accumulated in `f64` in a fixed loop order, so
//! results are bitwise reproducible regardless of how the caller schedules work.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, shape_err};
use crate::{Result, Scalar};

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    /// Extra rows/cols appended by the transposed convolution.
    pub output_padding: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            dilation,
            padding,
            output_padding: 0,
        }
    }

    /// 3x3, stride 1, dilation `r`, padding `r`: preserves spatial size.
    pub const fn same3(dilation: usize) -> Self {
        Self::new(3, 1, dilation, dilation)
    }

    /// 1x1, stride 1.
    pub const fn pointwise() -> Self {
        Self::new(1, 1, 1, 0)
    }

    /// 3x3, stride 2, padding 1: halves even spatial sizes exactly.
    pub const fn down2() -> Self {
        Self::new(3, 2, 1, 1)
    }

    /// Transposed counterpart of [`ConvGeom::down2`]: doubles spatial size exactly.
    pub const fn up2() -> Self {
        Self {
            kernel: 3,
            stride: 2,
            dilation: 1,
            padding: 1,
            output_padding: 1,
        }
    }

    #[inline]
    pub fn extent(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(invalid!(
                "kernel, stride and dilation must be positive: {self:?}"
            ));
        }
        if self.output_padding >= self.stride.max(self.dilation) {
            return Err(invalid!(
                "output padding must be smaller than stride or dilation: {self:?}"
            ));
        }
        Ok(())
    }

    /// Output length of a forward convolution over an input of length `len`.
    pub fn out_len(&self, len: usize) -> Result<usize> {
        self.validate()?;
        let padded = len + 2 * self.padding;
        if padded < self.extent() {
            return Err(invalid!(
                "input length {len} with padding {} is smaller than kernel extent {}",
                self.padding,
                self.extent()
            ));
        }
        Ok((padded - self.extent()) / self.stride + 1)
    }

    /// Output length of a transposed convolution over an input of length `len`.
    pub fn transpose_out_len(&self, len: usize) -> Result<usize> {
        self.validate()?;
        if len == 0 {
            return Err(invalid!("transposed convolution of an empty input"));
        }
        let full = (len - 1) * self.stride + self.extent() + self.output_padding;
        full.checked_sub(2 * self.padding)
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid!("transposed convolution output is empty for length {len}"))
    }
}

/// Range of output indices `o` with `0 <= o*stride + offset < in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

fn check_weight<T: Scalar>(w: &Tensor<T>, geom: &ConvGeom) -> Result<(usize, usize)> {
    match w.shape() {
        &[a, b, kh, kw] if kh == geom.kernel && kw == geom.kernel => Ok((a, b)),
        s => Err(shape_err!(
            "weight shape {:?} does not match a {}x{} kernel",
            s,
            geom.kernel,
            geom.kernel
        )),
    }
}

/// Cross-correlation `y = x * w` (no bias). `w` is `[out, in, k, k]`.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, geom: &ConvGeom) -> Result<Tensor<T>> {
    let (n, ci, h, wd) = x.dims4()?;
    let (co, wi) = check_weight(w, geom)?;
    if wi != ci {
        return Err(invalid!(
            "convolution expects {wi} input channels, got {ci}"
        ));
    }
    let (oh, ow) = (geom.out_len(h)?, geom.out_len(wd)?);
    let k = geom.kernel;
    let (s, d, p) = (geom.stride, geom.dilation, geom.padding as isize);
    let xd = x.data();
    let wdata = w.data();
    let mut out = Vec::with_capacity(n * co * oh * ow);
    let mut acc = vec![0.0f64; oh * ow];
    for b in 0..n {
        for oc in 0..co {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ic in 0..ci {
                let plane = &xd[(b * ci + ic) * h * wd..(b * ci + ic + 1) * h * wd];
                for ky in 0..k {
                    let oy_off = (ky * d) as isize - p;
                    let (y0, y1) = valid_range(oh, h, s, oy_off);
                    for kx in 0..k {
                        let wv = wdata[((oc * ci + ic) * k + ky) * k + kx].to_f64();
                        let ox_off = (kx * d) as isize - p;
                        let (x0, x1) = valid_range(ow, wd, s, ox_off);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = (oy * s) as isize + oy_off;
                            let row = &plane[iy as usize * wd..(iy as usize + 1) * wd];
                            let dst = &mut acc[oy * ow + x0..oy * ow + x1];
                            if s == 1 {
                                let start = (x0 as isize + ox_off) as usize;
                                let src = &row[start..start + (x1 - x0)];
                                for (a, &v) in dst.iter_mut().zip(src) {
                                    *a += wv * v.to_f64();
                                }
                            } else {
                                for (i, a) in dst.iter_mut().enumerate() {
                                    let ix = ((x0 + i) * s) as isize + ox_off;
                                    *a += wv * row[ix as usize].to_f64();
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| T::from_f64(v)));
        }
    }
    Tensor::from_vec(vec![n, co, oh, ow], out)
}

/// Adjoint of [`conv_forward`] with respect to its input: scatters `dy`
/// (`[n, out, oh, ow]`) back onto an input of spatial size `in_hw`.
pub fn conv_backward_input<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    geom: &ConvGeom,
    in_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, co, oh, ow) = dy.dims4()?;
    let (wo, ci) = check_weight(w, geom)?;
    if wo != co {
        return Err(invalid!(
            "adjoint convolution expects {wo} channels, got {co}"
        ));
    }
    let (h, wd) = in_hw;
    if geom.out_len(h)? != oh || geom.out_len(wd)? != ow {
        return Err(shape_err!(
            "gradient {oh}x{ow} does not match input {h}x{wd} under {geom:?}"
        ));
    }
    let k = geom.kernel;
    let (s, d, p) = (geom.stride, geom.dilation, geom.padding as isize);
    let gd = dy.data();
    let wdata = w.data();
    let mut out = Vec::with_capacity(n * ci * h * wd);
    let mut acc = vec![0.0f64; h * wd];
    for b in 0..n {
        for ic in 0..ci {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for oc in 0..co {
                let plane = &gd[(b * co + oc) * oh * ow..(b * co + oc + 1) * oh * ow];
                for ky in 0..k {
                    let oy_off = (ky * d) as isize - p;
                    let (y0, y1) = valid_range(oh, h, s, oy_off);
                    for kx in 0..k {
                        let wv = wdata[((oc * ci + ic) * k + ky) * k + kx].to_f64();
                        let ox_off = (kx * d) as isize - p;
                        let (x0, x1) = valid_range(ow, wd, s, ox_off);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = ((oy * s) as isize + oy_off) as usize;
                            let src = &plane[oy * ow + x0..oy * ow + x1];
                            if s == 1 {
                                let start = iy * wd + (x0 as isize + ox_off) as usize;
                                let dst = &mut acc[start..start + (x1 - x0)];
                                for (a, &g) in dst.iter_mut().zip(src) {
                                    *a += wv * g.to_f64();
                                }
                            } else {
                                for (i, &g) in src.iter().enumerate() {
                                    let ix = ((x0 + i) * s) as isize + ox_off;
                                    acc[iy * wd + ix as usize] += wv * g.to_f64();
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| T::from_f64(v)));
        }
    }
    Tensor::from_vec(vec![n, ci, h, wd], out)
}

/// Fixed-order dot product with eight interleaved partial sums.
#[inline]
fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i].to_f64() * y[i].to_f64();
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x.to_f64() * y.to_f64();
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

/// Gradient of [`conv_forward`] with respect to the weights.
pub fn conv_backward_weight<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (n, ci, h, wd) = x.dims4()?;
    let (n2, co, oh, ow) = dy.dims4()?;
    if n != n2 || geom.out_len(h)? != oh || geom.out_len(wd)? != ow {
        return Err(shape_err!(
            "weight gradient: input {:?} and output gradient {:?} disagree",
            x.shape(),
            dy.shape()
        ));
    }
    let k = geom.kernel;
    let (s, d, p) = (geom.stride, geom.dilation, geom.padding as isize);
    let xd = x.data();
    let gd = dy.data();
    let mut out = vec![T::ZERO; co * ci * k * k];
    let mut gather: Vec<T> = Vec::new();
    for oc in 0..co {
        for ic in 0..ci {
            for ky in 0..k {
                let oy_off = (ky * d) as isize - p;
                let (y0, y1) = valid_range(oh, h, s, oy_off);
                for kx in 0..k {
                    let ox_off = (kx * d) as isize - p;
                    let (x0, x1) = valid_range(ow, wd, s, ox_off);
                    let mut acc = 0.0f64;
                    if x0 < x1 {
                        for b in 0..n {
                            let xp = &xd[(b * ci + ic) * h * wd..(b * ci + ic + 1) * h * wd];
                            let gp = &gd[(b * co + oc) * oh * ow..(b * co + oc + 1) * oh * ow];
                            for oy in y0..y1 {
                                let iy = ((oy * s) as isize + oy_off) as usize;
                                let g = &gp[oy * ow + x0..oy * ow + x1];
                                if s == 1 {
                                    let start = iy * wd + (x0 as isize + ox_off) as usize;
                                    acc += dot_f64(g, &xp[start..start + (x1 - x0)]);
                                } else {
                                    gather.clear();
                                    gather.extend((x0..x1).map(|ox| {
                                        xp[iy * wd + ((ox * s) as isize + ox_off) as usize]
                                    }));
                                    acc += dot_f64(g, &gather);
                                }
                            }
                        }
                    }
                    out[((oc * ci + ic) * k + ky) * k + kx] = T::from_f64(acc);
                }
            }
        }
    }
    Tensor::from_vec(vec![co, ci, k, k], out)
}

/// Adds a per-channel bias in place to an `[n, c, h, w]` tensor.
pub fn add_bias<T: Scalar>(y: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let (n, c, h, w) = y.dims4()?;
    if bias.numel() != c {
        return Err(shape_err!(
            "bias has {} values for {c} channels",
            bias.numel()
        ));
    }
    let hw = h * w;
    let bd = bias.data().to_vec();
    for (i, chunk) in y.data_mut().chunks_exact_mut(hw).enumerate() {
        let bv = bd[i % c];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
    debug_assert_eq!(n * c * hw, y.numel());
    Ok(())
}

/// Per-channel sum of an `[n, c, h, w]` tensor (bias gradient).
pub fn channel_sum<T: Scalar>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, h, w) = dy.dims4()?;
    let mut acc = vec![0.0f64; c];
    for (i, chunk) in dy.data().chunks_exact(h * w).enumerate() {
        acc[i % c] += chunk.iter().map(|v| v.to_f64()).sum::<f64>();
    }
    Tensor::from_vec(vec![c], acc.into_iter().map(T::from_f64).collect())
}

/// `y = conv(x, w) + b`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let mut y = conv_forward(x, w, geom)?;
    if let Some(b) = b {
        add_bias(&mut y, b)?;
    }
    Ok(y)
}

/// Transposed convolution. `w` is `[in, out, k, k]`; the result is the adjoint
/// of `conv2d` with the same weights and geometry, plus bias.
pub fn conv2d_transpose<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (_, _, h, wd) = x.dims4()?;
    let out_hw = (geom.transpose_out_len(h)?, geom.transpose_out_len(wd)?);
    let mut y = conv_backward_input(x, w, geom, out_hw)?;
    if let Some(b) = b {
        add_bias(&mut y, b)?;
    }
    Ok(y)
}

/// A convolution layer description with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T: Scalar = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    /// `[out, in, k, k]` for forward convolutions, `[in, out, k, k]` for transposed ones.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub transposed: bool,
}

impl<T: Scalar> ConvSpec<T> {
    pub fn new(in_channels: usize, out_channels: usize, geom: ConvGeom, transposed: bool) -> Self {
        let k = geom.kernel;
        let wshape = if transposed {
            [in_channels, out_channels, k, k]
        } else {
            [out_channels, in_channels, k, k]
        };
        Self {
            in_channels,
            out_channels,
            geom,
            weight: Tensor::zeros(&wshape),
            bias: Tensor::zeros(&[out_channels]),
            transposed,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.in_channels {
            return Err(invalid!(
                "layer expects {} input channels, got {c}",
                self.in_channels
            ));
        }
        if self.transposed {
            conv2d_transpose(x, &self.weight, Some(&self.bias), &self.geom)
        } else {
            conv2d(x, &self.weight, Some(&self.bias), &self.geom)
        }
    }
}

//! Non-convolutional kernels: batch normalization, leaky ReLU, channel
//! concatenation, elementwise addition, center cropping and the MSE loss.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{invalid, shape_err};
use crate::{Result, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of a batch-norm layer. Fresh layers start at mean 0 and
/// variance 1, which eval mode uses until a training step updates them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Whether batch statistics or running statistics normalize the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values kept from the forward pass for the batch-norm backward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnSaved<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
}

/// Per-channel `(mean, biased variance)` of an `[n, c, h, w]` tensor.
pub fn channel_moments<T: Scalar>(x: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = x.dims4()?;
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0f64; c];
    for (i, chunk) in x.data().chunks_exact(h * w).enumerate() {
        mean[i % c] += chunk.iter().map(|v| v.to_f64()).sum::<f64>();
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0f64; c];
    for (i, chunk) in x.data().chunks_exact(h * w).enumerate() {
        let mu = mean[i % c];
        var[i % c] += chunk
            .iter()
            .map(|v| {
                let d = v.to_f64() - mu;
                d * d
            })
            .sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= m);
    Ok((mean, var))
}

/// Batch normalization over `[n, c, h, w]`.
///
/// In [`Mode::Train`] the batch moments normalize the input and `running` is
/// updated with momentum [`BN_MOMENTUM`] (unbiased variance). In
/// [`Mode::Eval`] the running statistics are used and left untouched.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats,
    mode: Mode,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.numel() != c || beta.numel() != c || running.channels() != c {
        return Err(shape_err!(
            "batch norm parameters do not match {c} channels"
        ));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = channel_moments(x)?;
            let m = (n * h * w) as f64;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ch in 0..c {
                running.mean[ch] = (1.0 - BN_MOMENTUM) * running.mean[ch] + BN_MOMENTUM * mean[ch];
                running.var[ch] =
                    (1.0 - BN_MOMENTUM) * running.var[ch] + BN_MOMENTUM * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.clone(), running.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
    let hw = h * w;
    let mut xhat = Vec::with_capacity(x.numel());
    let mut y = Vec::with_capacity(x.numel());
    for (i, chunk) in x.data().chunks_exact(hw).enumerate() {
        let ch = i % c;
        let (mu, is) = (mean[ch], inv_std[ch]);
        let (g, b) = (gamma.data()[ch].to_f64(), beta.data()[ch].to_f64());
        for &v in chunk {
            let xh = (v.to_f64() - mu) * is;
            xhat.push(T::from_f64(xh));
            y.push(T::from_f64(g * xh + b));
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::from_vec(shape.clone(), y)?,
        BnSaved {
            xhat: Tensor::from_vec(shape, xhat)?,
            inv_std,
            mode,
        },
    ))
}

/// Gradients `(dx, dgamma, dbeta)` of [`batch_norm`].
pub fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (i, (g, xh)) in dy
        .data()
        .chunks_exact(hw)
        .zip(saved.xhat.data().chunks_exact(hw))
        .enumerate()
    {
        let ch = i % c;
        for (&gv, &xv) in g.iter().zip(xh) {
            sum_dy[ch] += gv.to_f64();
            sum_dy_xhat[ch] += gv.to_f64() * xv.to_f64();
        }
    }
    let mut dx = Vec::with_capacity(dy.numel());
    for (i, (g, xh)) in dy
        .data()
        .chunks_exact(hw)
        .zip(saved.xhat.data().chunks_exact(hw))
        .enumerate()
    {
        let ch = i % c;
        let gam = gamma.data()[ch].to_f64();
        let is = saved.inv_std[ch];
        match saved.mode {
            Mode::Train => {
                let (s1, s2) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                for (&gv, &xv) in g.iter().zip(xh) {
                    dx.push(T::from_f64(
                        gam * is * (gv.to_f64() - s1 - xv.to_f64() * s2),
                    ));
                }
            }
            Mode::Eval => {
                for &gv in g {
                    dx.push(T::from_f64(gam * is * gv.to_f64()));
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(dy.shape().to_vec(), dx)?,
        Tensor::from_vec(vec![c], sum_dy_xhat.into_iter().map(T::from_f64).collect())?,
        Tensor::from_vec(vec![c], sum_dy.into_iter().map(T::from_f64).collect())?,
    ))
}

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    x.map(|v| T::from_f64(leaky_relu_scalar(v.to_f64(), slope)))
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v >= T::ZERO { g } else { s * g })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Concatenates `[n, c_i, h, w]` tensors along the channel axis.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| invalid!("concat of zero tensors"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err!(
                "concat of {:?} and {:?}",
                first.shape(),
                p.shape()
            ));
        }
        total += pc;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[b * pc * hw..(b + 1) * pc * hw]);
        }
    }
    Tensor::from_vec(vec![n, total, h, w], data)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn concat_backward<T: Scalar>(dy: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = dy.dims4()?;
    if channels.iter().sum::<usize>() != c {
        return Err(shape_err!(
            "concat gradient has {c} channels, parts sum to {}",
            channels.iter().sum::<usize>()
        ));
    }
    let hw = h * w;
    let mut out: Vec<Vec<T>> = channels
        .iter()
        .map(|&pc| Vec::with_capacity(n * pc * hw))
        .collect();
    for b in 0..n {
        let mut off = 0;
        for (k, &pc) in channels.iter().enumerate() {
            let start = (b * c + off) * hw;
            out[k].extend_from_slice(&dy.data()[start..start + pc * hw]);
            off += pc;
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(d, &pc)| Tensor::from_vec(vec![n, pc, h, w], d))
        .collect()
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("add of {:?} and {:?}", a.shape(), b.shape()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

/// Crops the spatial center of `x` to `h x w`.
pub fn crop_center<T: Scalar>(
    x: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<(Tensor<T>, usize, usize)> {
    let (n, c, xh, xw) = x.dims4()?;
    if h > xh || w > xw {
        return Err(shape_err!("cannot crop {xh}x{xw} to {h}x{w}"));
    }
    let (top, left) = ((xh - h) / 2, (xw - w) / 2);
    let mut data = Vec::with_capacity(n * c * h * w);
    for plane in x.data().chunks_exact(xh * xw) {
        for y in 0..h {
            let r = (top + y) * xw + left;
            data.extend_from_slice(&plane[r..r + w]);
        }
    }
    Ok((Tensor::from_vec(vec![n, c, h, w], data)?, top, left))
}

pub fn crop_backward<T: Scalar>(
    dy: &Tensor<T>,
    full: &[usize],
    top: usize,
    left: usize,
) -> Result<Tensor<T>> {
    let (_, _, h, w) = dy.dims4()?;
    let (xh, xw) = (full[2], full[3]);
    let mut out = Tensor::zeros(full);
    for (src, dst) in dy
        .data()
        .chunks_exact(h * w)
        .zip(out.data_mut().chunks_exact_mut(xh * xw))
    {
        for y in 0..h {
            let r = (top + y) * xw + left;
            dst[r..r + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    Ok(out)
}

/// Mean of squared differences.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(shape_err!(
            "mse of {:?} and {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    if pred.numel() == 0 {
        return Err(invalid!("mse of empty tensors"));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum();
    Ok(s / pred.numel() as f64)
}

/// `d mse / d pred = 2 (pred - target) / numel`.
pub fn mse_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: f64) -> Tensor<T> {
    let k = 2.0 * upstream / pred.numel() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| T::from_f64(k * (a.to_f64() - b.to_f64())))
        .collect();
    Tensor::from_vec(pred.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_values_and_slopes() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![1.0, -1.0, -2.0]).unwrap();
        let y = leaky_relu(&x, 0.1);
        assert_eq!(y.data()[0], 1.0);
        assert!((y.data()[1] + 0.1).abs() < 1e-15);
        let g = leaky_relu_backward(
            &Tensor::from_vec(vec![2], vec![-2.0, 3.0]).unwrap(),
            &Tensor::filled(&[2], 1.0),
            0.1,
        );
        assert_eq!(g.data(), &[0.1, 1.0]);
    }

    #[test]
    fn bn_standardized_input_unchanged() {
        // two values per channel: +-1 has mean 0 and biased variance 1
        let x = Tensor::<f64>::from_vec(vec![2, 1, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut rs = RunningStats::new(1);
        let (y, _) = batch_norm(
            &x,
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &mut rs,
            Mode::Train,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn bn_constant_channel_maps_to_beta() {
        let x = Tensor::<f64>::filled(&[2, 1, 3, 3], 4.2);
        let mut rs = RunningStats::new(1);
        let (y, _) = batch_norm(
            &x,
            &Tensor::filled(&[1], 2.0),
            &Tensor::filled(&[1], 0.3),
            &mut rs,
            Mode::Train,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn bn_eval_uses_fresh_stats() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 1, 3], vec![0.5, -2.0, 3.0]).unwrap();
        let mut rs = RunningStats::new(1);
        let (y, _) = batch_norm(
            &x,
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &mut rs,
            Mode::Eval,
        )
        .unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-12);
        }
        assert_eq!(rs, RunningStats::new(1));
    }

    #[test]
    fn bn_running_update() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let mut rs = RunningStats::new(1);
        batch_norm(
            &x,
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &mut rs,
            Mode::Train,
        )
        .unwrap();
        assert!((rs.mean[0] - 0.2).abs() < 1e-12);
        // biased var 1, unbiased 2
        assert!((rs.var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::<f64>::filled(&[2, 64, 2, 2], 1.0);
        let b = Tensor::<f64>::filled(&[2, 64, 2, 2], 2.0);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 128, 2, 2]);
        let parts = concat_backward(&c, &[64, 64]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(concat(&[&a, &Tensor::zeros(&[2, 1, 3, 2])]).is_err());
    }

    #[test]
    fn add_zero_is_identity() {
        let a = Tensor::<f64>::from_vec(vec![1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(add(&a, &Tensor::zeros(&[1, 1, 1, 3])).unwrap(), a);
        assert!(add(&a, &Tensor::zeros(&[1, 1, 3, 1])).is_err());
    }

    #[test]
    fn mse_closed_forms() {
        let p = Tensor::<f64>::filled(&[1, 3, 4, 4], 0.6);
        let t = Tensor::<f64>::filled(&[1, 3, 4, 4], 0.5);
        assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
        assert!((mse_loss(&p, &t).unwrap() - 0.01).abs() < 1e-12);
        assert!(mse_loss(&p, &Tensor::zeros(&[1, 3, 4, 5])).is_err());
    }

    #[test]
    fn crop_roundtrip() {
        let x =
            Tensor::<f64>::from_vec(vec![1, 1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let (y, top, left) = crop_center(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 9.0, 10.0]);
        let back = crop_backward(&y, x.shape(), top, left).unwrap();
        assert_eq!(back.data()[5], 5.0);
        assert_eq!(back.data()[0], 0.0);
    }
}

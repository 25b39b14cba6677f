//! Light-field operations: sub-pixel view warping, rectification, channel
//! stacking, patch extraction and 2x upsampling.
//!
//! Bilinear sampling treats pixel centers as integer coordinates. Samples that
//! fall outside the source image contribute zero, and each output pixel carries
//! the fraction of its bilinear support that was in bounds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::image::{AngularCoord, Disparity, Image, LightField};
use crate::nn::Tensor;
use crate::Result;

/// A warped image together with its per-pixel validity weight in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub image: Image,
    /// Row-major `height x width` fraction of in-bounds bilinear support.
    pub validity: Vec<f32>,
}

/// Bilinear taps along one axis for a constant shift: for every output index,
/// the two source indices and their weights (zeroed when out of bounds).
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
}

impl AxisTaps {
    fn new(len: usize, shift: f64) -> Self {
        let mut lo = Vec::with_capacity(len);
        let mut hi = Vec::with_capacity(len);
        let mut w_lo = Vec::with_capacity(len);
        let mut w_hi = Vec::with_capacity(len);
        for i in 0..len {
            let src = i as f64 - shift;
            let base = libm::floor(src);
            let frac = src - base;
            let b = base as i64;
            let in_lo = b >= 0 && b < len as i64;
            let in_hi = b + 1 >= 0 && b + 1 < len as i64;
            lo.push(if in_lo { b as usize } else { 0 });
            hi.push(if in_hi { (b + 1) as usize } else { 0 });
            w_lo.push(if in_lo { 1.0 - frac } else { 0.0 });
            w_hi.push(if in_hi { frac } else { 0.0 });
        }
        Self { lo, hi, w_lo, w_hi }
    }

    #[inline]
    fn validity(&self, i: usize) -> f64 {
        self.w_lo[i] + self.w_hi[i]
    }
}

/// Translates `img` by `(d * drow, d * dcol)` pixels: `out(y, x) = img(y - d*drow, x - d*dcol)`.
pub fn shift_view(img: &Image, offset: (i64, i64), d: Disparity) -> Result<Shifted> {
    shift_by(
        img,
        d.value() * offset.0 as f64,
        d.value() * offset.1 as f64,
    )
}

/// Translates `img` by `(dy, dx)` pixels with bilinear interpolation.
pub fn shift_by(img: &Image, dy: f64, dx: f64) -> Result<Shifted> {
    if !dy.is_finite() || !dx.is_finite() {
        return Err(invalid!("shift ({dy}, {dx}) is not finite"));
    }
    let (h, w, c) = img.dims();
    let ty = AxisTaps::new(h, dy);
    let tx = AxisTaps::new(w, dx);
    let mut out = Image::zeros(h, w, c);
    for ch in 0..c {
        let src = img.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            let (wy0, wy1) = (ty.w_lo[y], ty.w_hi[y]);
            let r0 = ty.lo[y] * w;
            let r1 = ty.hi[y] * w;
            for x in 0..w {
                let (wx0, wx1) = (tx.w_lo[x], tx.w_hi[x]);
                let (x0, x1) = (tx.lo[x], tx.hi[x]);
                let mut acc = 0.0f64;
                if wy0 > 0.0 {
                    if wx0 > 0.0 {
                        acc += wy0 * wx0 * src[r0 + x0] as f64;
                    }
                    if wx1 > 0.0 {
                        acc += wy0 * wx1 * src[r0 + x1] as f64;
                    }
                }
                if wy1 > 0.0 {
                    if wx0 > 0.0 {
                        acc += wy1 * wx0 * src[r1 + x0] as f64;
                    }
                    if wx1 > 0.0 {
                        acc += wy1 * wx1 * src[r1 + x1] as f64;
                    }
                }
                dst[y * w + x] = acc as f32;
            }
        }
    }
    let mut validity = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            validity[y * w + x] = (ty.validity(y) * tx.validity(x)) as f32;
        }
    }
    Ok(Shifted {
        image: out,
        validity,
    })
}

/// Border margins `(rows, cols)` removed by [`rectify`] at disparity `d0`.
pub fn rectify_margins(lf: &LightField, d0: Disparity) -> (usize, usize) {
    let (mr, mc) = lf.max_offsets();
    let a = libm::fabs(d0.value());
    (
        libm::ceil(a * mr as f64) as usize,
        libm::ceil(a * mc as f64) as usize,
    )
}

/// Shifts every view toward the center by `d0 * offset` and crops all views to
/// the common fully valid region, so content at disparity `d0` ends up with
/// zero disparity.
pub fn rectify(lf: &LightField, d0: Disparity) -> Result<LightField> {
    lf.center()?;
    let (my, mx) = rectify_margins(lf, d0);
    let (h, w) = (lf.height(), lf.width());
    if 2 * my >= h || 2 * mx >= w {
        return Err(invalid!(
            "rectification at disparity {} leaves an empty crop of a {h}x{w} view",
            d0.value()
        ));
    }
    let neg = Disparity::new(-d0.value())?;
    lf.map_views(|coord, view| {
        let off = lf.offset(coord)?;
        let shifted = if off == (0, 0) || d0.value() == 0.0 {
            view.clone()
        } else {
            shift_view(view, off, neg)?.image
        };
        shifted.crop(my, mx, h - 2 * my, w - 2 * mx)
    })
}

/// Concatenates all views, row-major by angular coordinate, into a
/// `(rows*cols*channels) x H x W` tensor.
pub fn stack_channels(lf: &LightField) -> Tensor<f32> {
    let (h, w, c) = (lf.height(), lf.width(), lf.channels());
    let mut data = Vec::with_capacity(lf.view_count() * c * h * w);
    for v in lf.views() {
        data.extend_from_slice(v.data());
    }
    Tensor::from_vec(vec![lf.view_count() * c, h, w], data).expect("stacked shape is consistent")
}

/// Inverse of [`stack_channels`].
pub fn unstack_channels(
    t: &Tensor<f32>,
    rows: usize,
    cols: usize,
    channels: usize,
) -> Result<LightField> {
    let s = t.shape();
    if s.len() != 3 || s[0] != rows * cols * channels {
        return Err(shape_err!(
            "cannot unstack tensor {:?} into {rows}x{cols} views of {channels} channels",
            s
        ));
    }
    let (h, w) = (s[1], s[2]);
    let n = channels * h * w;
    let views = t
        .data()
        .chunks_exact(n)
        .map(|chunk| Image::new(h, w, channels, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    LightField::new(rows, cols, views)
}

/// Crops the same window from every view.
pub fn crop_lf(lf: &LightField, top: usize, left: usize, h: usize, w: usize) -> Result<LightField> {
    lf.map_views(|_, v| v.crop(top, left, h, w))
}

/// An aligned light-field / groundtruth patch pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub top: usize,
    pub left: usize,
    pub lf: LightField,
    pub gt: Image,
}

/// Number of patch positions along an axis of length `len`.
pub fn patch_count(len: usize, patch: usize, stride: usize) -> usize {
    if patch == 0 || stride == 0 || patch > len {
        0
    } else {
        (len - patch) / stride + 1
    }
}

/// Top-left corners of every patch, row-major.
pub fn patch_positions(h: usize, w: usize, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    let (ny, nx) = (patch_count(h, patch, stride), patch_count(w, patch, stride));
    let mut out = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            out.push((i * stride, j * stride));
        }
    }
    out
}

/// Cuts `patch x patch` windows with the given stride from every view and from
/// the groundtruth at identical positions.
pub fn extract_patches(
    lf: &LightField,
    gt: &Image,
    patch: usize,
    stride: usize,
) -> Result<Vec<Patch>> {
    if stride == 0 {
        return Err(invalid!("patch stride must be at least 1"));
    }
    if patch == 0 || patch > lf.height() || patch > lf.width() {
        return Err(invalid!(
            "patch size {patch} does not fit views of {}x{}",
            lf.height(),
            lf.width()
        ));
    }
    if gt.height() != lf.height() || gt.width() != lf.width() {
        return Err(shape_err!(
            "groundtruth {}x{} does not match views {}x{}",
            gt.height(),
            gt.width(),
            lf.height(),
            lf.width()
        ));
    }
    patch_positions(lf.height(), lf.width(), patch, stride)
        .into_iter()
        .map(|(top, left)| {
            Ok(Patch {
                top,
                left,
                lf: crop_lf(lf, top, left, patch, patch)?,
                gt: gt.crop(top, left, patch, patch)?,
            })
        })
        .collect()
}

/// Source taps for 2x linear upsampling with half-pixel centers and edge clamping.
fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling (half-pixel centers, edge clamped).
pub fn upsample2x(img: &Image) -> Result<Image> {
    let (h, w, c) = img.dims();
    if h == 0 || w == 0 {
        return Err(invalid!("cannot upsample an empty image"));
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = Image::zeros(2 * h, 2 * w, c);
    for ch in 0..c {
        let src = img.plane(ch);
        let dst = out.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = (1.0 - fx) * src[y0 * w + x0] as f64 + fx * src[y0 * w + x1] as f64;
                let bot = (1.0 - fx) * src[y1 * w + x0] as f64 + fx * src[y1 * w + x1] as f64;
                dst[oy * 2 * w + ox] = ((1.0 - fy) * top + fy * bot) as f32;
            }
        }
    }
    Ok(out)
}

pub fn upsample_lf2x(lf: &LightField) -> Result<LightField> {
    lf.map_views(|_, v| upsample2x(v))
}

/// Applies [`shift_view`] to every view with its own angular offset.
pub fn shift_all(lf: &LightField, d: Disparity) -> Result<Vec<Shifted>> {
    lf.coords()
        .map(|coord: AngularCoord| {
            let off = lf.offset(coord)?;
            shift_view(lf.view(coord), off, d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f32]) -> Image {
        Image::new(1, vals.len(), 1, vals.to_vec()).unwrap()
    }

    fn disp(v: f64) -> Disparity {
        Disparity::new(v).unwrap()
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = Image::from_fn(5, 7, 3, |c, y, x| (c * 31 + y * 7 + x) as f32 * 0.01);
        let s = shift_view(&img, (2, -1), Disparity::ZERO).unwrap();
        assert_eq!(s.image, img);
        assert!(s.validity.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integer_shift_moves_content_and_flags_border() {
        let s = shift_view(&row(&[0.0, 1.0, 2.0, 3.0]), (0, 1), disp(1.0)).unwrap();
        assert_eq!(s.image.data(), &[0.0, 0.0, 1.0, 2.0]);
        assert_eq!(s.validity, vec![0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_pixel_shift_interpolates() {
        let s = shift_view(&row(&[0.0, 1.0, 2.0, 3.0]), (0, 1), disp(0.5)).unwrap();
        assert_eq!(&s.image.data()[1..], &[0.5, 1.5, 2.5]);
        assert_eq!(s.validity[0], 0.5);
        assert_eq!(s.validity[1], 1.0);
    }

    #[test]
    fn negative_shift_reads_from_the_right() {
        let s = shift_view(&row(&[0.0, 1.0, 2.0, 3.0]), (0, 1), disp(-1.0)).unwrap();
        assert_eq!(s.image.data(), &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(s.validity[3], 0.0);
    }

    #[test]
    fn non_finite_disparity_is_rejected() {
        assert!(Disparity::new(f64::NAN).is_err());
        assert!(shift_by(&row(&[1.0]), f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn constant_image_interior_unchanged_by_fractional_shift() {
        let img = Image::filled(9, 9, 1, 0.7);
        let s = shift_by(&img, 1.3, -0.6).unwrap();
        for y in 3..7 {
            for x in 3..7 {
                assert!((s.image.get(0, y, x) - 0.7).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rectify_zero_is_identity() {
        let lf = LightField::from_fn(3, 3, |c| Image::filled(6, 6, 1, (c.row * 3 + c.col) as f32))
            .unwrap();
        assert_eq!(rectify(&lf, Disparity::ZERO).unwrap(), lf);
    }

    #[test]
    fn rectify_crop_size() {
        let lf = LightField::from_fn(5, 5, |_| Image::zeros(100, 100, 1)).unwrap();
        let r = rectify(&lf, disp(2.0)).unwrap();
        assert_eq!((r.height(), r.width()), (92, 92));
        let r = rectify(&lf, disp(-0.3)).unwrap();
        assert_eq!((r.height(), r.width()), (98, 98));
    }

    #[test]
    fn rectify_rejects_empty_crop() {
        let lf = LightField::from_fn(5, 5, |_| Image::zeros(8, 8, 1)).unwrap();
        assert!(rectify(&lf, disp(2.0)).is_err());
    }

    #[test]
    fn rectify_center_is_pure_crop() {
        let lf = LightField::from_fn(3, 5, |c| {
            Image::from_fn(12, 14, 2, move |ch, y, x| {
                ((ch + c.row + c.col) * 100 + y * 14 + x) as f32 / 1e3
            })
        })
        .unwrap();
        let r = rectify(&lf, disp(1.5)).unwrap();
        let (my, mx) = rectify_margins(&lf, disp(1.5));
        assert_eq!((my, mx), (2, 3));
        let expect = lf.center_view().unwrap().crop(my, mx, 8, 8).unwrap();
        assert_eq!(r.center_view().unwrap(), &expect);
    }

    #[test]
    fn stack_channel_counts_and_order() {
        let lf = LightField::from_fn(5, 5, |_| Image::zeros(4, 4, 3)).unwrap();
        assert_eq!(stack_channels(&lf).shape(), &[75, 4, 4]);

        let lf = LightField::from_fn(3, 3, |c| Image::filled(2, 3, 1, (c.row * 3 + c.col) as f32))
            .unwrap();
        let t = stack_channels(&lf);
        for k in 0..9 {
            assert!(t.data()[k * 6..(k + 1) * 6].iter().all(|&v| v == k as f32));
        }
        // center view is the middle block
        assert!(t.data()[4 * 6..5 * 6].iter().all(|&v| v == 4.0));
        assert_eq!(unstack_channels(&t, 3, 3, 1).unwrap(), lf);
    }

    #[test]
    fn single_view_stack_equals_view() {
        let img = Image::from_fn(3, 4, 3, |c, y, x| (c + y + x) as f32);
        let lf = LightField::new(1, 1, alloc::vec![img.clone()]).unwrap();
        assert_eq!(stack_channels(&lf).data(), img.data());
    }

    #[test]
    fn patch_counts() {
        let lf = LightField::from_fn(1, 1, |_| Image::zeros(448, 448, 1)).unwrap();
        let gt = Image::zeros(448, 448, 1);
        assert_eq!(extract_patches(&lf, &gt, 224, 112).unwrap().len(), 9);
        assert!(extract_patches(&lf, &gt, 449, 1).is_err());
        assert!(extract_patches(&lf, &gt, 16, 0).is_err());
    }

    #[test]
    fn full_size_patch_is_input() {
        let img = Image::from_fn(224, 224, 1, |_, y, x| (y * 224 + x) as f32);
        let lf = LightField::new(1, 1, alloc::vec![img.clone()]).unwrap();
        let p = extract_patches(&lf, &img, 224, 112).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].gt, img);
        assert_eq!(p[0].lf, lf);
    }

    #[test]
    fn tiles_reassemble() {
        let img = Image::from_fn(64, 64, 2, |c, y, x| (c * 4096 + y * 64 + x) as f32);
        let lf = LightField::new(1, 1, alloc::vec![img.clone()]).unwrap();
        let tiles = extract_patches(&lf, &img, 32, 32).unwrap();
        assert_eq!(tiles.len(), 4);
        let mut rebuilt = Image::zeros(64, 64, 2);
        for t in &tiles {
            assert_eq!(t.lf.views()[0], t.gt);
            for c in 0..2 {
                for y in 0..32 {
                    for x in 0..32 {
                        rebuilt.set(c, t.top + y, t.left + x, t.gt.get(c, y, x));
                    }
                }
            }
        }
        assert_eq!(rebuilt, img);
    }

    #[test]
    fn upsample_constant_and_ramp() {
        let up = upsample2x(&Image::filled(4, 4, 1, 0.5)).unwrap();
        assert_eq!(up.dims(), (8, 8, 1));
        assert!(up.data().iter().all(|&v| v == 0.5));

        let up = upsample2x(&row(&[0.0, 1.0])).unwrap();
        assert_eq!(up.dims(), (2, 4, 1));
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn upsample_conserves_interior_mass() {
        let mut img = Image::zeros(8, 8, 1);
        img.set(0, 3, 4, 1.0);
        let up = upsample2x(&img).unwrap();
        let total: f64 = up.data().iter().map(|&v| v as f64).sum();
        assert!((total / 4.0 - 1.0).abs() < 1e-5);
    }
}

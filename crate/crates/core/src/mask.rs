//! Mask embedding: synthesizes occluded light fields from clean ones.
//!
//! Each occlusion layer places an alpha mask on the center view, assigns it a
//! positive (foreground) disparity and warps it into every view by
//! `disparity * offset`, so the occluder is disparity-consistent across the
//! grid. Up to three layers are composited far-to-near. The clean center view
//! is the groundtruth.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err};
use crate::image::{AngularCoord, Disparity, Image, LightField};
use crate::lightfield::shift_view;
use crate::refocus::{argmax, sa_average, sharpness};
use crate::rng::{self, derive_seed, domain, rng_from_seed, Rng};
use crate::Result;

/// An occluder image with straight (non-premultiplied) alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskAsset {
    rgb: Image,
    alpha: Image,
    id: String,
}

impl MaskAsset {
    pub fn new(id: impl Into<String>, rgb: Image, alpha: Image) -> Result<Self> {
        if rgb.channels() != 3 {
            return Err(invalid!(
                "mask rgb needs 3 channels, got {}",
                rgb.channels()
            ));
        }
        if alpha.channels() != 1 {
            return Err(invalid!(
                "mask alpha needs 1 channel, got {}",
                alpha.channels()
            ));
        }
        if (rgb.height(), rgb.width()) != (alpha.height(), alpha.width()) {
            return Err(shape_err!(
                "mask rgb {}x{} and alpha {}x{} differ",
                rgb.height(),
                rgb.width(),
                alpha.height(),
                alpha.width()
            ));
        }
        if alpha.data().iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(invalid!("mask alpha must lie in [0, 1]"));
        }
        Ok(Self {
            rgb,
            alpha,
            id: id.into(),
        })
    }

    pub fn rgb(&self) -> &Image {
        &self.rgb
    }
    pub fn alpha(&self) -> &Image {
        &self.alpha
    }
    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn height(&self) -> usize {
        self.rgb.height()
    }
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    /// Thresholds alpha to {0, 1}.
    pub fn binarized(&self, threshold: f32) -> Self {
        Self {
            rgb: self.rgb.clone(),
            alpha: self.alpha.map(|a| if a >= threshold { 1.0 } else { 0.0 }),
            id: self.id.clone(),
        }
    }

    /// Applies a channel permutation to the rgb part.
    pub fn permuted(&self, perm: [usize; 3]) -> Self {
        Self {
            rgb: self
                .rgb
                .select_channels(&perm)
                .expect("mask rgb has 3 channels"),
            alpha: self.alpha.clone(),
            id: self.id.clone(),
        }
    }

    /// Bilinear resampling by `scale` (half-pixel centers, edge clamped).
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid!("mask scale must be positive, got {scale}"));
        }
        if scale == 1.0 {
            return Ok(self.clone());
        }
        let sh = (libm::round(self.height() as f64 * scale) as usize).max(1);
        let sw = (libm::round(self.width() as f64 * scale) as usize).max(1);
        Ok(Self {
            rgb: resample(&self.rgb, sh, sw),
            alpha: resample(&self.alpha, sh, sw),
            id: self.id.clone(),
        })
    }
}

fn resample(img: &Image, oh: usize, ow: usize) -> Image {
    let (h, w, c) = img.dims();
    let taps = |o: usize, out: usize, len: usize| {
        let src = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (libm::floor(src) as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    Image::from_fn(oh, ow, c, |ch, y, x| {
        let (y0, y1, fy) = taps(y, oh, h);
        let (x0, x1, fx) = taps(x, ow, w);
        let top = (1.0 - fx) * img.get(ch, y0, x0) as f64 + fx * img.get(ch, y0, x1) as f64;
        let bot = (1.0 - fx) * img.get(ch, y1, x0) as f64 + fx * img.get(ch, y1, x1) as f64;
        ((1.0 - fy) * top + fy * bot).clamp(0.0, 1.0) as f32
    })
}

/// One foreground occluder: a mask, its disparity and its placement on the
/// center view (top-left corner, may be negative).
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionLayer {
    pub mask: MaskAsset,
    pub disparity: Disparity,
    pub placement: (i64, i64),
    pub scale: f64,
}

/// Serializable description of a layer (the mask itself is referenced by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub mask_id: String,
    pub disparity: f64,
    pub placement: [i64; 2],
    pub scale: f64,
}

impl OcclusionLayer {
    pub fn new(
        mask: MaskAsset,
        disparity: Disparity,
        placement: (i64, i64),
        scale: f64,
    ) -> Result<Self> {
        if disparity.value() <= 0.0 {
            return Err(invalid!(
                "occluder disparity must be positive, got {}",
                disparity.value()
            ));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid!("mask scale must be positive, got {scale}"));
        }
        Ok(Self {
            mask,
            disparity,
            placement,
            scale,
        })
    }

    pub fn record(&self) -> LayerRecord {
        LayerRecord {
            mask_id: self.mask.id().into(),
            disparity: self.disparity.value(),
            placement: [self.placement.0, self.placement.1],
            scale: self.scale,
        }
    }

    /// The scaled mask pasted onto an `h x w` canvas, as premultiplied rgb and alpha.
    fn placed_premultiplied(&self, h: usize, w: usize) -> Result<(Image, Image)> {
        let m = self.mask.scaled(self.scale)?;
        let mut rgb = Image::zeros(h, w, 3);
        let mut alpha = Image::zeros(h, w, 1);
        let (py, px) = self.placement;
        for y in 0..m.height() {
            let ty = py + y as i64;
            if ty < 0 || ty >= h as i64 {
                continue;
            }
            for x in 0..m.width() {
                let tx = px + x as i64;
                if tx < 0 || tx >= w as i64 {
                    continue;
                }
                let a = m.alpha().get(0, y, x);
                alpha.set(0, ty as usize, tx as usize, a);
                for c in 0..3 {
                    rgb.set(c, ty as usize, tx as usize, a * m.rgb().get(c, y, x));
                }
            }
        }
        Ok((rgb, alpha))
    }

    /// Center-view alpha of this layer on an `h x w` canvas.
    pub fn placed_alpha(&self, h: usize, w: usize) -> Result<Image> {
        Ok(self.placed_premultiplied(h, w)?.1)
    }

    /// Center-view straight rgb and alpha on an `h x w` canvas.
    pub fn placed(&self, h: usize, w: usize) -> Result<(Image, Image)> {
        let (pre, alpha) = self.placed_premultiplied(h, w)?;
        Ok((unpremultiply(&pre, &alpha), alpha))
    }
}

fn unpremultiply(pre: &Image, alpha: &Image) -> Image {
    let a = alpha.plane(0);
    let hw = a.len();
    let mut out = pre.clone();
    for c in 0..pre.channels() {
        let p = out.plane_mut(c);
        for i in 0..hw {
            p[i] = if a[i] > 0.0 {
                (p[i] / a[i]).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    out
}

/// Geometry of the light field a layer is warped into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewGrid {
    pub rows: usize,
    pub cols: usize,
    pub height: usize,
    pub width: usize,
}

impl ViewGrid {
    pub fn of(lf: &LightField) -> Self {
        Self {
            rows: lf.rows(),
            cols: lf.cols(),
            height: lf.height(),
            width: lf.width(),
        }
    }

    fn offset(&self, coord: AngularCoord) -> Result<(i64, i64)> {
        if self.rows.is_multiple_of(2) || self.cols.is_multiple_of(2) {
            return Err(invalid!(
                "angular grid {}x{} has no center view",
                self.rows,
                self.cols
            ));
        }
        if coord.row >= self.rows || coord.col >= self.cols {
            return Err(invalid!(
                "coordinate {coord:?} outside {}x{} grid",
                self.rows,
                self.cols
            ));
        }
        Ok((
            coord.row as i64 - (self.rows as i64 - 1) / 2,
            coord.col as i64 - (self.cols as i64 - 1) / 2,
        ))
    }
}

/// The layer as seen from view `coord`: the placed mask shifted by
/// `disparity * offset(coord)`. Returns straight rgb and alpha.
pub fn warp_mask(
    layer: &OcclusionLayer,
    coord: AngularCoord,
    grid: ViewGrid,
) -> Result<(Image, Image)> {
    if layer.disparity.value() <= 0.0 {
        return Err(invalid!("occluder disparity must be positive"));
    }
    let off = grid.offset(coord)?;
    let (pre, alpha) = layer.placed_premultiplied(grid.height, grid.width)?;
    if off == (0, 0) {
        return Ok((unpremultiply(&pre, &alpha), alpha));
    }
    let pre = shift_view(&pre, off, layer.disparity)?.image;
    let alpha = shift_view(&alpha, off, layer.disparity)?
        .image
        .map(|a| a.clamp(0.0, 1.0));
    Ok((unpremultiply(&pre, &alpha), alpha))
}

/// Alpha-over compositing: `alpha * rgb + (1 - alpha) * view`.
///
/// Pixels with `alpha == 0` are copied bit-exactly from `view`; pixels with
/// `alpha == 1` take `rgb`.
pub fn composite(view: &Image, rgb: &Image, alpha: &Image) -> Result<Image> {
    view.ensure_same_dims(rgb, "composite view vs rgb")?;
    if alpha.channels() != 1 || (alpha.height(), alpha.width()) != (view.height(), view.width()) {
        return Err(shape_err!(
            "composite alpha {}x{}x{} does not match view {}x{}",
            alpha.height(),
            alpha.width(),
            alpha.channels(),
            view.height(),
            view.width()
        ));
    }
    let a = alpha.plane(0);
    let mut out = view.clone();
    for c in 0..view.channels() {
        let src = rgb.plane(c);
        let dst = out.plane_mut(c);
        for (i, d) in dst.iter_mut().enumerate() {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            *d = if ai == 1.0 {
                src[i]
            } else {
                (ai as f64 * src[i] as f64 + (1.0 - ai as f64) * *d as f64) as f32
            };
        }
    }
    Ok(out)
}

/// Composites `layers` (already ordered far to near) into every view of `lf`.
/// Returns the occluded field and the center-view union alpha.
pub fn embed_layers(lf: &LightField, layers: &[OcclusionLayer]) -> Result<(LightField, Image)> {
    let grid = ViewGrid::of(lf);
    let center = lf.center()?;
    let mut union = Image::zeros(lf.height(), lf.width(), 1);
    let occluded = lf.map_views(|coord, view| {
        let mut out = view.clone();
        for layer in layers {
            let (rgb, alpha) = warp_mask(layer, coord, grid)?;
            out = composite(&out, &rgb, &alpha)?;
            if coord == center {
                for (u, &a) in union.data_mut().iter_mut().zip(alpha.data()) {
                    *u = 1.0 - (1.0 - *u) * (1.0 - a);
                }
            }
        }
        Ok(out)
    })?;
    Ok((occluded, union))
}

/// Fraction of pixels whose union alpha exceeds 0.5.
pub fn occlusion_rate(union_alpha: &Image) -> f64 {
    let n = union_alpha.data().len();
    if n == 0 {
        return 0.0;
    }
    union_alpha.data().iter().filter(|&&a| a > 0.5).count() as f64 / n as f64
}

/// The six RGB permutations, identity first. Output channel `c` takes input channel `perm[c]`.
pub const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

pub fn draw_permutation(rng: &mut Rng) -> [usize; 3] {
    PERMUTATIONS[rng.random_range(0..PERMUTATIONS.len())]
}

pub fn invert_permutation(perm: [usize; 3]) -> [usize; 3] {
    let mut inv = [0; 3];
    for (c, &p) in perm.iter().enumerate() {
        inv[p] = c;
    }
    inv
}

/// Applies one channel permutation to every view and to the groundtruth.
pub fn apply_permutation(
    lf: &LightField,
    gt: &Image,
    perm: [usize; 3],
) -> Result<(LightField, Image)> {
    if lf.channels() != 3 || gt.channels() != 3 {
        return Err(invalid!(
            "channel shuffle needs 3-channel images, got {} and {}",
            lf.channels(),
            gt.channels()
        ));
    }
    let mut sorted = perm;
    sorted.sort_unstable();
    if sorted != [0, 1, 2] {
        return Err(invalid!("{perm:?} is not a permutation of 0..3"));
    }
    Ok((
        lf.map_views(|_, v| v.select_channels(&perm))?,
        gt.select_channels(&perm)?,
    ))
}

/// Draws a permutation from `seed` and applies it consistently to `lf` and `gt`.
pub fn channel_shuffle(
    lf: &LightField,
    gt: &Image,
    seed: u64,
) -> Result<(LightField, Image, [usize; 3])> {
    let perm = draw_permutation(&mut rng_from_seed(seed));
    let (lf, gt) = apply_permutation(lf, gt, perm)?;
    Ok((lf, gt, perm))
}

/// How mask colors are shuffled relative to the light field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShuffle {
    /// Masks receive the light field's permutation.
    #[default]
    SameAsLightField,
    /// Each placed mask draws its own permutation.
    Independent,
}

/// Parameters of [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Number of occlusion layers, 1 to 3.
    pub layer_count: usize,
    /// Disparity range `(lo, hi]` per layer (the first range is closed); ranges
    /// must be positive and strictly increasing.
    pub disparity_ranges: Vec<[f64; 2]>,
    pub channel_shuffle: bool,
    pub mask_shuffle: MaskShuffle,
    /// Mask scale drawn uniformly from this range.
    pub scale_range: [f64; 2],
    /// Minimum fraction of the mask's alpha mass that must land inside the view.
    pub min_inside_fraction: f64,
    /// Threshold masks to binary alpha when set.
    pub binarize: Option<f32>,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            layer_count: 1,
            disparity_ranges: vec![[1.0, 2.0], [2.0, 3.5], [3.5, 5.0]],
            channel_shuffle: true,
            mask_shuffle: MaskShuffle::SameAsLightField,
            scale_range: [1.0, 1.0],
            min_inside_fraction: 0.25,
            binarize: None,
            rng_seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layer_count) {
            return Err(invalid!(
                "layer_count must be 1, 2 or 3, got {}",
                self.layer_count
            ));
        }
        if self.disparity_ranges.len() < self.layer_count {
            return Err(invalid!(
                "{} layers need as many disparity ranges, got {}",
                self.layer_count,
                self.disparity_ranges.len()
            ));
        }
        let mut prev_hi = 0.0;
        for (k, &[lo, hi]) in self.disparity_ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
                return Err(invalid!(
                    "disparity range {k} [{lo}, {hi}] must be positive and ordered"
                ));
            }
            if k > 0 && lo < prev_hi {
                return Err(invalid!("disparity range {k} overlaps range {}", k - 1));
            }
            prev_hi = hi;
        }
        let [slo, shi] = self.scale_range;
        if !(slo > 0.0 && shi >= slo && shi.is_finite()) {
            return Err(invalid!(
                "scale range [{slo}, {shi}] must be positive and ordered"
            ));
        }
        if !(0.0..=1.0).contains(&self.min_inside_fraction) {
            return Err(invalid!("min_inside_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One synthesized training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub occluded: LightField,
    /// Clean center view (after any channel shuffle).
    pub gt: Image,
    /// Layers in compositing order (increasing disparity).
    pub layers: Vec<OcclusionLayer>,
    /// Union alpha of all layers on the center view.
    pub center_alpha: Image,
    /// Permutation applied to the light field, if shuffling was on.
    pub permutation: Option<[usize; 3]>,
}

impl Synthesized {
    pub fn occlusion_rate(&self) -> f64 {
        occlusion_rate(&self.center_alpha)
    }
}

/// Fraction of the mask's alpha mass inside an `h x w` view at `placement`.
fn inside_fraction(mask: &MaskAsset, placement: (i64, i64), h: usize, w: usize) -> f64 {
    let alpha = mask.alpha();
    let mut total = 0.0f64;
    let mut inside = 0.0f64;
    for y in 0..mask.height() {
        let ty = placement.0 + y as i64;
        for x in 0..mask.width() {
            let a = alpha.get(0, y, x) as f64;
            total += a;
            let tx = placement.1 + x as i64;
            if ty >= 0 && ty < h as i64 && tx >= 0 && tx < w as i64 {
                inside += a;
            }
        }
    }
    if total == 0.0 {
        1.0
    } else {
        inside / total
    }
}

const PLACEMENT_ATTEMPTS: usize = 64;

fn draw_placement(
    rng: &mut Rng,
    mask: &MaskAsset,
    h: usize,
    w: usize,
    min_inside: f64,
) -> (i64, i64) {
    let (mh, mw) = (mask.height() as i64, mask.width() as i64);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let p = (
            rng.random_range(-(mh - 1)..h as i64),
            rng.random_range(-(mw - 1)..w as i64),
        );
        if inside_fraction(mask, p, h, w) >= min_inside {
            return p;
        }
    }
    // centered placement always keeps the mass that fits
    ((h as i64 - mh) / 2, (w as i64 - mw) / 2)
}

/// Draws `cfg.layer_count` occluders and embeds them into `lf`.
///
/// The input should be rectified so scene content has non-positive disparity.
pub fn synthesize(
    lf: &LightField,
    masks: &[MaskAsset],
    cfg: &SynthesisConfig,
) -> Result<Synthesized> {
    cfg.validate()?;
    if masks.is_empty() {
        return Err(invalid!("mask set is empty"));
    }
    let center = lf.center()?;
    let mut rng = rng_from_seed(cfg.rng_seed);
    let (base, gt, permutation) = if cfg.channel_shuffle {
        let perm = draw_permutation(&mut rng);
        let (l, g) = apply_permutation(lf, lf.view(center), perm)?;
        (l, g, Some(perm))
    } else {
        (lf.clone(), lf.view(center).clone(), None)
    };
    let (h, w) = (lf.height(), lf.width());
    let mut layers = Vec::with_capacity(cfg.layer_count);
    for k in 0..cfg.layer_count {
        let mut mask = masks[rng.random_range(0..masks.len())].clone();
        if let Some(t) = cfg.binarize {
            mask = mask.binarized(t);
        }
        if let Some(perm) = permutation {
            let p = match cfg.mask_shuffle {
                MaskShuffle::SameAsLightField => perm,
                MaskShuffle::Independent => draw_permutation(&mut rng),
            };
            mask = mask.permuted(p);
        }
        let [lo, hi] = cfg.disparity_ranges[k];
        // (lo, hi]: strictly above the previous layer's upper bound
        let d = hi - rng.random::<f64>() * (hi - lo);
        let [slo, shi] = cfg.scale_range;
        let scale = if shi > slo {
            rng.random_range(slo..=shi)
        } else {
            slo
        };
        let scaled = mask.scaled(scale)?;
        let placement = draw_placement(&mut rng, &scaled, h, w, cfg.min_inside_fraction);
        layers.push(OcclusionLayer::new(
            mask,
            Disparity::new(d)?,
            placement,
            scale,
        )?);
    }
    let (occluded, center_alpha) = embed_layers(&base, &layers)?;
    Ok(Synthesized {
        occluded,
        gt,
        layers,
        center_alpha,
        permutation,
    })
}

/// Seed of sample `index` in a dataset generated under `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, domain::SAMPLE, index)
}

/// Generates sample `index` of a dataset: picks a source field and embeds
/// occluders with a per-sample seed. Returns the source index too. Results do
/// not depend on the order in which samples are generated.
pub fn synthesize_sample(
    sources: &[LightField],
    masks: &[MaskAsset],
    cfg: &SynthesisConfig,
    index: u64,
) -> Result<(usize, Synthesized)> {
    if sources.is_empty() {
        return Err(invalid!("no source light fields"));
    }
    let seed = sample_seed(cfg.rng_seed, index);
    let mut pick = rng::derived_rng(seed, domain::SHUFFLE, 0);
    let src = pick.random_range(0..sources.len());
    let per = SynthesisConfig {
        rng_seed: seed,
        ..cfg.clone()
    };
    Ok((src, synthesize(&sources[src], masks, &per)?))
}

/// Outcome of the refocus consistency check for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// No usable texture or visible footprint, or the sharpest probe is too
    /// close to the layer disparity to resolve.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub disparity: f64,
    /// `(probe disparity, sharpness inside the layer footprint)`.
    pub probes: Vec<(f64, f64)>,
    /// Disparity of the sharpest probe.
    pub sharpest: f64,
    pub footprint_pixels: usize,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub layers: Vec<LayerCheck>,
}

impl CheckReport {
    /// True when no layer failed and at least one layer passed.
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.status != CheckStatus::Fail)
            && self.layers.iter().any(|l| l.status == CheckStatus::Pass)
    }
}

/// Texture below this mean gradient magnitude cannot indicate focus.
pub const MIN_TEXTURE: f64 = 1e-3;
/// A probe counts as focused on a layer when it aligns the layer across all
/// views to within this many pixels.
pub const ALIGN_TOLERANCE_PX: f64 = 0.5;
/// Below this misalignment, bilinear resampling blurs about as much as the
/// misalignment itself, so a sharper wrong probe is inconclusive, not a failure.
pub const RESOLVE_PX: f64 = 1.0;
const MIN_FOOTPRINT: usize = 16;

/// Interior of layer `k`'s opaque center-view footprint that no nearer layer covers.
fn footprint(layers: &[OcclusionLayer], k: usize, h: usize, w: usize) -> Result<Vec<bool>> {
    let alpha = layers[k].placed_alpha(h, w)?;
    let mut covered = vec![false; h * w];
    for nearer in &layers[k + 1..] {
        for (c, &a) in covered.iter_mut().zip(nearer.placed_alpha(h, w)?.data()) {
            *c |= a > 0.0;
        }
    }
    let a = alpha.data();
    let mut fp = vec![false; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let solid = [i, i - 1, i + 1, i - w, i + w]
                .iter()
                .all(|&j| a[j] >= 0.99 && !covered[j]);
            fp[i] = solid;
        }
    }
    Ok(fp)
}

/// Refocuses `occluded` at every layer disparity and at 0, and checks that each
/// layer's footprint is sharpest at a probe that aligns the layer across views
/// to within [`ALIGN_TOLERANCE_PX`] (the layer's own disparity, or one too close
/// to it to be told apart). A sharpest probe misaligned by at most
/// [`RESOLVE_PX`] is inconclusive.
pub fn refocus_check(occluded: &LightField, layers: &[OcclusionLayer]) -> Result<CheckReport> {
    if layers.is_empty() {
        return Err(invalid!("refocus check needs at least one layer"));
    }
    let (h, w) = (occluded.height(), occluded.width());
    let (mr, mc) = occluded.max_offsets();
    let reach = mr.max(mc) as f64;
    let mut probes: Vec<f64> = vec![0.0];
    for l in layers {
        if !probes.contains(&l.disparity.value()) {
            probes.push(l.disparity.value());
        }
    }
    let stack = probes
        .iter()
        .map(|&d| sa_average(occluded, Disparity::new(d)?).map(|r| r.image))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(layers.len());
    for (k, layer) in layers.iter().enumerate() {
        let fp = footprint(layers, k, h, w)?;
        let pixels = fp.iter().filter(|&&f| f).count();
        let (rgb, _) = layer.placed(h, w)?;
        let texture = sharpness(&rgb, Some(&fp));
        let scores: Vec<f64> = stack.iter().map(|img| sharpness(img, Some(&fp))).collect();
        let best = probes[argmax(&scores).expect("probes are non-empty")];
        let misaligned = libm::fabs(best - layer.disparity.value()) * reach;
        let status = if pixels < MIN_FOOTPRINT || texture < MIN_TEXTURE {
            CheckStatus::Inconclusive
        } else if misaligned <= ALIGN_TOLERANCE_PX {
            CheckStatus::Pass
        } else if misaligned <= RESOLVE_PX {
            CheckStatus::Inconclusive
        } else {
            CheckStatus::Fail
        };
        out.push(LayerCheck {
            disparity: layer.disparity.value(),
            probes: probes.iter().cloned().zip(scores).collect(),
            sharpest: best,
            footprint_pixels: pixels,
            status,
        });
    }
    Ok(CheckReport { layers: out })
}

//! Planar float images and light fields.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err};
use crate::Result;

/// A planar (channel-major) float image with nominal range `[0, 1]`.
///
/// Sample `(c, y, x)` lives at `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(invalid!("image must have at least one channel"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("image value at index {i} is not finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(channels > 0, "image must have at least one channel");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds an image by evaluating `f(c, y, x)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(channels > 0, "image must have at least one channel");
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies the window `[top, top+h) x [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(invalid!(
                "crop {h}x{w} at ({top},{left}) exceeds image {}x{}",
                self.height,
                self.width
            ));
        }
        Ok(Self::from_fn(h, w, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Checks that `other` has the same height, width and channel count.
    pub fn ensure_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height,
                self.width,
                self.channels,
                other.height,
                other.width,
                other.channels
            ));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies channel `src[c]` of `self` into channel `c` of the output.
    pub fn select_channels(&self, src: &[usize]) -> Result<Self> {
        if let Some(&bad) = src.iter().find(|&&c| c >= self.channels) {
            return Err(invalid!(
                "channel {bad} out of range for {} channels",
                self.channels
            ));
        }
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(n * src.len());
        for &c in src {
            data.extend_from_slice(self.plane(c));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: src.len(),
            data,
        })
    }
}

/// Angular position of a sub-aperture image in the camera grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AngularCoord {
    pub row: usize,
    pub col: usize,
}

impl AngularCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Pixel shift per unit angular offset.
///
/// Positive values lie in front of the rectification plane (occluders),
/// negative values behind it. A scene point at disparity `d` seen at `p` in
/// the center view appears at `p + d * offset(coord)` in view `coord`, where
/// the row offset moves along `y` and the column offset along `x`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Disparity(f64);

impl Disparity {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(invalid!("disparity must be finite, got {value}"));
        }
        Ok(Self(value))
    }

    pub const ZERO: Disparity = Disparity(0.0);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// A `rows x cols` grid of equally sized sub-aperture images, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    rows: usize,
    cols: usize,
    views: Vec<Image>,
}

impl LightField {
    pub fn new(rows: usize, cols: usize, views: Vec<Image>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid!(
                "angular grid must be at least 1x1, got {rows}x{cols}"
            ));
        }
        if views.len() != rows * cols {
            return Err(shape_err!(
                "light field {rows}x{cols} needs {} views, got {}",
                rows * cols,
                views.len()
            ));
        }
        let first = views[0].dims();
        if let Some(k) = views.iter().position(|v| v.dims() != first) {
            return Err(shape_err!("view {k} dimensions differ from view 0"));
        }
        Ok(Self { rows, cols, views })
    }

    /// Builds a light field by evaluating `f(coord)` for every view.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(AngularCoord) -> Image,
    ) -> Result<Self> {
        let mut views = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            for col in 0..cols {
                views.push(f(AngularCoord::new(row, col)));
            }
        }
        Self::new(rows, cols, views)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn view_count(&self) -> usize {
        self.views.len()
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.views[0].height()
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.views[0].width()
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.views[0].channels()
    }

    pub fn views(&self) -> &[Image] {
        &self.views
    }

    pub fn into_views(self) -> Vec<Image> {
        self.views
    }

    pub fn view(&self, coord: AngularCoord) -> &Image {
        &self.views[self.linear_index(coord)]
    }

    #[inline]
    pub fn linear_index(&self, coord: AngularCoord) -> usize {
        debug_assert!(coord.row < self.rows && coord.col < self.cols);
        coord.row * self.cols + coord.col
    }

    pub fn coord_of(&self, index: usize) -> AngularCoord {
        AngularCoord::new(index / self.cols, index % self.cols)
    }

    pub fn coords(&self) -> impl Iterator<Item = AngularCoord> + '_ {
        (0..self.views.len()).map(|k| self.coord_of(k))
    }

    /// Center coordinate; requires odd angular dimensions.
    pub fn center(&self) -> Result<AngularCoord> {
        if self.rows.is_multiple_of(2) || self.cols.is_multiple_of(2) {
            return Err(invalid!(
                "center view requires odd angular dimensions, got {}x{}",
                self.rows,
                self.cols
            ));
        }
        Ok(AngularCoord::new((self.rows - 1) / 2, (self.cols - 1) / 2))
    }

    pub fn center_view(&self) -> Result<&Image> {
        Ok(self.view(self.center()?))
    }

    /// Signed angular offset `(drow, dcol)` of `coord` from the center view.
    pub fn offset(&self, coord: AngularCoord) -> Result<(i64, i64)> {
        let c = self.center()?;
        Ok((
            coord.row as i64 - c.row as i64,
            coord.col as i64 - c.col as i64,
        ))
    }

    /// Largest `|drow|` and `|dcol|` over the grid.
    pub fn max_offsets(&self) -> (usize, usize) {
        ((self.rows - 1) / 2, (self.cols - 1) / 2)
    }

    /// Applies `f` to every view, preserving the grid.
    pub fn map_views(
        &self,
        mut f: impl FnMut(AngularCoord, &Image) -> Result<Image>,
    ) -> Result<Self> {
        let views = self
            .views
            .iter()
            .enumerate()
            .map(|(k, v)| f(self.coord_of(k), v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.rows, self.cols, views)
    }
}

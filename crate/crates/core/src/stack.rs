//! Multi-view image stacks.
//!
//! A [`ViewStack`] is a dense `V x C x H x W` tensor of f64 pixels: the `x`,
//! `x_hat` and feedback views that the diffusion machinery operates on.
//! All arithmetic helpers are elementwise and shape-checked.

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};

/// Shape of a view stack: views, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackShape {
    pub views: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl StackShape {
    pub fn len(&self) -> usize {
        self.views * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl std::fmt::Display for StackShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.views, self.channels, self.height, self.width
        )
    }
}

/// Dense stack of `V` per-camera images with `C` channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStack {
    shape: StackShape,
    data: Vec<f64>,
}

impl ViewStack {
    pub fn zeros(shape: StackShape) -> Self {
        Self {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn from_vec(shape: StackShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} elements for shape {shape}, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn constant(shape: StackShape, value: f64) -> Self {
        Self {
            data: vec![value; shape.len()],
            shape,
        }
    }

    /// Stack of unit-normal noise.
    pub fn noise(shape: StackShape, rng: &mut Rng) -> Self {
        let data = (0..shape.len()).map(|_| normal(rng)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> StackShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn idx(&self, view: usize, channel: usize, row: usize, col: usize) -> usize {
        ((view * self.shape.channels + channel) * self.shape.height + row) * self.shape.width + col
    }

    #[inline]
    pub fn get(&self, view: usize, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.idx(view, channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, view: usize, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.idx(view, channel, row, col);
        self.data[i] = value;
    }

    /// Slice of one view's `C*H*W` pixels.
    pub fn view(&self, view: usize) -> &[f64] {
        let n = self.shape.view_len();
        &self.data[view * n..(view + 1) * n]
    }

    pub fn view_mut(&mut self, view: usize) -> &mut [f64] {
        let n = self.shape.view_len();
        &mut self.data[view * n..(view + 1) * n]
    }

    fn check_same_shape(&self, other: &ViewStack) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Elementwise `self*a + other*b`.
    pub fn affine(&self, a: f64, other: &ViewStack, b: f64) -> Result<ViewStack> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(ViewStack {
            shape: self.shape,
            data,
        })
    }

    pub fn scale(&self, a: f64) -> ViewStack {
        ViewStack {
            shape: self.shape,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn add(&self, other: &ViewStack) -> Result<ViewStack> {
        self.affine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &ViewStack) -> Result<ViewStack> {
        self.affine(1.0, other, -1.0)
    }

    /// In-place accumulate `self += other * b`.
    pub fn add_scaled_assign(&mut self, other: &ViewStack, b: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += b * y;
        }
        Ok(())
    }

    /// Sum of squared differences over all elements.
    pub fn sq_dist(&self, other: &ViewStack) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum())
    }

    /// Mean absolute difference over all elements.
    pub fn mean_abs_diff(&self, other: &ViewStack) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.data.len().max(1);
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n as f64)
    }

    pub fn max_abs_diff(&self, other: &ViewStack) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// Keep a channel subset, e.g. RGB out of RGBAD.
    pub fn select_channels(&self, channels: &[usize]) -> ViewStack {
        let sh = self.shape;
        let out_shape = StackShape {
            channels: channels.len(),
            ..sh
        };
        let mut out = ViewStack::zeros(out_shape);
        for v in 0..sh.views {
            for (ci, &c) in channels.iter().enumerate() {
                for r in 0..sh.height {
                    for w in 0..sh.width {
                        out.set(v, ci, r, w, self.get(v, c, r, w));
                    }
                }
            }
        }
        out
    }

    /// Applies a `V x V` matrix across the view axis, pixelwise:
    /// `out[v] = sum_w m[v][w] * self[w]`.
    pub fn apply_view_matrix(&self, m: &[Vec<f64>]) -> Result<ViewStack> {
        let v = self.shape.views;
        if m.len() != v || m.iter().any(|row| row.len() != v) {
            return Err(Error::Structural(format!(
                "sync matrix must be {v}x{v} to act on {} views",
                v
            )));
        }
        let n = self.shape.view_len();
        let mut out = ViewStack::zeros(self.shape);
        for (vi, row) in m.iter().enumerate() {
            let dst_off = vi * n;
            for (wi, &coef) in row.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                let src_off = wi * n;
                for i in 0..n {
                    out.data[dst_off + i] += coef * self.data[src_off + i];
                }
            }
        }
        Ok(out)
    }

    /// Mean over all views, broadcast back to every view.
    pub fn view_mean(&self) -> ViewStack {
        let v = self.shape.views as f64;
        let n = self.shape.view_len();
        let mut mean = vec![0.0; n];
        for vi in 0..self.shape.views {
            for (m, x) in mean.iter_mut().zip(self.view(vi)) {
                *m += x / v;
            }
        }
        let mut out = ViewStack::zeros(self.shape);
        for vi in 0..self.shape.views {
            out.view_mut(vi).copy_from_slice(&mean);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn shape() -> StackShape {
        StackShape {
            views: 2,
            channels: 3,
            height: 4,
            width: 5,
        }
    }

    #[test]
    fn affine_shape_mismatch_rejected() {
        let a = ViewStack::zeros(shape());
        let b = ViewStack::zeros(StackShape {
            width: 6,
            ..shape()
        });
        assert!(matches!(a.affine(1.0, &b, 1.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn view_matrix_identity_is_exact() {
        let mut rng = rng_for(1, 0);
        let a = ViewStack::noise(shape(), &mut rng);
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = a.apply_view_matrix(&eye).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn view_mean_matches_matrix_average() {
        let mut rng = rng_for(2, 0);
        let a = ViewStack::noise(shape(), &mut rng);
        let avg = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let m = a.apply_view_matrix(&avg).unwrap();
        let mean = a.view_mean();
        assert!(m.max_abs_diff(&mean).unwrap() < 1e-15);
    }
}

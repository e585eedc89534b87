//! Dense row-major real images.

use std::ops::{Index, IndexMut};

use crate::{Error, Result};

/// A 2-D real-valued array stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Image {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "buffer of length {} cannot hold a {rows}x{cols} image",
                data.len()
            )));
        }
        Ok(Image { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Image { rows, cols, data }
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
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `‖self − other‖₂²`
    pub fn dist_sq(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Image {
        self.map(|v| a * v)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Image) {
        debug_assert_eq!(self.dims(), x.dims());
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    /// `a * x + b * y`
    pub fn lin_comb(a: f64, x: &Image, b: f64, y: &Image) -> Image {
        debug_assert_eq!(x.dims(), y.dims());
        Image {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(u, v)| a * u + b * v).collect(),
        }
    }

    pub fn sub(&self, other: &Image) -> Image {
        Image::lin_comb(1.0, self, -1.0, other)
    }

    pub fn add(&self, other: &Image) -> Image {
        Image::lin_comb(1.0, self, 1.0, other)
    }

    /// Copy of the `rows × cols` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Image> {
        if r0 + rows > self.rows || c0 + cols > self.cols {
            return Err(Error::invalid(format!(
                "crop {rows}x{cols} at ({r0},{c0}) exceeds {}x{} image",
                self.rows, self.cols
            )));
        }
        Ok(Image::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)]))
    }

    /// Pads by edge replication on the bottom/right so both sides are even.
    /// Returns the padded image and whether padding happened.
    pub fn pad_to_even(&self) -> (Image, bool) {
        let rows = self.rows + self.rows % 2;
        let cols = self.cols + self.cols % 2;
        if rows == self.rows && cols == self.cols {
            return (self.clone(), false);
        }
        let padded = Image::from_fn(rows, cols, |i, j| self[(i.min(self.rows - 1), j.min(self.cols - 1))]);
        (padded, true)
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Image {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

//! Circular convolution operators and Gaussian point-spread functions.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::rng::SeededRng;
use crate::{Error, Image, Result};

/// Convolution taps with odd width and height, centered at
/// `((rows - 1) / 2, (cols - 1) / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    taps: Image,
}

impl Kernel {
    pub fn new(taps: Image) -> Result<Self> {
        if taps.rows() % 2 == 0 || taps.cols() % 2 == 0 || taps.is_empty() {
            return Err(Error::invalid(format!(
                "kernel must have odd, non-zero dimensions, got {}x{}",
                taps.rows(),
                taps.cols()
            )));
        }
        if !taps.all_finite() {
            return Err(Error::invalid("kernel taps must be finite"));
        }
        Ok(Kernel { taps })
    }

    pub fn identity() -> Self {
        Kernel {
            taps: Image::filled(1, 1, 1.0),
        }
    }

    pub fn taps(&self) -> &Image {
        &self.taps
    }

    pub fn center(&self) -> (usize, usize) {
        ((self.taps.rows() - 1) / 2, (self.taps.cols() - 1) / 2)
    }

    pub fn sum(&self) -> f64 {
        self.taps.sum()
    }

    pub fn is_symmetric(&self) -> bool {
        let (r, c) = self.taps.dims();
        (0..r).all(|i| (0..c).all(|j| self.taps[(i, j)] == self.taps[(r - 1 - i, c - 1 - j)]))
    }

    /// Iterates over non-zero taps as `(row offset, col offset, weight)`
    /// relative to the center.
    fn offsets(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let (cr, cc) = self.center();
        let cols = self.taps.cols();
        self.taps
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(move |(n, &w)| ((n / cols) as isize - cr as isize, (n % cols) as isize - cc as isize, w))
    }
}

/// Isotropic Gaussian PSF truncated to `size × size` and normalized to unit
/// sum.
pub fn gaussian_psf(size: usize, variance: f64) -> Result<Kernel> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!("PSF size must be odd and positive, got {size}")));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("PSF variance must be positive, got {variance}")));
    }
    let c = ((size - 1) / 2) as f64;
    let mut taps = Image::from_fn(size, size, |i, j| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * variance)).exp()
    });
    let total = taps.sum();
    for v in taps.as_mut_slice() {
        *v /= total;
    }
    Kernel::new(taps)
}

/// `H`: periodic 2-D convolution with a fixed kernel on a fixed grid.
///
/// `(Hx)[i, j] = Σ_{a,b} k[a, b] · x[(i − a + ca) mod R, (j − b + cb) mod C]`
#[derive(Clone, Debug)]
pub struct ConvOperator {
    kernel: Arc<Kernel>,
    rows: usize,
    cols: usize,
}

impl ConvOperator {
    pub fn new(kernel: Kernel, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("operator grid must be non-empty"));
        }
        Ok(ConvOperator {
            kernel: Arc::new(kernel),
            rows,
            cols,
        })
    }

    /// Same kernel on another grid.
    pub fn resized(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("operator grid must be non-empty"));
        }
        Ok(ConvOperator {
            kernel: Arc::clone(&self.kernel),
            rows,
            cols,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        x.ensure_dims(self.dims())?;
        Ok(self.shift_accumulate(x, 1))
    }

    /// `Hᵀ`: circular correlation with the same kernel.
    pub fn adjoint(&self, r: &Image) -> Result<Image> {
        r.ensure_dims(self.dims())?;
        Ok(self.shift_accumulate(r, -1))
    }

    /// `HᵀH x`
    pub fn normal(&self, x: &Image) -> Result<Image> {
        self.adjoint(&self.apply(x)?)
    }

    /// `Hᵀ(Hx − y)`, the gradient of `½‖y − Hx‖²`.
    pub fn data_gradient(&self, x: &Image, y: &Image) -> Result<Image> {
        let residual = self.apply(x)?.sub(y);
        self.adjoint(&residual)
    }

    /// `out[i, j] = Σ w · x[i − sign·di, j − sign·dj]` with periodic indices.
    fn shift_accumulate(&self, x: &Image, sign: isize) -> Image {
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        let mut out = Image::zeros(self.rows, self.cols);
        let src = x.as_slice();
        let dst = out.as_mut_slice();
        for (di, dj, w) in self.kernel.offsets() {
            let split = (sign * dj).rem_euclid(cols) as usize;
            for i in 0..self.rows {
                let si = (i as isize - sign * di).rem_euclid(rows) as usize;
                let src_row = &src[si * self.cols..(si + 1) * self.cols];
                let dst_row = &mut dst[i * self.cols..(i + 1) * self.cols];
                // dst[j] += w * src[(j - split) mod cols]
                let (dst_head, dst_tail) = dst_row.split_at_mut(split);
                for (d, s) in dst_head.iter_mut().zip(&src_row[self.cols - split..]) {
                    *d += w * s;
                }
                for (d, s) in dst_tail.iter_mut().zip(&src_row[..self.cols - split]) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// Largest singular value from the DFT of the zero-padded kernel.
    ///
    /// Circular convolution is diagonalized by the 2-D DFT, so `‖H‖₂` is
    /// exactly `max |K̂|`.
    pub fn spectral_norm_dft(&self) -> f64 {
        let (rows, cols) = self.dims();
        let mut grid = vec![Complex64::new(0.0, 0.0); rows * cols];
        for (di, dj, w) in self.kernel.offsets() {
            let i = di.rem_euclid(rows as isize) as usize;
            let j = dj.rem_euclid(cols as isize) as usize;
            grid[i * cols + j].re += w;
        }
        fft2(&mut grid, rows, cols);
        grid.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Power iteration on `HᵀH`.
    pub fn spectral_norm(&self, tol: f64, max_iters: usize) -> Result<SpectralNorm> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
        }
        let mut rng = SeededRng::new(0x5eed_0f_0e5);
        let mut v = Image::from_fn(self.rows, self.cols, |_, _| rng.gaussian());
        let n = v.norm();
        v = v.scaled(1.0 / n);
        let mut estimate = 0.0;
        for it in 1..=max_iters {
            let w = self.normal(&v)?;
            let lambda = w.norm();
            if lambda == 0.0 {
                return Ok(SpectralNorm {
                    value: 0.0,
                    iterations: it,
                    converged: true,
                });
            }
            let next = lambda.sqrt();
            v = w.scaled(1.0 / lambda);
            if (next - estimate).abs() <= tol * next {
                return Ok(SpectralNorm {
                    value: next,
                    iterations: it,
                    converged: true,
                });
            }
            estimate = next;
        }
        Ok(SpectralNorm {
            value: estimate,
            iterations: max_iters,
            converged: false,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Which reading of the initial step parameter to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StepInit {
    /// `1 / ‖HᵀH‖₂ = 1 / ‖H‖₂²`, the usual gradient step bound.
    #[default]
    InverseNormal,
    /// `1 / ‖HᵀH‖₂² = 1 / ‖H‖₂⁴`, the literal printed form.
    InverseNormalSquared,
}

impl StepInit {
    pub fn value(self, op_norm: f64) -> f64 {
        match self {
            StepInit::InverseNormal => 1.0 / (op_norm * op_norm),
            StepInit::InverseNormalSquared => 1.0 / op_norm.powi(4),
        }
    }
}

fn fft2(grid: &mut [Complex64], rows: usize, cols: usize) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(cols);
    for row in grid.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for j in 0..cols {
        for i in 0..rows {
            column[i] = grid[i * cols + j];
        }
        col_fft.process(&mut column);
        for i in 0..rows {
            grid[i * cols + j] = column[i];
        }
    }
}

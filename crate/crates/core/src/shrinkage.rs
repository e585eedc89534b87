//! Scalar shrinkage functions.
//!
//! A [`SplineShrinkage`] is `T(x) = Σ_{p=−P..P} c_p β(x/Δ − p)` with `β` the
//! centered uniform B-spline of degree 1 (hat) or 3 (cubic). Outside the
//! last fully supported point `x_b = ±(P − degree)Δ` it continues linearly
//! with the value and slope taken at `x_b`, so the identity coefficients
//! `c_p = pΔ` give `T(x) = x` on the whole real line.

use crate::{Error, Result};

/// `sgn(z) · max(|z| − τ, 0)`.
pub fn soft_threshold(z: f64, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("threshold must be non-negative, got {tau}")));
    }
    Ok(shrink(z, tau))
}

/// Soft-thresholding without argument validation.
#[inline]
pub(crate) fn shrink(z: f64, tau: f64) -> f64 {
    let m = z.abs() - tau;
    if m > 0.0 {
        m.copysign(z)
    } else {
        0.0
    }
}

/// `γ = φ(α)`: `e^{α−1}` for `α ≤ 1`, else `α`. Always positive.
#[inline]
pub fn step_map(alpha: f64) -> f64 {
    if alpha <= 1.0 {
        (alpha - 1.0).exp()
    } else {
        alpha
    }
}

#[inline]
pub fn step_map_deriv(alpha: f64) -> f64 {
    if alpha <= 1.0 {
        (alpha - 1.0).exp()
    } else {
        1.0
    }
}

/// Inverse of [`step_map`] for `γ > 0`.
pub fn step_map_inverse(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {gamma}")));
    }
    Ok(if gamma <= 1.0 { 1.0 + gamma.ln() } else { gamma })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Degree {
    Linear,
    Cubic,
}

impl Degree {
    pub fn order(self) -> usize {
        match self {
            Degree::Linear => 1,
            Degree::Cubic => 3,
        }
    }

    /// Half-width of the basis support.
    fn radius(self) -> isize {
        match self {
            Degree::Linear => 1,
            Degree::Cubic => 2,
        }
    }

    #[inline]
    fn basis(self, t: f64) -> f64 {
        let a = t.abs();
        match self {
            Degree::Linear => (1.0 - a).max(0.0),
            Degree::Cubic => {
                if a < 1.0 {
                    2.0 / 3.0 - a * a + 0.5 * a * a * a
                } else if a < 2.0 {
                    let b = 2.0 - a;
                    b * b * b / 6.0
                } else {
                    0.0
                }
            }
        }
    }

    /// One-sided derivative of the basis; `from_left` selects the limit
    /// from below, which only matters at the knots of the hat function.
    #[inline]
    fn basis_deriv(self, t: f64, from_left: bool) -> f64 {
        match self {
            Degree::Linear => {
                let rising = if from_left {
                    t > -1.0 && t <= 0.0
                } else {
                    (-1.0..0.0).contains(&t)
                };
                let falling = if from_left {
                    t > 0.0 && t <= 1.0
                } else {
                    (0.0..1.0).contains(&t)
                };
                if rising {
                    1.0
                } else if falling {
                    -1.0
                } else {
                    0.0
                }
            }
            Degree::Cubic => {
                let a = t.abs();
                if a < 1.0 {
                    -2.0 * t + 1.5 * t * a
                } else if a < 2.0 {
                    let b = 2.0 - a;
                    -0.5 * b * b * t.signum()
                } else {
                    0.0
                }
            }
        }
    }
}

impl TryFrom<u32> for Degree {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            1 => Ok(Degree::Linear),
            3 => Ok(Degree::Cubic),
            other => Err(Error::invalid(format!("spline degree must be 1 or 3, got {other}"))),
        }
    }
}

/// Knot layout shared by all shrinkages of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineGrid {
    half_width: usize,
    delta: f64,
    degree: Degree,
}

impl SplineGrid {
    pub fn new(half_width: usize, delta: f64, degree: Degree) -> Result<Self> {
        if half_width <= degree.order() {
            return Err(Error::invalid(format!(
                "need P > degree, got P = {half_width} for degree {}",
                degree.order()
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {delta}")));
        }
        Ok(SplineGrid {
            half_width,
            delta,
            degree,
        })
    }

    /// `P`
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// `2P + 1`
    pub fn len(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    /// Last fully supported abscissa in grid units, `P − degree`.
    fn edge(&self) -> f64 {
        (self.half_width - self.degree.order()) as f64
    }

    /// `x_b = (P − degree) Δ`
    pub fn extrapolation_edge(&self) -> f64 {
        self.edge() * self.delta
    }

    /// Coefficients of the scaled identity `T(x) = scale · x`.
    pub fn identity_coeffs(&self, scale: f64) -> Vec<f64> {
        let p = self.half_width as isize;
        (-p..=p).map(|i| scale * i as f64 * self.delta).collect()
    }

    /// Calls `f(index, w)` for every coefficient with `T(x) = Σ c[index] w`.
    #[inline]
    fn for_each_weight(&self, x: f64, mut f: impl FnMut(usize, f64)) {
        let xi = x / self.delta;
        let edge = self.edge();
        let (anchor, offset, from_left) = if xi > edge {
            (edge, xi - edge, true)
        } else if xi < -edge {
            (-edge, xi + edge, false)
        } else {
            (xi, 0.0, false)
        };
        let p = self.half_width as isize;
        let r = self.degree.radius();
        let lo = ((anchor.ceil() as isize) - r).max(-p);
        let hi = ((anchor.floor() as isize) + r).min(p);
        for q in lo..=hi {
            let t = anchor - q as f64;
            let mut w = self.degree.basis(t);
            if offset != 0.0 {
                w += self.degree.basis_deriv(t, from_left) * offset;
            }
            f((q + p) as usize, w);
        }
    }

    pub fn eval(&self, coeffs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.len());
        let mut acc = 0.0;
        self.for_each_weight(x, |n, w| acc += coeffs[n] * w);
        acc
    }

    /// `dT/dx`; constant outside `±x_b`.
    pub fn deriv(&self, coeffs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.len());
        let edge = self.edge();
        let raw = x / self.delta;
        let xi = raw.clamp(-edge, edge);
        // slopes at and beyond the right edge come from the segment inside it
        let from_left = raw >= edge;
        let p = self.half_width as isize;
        let r = self.degree.radius();
        let lo = ((xi.ceil() as isize) - r).max(-p);
        let hi = ((xi.floor() as isize) + r).min(p);
        let mut acc = 0.0;
        for q in lo..=hi {
            acc += coeffs[(q + p) as usize] * self.degree.basis_deriv(xi - q as f64, from_left);
        }
        acc / self.delta
    }

    /// `grad[p] += residual · ∂T(x)/∂c_p`
    #[inline]
    pub fn accumulate_coeff_grad(&self, x: f64, residual: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.len());
        self.for_each_weight(x, |n, w| grad[n] += residual * w);
    }

    /// `g_p = Σ_n residual_n · ∂T(inputs_n)/∂c_p`
    pub fn coeff_grad(&self, inputs: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() != residual.len() {
            return Err(Error::invalid(format!(
                "inputs ({}) and residual ({}) differ in length",
                inputs.len(),
                residual.len()
            )));
        }
        let mut grad = vec![0.0; self.len()];
        for (&x, &r) in inputs.iter().zip(residual) {
            if r != 0.0 {
                self.accumulate_coeff_grad(x, r, &mut grad);
            }
        }
        Ok(grad)
    }
}

/// A grid together with its own coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineShrinkage {
    grid: SplineGrid,
    coeffs: Vec<f64>,
}

impl SplineShrinkage {
    pub fn new(grid: SplineGrid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(SplineShrinkage { grid, coeffs })
    }

    pub fn identity(grid: SplineGrid) -> Self {
        SplineShrinkage {
            coeffs: grid.identity_coeffs(1.0),
            grid,
        }
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.grid.eval(&self.coeffs, x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.grid.deriv(&self.coeffs, x)
    }

    pub fn coeff_grad(&self, inputs: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
        self.grid.coeff_grad(inputs, residual)
    }
}

//! The trainable unrolled network (TPPA).
//!
//! Layer `t` computes
//!
//! ```text
//! s^t = μ_t x^{t−1} + (1 − μ_t) x^{t−2}
//! z^t = s^t − φ(α_t) Hᵀ(H s^t − y)
//! x^t = Σ_k W_kᵀ T_k^t(W_k z^t)
//! ```
//!
//! where `T_k^t` is a B-spline shrinkage on detail coefficients and the
//! fixed gain ¼ on approximation coefficients (unless `shrink_approx` is
//! set, in which case the spline sees every coefficient). The ¼ is the
//! tight-frame constant absorbed into the coefficients, which is why the
//! identity initialization uses `c_p = pΔ/4`.

use crate::haar4::{self, CHANNELS};
use crate::linops::ConvOperator;
use crate::shrinkage::{step_map, Degree, SplineGrid};
use crate::solver::momentum_weights;
use crate::{Error, Image, Result};

/// Shape of a parameter vector: layer count, spline grid and sharing mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaLayout {
    pub layers: usize,
    pub grid: SplineGrid,
    /// One set of parameters shared by every layer.
    pub tied: bool,
    /// Apply the splines to approximation coefficients as well.
    pub shrink_approx: bool,
}

impl ThetaLayout {
    /// Number of distinct parameter slabs (1 when tied).
    pub fn slabs(&self) -> usize {
        if self.tied {
            1.min(self.layers)
        } else {
            self.layers
        }
    }

    /// `dim(θ) = S + S·4·(2P+1)` with `S` the number of slabs.
    pub fn dim(&self) -> usize {
        self.slabs() * (1 + CHANNELS * self.grid.len())
    }

    /// Index of `α` for layer `t` (0-based).
    pub fn alpha_index(&self, t: usize) -> usize {
        if self.tied {
            0
        } else {
            t
        }
    }

    /// Offset of `c^t_k` (0-based `t`, `k`).
    pub fn coeff_offset(&self, t: usize, k: usize) -> usize {
        let slab = self.alpha_index(t);
        self.slabs() + (slab * CHANNELS + k) * self.grid.len()
    }

    fn spline_at(&self, k: usize, i: usize, j: usize) -> bool {
        self.shrink_approx || haar4::is_detail(k, i, j)
    }
}

/// The trainable parameters `{α_t, c^t_{k,p}}`.
///
/// Stored flat: the `α` values first, then coefficient vectors in
/// `(t, k, p)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Theta {
    layout: ThetaLayout,
    params: Vec<f64>,
}

impl Theta {
    pub fn from_params(layout: ThetaLayout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.dim() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, layout needs {}",
                params.len(),
                layout.dim()
            )));
        }
        Ok(Theta { layout, params })
    }

    pub fn layout(&self) -> &ThetaLayout {
        &self.layout
    }

    pub fn layers(&self) -> usize {
        self.layout.layers
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.layout.grid
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.params[self.layout.alpha_index(t)]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.params[..self.layout.slabs()]
    }

    pub fn coeffs(&self, t: usize, k: usize) -> &[f64] {
        let off = self.layout.coeff_offset(t, k);
        &self.params[off..off + self.layout.grid.len()]
    }

    pub fn all_coeffs(&self) -> &[f64] {
        &self.params[self.layout.slabs()..]
    }

    /// Step size `γ_t = φ(α_t)`.
    pub fn step(&self, t: usize) -> f64 {
        step_map(self.alpha(t))
    }
}

/// Identity-initialized parameters: every `c^t_{k,p} = pΔ/4`, every
/// `α_t = α₀`.
pub fn init_theta(
    layers: usize,
    half_width: usize,
    delta: f64,
    degree: Degree,
    alpha0: f64,
    tied: bool,
    shrink_approx: bool,
) -> Result<Theta> {
    if !alpha0.is_finite() {
        return Err(Error::invalid("initial step parameter must be finite"));
    }
    let grid = SplineGrid::new(half_width, delta, degree)?;
    let layout = ThetaLayout {
        layers,
        grid,
        tied,
        shrink_approx,
    };
    let identity = grid.identity_coeffs(0.25);
    let mut params = vec![alpha0; layout.slabs()];
    for _ in 0..layout.slabs() * CHANNELS {
        params.extend_from_slice(&identity);
    }
    Theta::from_params(layout, params)
}

/// Intermediates of one layer.
#[derive(Clone, Debug)]
pub struct TapeLayer {
    pub s: Image,
    pub z: Image,
    /// `W_k z` for each channel.
    pub u: [Image; CHANNELS],
    pub x: Image,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    pub x0: Image,
    pub layers: Vec<TapeLayer>,
    /// `μ_1..μ_T`
    pub mu: Vec<f64>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `x^t` for `t` in `0..=T`.
    pub fn x(&self, t: usize) -> &Image {
        if t == 0 {
            &self.x0
        } else {
            &self.layers[t - 1].x
        }
    }

    pub fn output(&self) -> &Image {
        self.x(self.layers.len())
    }
}

/// One layer (0-based index `t`) of the network. Returns `(s, z, u, x)`.
pub fn tppa_layer(
    op: &ConvOperator,
    y: &Image,
    theta: &Theta,
    t: usize,
    mu: f64,
    x_prev: &Image,
    x_prev2: &Image,
) -> Result<TapeLayer> {
    let layout = theta.layout();
    let s = Image::lin_comb(mu, x_prev, 1.0 - mu, x_prev2);
    let grad = op.data_gradient(&s, y)?;
    let z = Image::lin_comb(1.0, &s, -theta.step(t), &grad);
    let (rows, cols) = z.dims();
    let mut x = Image::zeros(rows, cols);
    let mut u: [Image; CHANNELS] = std::array::from_fn(|_| Image::zeros(0, 0));
    for (k, slot) in u.iter_mut().enumerate() {
        let coeffs = theta.coeffs(t, k);
        let uk = haar4::analysis_channel(&z, k)?;
        let mut v = uk.clone();
        for i in 0..rows {
            for j in 0..cols {
                let c = uk[(i, j)];
                v[(i, j)] = if layout.spline_at(k, i, j) {
                    layout.grid.eval(coeffs, c)
                } else {
                    0.25 * c
                };
            }
        }
        haar4::synthesis_channel_into(&v, k, &mut x)?;
        *slot = uk;
    }
    if !x.all_finite() {
        return Err(Error::NonFinite { layer: t + 1 });
    }
    Ok(TapeLayer { s, z, u, x })
}

/// Runs layers `start..T` from the given `(x^{start}, x^{start−1})`, and
/// returns `x^T`. Used to differentiate a tail of the network.
pub fn tppa_tail(
    op: &ConvOperator,
    y: &Image,
    theta: &Theta,
    start: usize,
    x_prev: &Image,
    x_prev2: &Image,
) -> Result<Image> {
    let mu = momentum_weights(theta.layers());
    let mut x1 = x_prev.clone();
    let mut x2 = x_prev2.clone();
    for (t, &m) in mu.iter().enumerate().skip(start) {
        let layer = tppa_layer(op, y, theta, t, m, &x1, &x2)?;
        x2 = std::mem::replace(&mut x1, layer.x);
    }
    Ok(x1)
}

fn check_inputs(op: &ConvOperator, y: &Image) -> Result<()> {
    y.ensure_dims(op.dims())?;
    let (rows, cols) = y.dims();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::invalid(format!(
            "network input must have even dimensions, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// Full forward pass from `x⁰ = x⁻¹ = 0`, recording the tape.
pub fn tppa_forward(op: &ConvOperator, y: &Image, theta: &Theta) -> Result<(Image, Tape)> {
    check_inputs(op, y)?;
    let (rows, cols) = y.dims();
    let mu = momentum_weights(theta.layers());
    let x0 = Image::zeros(rows, cols);
    let mut layers: Vec<TapeLayer> = Vec::with_capacity(theta.layers());
    for (t, &m) in mu.iter().enumerate() {
        let (x1, x2) = match t {
            0 => (&x0, &x0),
            1 => (&layers[0].x, &x0),
            _ => (&layers[t - 1].x, &layers[t - 2].x),
        };
        let layer = tppa_layer(op, y, theta, t, m, x1, x2)?;
        layers.push(layer);
    }
    let tape = Tape { x0, layers, mu };
    Ok((tape.output().clone(), tape))
}

/// Forward pass without keeping the tape.
pub fn tppa_reconstruct(op: &ConvOperator, y: &Image, theta: &Theta) -> Result<Image> {
    check_inputs(op, y)?;
    let zero = Image::zeros(y.rows(), y.cols());
    tppa_tail(op, y, theta, 0, &zero, &zero)
}

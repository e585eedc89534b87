//! Reverse-mode gradient of the training loss through the unrolled network.
//!
//! With `r^t = ∂E/∂x^t` and `J_t = Σ_k W_kᵀ diag(T′(u^t_k)) W_k` (symmetric),
//! the backward sweep from `r^T = x̂ − x`, `v^{T+1} = 0`, `μ_{T+1} = 1` is
//!
//! ```text
//! b^t     = J_t r^t
//! v^t     = b^t − γ_t HᵀH b^t
//! r^{t−1} = μ_t v^t + (1 − μ_{t+1}) v^{t+1}
//! ∂E/∂α_t   = −φ′(α_t) (H s^t − y)ᵀ H b^t
//! ∂E/∂c^t_k = Φ_kᵀ W_k r^t
//! ```
//!
//! `x^{t−1}` enters `s^t` with weight `μ_t` and `s^{t+1}` with weight
//! `1 − μ_{t+1}`, which is exactly the two-term recursion above; the
//! finite-difference oracle in this module confirms the indexing.

use rayon::prelude::*;

use crate::haar4::{self, CHANNELS};
use crate::harness::TrainingPair;
use crate::linops::ConvOperator;
use crate::network::{init_theta, tppa_forward, tppa_reconstruct, Tape, Theta, ThetaLayout};
use crate::rng::SeededRng;
use crate::shrinkage::{step_map_deriv, Degree};
use crate::{Error, Image, Result};

/// Gradient with the same layout as [`Theta`].
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaGrad {
    layout: ThetaLayout,
    values: Vec<f64>,
}

impl ThetaGrad {
    pub fn zeros(layout: ThetaLayout) -> Self {
        ThetaGrad {
            values: vec![0.0; layout.dim()],
            layout,
        }
    }

    pub fn layout(&self) -> &ThetaLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.values[self.layout.alpha_index(t)]
    }

    pub fn coeffs(&self, t: usize, k: usize) -> &[f64] {
        let off = self.layout.coeff_offset(t, k);
        &self.values[off..off + self.layout.grid.len()]
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &ThetaGrad) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `r^0..r^T` from a backward sweep.
#[derive(Clone, Debug)]
pub struct Residuals {
    pub r: Vec<Image>,
}

/// `½ ‖x̂ − x‖²` for one pair.
pub fn pair_loss(op: &ConvOperator, theta: &Theta, pair: &TrainingPair) -> Result<f64> {
    let xhat = tppa_reconstruct(op, &pair.measured, theta)?;
    Ok(0.5 * xhat.dist_sq(&pair.truth))
}

/// `E(θ) = ½ Σ_ℓ ‖x̂(θ, y_ℓ) − x_ℓ‖²`, summed in pair order.
pub fn loss(op: &ConvOperator, theta: &Theta, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("loss needs at least one training pair"));
    }
    pairs.iter().map(|p| pair_loss(op, theta, p)).sum()
}

/// Gradient of `½‖x̂ − x‖²` for one pair from its forward tape.
pub fn backprop_pair(op: &ConvOperator, theta: &Theta, tape: &Tape, y: &Image, truth: &Image) -> Result<ThetaGrad> {
    Ok(backprop_with_residuals(op, theta, tape, y, truth)?.0)
}

/// [`backprop_pair`] that also returns the residual images `r^t`.
pub fn backprop_with_residuals(
    op: &ConvOperator,
    theta: &Theta,
    tape: &Tape,
    y: &Image,
    truth: &Image,
) -> Result<(ThetaGrad, Residuals)> {
    let layout = *theta.layout();
    let layers = theta.layers();
    if tape.len() != layers || tape.mu.len() != layers {
        return Err(Error::invalid(format!(
            "tape has {} layers, parameters have {layers}",
            tape.len()
        )));
    }
    let dims = tape.x0.dims();
    y.ensure_dims(dims)?;
    truth.ensure_dims(dims)?;

    let grid = layout.grid;
    let (rows, cols) = dims;
    let mut grad = ThetaGrad::zeros(layout);
    let mut residuals = vec![Image::zeros(rows, cols); layers + 1];
    residuals[layers] = tape.output().sub(truth);

    let mut v_next = Image::zeros(rows, cols);
    let mut mu_next = 1.0;
    for t in (0..layers).rev() {
        let layer = &tape.layers[t];
        let r = &residuals[t + 1];

        let mut b = Image::zeros(rows, cols);
        for k in 0..CHANNELS {
            let coeffs = theta.coeffs(t, k);
            let off = layout.coeff_offset(t, k);
            let wr = haar4::analysis_channel(r, k)?;
            let mut d = wr.clone();
            let u = &layer.u[k];
            for i in 0..rows {
                for j in 0..cols {
                    let n = i * cols + j;
                    let (un, wrn) = (u.as_slice()[n], wr.as_slice()[n]);
                    if layout.shrink_approx || haar4::is_detail(k, i, j) {
                        d.as_mut_slice()[n] = wrn * grid.deriv(coeffs, un);
                        if wrn != 0.0 {
                            grid.accumulate_coeff_grad(un, wrn, &mut grad.values[off..off + grid.len()]);
                        }
                    } else {
                        d.as_mut_slice()[n] = 0.25 * wrn;
                    }
                }
            }
            haar4::synthesis_channel_into(&d, k, &mut b)?;
        }

        let hb = op.apply(&b)?;
        let data_residual = op.apply(&layer.s)?.sub(y);
        let alpha = theta.alpha(t);
        grad.values[layout.alpha_index(t)] -= step_map_deriv(alpha) * data_residual.dot(&hb);

        let v = Image::lin_comb(1.0, &b, -theta.step(t), &op.adjoint(&hb)?);
        let mu = tape.mu[t];
        residuals[t] = Image::lin_comb(mu, &v, 1.0 - mu_next, &v_next);
        v_next = v;
        mu_next = mu;
    }
    Ok((grad, Residuals { r: residuals }))
}

/// Forward + backward for one pair, returning its loss too.
pub fn pair_grad(op: &ConvOperator, theta: &Theta, pair: &TrainingPair) -> Result<(f64, ThetaGrad)> {
    let (xhat, tape) = tppa_forward(op, &pair.measured, theta)?;
    let grad = backprop_pair(op, theta, &tape, &pair.measured, &pair.truth)?;
    Ok((0.5 * xhat.dist_sq(&pair.truth), grad))
}

/// `Σ_ℓ ∇E_ℓ(θ)` and `E(θ)`. Pairs are processed in parallel; the
/// reduction runs sequentially in pair order so the result does not
/// depend on the thread count.
pub fn batch_grad(op: &ConvOperator, theta: &Theta, pairs: &[TrainingPair]) -> Result<(f64, ThetaGrad)> {
    if pairs.is_empty() {
        return Err(Error::invalid("batch gradient needs at least one training pair"));
    }
    let parts: Vec<Result<(f64, ThetaGrad)>> = pairs.par_iter().map(|pair| pair_grad(op, theta, pair)).collect();
    let mut total = ThetaGrad::zeros(*theta.layout());
    let mut energy = 0.0;
    for part in parts {
        let (e, g) = part?;
        energy += e;
        total.accumulate(&g);
    }
    Ok((energy, total))
}

/// Central differences of [`loss`] over every parameter, with step
/// `h · max(|θ_i|, 1)`.
pub fn numeric_grad(op: &ConvOperator, theta: &Theta, pairs: &[TrainingPair], h: f64) -> Result<ThetaGrad> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("finite differences need at least one training pair"));
    }
    let mut grad = ThetaGrad::zeros(*theta.layout());
    let mut probe = theta.clone();
    for i in 0..theta.dim() {
        let base = theta.params()[i];
        let step = h * base.abs().max(1.0);
        // E⁺ − E⁻ = ½ Σ (a⁺ − a⁻)(a⁺ + a⁻ − 2x), which avoids cancelling
        // two nearly equal losses.
        let mut diff = 0.0;
        for pair in pairs {
            probe.params_mut()[i] = base + step;
            let plus = tppa_reconstruct(op, &pair.measured, &probe)?;
            probe.params_mut()[i] = base - step;
            let minus = tppa_reconstruct(op, &pair.measured, &probe)?;
            for ((a, b), x) in plus.as_slice().iter().zip(minus.as_slice()).zip(pair.truth.as_slice()) {
                diff += 0.5 * (a - b) * (a + b - 2.0 * x);
            }
        }
        probe.params_mut()[i] = base;
        grad.values[i] = diff / (2.0 * step);
    }
    Ok(grad)
}

/// Largest componentwise relative discrepancy
/// `|a − b| / max(|a|, |b|, floor)` where `floor = 1e-5 · max_j max(|a_j|, |b_j|)`.
/// Central differences at a relative step of 1e-5 carry an absolute noise
/// of roughly 1e-11 times the gradient scale, so components far below the
/// floor are compared on absolute error against the scale instead.
pub fn max_relative_error(a: &ThetaGrad, b: &ThetaGrad) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    let floor = (1e-5 * scale).max(f64::MIN_POSITIVE);
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// One randomized gradient-check configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub size: usize,
    pub layers: usize,
    pub half_width: usize,
    pub degree: Degree,
    pub tied: bool,
    pub shrink_approx: bool,
    pub pairs: usize,
    pub seed: u64,
    /// Relative finite-difference step.
    pub h: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            size: 8,
            layers: 3,
            half_width: 4,
            degree: Degree::Cubic,
            tied: false,
            shrink_approx: false,
            pairs: 1,
            seed: 1,
            h: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub dim: usize,
    pub max_rel_error: f64,
    pub analytic: ThetaGrad,
    pub numeric: ThetaGrad,
}

/// Random problem instance for a gradient check: a 3×3 Gaussian blur,
/// noisy measurements of random images, and parameters perturbed away from
/// the identity so every term of the gradient is exercised.
pub fn gradcheck_instance(cfg: &GradCheckConfig) -> Result<(ConvOperator, Theta, Vec<TrainingPair>)> {
    if cfg.size < 2 || cfg.size % 2 != 0 {
        return Err(Error::invalid(format!(
            "gradcheck size must be even and ≥ 2, got {}",
            cfg.size
        )));
    }
    if cfg.pairs == 0 {
        return Err(Error::invalid("gradcheck needs at least one pair"));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let kernel = crate::linops::gaussian_psf(3, 0.5 + rng.uniform())?;
    let op = ConvOperator::new(kernel, cfg.size, cfg.size)?;
    let pairs = (0..cfg.pairs)
        .map(|_| {
            let truth = Image::from_fn(cfg.size, cfg.size, |_, _| rng.uniform());
            let clean = op.apply(&truth)?;
            let measured = Image::from_fn(cfg.size, cfg.size, |i, j| clean[(i, j)] + 0.02 * rng.gaussian());
            Ok(TrainingPair { truth, measured })
        })
        .collect::<Result<Vec<_>>>()?;

    let ys: Vec<&Image> = pairs.iter().map(|p| &p.measured).collect();
    let delta = crate::trainer::select_grid_spacing(&op, &ys, cfg.half_width, cfg.degree, 1.0)?;
    let mut theta = init_theta(
        cfg.layers,
        cfg.half_width,
        delta,
        cfg.degree,
        1.0,
        cfg.tied,
        cfg.shrink_approx,
    )?;
    let slabs = theta.layout().slabs();
    for (i, v) in theta.params_mut().iter_mut().enumerate() {
        if i < slabs {
            *v = rng.uniform_in(0.6, 1.4);
        } else {
            *v += 0.1 * delta * rng.gaussian();
        }
    }
    Ok((op, theta, pairs))
}

/// Compares [`batch_grad`] against [`numeric_grad`] on a random instance.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (op, theta, pairs) = gradcheck_instance(cfg)?;
    let (_, analytic) = batch_grad(&op, &theta, &pairs)?;
    let numeric = numeric_grad(&op, &theta, &pairs, cfg.h)?;
    Ok(GradCheckReport {
        config: *cfg,
        dim: theta.dim(),
        max_rel_error: max_relative_error(&analytic, &numeric),
        analytic,
        numeric,
    })
}

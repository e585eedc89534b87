//! Classical TV reconstruction with the fast parallel proximal algorithm.
//!
//! Each iteration is
//!
//! ```text
//! s  = μ_t x^{t−1} + (1 − μ_t) x^{t−2}
//! z  = s − γ Hᵀ(Hs − y)
//! x^t = ¼ Σ_k W_kᵀ S_λ(W_k z),   λ = 4√2 τ γ
//! ```
//!
//! where `S_λ` soft-thresholds the detail coefficients and leaves the
//! approximation coefficients alone. With `W = ½[W₁; …; W₄]` this is the
//! stacked update `Wᵀ T(Wz, 2√2 τγ)` since `T(az, aλ) = a T(z, λ)`.

use std::f64::consts::SQRT_2;

use crate::haar4::{self, CHANNELS};
use crate::linops::ConvOperator;
use crate::shrinkage::shrink;
use crate::{Error, Image, Result};

/// `(μ_t, q_t)` of the Nesterov schedule with `q₀ = 1`, for `t ≥ 1`.
pub fn momentum_schedule(t: usize) -> Result<(f64, f64)> {
    if t == 0 {
        return Err(Error::invalid("momentum schedule starts at t = 1"));
    }
    let mut schedule = Momentum::new();
    let mut last = (1.0, 1.0);
    for _ in 0..t {
        last = schedule.advance();
    }
    Ok(last)
}

/// Incremental form of [`momentum_schedule`].
#[derive(Clone, Copy, Debug)]
pub struct Momentum {
    q: f64,
}

impl Default for Momentum {
    fn default() -> Self {
        Self::new()
    }
}

impl Momentum {
    pub fn new() -> Self {
        Momentum { q: 1.0 }
    }

    /// `q_{t−1}` for the next call.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Steps `q_{t−1} → q_t` and returns `(μ_t, q_t)`.
    pub fn advance(&mut self) -> (f64, f64) {
        let prev = self.q;
        let q = 0.5 * (1.0 + (1.0 + 4.0 * prev * prev).sqrt());
        self.q = q;
        (1.0 - (1.0 - prev) / q, q)
    }
}

/// `μ_1..μ_T`
pub fn momentum_weights(layers: usize) -> Vec<f64> {
    let mut m = Momentum::new();
    (0..layers).map(|_| m.advance().0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FppaConfig {
    /// Regularization weight `τ`.
    pub tau: f64,
    /// Step size `γ`.
    pub step: f64,
    pub max_iters: usize,
    /// Stop once `‖x_t − x_{t−1}‖ / ‖x_{t−1}‖` falls to this value.
    pub rel_tol: f64,
}

impl FppaConfig {
    /// `γ = 1/‖H‖₂²`, 100 iterations, relative tolerance 1e-6.
    pub fn with_default_step(op: &ConvOperator, tau: f64) -> Self {
        let norm = op.spectral_norm_dft();
        FppaConfig {
            tau,
            step: 1.0 / (norm * norm),
            max_iters: 100,
            rel_tol: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be non-negative, got {}", self.tau)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("rel_tol must be non-negative"));
        }
        Ok(())
    }
}

/// `½‖y − Hx‖² + τ Σ (|∇ₓx| + |∇ᵧx|)` with periodic differences.
pub fn tv_cost(op: &ConvOperator, y: &Image, tau: f64, x: &Image) -> Result<f64> {
    let fit = 0.5 * op.apply(x)?.dist_sq(y);
    Ok(fit + tau * haar4::anisotropic_tv(x))
}

/// `¼ Σ_k W_kᵀ S_λ(W_k z)` with thresholding on details only.
pub fn frame_shrink(z: &Image, lambda: f64) -> Result<Image> {
    let (rows, cols) = z.dims();
    let mut out = Image::zeros(rows, cols);
    for k in 0..CHANNELS {
        let mut u = haar4::analysis_channel(z, k)?;
        for i in 0..rows {
            for j in 0..cols {
                if haar4::is_detail(k, i, j) {
                    u[(i, j)] = shrink(u[(i, j)], lambda);
                }
            }
        }
        haar4::synthesis_channel_into(&u, k, &mut out)?;
    }
    for v in out.as_mut_slice() {
        *v *= 0.25;
    }
    Ok(out)
}

/// Iteration state `(x^{t−1}, x^{t−2}, q_{t−1}, t)`.
#[derive(Clone, Debug)]
pub struct IterateState {
    pub x_prev: Image,
    pub x_prev2: Image,
    pub momentum: Momentum,
    pub t: usize,
}

/// Stepwise FPPA driver; [`fppa_reconstruct`] runs it to completion.
pub struct Fppa<'a> {
    op: &'a ConvOperator,
    y: &'a Image,
    cfg: FppaConfig,
    state: IterateState,
    initial_fit: f64,
}

impl<'a> Fppa<'a> {
    pub fn new(op: &'a ConvOperator, y: &'a Image, cfg: FppaConfig) -> Result<Self> {
        cfg.validate()?;
        y.ensure_dims(op.dims())?;
        let (rows, cols) = op.dims();
        let x0 = Image::zeros(rows, cols);
        Ok(Fppa {
            op,
            y,
            cfg,
            initial_fit: 0.5 * y.norm_sq(),
            state: IterateState {
                x_prev2: x0.clone(),
                x_prev: x0,
                momentum: Momentum::new(),
                t: 0,
            },
        })
    }

    pub fn state(&self) -> &IterateState {
        &self.state
    }

    pub fn current(&self) -> &Image {
        &self.state.x_prev
    }

    /// Runs one iteration and returns the data-fidelity term of the new
    /// iterate.
    pub fn step(&mut self) -> Result<f64> {
        let (mu, _) = self.state.momentum.advance();
        let s = Image::lin_comb(mu, &self.state.x_prev, 1.0 - mu, &self.state.x_prev2);
        let grad = self.op.data_gradient(&s, self.y)?;
        let z = Image::lin_comb(1.0, &s, -self.cfg.step, &grad);
        let lambda = 4.0 * SQRT_2 * self.cfg.tau * self.cfg.step;
        let x = frame_shrink(&z, lambda)?;
        self.state.t += 1;
        let fit = 0.5 * self.op.apply(&x)?.dist_sq(self.y);
        if !fit.is_finite() || (fit > 10.0 * self.initial_fit && fit > 0.0) {
            return Err(Error::Diverged {
                iteration: self.state.t,
                value: fit,
                initial: self.initial_fit,
            });
        }
        let prev = std::mem::replace(&mut self.state.x_prev, x);
        self.state.x_prev2 = prev;
        Ok(fit)
    }

    /// `‖x^t − x^{t−1}‖ / ‖x^{t−1}‖`, or infinity when `x^{t−1} = 0`.
    pub fn relative_change(&self) -> f64 {
        let denom = self.state.x_prev2.norm();
        if denom == 0.0 {
            return f64::INFINITY;
        }
        self.state.x_prev.dist_sq(&self.state.x_prev2).sqrt() / denom
    }
}

#[derive(Clone, Debug)]
pub struct FppaOutput {
    pub x: Image,
    /// TV cost of `x¹, x², …`.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fppa_reconstruct(op: &ConvOperator, y: &Image, cfg: FppaConfig) -> Result<FppaOutput> {
    let mut solver = Fppa::new(op, y, cfg)?;
    let mut cost_trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    while solver.state.t < cfg.max_iters {
        let fit = solver.step()?;
        cost_trace.push(fit + cfg.tau * haar4::anisotropic_tv(solver.current()));
        if solver.relative_change() <= cfg.rel_tol {
            converged = true;
            break;
        }
    }
    log::debug!(
        "fppa: {} iterations, converged = {converged}, final cost {:?}",
        solver.state.t,
        cost_trace.last()
    );
    Ok(FppaOutput {
        iterations: solver.state.t,
        x: solver.state.x_prev,
        cost_trace,
        converged,
    })
}

//! Accelerated full-batch gradient descent on the network parameters.

use log::{debug, warn};

use crate::backprop::batch_grad;
use crate::haar4::{self, CHANNELS};
use crate::harness::TrainingPair;
use crate::linops::ConvOperator;
use crate::network::{init_theta, Theta};
use crate::shrinkage::{step_map, Degree};
use crate::{Error, Image, Result};

/// Consecutive learning-rate halvings tolerated before giving up.
pub const MAX_HALVINGS: usize = 5;

/// A step whose loss exceeds this multiple of `E(θ⁽⁰⁾)` counts as diverged,
/// like a non-finite loss.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Spline spacing covering the coefficient range seen after one layer at
/// initialization, with a 25% margin: `Δ = 1.25 r / (P − degree)` where
/// `r = max_ℓ max_k ‖W_k z¹_ℓ‖∞` and `z¹ = φ(α₀) Hᵀy` (since `x⁰ = 0`).
pub fn select_grid_spacing(
    op: &ConvOperator,
    measurements: &[&Image],
    half_width: usize,
    degree: Degree,
    alpha0: f64,
) -> Result<f64> {
    if measurements.is_empty() {
        return Err(Error::invalid("grid spacing needs at least one measurement"));
    }
    if half_width <= degree.order() {
        return Err(Error::invalid(format!(
            "spline half-width {half_width} must exceed the degree {}",
            degree.order()
        )));
    }
    let gamma = step_map(alpha0);
    let mut r: f64 = 0.0;
    for y in measurements {
        let z = op.adjoint(y)?.scaled(gamma);
        for k in 0..CHANNELS {
            r = r.max(haar4::analysis_channel(&z, k)?.max_abs());
        }
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!(
            "pilot coefficient range is {r}; measurements are degenerate"
        )));
    }
    Ok(1.25 * r / (half_width - degree.order()) as f64)
}

/// Architecture and initialization of a fresh network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub half_width: usize,
    pub degree: Degree,
    pub alpha0: f64,
    pub tied: bool,
    pub shrink_approx: bool,
    /// Fixed spacing; `None` selects it from the data.
    pub delta: Option<f64>,
}

impl ModelConfig {
    pub fn init(&self, op: &ConvOperator, pairs: &[TrainingPair]) -> Result<Theta> {
        let delta = match self.delta {
            Some(d) => d,
            None => {
                let ys: Vec<&Image> = pairs.iter().map(|p| &p.measured).collect();
                select_grid_spacing(op, &ys, self.half_width, self.degree, self.alpha0)?
            }
        };
        init_theta(
            self.layers,
            self.half_width,
            delta,
            self.degree,
            self.alpha0,
            self.tied,
            self.shrink_approx,
        )
    }
}

/// Which multiple of `∇E` the learning rate is applied to. The reported
/// loss is always the summed `E`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientScale {
    /// `(1/L) ∇E`: the step sees the mean error over the `L` training pairs,
    /// so a given learning rate behaves the same for any dataset size.
    #[default]
    PairMean,
    /// `∇E` as is.
    Sum,
}

impl GradientScale {
    pub fn factor(self, pairs: usize) -> f64 {
        match self {
            GradientScale::PairMean => 1.0 / pairs as f64,
            GradientScale::Sum => 1.0,
        }
    }
}

impl std::str::FromStr for GradientScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(GradientScale::PairMean),
            "sum" => Ok(GradientScale::Sum),
            _ => Err(Error::invalid(format!(
                "unknown gradient scale {s:?} (expected mean or sum)"
            ))),
        }
    }
}

impl std::fmt::Display for GradientScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradientScale::PairMean => "mean",
            GradientScale::Sum => "sum",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub iters: usize,
    pub scale: GradientScale,
    /// Reset the momentum whenever the training loss goes up.
    pub restart: bool,
}

impl TrainConfig {
    pub fn new(lr: f64, iters: usize) -> Self {
        TrainConfig {
            lr,
            iters,
            scale: GradientScale::default(),
            restart: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and ≥ 0, got {}",
                self.lr
            )));
        }
        if self.iters == 0 {
            return Err(Error::invalid("training needs at least one iteration"));
        }
        Ok(())
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// `θ⁽ⁱ⁾`
    pub theta: Theta,
    /// Extrapolated point `φ⁽ⁱ⁾` where the next gradient is taken.
    pub lookahead: Theta,
    pub q: f64,
    /// Completed iterations `i`.
    pub iteration: usize,
    pub lr: f64,
    pub scale: GradientScale,
    pub restart: bool,
    /// `E(θ⁽⁰⁾), …, E(θ⁽ⁱ⁾)`
    pub loss_trace: Vec<f64>,
    pub halvings: usize,
}

impl TrainState {
    pub fn start(op: &ConvOperator, pairs: &[TrainingPair], theta0: Theta, cfg: TrainConfig) -> Result<Self> {
        let e0 = crate::backprop::loss(op, &theta0, pairs)?;
        if !e0.is_finite() {
            return Err(Error::TrainingAborted(format!("initial loss is {e0}")));
        }
        Ok(TrainState {
            lookahead: theta0.clone(),
            theta: theta0,
            q: 1.0,
            iteration: 0,
            lr: cfg.lr,
            scale: cfg.scale,
            restart: cfg.restart,
            loss_trace: vec![e0],
            halvings: 0,
        })
    }
}

fn accepted_loss(op: &ConvOperator, pairs: &[TrainingPair], theta: &Theta, limit: f64) -> Result<Option<f64>> {
    match crate::backprop::loss(op, theta, pairs) {
        Ok(e) if e.is_finite() && e <= limit => Ok(Some(e)),
        Ok(_) => Ok(None),
        Err(e) if e.is_numeric() => Ok(None),
        Err(e) => Err(e),
    }
}

/// One accelerated step from `state`. A non-finite loss, or one above
/// `DIVERGENCE_FACTOR · E(θ⁽⁰⁾)`, halves the learning rate and restarts the
/// momentum from the last accepted iterate.
pub fn train_step(op: &ConvOperator, pairs: &[TrainingPair], state: &mut TrainState) -> Result<()> {
    let mut consecutive = 0;
    let limit = DIVERGENCE_FACTOR * state.loss_trace[0];
    let factor = state.scale.factor(pairs.len());
    loop {
        let grad = match batch_grad(op, &state.lookahead, pairs) {
            Ok((_, g)) if g.values().iter().all(|v| v.is_finite()) => Some(g),
            Ok(_) => None,
            Err(e) if e.is_numeric() => None,
            Err(e) => return Err(e),
        };
        let candidate = grad.map(|g| {
            let mut next = state.lookahead.clone();
            let step = state.lr * factor;
            for (p, d) in next.params_mut().iter_mut().zip(g.values()) {
                *p -= step * d;
            }
            next
        });
        let energy = match &candidate {
            Some(next) => accepted_loss(op, pairs, next, limit)?,
            None => None,
        };
        match (candidate, energy) {
            (Some(next), Some(e)) => {
                let previous = *state.loss_trace.last().expect("trace holds E(θ⁰)");
                if state.restart && e > previous {
                    debug!("iteration {}: loss went up, momentum restarted", state.iteration + 1);
                    state.q = 1.0;
                }
                let q_next = 0.5 * (1.0 + (1.0 + 4.0 * state.q * state.q).sqrt());
                let beta = (state.q - 1.0) / q_next;
                let mut lookahead = next.clone();
                for ((l, n), o) in lookahead
                    .params_mut()
                    .iter_mut()
                    .zip(next.params())
                    .zip(state.theta.params())
                {
                    *l = n + beta * (n - o);
                }
                state.theta = next;
                state.lookahead = lookahead;
                state.q = q_next;
                state.iteration += 1;
                state.loss_trace.push(e);
                debug!("iteration {}: E = {e:.6e}", state.iteration);
                return Ok(());
            }
            _ => {
                consecutive += 1;
                state.halvings += 1;
                if consecutive > MAX_HALVINGS {
                    return Err(Error::TrainingAborted(format!(
                        "loss kept diverging after {MAX_HALVINGS} learning-rate halvings at iteration {}",
                        state.iteration + 1
                    )));
                }
                state.lr *= 0.5;
                state.q = 1.0;
                state.lookahead = state.theta.clone();
                warn!(
                    "diverging loss at iteration {}; learning rate halved to {:e}",
                    state.iteration + 1,
                    state.lr
                );
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub theta: Theta,
    pub loss_trace: Vec<f64>,
    pub final_lr: f64,
    pub halvings: usize,
}

/// Runs `cfg.iters` iterations from `theta0`. `observe` sees the state
/// after every iteration (checkpointing, logging).
pub fn train_with(
    op: &ConvOperator,
    pairs: &[TrainingPair],
    cfg: TrainConfig,
    theta0: Theta,
    mut observe: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let state = TrainState::start(op, pairs, theta0, cfg)?;
    resume(op, pairs, cfg.iters, state, &mut observe)
}

/// Continues `state` until `total_iters` iterations have completed.
pub fn resume(
    op: &ConvOperator,
    pairs: &[TrainingPair],
    total_iters: usize,
    mut state: TrainState,
    mut observe: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutput> {
    if pairs.is_empty() {
        return Err(Error::invalid("training needs at least one pair"));
    }
    while state.iteration < total_iters {
        train_step(op, pairs, &mut state)?;
        observe(&state)?;
    }
    Ok(TrainOutput {
        theta: state.theta,
        loss_trace: state.loss_trace,
        final_lr: state.lr,
        halvings: state.halvings,
    })
}

pub fn train(op: &ConvOperator, pairs: &[TrainingPair], cfg: TrainConfig, theta0: Theta) -> Result<TrainOutput> {
    train_with(op, pairs, cfg, theta0, |_| Ok(()))
}

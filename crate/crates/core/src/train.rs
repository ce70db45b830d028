//! Optimization loop: Adam with a OneCycle learning-rate schedule, global
//! gradient-norm clipping and unit-norm renormalization of the trained filters.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_and_gradient, Parameters};
use crate::chain::{synchronize, Link};
use crate::error::{Error, Result};
use crate::eval;
use crate::rng;
use crate::signal::{design_rrc, FirFilter};

/// Which filters receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "PS")]
    PulseShaper,
    #[serde(rename = "RxF")]
    RxFilter,
    #[serde(rename = "PS_and_RxF")]
    Joint,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::PulseShaper, Mode::RxFilter, Mode::Joint];

    pub fn trains_pulse_shaper(self) -> bool {
        matches!(self, Mode::PulseShaper | Mode::Joint)
    }

    pub fn trains_rx_filter(self) -> bool {
        matches!(self, Mode::RxFilter | Mode::Joint)
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::PulseShaper => "PS",
            Mode::RxFilter => "RxF",
            Mode::Joint => "PS_and_RxF",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?} (expected PS, RxF or PS_and_RxF)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Cosine warm-up from `lr0` to `max_lr_factor * lr0` over the first
/// `pct_start` of the steps, then cosine annealing to `lr0 / final_div`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneCycle {
    pub pct_start: f64,
    pub max_lr_factor: f64,
    pub final_div: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            pct_start: 0.3,
            max_lr_factor: 10.0,
            final_div: 25.0,
        }
    }
}

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

impl OneCycle {
    /// Index of the step at which the peak rate is reached.
    pub fn peak_step(&self, total_steps: usize) -> usize {
        ((self.pct_start * total_steps as f64).round() as usize).min(total_steps.saturating_sub(1))
    }

    pub fn lr(&self, step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
        if step >= total_steps {
            return Err(Error::invalid(format!(
                "step {step} outside schedule of {total_steps} steps"
            )));
        }
        let peak = self.peak_step(total_steps);
        let max_lr = self.max_lr_factor * lr0;
        let final_lr = lr0 / self.final_div;
        Ok(if step <= peak {
            if peak == 0 {
                max_lr
            } else {
                cosine(lr0, max_lr, step as f64 / peak as f64)
            }
        } else {
            let span = (total_steps - 1 - peak) as f64;
            cosine(max_lr, final_lr, (step - peak) as f64 / span)
        })
    }
}

pub fn onecycle_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    OneCycle::default().lr(step, total_steps, lr0)
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid("parameter, gradient and moment shapes differ"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::fault("adam_step", format!("non-finite gradient at index {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], clip_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
    }
    norm
}

/// Unit-L2 renormalization of every learnable filter; fixed filters are left alone.
pub fn renormalize_filters(filters: &mut [&mut FirFilter]) -> Result<()> {
    for f in filters.iter_mut().filter(|f| f.learnable()) {
        f.normalize()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub num_taps: usize,
    pub batch_size: usize,
    pub total_train_symbols: usize,
    pub lr0: f64,
    pub lr0_grid: Vec<f64>,
    pub schedule: OneCycle,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Rolloff of the RRC initialization (and of fixed filters).
    pub rolloff: f64,
    /// Symbols used to rank learning rates during screening.
    pub validation_symbols: usize,
    pub pilot_symbols: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Joint,
            num_taps: 25,
            batch_size: 1000,
            total_train_symbols: 2_500_000,
            lr0: 1e-3,
            lr0_grid: vec![5e-3, 1e-3, 5e-4, 1e-4, 5e-5],
            schedule: OneCycle::default(),
            clip_norm: 1.0,
            adam: AdamConfig::default(),
            rolloff: 0.01,
            validation_symbols: 100_000,
            pilot_symbols: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> Result<usize> {
        if self.batch_size == 0 || !self.total_train_symbols.is_multiple_of(self.batch_size) {
            return Err(Error::Configuration(format!(
                "training symbols ({}) must be a positive multiple of the batch size ({})",
                self.total_train_symbols, self.batch_size
            )));
        }
        let steps = self.total_train_symbols / self.batch_size;
        if steps == 0 {
            return Err(Error::Configuration("training needs at least one batch".into()));
        }
        Ok(steps)
    }

    pub fn max_lr(&self) -> f64 {
        self.schedule.max_lr_factor * self.lr0
    }
}

/// Trace of the per-step pipeline, for callers that want to observe ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Forward { step: usize, loss: f64 },
    Backward { step: usize },
    Clip { step: usize, norm: f64 },
    Adam { step: usize, lr: f64 },
    Renormalize { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedFilters {
    pub mode: Mode,
    pub lr0: f64,
    pub pulse_shaper: FirFilter,
    pub rx_filter: FirFilter,
    /// Decision offset fixed at the start of training.
    pub offset: isize,
    pub losses: Vec<LossRecord>,
}

impl TrainedFilters {
    /// Mean loss over the first and the last `frac` of the trace.
    pub fn loss_head_tail(&self, frac: f64) -> (f64, f64) {
        let n = ((self.losses.len() as f64 * frac).round() as usize).clamp(1, self.losses.len());
        let mean = |s: &[LossRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
        (mean(&self.losses[..n]), mean(&self.losses[self.losses.len() - n..]))
    }
}

/// RRC initial filters for a mode: the trained ones are flagged learnable.
pub fn initial_filters(cfg: &TrainConfig, sps: usize) -> Result<(FirFilter, FirFilter)> {
    let mut ps = design_rrc(cfg.num_taps, sps, cfg.rolloff)?;
    let mut rx = ps.clone();
    ps.set_learnable(cfg.mode.trains_pulse_shaper());
    rx.set_learnable(cfg.mode.trains_rx_filter());
    Ok((ps, rx))
}

fn at_step(err: Error, step: usize) -> Error {
    match err {
        Error::NumericalFault { op, detail } => Error::NumericalFault {
            op,
            detail: format!("{detail} (training step {step})"),
        },
        other => other,
    }
}

pub fn train(link: &Link, cfg: &TrainConfig) -> Result<TrainedFilters> {
    train_observed(link, cfg, |_| {})
}

/// Runs forward, backward, clip, Adam and renormalization once per batch of
/// fresh symbols and noise, reporting each stage to `observer`.
pub fn train_observed(link: &Link, cfg: &TrainConfig, mut observer: impl FnMut(TrainEvent)) -> Result<TrainedFilters> {
    if cfg.batch_size != link.config().batch_size {
        return Err(Error::Configuration(format!(
            "training batch size {} differs from link batch size {}",
            cfg.batch_size,
            link.config().batch_size
        )));
    }
    if !(cfg.clip_norm > 0.0) {
        return Err(Error::Configuration("clip_norm must be positive".into()));
    }
    if !(cfg.lr0 > 0.0 && cfg.lr0.is_finite()) {
        return Err(Error::Configuration(format!("lr0 must be positive, got {}", cfg.lr0)));
    }
    let steps = cfg.steps()?;
    let (mut ps, mut rx) = initial_filters(cfg, link.spec().sps())?;
    let offset = synchronize(link, &ps, &rx, cfg.num_taps, cfg.seed)?;
    let mut ps_state = OptimizerState::new(ps.len());
    let mut rx_state = OptimizerState::new(rx.len());
    let mut losses = Vec::with_capacity(steps);

    for step in 0..steps {
        let lr = cfg.schedule.lr(step, steps, cfg.lr0)?;
        let block = link.block(cfg.seed, rng::TRAIN_SYMBOLS, rng::TRAIN_NOISE, step as u64)?;
        let mut params = Parameters::from_filters(&ps, &rx);
        let loss = loss_and_gradient(link, &mut params, &block, offset).map_err(|e| at_step(e, step))?;
        observer(TrainEvent::Forward { step, loss });
        observer(TrainEvent::Backward { step });

        let Parameters {
            pulse_shaper: ps_param,
            rx_filter: rx_param,
        } = params;
        let mut ps_grad = ps_param.grad().to_vec();
        let mut rx_grad = rx_param.grad().to_vec();
        let mut trainable: Vec<&mut [f64]> = Vec::with_capacity(2);
        if ps.learnable() {
            trainable.push(&mut ps_grad);
        }
        if rx.learnable() {
            trainable.push(&mut rx_grad);
        }
        let norm = clip_grad_norm(&mut trainable, cfg.clip_norm);
        observer(TrainEvent::Clip { step, norm });

        if ps.learnable() {
            adam_step(ps.taps_mut(), &ps_grad, &mut ps_state, lr, &cfg.adam).map_err(|e| at_step(e, step))?;
        }
        if rx.learnable() {
            adam_step(rx.taps_mut(), &rx_grad, &mut rx_state, lr, &cfg.adam).map_err(|e| at_step(e, step))?;
        }
        observer(TrainEvent::Adam { step, lr });

        renormalize_filters(&mut [&mut ps, &mut rx]).map_err(|e| at_step(e, step))?;
        observer(TrainEvent::Renormalize { step });
        losses.push(LossRecord { step, lr, loss });
    }

    Ok(TrainedFilters {
        mode: cfg.mode,
        lr0: cfg.lr0,
        pulse_shaper: ps,
        rx_filter: rx,
        offset,
        losses,
    })
}

/// Outcome of one learning rate in a screen.
#[derive(Debug, Clone)]
pub struct ScreenCandidate {
    pub lr0: f64,
    pub validation_ser: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScreenOutcome {
    pub selected: TrainedFilters,
    pub validation_ser: f64,
    pub candidates: Vec<ScreenCandidate>,
}

/// Trains once per `lr0` in the grid and keeps the run with the lowest SER on
/// a held-out validation stream; ties go to the smaller `lr0`.
pub fn screen_learning_rates(link: &Link, base: &TrainConfig) -> Result<ScreenOutcome> {
    if base.lr0_grid.is_empty() {
        return Err(Error::Configuration("learning-rate grid is empty".into()));
    }
    let runs: Vec<(f64, Result<(TrainedFilters, f64)>)> = base
        .lr0_grid
        .par_iter()
        .map(|&lr0| {
            let cfg = TrainConfig { lr0, ..base.clone() };
            let run = train(link, &cfg).and_then(|trained| {
                let ser = eval::validation_ser(link, &trained, base)?;
                Ok((trained, ser))
            });
            (lr0, run)
        })
        .collect();

    let candidates = runs
        .iter()
        .map(|(lr0, r)| match r {
            Ok((_, ser)) => ScreenCandidate {
                lr0: *lr0,
                validation_ser: Some(*ser),
                error: None,
            },
            Err(e) => ScreenCandidate {
                lr0: *lr0,
                validation_ser: None,
                error: Some(e.to_string()),
            },
        })
        .collect::<Vec<_>>();

    // configuration problems are not divergence; surface them directly
    if let Some((_, Err(e))) = runs.iter().find(|(_, r)| matches!(r, Err(e) if !e.is_numerical())) {
        return Err(Error::Configuration(e.to_string()));
    }

    let best = runs
        .into_iter()
        .filter_map(|(lr0, r)| r.ok().map(|(t, ser)| (lr0, t, ser)))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.total_cmp(&b.0)));
    match best {
        Some((_, selected, validation_ser)) => Ok(ScreenOutcome {
            selected,
            validation_ser,
            candidates,
        }),
        None => Err(Error::ScreeningFailed(
            candidates
                .iter()
                .map(|c| format!("lr0={:e}: {}", c.lr0, c.error.as_deref().unwrap_or("?")))
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

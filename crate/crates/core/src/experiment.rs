//! Experiment configuration and the studies built on top of training and
//! evaluation: back-to-back SNR sweeps, per-point power sweeps over fiber,
//! folded spectra and eye diagrams.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{synchronize, Link, LinkConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalSettings, EyeHistogram, FoldedSpectrum};
use crate::link::{BesselSpec, FiberParams, ModulatorParams, NoiseParams};
use crate::rng;
use crate::signal::FirFilter;
use crate::train::{screen_learning_rates, AdamConfig, Mode, OneCycle, ScreenOutcome, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "b2b")]
    BackToBack,
    #[serde(rename = "fiber2km")]
    Fiber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConfig {
    pub baud_rate_hz: f64,
    pub samples_per_symbol: usize,
    pub pam_order: usize,
    pub guard_samples: usize,
    /// Bessel DAC and ADC present.
    pub front_end_filters: bool,
    pub bessel_order: usize,
    pub dac_cutoff_hz: f64,
    pub adc_cutoff_hz: f64,
    pub modulation_index: f64,
    /// Used by the fiber scenario only; back-to-back always has no fiber.
    pub fiber_length_m: f64,
    pub wavelength_m: f64,
    pub zero_dispersion_wavelength_m: f64,
    pub dispersion_slope_ps_nm2_km: f64,
    /// Receiver thermal noise per sample (photocurrent units) in the fiber
    /// scenario.
    pub thermal_noise_sigma: f64,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        let fiber = FiberParams::default();
        let bessel = BesselSpec::default();
        Self {
            baud_rate_hz: 100e9,
            samples_per_symbol: 4,
            pam_order: 4,
            guard_samples: 256,
            front_end_filters: true,
            bessel_order: bessel.order,
            dac_cutoff_hz: bessel.cutoff_hz,
            adc_cutoff_hz: bessel.cutoff_hz,
            modulation_index: 1.0,
            fiber_length_m: fiber.length_m,
            wavelength_m: fiber.wavelength_m,
            zero_dispersion_wavelength_m: fiber.zero_dispersion_wavelength_m,
            dispersion_slope_ps_nm2_km: fiber.dispersion_slope,
            thermal_noise_sigma: 7e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub train_symbols: usize,
    pub lr0_grid: Vec<f64>,
    pub clip_norm: f64,
    /// Rolloff of the RRC used for initialization and for the fixed filter.
    pub rolloff: f64,
    /// Held-out symbols used to pick the learning rate.
    pub validation_symbols: usize,
    /// Back-to-back training SNR (Es/N0, dB).
    pub snr_db: f64,
    /// Fiber-scenario launch power for `train` and `diagnose`, dBm.
    pub p_in_dbm: f64,
    pub adam: AdamConfig,
    pub schedule: OneCycle,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            train_symbols: t.total_train_symbols,
            lr0_grid: t.lr0_grid,
            clip_norm: t.clip_norm,
            rolloff: t.rolloff,
            validation_symbols: t.validation_symbols,
            snr_db: 12.0,
            p_in_dbm: -6.6,
            adam: t.adam,
            schedule: t.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub pilot_symbols: usize,
    pub eval_symbols: usize,
    pub snr_grid_db: Vec<f64>,
    pub p_in_grid_dbm: Vec<f64>,
    pub eye_bins: usize,
    pub eye_blocks: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            pilot_symbols: 10_000,
            eval_symbols: 1_000_000,
            snr_grid_db: (6..=16).map(f64::from).collect(),
            p_in_grid_dbm: vec![-8.6, -7.6, -6.6, -5.6, -4.6, -3.6, -2.6],
            eye_bins: 128,
            eye_blocks: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub modes: Vec<Mode>,
    pub taps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub physical: PhysicalConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    /// Where results go unless overridden on the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::back_to_back()
    }
}

fn config_err(field: &str, msg: impl fmt::Display) -> Error {
    Error::Configuration(format!("{field}: {msg}"))
}

fn check_unique<T: Ord + Copy + fmt::Debug>(field: &str, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(config_err(field, "must not be empty"));
    }
    let set: BTreeSet<T> = items.iter().copied().collect();
    if set.len() != items.len() {
        return Err(config_err(field, format!("duplicate entries in {items:?}")));
    }
    Ok(())
}

fn check_grid(field: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(config_err(field, "must not be empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(config_err(field, "values must be finite"));
    }
    Ok(())
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

impl ExperimentConfig {
    /// Back-to-back study: all three modes, 25 taps, five seeds.
    pub fn back_to_back() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: Scenario::BackToBack,
            modes: Mode::ALL.to_vec(),
            taps: vec![25],
            seeds: vec![0, 1, 2, 3, 4],
            physical: PhysicalConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: None,
        }
    }

    /// 2 km fiber study with 15-tap filters.
    pub fn fiber() -> Self {
        Self {
            scenario: Scenario::Fiber,
            taps: vec![15],
            ..Self::back_to_back()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        check_unique("modes", &self.modes)?;
        check_unique("taps", &self.taps)?;
        if self.taps.contains(&0) {
            return Err(config_err("taps", "filter lengths must be >= 1"));
        }
        check_unique("seeds", &self.seeds)?;

        let t = &self.training;
        if t.batch_size == 0 {
            return Err(config_err("training.batch_size", "must be >= 1"));
        }
        if t.train_symbols == 0 || !t.train_symbols.is_multiple_of(t.batch_size) {
            return Err(config_err(
                "training.train_symbols",
                format!("must be a positive multiple of batch_size ({})", t.batch_size),
            ));
        }
        if t.lr0_grid.is_empty() || t.lr0_grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(config_err(
                "training.lr0_grid",
                "needs at least one positive learning rate",
            ));
        }
        if !(t.clip_norm > 0.0 && t.clip_norm.is_finite()) {
            return Err(config_err("training.clip_norm", "must be positive"));
        }
        if !(0.0..=1.0).contains(&t.rolloff) {
            return Err(config_err("training.rolloff", "must be in [0, 1]"));
        }
        if t.validation_symbols == 0 {
            return Err(config_err("training.validation_symbols", "must be >= 1"));
        }
        if !t.snr_db.is_finite() || !t.p_in_dbm.is_finite() {
            return Err(config_err("training", "snr_db and p_in_dbm must be finite"));
        }
        let s = &t.schedule;
        if !(s.pct_start > 0.0 && s.pct_start < 1.0) || !(s.max_lr_factor >= 1.0) || !(s.final_div > 0.0) {
            return Err(config_err(
                "training.schedule",
                "needs 0 < pct_start < 1, max_lr_factor >= 1, final_div > 0",
            ));
        }
        let a = &t.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(config_err("training.adam", "needs betas in [0, 1) and eps > 0"));
        }

        let e = &self.evaluation;
        let order = self.physical.pam_order;
        if e.pilot_symbols < 100 * order {
            return Err(config_err(
                "evaluation.pilot_symbols",
                format!("must be >= {}", 100 * order),
            ));
        }
        if e.eval_symbols == 0 {
            return Err(config_err("evaluation.eval_symbols", "must be >= 1"));
        }
        check_grid("evaluation.snr_grid_db", &e.snr_grid_db)?;
        check_grid("evaluation.p_in_grid_dbm", &e.p_in_grid_dbm)?;
        if e.eye_bins == 0 || e.eye_blocks == 0 {
            return Err(config_err("evaluation", "eye_bins and eye_blocks must be >= 1"));
        }

        let p = &self.physical;
        if p.samples_per_symbol < 2 {
            return Err(config_err("physical.samples_per_symbol", "must be >= 2"));
        }
        if !(p.thermal_noise_sigma >= 0.0) {
            return Err(config_err("physical.thermal_noise_sigma", "must be >= 0"));
        }
        if p.front_end_filters && !(p.dac_cutoff_hz > 0.0 && p.adc_cutoff_hz > 0.0) {
            return Err(config_err("physical", "Bessel cutoffs must be positive"));
        }
        // remaining physical checks live in the link itself
        Link::new(self.training_link_config()).map_err(|e| config_err("physical", e))?;
        Ok(())
    }

    /// Symbol counts multiplied by `scale` (training rounded to whole batches).
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(config_err("scale", format!("must be positive, got {scale}")));
        }
        let mut cfg = self.clone();
        let batch = cfg.training.batch_size.max(1);
        let scale_count = |n: usize| ((n as f64 * scale).round() as usize).max(1);
        cfg.training.train_symbols = (scale_count(cfg.training.train_symbols).div_ceil(batch)).max(1) * batch;
        cfg.training.validation_symbols = scale_count(cfg.training.validation_symbols);
        cfg.evaluation.eval_symbols = scale_count(cfg.evaluation.eval_symbols);
        cfg.evaluation.eye_blocks = scale_count(cfg.evaluation.eye_blocks);
        Ok(cfg)
    }

    pub fn with_seed_offset(&self, offset: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seeds = cfg.seeds.iter().map(|s| s + offset).collect();
        cfg
    }

    pub fn link_config(&self, noise: NoiseParams, p_in_w: f64) -> LinkConfig {
        let p = &self.physical;
        let bessel = |cutoff_hz| BesselSpec {
            order: p.bessel_order,
            cutoff_hz,
        };
        let fiber = FiberParams {
            length_m: match self.scenario {
                Scenario::BackToBack => 0.0,
                Scenario::Fiber => p.fiber_length_m,
            },
            wavelength_m: p.wavelength_m,
            zero_dispersion_wavelength_m: p.zero_dispersion_wavelength_m,
            dispersion_slope: p.dispersion_slope_ps_nm2_km,
        };
        LinkConfig {
            baud_rate: p.baud_rate_hz,
            sps: p.samples_per_symbol,
            pam_order: p.pam_order,
            batch_size: self.training.batch_size,
            guard_samples: p.guard_samples,
            dac: p.front_end_filters.then(|| bessel(p.dac_cutoff_hz)),
            adc: p.front_end_filters.then(|| bessel(p.adc_cutoff_hz)),
            modulator: ModulatorParams {
                p_in_w,
                modulation_index: p.modulation_index,
                ..ModulatorParams::default()
            },
            fiber,
            noise,
        }
    }

    /// Back-to-back link at a given Es/N0.
    pub fn b2b_link_config(&self, snr_db: f64) -> LinkConfig {
        LinkConfig {
            fiber: FiberParams::back_to_back(),
            ..self.link_config(NoiseParams::TargetSnrDb(snr_db), ModulatorParams::default().p_in_w)
        }
    }

    /// Fiber-scenario link at a launch power with the configured thermal noise.
    pub fn power_link_config(&self, p_in_dbm: f64) -> LinkConfig {
        self.link_config(
            NoiseParams::Sigma(self.physical.thermal_noise_sigma),
            dbm_to_w(p_in_dbm),
        )
    }

    /// Operating point used by `train` and `diagnose`.
    pub fn training_link_config(&self) -> LinkConfig {
        match self.scenario {
            Scenario::BackToBack => self.b2b_link_config(self.training.snr_db),
            Scenario::Fiber => self.power_link_config(self.training.p_in_dbm),
        }
    }

    pub fn train_config(&self, mode: Mode, num_taps: usize, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            mode,
            num_taps,
            batch_size: t.batch_size,
            total_train_symbols: t.train_symbols,
            lr0: t.lr0_grid[0],
            lr0_grid: t.lr0_grid.clone(),
            schedule: t.schedule,
            clip_norm: t.clip_norm,
            adam: t.adam,
            rolloff: t.rolloff,
            validation_symbols: t.validation_symbols,
            pilot_symbols: self.evaluation.pilot_symbols,
            seed,
        }
    }

    pub fn eval_settings(&self, seed: u64) -> EvalSettings {
        EvalSettings {
            pilot_symbols: self.evaluation.pilot_symbols,
            eval_symbols: self.evaluation.eval_symbols,
            seed,
        }
    }

    /// Every (mode, taps, seed) combination, mode-major.
    pub fn jobs(&self) -> Vec<(Mode, usize, u64)> {
        let mut jobs = Vec::new();
        for &mode in &self.modes {
            for &n in &self.taps {
                for &seed in &self.seeds {
                    jobs.push((mode, n, seed));
                }
            }
        }
        jobs
    }
}

/// A pair of frozen filters and where they came from.
#[derive(Debug, Clone)]
pub struct FilterSet {
    pub mode: Mode,
    pub num_taps: usize,
    pub seed: u64,
    pub pulse_shaper: FirFilter,
    pub rx_filter: FirFilter,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub mode: Mode,
    pub num_taps: usize,
    pub seed: u64,
    pub outcome: ScreenOutcome,
}

impl TrainedRun {
    pub fn filters(&self) -> FilterSet {
        FilterSet {
            mode: self.mode,
            num_taps: self.num_taps,
            seed: self.seed,
            pulse_shaper: self.outcome.selected.pulse_shaper.clone(),
            rx_filter: self.outcome.selected.rx_filter.clone(),
        }
    }
}

/// Screens learning rates for every (mode, taps, seed) on one link.
pub fn train_all(cfg: &ExperimentConfig, link: &Link) -> Result<Vec<TrainedRun>> {
    cfg.jobs()
        .into_par_iter()
        .map(|(mode, n, seed)| {
            let outcome = screen_learning_rates(link, &cfg.train_config(mode, n, seed))?;
            Ok(TrainedRun {
                mode,
                num_taps: n,
                seed,
                outcome,
            })
        })
        .collect()
}

fn sync(link: &Link, f: &FilterSet) -> Result<isize> {
    synchronize(link, &f.pulse_shaper, &f.rx_filter, f.num_taps, f.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrRow {
    pub snr_db: f64,
    pub mode: Mode,
    pub num_taps: usize,
    pub seed: u64,
    pub ser: f64,
    pub theory_ser: f64,
    pub low_count: bool,
}

/// SER of frozen filters over the back-to-back SNR grid; one row per
/// (filter set, SNR point), each with fresh evaluation streams of its seed.
pub fn sweep_snr_b2b(cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<Vec<SnrRow>> {
    let grid = &cfg.evaluation.snr_grid_db;
    let reference = Link::new(cfg.b2b_link_config(cfg.training.snr_db))?;
    let offsets = filters
        .par_iter()
        .map(|f| sync(&reference, f))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(usize, f64)> = (0..filters.len())
        .flat_map(|i| grid.iter().map(move |&s| (i, s)))
        .collect();
    points
        .into_par_iter()
        .map(|(i, snr_db)| {
            let f = &filters[i];
            let link = Link::new(cfg.b2b_link_config(snr_db))?;
            let r = eval::evaluate_filters(
                &link,
                &f.pulse_shaper,
                &f.rx_filter,
                offsets[i],
                &cfg.eval_settings(f.seed),
            )?;
            Ok(SnrRow {
                snr_db,
                mode: f.mode,
                num_taps: f.num_taps,
                seed: f.seed,
                ser: r.ser.ser,
                theory_ser: eval::theory_ser_pam(cfg.physical.pam_order, snr_db),
                low_count: r.ser.low_count,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub p_in_dbm: f64,
    pub p_rec_dbm: f64,
    pub mode: Mode,
    pub num_taps: usize,
    pub seed: u64,
    pub ser: f64,
    pub low_count: bool,
}

fn power_row(cfg: &ExperimentConfig, link: &Link, p_in_dbm: f64, f: &FilterSet) -> Result<PowerRow> {
    let offset = sync(link, f)?;
    let r = eval::evaluate_filters(link, &f.pulse_shaper, &f.rx_filter, offset, &cfg.eval_settings(f.seed))?;
    Ok(PowerRow {
        p_in_dbm,
        p_rec_dbm: w_to_dbm(r.received_power_w),
        mode: f.mode,
        num_taps: f.num_taps,
        seed: f.seed,
        ser: r.ser.ser,
        low_count: r.ser.low_count,
    })
}

/// Filters trained at one launch power of a power sweep.
#[derive(Debug, Clone)]
pub struct PowerPoint {
    pub p_in_dbm: f64,
    pub runs: Vec<TrainedRun>,
}

/// Trains and evaluates every (mode, taps, seed) afresh at each launch power.
pub fn sweep_power_fiber(cfg: &ExperimentConfig) -> Result<(Vec<PowerRow>, Vec<PowerPoint>)> {
    let per_point = cfg
        .evaluation
        .p_in_grid_dbm
        .par_iter()
        .map(|&p_in_dbm| {
            let link = Link::new(cfg.power_link_config(p_in_dbm))?;
            let runs = train_all(cfg, &link)?;
            let rows = runs
                .par_iter()
                .map(|run| power_row(cfg, &link, p_in_dbm, &run.filters()))
                .collect::<Result<Vec<_>>>()?;
            Ok((rows, PowerPoint { p_in_dbm, runs }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, points): (Vec<Vec<PowerRow>>, Vec<PowerPoint>) = per_point.into_iter().unzip();
    Ok((rows.into_iter().flatten().collect(), points))
}

/// SER of frozen filters at every launch power of the grid.
pub fn evaluate_power_frozen(cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<Vec<PowerRow>> {
    let grid = &cfg.evaluation.p_in_grid_dbm;
    let points: Vec<(usize, f64)> = (0..filters.len())
        .flat_map(|i| grid.iter().map(move |&p| (i, p)))
        .collect();
    points
        .into_par_iter()
        .map(|(i, p_in_dbm)| {
            let link = Link::new(cfg.power_link_config(p_in_dbm))?;
            power_row(cfg, &link, p_in_dbm, &filters[i])
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub mode: Mode,
    pub num_taps: usize,
    pub seed: u64,
    pub spectrum: FoldedSpectrum,
    pub ripple_db: f64,
}

/// Folded spectrum of the back-to-back electrical response of each filter set.
pub fn folded_spectra(cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<Vec<SpectrumResult>> {
    let link = Link::new(cfg.b2b_link_config(cfg.training.snr_db))?;
    filters
        .par_iter()
        .map(|f| {
            let offset = sync(&link, f)?;
            let spectrum = eval::folded_spectrum(&link, &f.pulse_shaper, &f.rx_filter, offset)?;
            let ripple_db = eval::ripple_db(&spectrum);
            Ok(SpectrumResult {
                mode: f.mode,
                num_taps: f.num_taps,
                seed: f.seed,
                spectrum,
                ripple_db,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EyeResult {
    pub mode: Mode,
    pub num_taps: usize,
    pub seed: u64,
    pub histogram: EyeHistogram,
    pub best_phase: isize,
    pub opening: f64,
    pub p_rec_dbm: f64,
}

/// Eye histogram and vertical opening of each filter set at the configured
/// operating point.
pub fn eyes(cfg: &ExperimentConfig, filters: &[FilterSet]) -> Result<Vec<EyeResult>> {
    let link = Link::new(cfg.training_link_config())?;
    let e = &cfg.evaluation;
    filters
        .par_iter()
        .map(|f| {
            let offset = sync(&link, f)?;
            let histogram = eval::eye_histogram(
                &link,
                &f.pulse_shaper,
                &f.rx_filter,
                offset,
                f.seed,
                e.eye_blocks,
                e.eye_bins,
            )?;
            let (best_phase, opening) =
                eval::eye_opening(&link, &f.pulse_shaper, &f.rx_filter, offset, f.seed, e.eye_blocks)?;
            let block = link.block(f.seed, rng::EVAL_SYMBOLS, rng::EVAL_NOISE, 0)?;
            let p_rec = link.run(&f.pulse_shaper, &f.rx_filter, &block, false)?.received_power;
            Ok(EyeResult {
                mode: f.mode,
                num_taps: f.num_taps,
                seed: f.seed,
                histogram,
                best_phase,
                opening,
                p_rec_dbm: w_to_dbm(p_rec),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub x: f64,
    pub mode: Mode,
    pub num_taps: usize,
    pub mean_ser: f64,
    pub std_ser: f64,
    pub seeds: usize,
}

/// Mean and sample standard deviation of SER across seeds for each
/// (x, mode, taps), in order of first appearance.
pub fn summarize(points: impl IntoIterator<Item = (f64, Mode, usize, f64)>) -> Vec<SummaryRow> {
    let mut groups: Vec<((f64, Mode, usize), Vec<f64>)> = Vec::new();
    for (x, mode, n, ser) in points {
        match groups.iter_mut().find(|(k, _)| k.0 == x && k.1 == mode && k.2 == n) {
            Some((_, v)) => v.push(ser),
            None => groups.push(((x, mode, n), vec![ser])),
        }
    }
    groups
        .into_iter()
        .map(|((x, mode, num_taps), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                x,
                mode,
                num_taps,
                mean_ser: mean,
                std_ser: std,
                seeds: v.len(),
            }
        })
        .collect()
}

/// Built-in study recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// SER vs SNR, back to back.
    Fig2,
    /// Folded spectra, back to back.
    Fig3,
    /// Eye diagrams after 2 km.
    Fig4,
    /// SER vs received power after 2 km.
    Fig5,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Figure::Fig2 => ExperimentConfig {
                taps: vec![9, 15, 25],
                ..ExperimentConfig::back_to_back()
            },
            Figure::Fig3 => ExperimentConfig {
                seeds: vec![0],
                ..ExperimentConfig::back_to_back()
            },
            Figure::Fig4 => ExperimentConfig {
                seeds: vec![0],
                ..ExperimentConfig::fiber()
            },
            Figure::Fig5 => ExperimentConfig {
                taps: vec![9, 15, 25],
                ..ExperimentConfig::fiber()
            },
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            _ => Err(Error::invalid(format!("unknown figure {s:?} (expected fig2..fig5)"))),
        }
    }
}

//! Symbol decisions, error counting and the diagnostic views of a trained
//! link (folded spectrum, eye histogram).

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use statrs::function::erf::erfc;

use crate::chain::Link;
use crate::error::{Error, Result};
use crate::fft;
use crate::rng;
use crate::signal::FirFilter;
use crate::train::{TrainConfig, TrainedFilters};

/// Below this many counted symbols an SER estimate is flagged as unreliable.
pub const MIN_RELIABLE_SYMBOLS: u64 = 10_000;

/// KP4 FEC threshold, pre-FEC bit error ratio.
pub const KP4_BER: f64 = 2.4e-4;

/// SER equivalent of [`KP4_BER`] for Gray-labelled 4-PAM, where almost every
/// symbol error flips exactly one of two bits.
pub const KP4_SER: f64 = 2.0 * KP4_BER;

pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Symbol error rate of M-PAM on AWGN with a matched filter and no ISI, at a
/// given Es/N0 in dB.
pub fn theory_ser_pam(order: usize, snr_db: f64) -> f64 {
    let m = order as f64;
    let snr = 10f64.powf(snr_db / 10.0);
    2.0 * (1.0 - 1.0 / m) * q_function((6.0 * snr / (m * m - 1.0)).sqrt())
}

pub fn theory_ser_4pam(snr_db: f64) -> f64 {
    theory_ser_pam(4, snr_db)
}

/// Es/N0 in dB at which the theory curve reaches `ser`.
pub fn theory_snr_for_ser(order: usize, ser: f64) -> Result<f64> {
    let max = 2.0 * (1.0 - 1.0 / order as f64) * 0.5;
    if !(ser > 0.0 && ser < max) {
        return Err(Error::invalid(format!("SER {ser} outside (0, {max})")));
    }
    let (mut lo, mut hi) = (-20.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if theory_ser_pam(order, mid) > ser {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Gaussian class-conditional model with pooled variance; with equal priors
/// the ML decision is the nearest class mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionModel {
    means: Vec<f64>,
    variance: f64,
    thresholds: Vec<f64>,
}

impl DecisionModel {
    pub fn fit(samples: &[f64], indices: &[u8], order: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("pilot samples"));
        }
        if samples.len() != indices.len() {
            return Err(Error::invalid("pilot samples and symbols differ in length"));
        }
        let mut sum = vec![0.0; order];
        let mut count = vec![0usize; order];
        for (&x, &i) in samples.iter().zip(indices) {
            let i = i as usize;
            if i >= order {
                return Err(Error::invalid(format!("symbol index {i} outside constellation")));
            }
            sum[i] += x;
            count[i] += 1;
        }
        if let Some(i) = count.iter().position(|&c| c == 0) {
            return Err(Error::Estimation(format!("pilot contains no symbol of level {i}")));
        }
        let means: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        if means.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Estimation(format!(
                "class means are not strictly increasing: {means:?}"
            )));
        }
        let variance = samples
            .iter()
            .zip(indices)
            .map(|(x, &i)| (x - means[i as usize]).powi(2))
            .sum::<f64>()
            / (samples.len() - order).max(1) as f64;
        let thresholds = means.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self {
            means,
            variance,
            thresholds,
        })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn decide(&self, x: f64) -> u8 {
        self.thresholds.partition_point(|&t| t <= x) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerEstimate {
    pub errors: u64,
    pub symbols: u64,
    pub ser: f64,
    /// Set when fewer than [`MIN_RELIABLE_SYMBOLS`] symbols were counted.
    pub low_count: bool,
}

pub fn measure_ser(samples: &[f64], indices: &[u8], model: &DecisionModel) -> Result<SerEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("decision samples"));
    }
    if samples.len() != indices.len() {
        return Err(Error::invalid("decision samples and symbols differ in length"));
    }
    let errors = samples
        .iter()
        .zip(indices)
        .filter(|(x, i)| model.decide(**x) != **i)
        .count() as u64;
    let symbols = samples.len() as u64;
    Ok(SerEstimate {
        errors,
        symbols,
        ser: errors as f64 / symbols as f64,
        low_count: symbols < MIN_RELIABLE_SYMBOLS,
    })
}

/// Gain-controlled decision variables and the transmitted symbol of each.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub samples: Vec<f64>,
    pub indices: Vec<u8>,
    /// Mean optical power at the photodiode, averaged over blocks, W.
    pub received_power_w: f64,
}

/// Runs enough blocks of the given streams to yield `count` scored symbols.
pub fn collect_decisions(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    offset: isize,
    seed: u64,
    streams: (u64, u64),
    count: usize,
) -> Result<Decisions> {
    if count == 0 {
        return Err(Error::EmptyInput("symbol count"));
    }
    let batch = link.config().batch_size;
    let blocks = count.div_ceil(batch);
    let parts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let block = link.block(seed, streams.0, streams.1, b as u64)?;
            let out = link.run(pulse_shaper, rx_filter, &block, true)?;
            let y = link.scaled_decisions(rx_filter, &out, offset)?;
            let idx = block.symbols.indices()[link.counted_symbols()].to_vec();
            Ok((y, idx, out.received_power))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(blocks * batch);
    let mut indices = Vec::with_capacity(blocks * batch);
    let mut power = 0.0;
    for (y, idx, p) in parts {
        samples.extend(y);
        indices.extend(idx);
        power += p;
    }
    samples.truncate(count);
    indices.truncate(count);
    Ok(Decisions {
        samples,
        indices,
        received_power_w: power / blocks as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub pilot_symbols: usize,
    pub eval_symbols: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pilot_symbols: 10_000,
            eval_symbols: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub ser: SerEstimate,
    pub model: DecisionModel,
    pub received_power_w: f64,
}

fn fit_and_count(link: &Link, d: Decisions, pilot: usize) -> Result<EvalResult> {
    let order = link.constellation().order();
    let model = DecisionModel::fit(&d.samples[..pilot], &d.indices[..pilot], order)?;
    let ser = measure_ser(&d.samples[pilot..], &d.indices[pilot..], &model)?;
    Ok(EvalResult {
        ser,
        model,
        received_power_w: d.received_power_w,
    })
}

/// SER on the evaluation streams: the first `pilot_symbols` fit the decision
/// model, the following `eval_symbols` are counted.
pub fn evaluate_filters(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    offset: isize,
    settings: &EvalSettings,
) -> Result<EvalResult> {
    evaluate_streams(
        link,
        pulse_shaper,
        rx_filter,
        offset,
        settings,
        (rng::EVAL_SYMBOLS, rng::EVAL_NOISE),
    )
}

fn evaluate_streams(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    offset: isize,
    settings: &EvalSettings,
    streams: (u64, u64),
) -> Result<EvalResult> {
    if settings.pilot_symbols == 0 || settings.eval_symbols == 0 {
        return Err(Error::Configuration(
            "pilot and evaluation symbol counts must be positive".into(),
        ));
    }
    let total = settings.pilot_symbols + settings.eval_symbols;
    let d = collect_decisions(link, pulse_shaper, rx_filter, offset, settings.seed, streams, total)?;
    fit_and_count(link, d, settings.pilot_symbols)
}

/// SER on the validation streams, used to rank learning rates.
pub fn validation_ser(link: &Link, trained: &TrainedFilters, cfg: &TrainConfig) -> Result<f64> {
    let settings = EvalSettings {
        pilot_symbols: cfg.pilot_symbols,
        eval_symbols: cfg.validation_symbols,
        seed: cfg.seed,
    };
    let r = evaluate_streams(
        link,
        &trained.pulse_shaper,
        &trained.rx_filter,
        trained.offset,
        &settings,
        (rng::VALIDATION_SYMBOLS, rng::VALIDATION_NOISE),
    )?;
    Ok(r.ser.ser)
}

/// Electrical end-to-end response sampled at the block rate: pulse shaper,
/// DAC, ADC and receiver filter, with the impulse at the block centre.
pub fn system_impulse_response(link: &Link, pulse_shaper: &FirFilter, rx_filter: &FirFilter) -> Result<Vec<f64>> {
    let n = link.block_len();
    let mut x = vec![0.0; n];
    x[n / 2] = 1.0;
    let mut y = crate::signal::convolve_same(&x, pulse_shaper.taps());
    if let Some(dac) = link.dac() {
        y = fft::filter_real(&y, dac.response());
    }
    if let Some(adc) = link.adc() {
        y = fft::filter_real(&y, adc.response());
    }
    Ok(crate::signal::convolve_same(&y, rx_filter.taps()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedSpectrum {
    /// Ascending frequencies over [-Rs/2, Rs/2), Hz.
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FoldedSpectrum {
    fn center(&self) -> usize {
        self.freqs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// |B(f)| in dB relative to its value at the centre of the band.
    pub fn magnitude_db(&self) -> Vec<f64> {
        let c = self.values[self.center()].norm();
        self.values.iter().map(|v| 20.0 * (v.norm() / c).log10()).collect()
    }
}

/// Spectrum of the symbol-spaced end-to-end response taken at the decision
/// phase `offset`. This equals the aliased sum of the sample-rate response
/// over all multiples of the symbol rate (up to the constant 1/sps).
pub fn folded_spectrum(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    offset: isize,
) -> Result<FoldedSpectrum> {
    let h = system_impulse_response(link, pulse_shaper, rx_filter)?;
    let n = h.len();
    let sps = link.spec().sps();
    let start = (n / 2) as isize + offset;
    let phase = start.rem_euclid(sps as isize) as usize;
    let g: Vec<Complex64> = (phase..n)
        .step_by(sps)
        .map(|i| Complex64::new(h[i] * sps as f64, 0.0))
        .collect();
    let m = g.len();
    let mut spectrum = g;
    fft::forward(&mut spectrum);
    let freqs = fft::frequencies(m, link.spec().baud_rate());
    // rotate so the pulse peak sits at t = 0
    let k0 = ((start as usize - phase) / sps) as f64;
    let mut pairs: Vec<(f64, Complex64)> = freqs
        .iter()
        .zip(spectrum)
        .map(|(&f, v)| {
            let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f / link.spec().baud_rate() * k0);
            (f, v * rot)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (freqs, values) = pairs.into_iter().unzip();
    Ok(FoldedSpectrum { freqs, values })
}

/// Peak-to-peak ripple of |B(f)| in dB, ignoring the outer 2% of bins at
/// each band edge.
pub fn ripple_db(spectrum: &FoldedSpectrum) -> f64 {
    let db = spectrum.magnitude_db();
    let n = db.len();
    let skip = (n as f64 * 0.02).ceil() as usize;
    let inner = &db[skip.min(n)..n.saturating_sub(skip)];
    let (lo, hi) = inner.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

/// Eye diagram as a 2-D histogram over two symbol periods.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeHistogram {
    pub phases: usize,
    /// Amplitude bin edges, `bins + 1` values.
    pub edges: Vec<f64>,
    /// Row-major `[phase][amplitude]` counts.
    pub counts: Vec<Vec<u64>>,
}

impl EyeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Histogram of `(i mod 2 sps, waveform[i])` with `bins` equal-width
/// amplitude bins spanning the waveform's range.
pub fn eye_histogram_from(waveform: &[f64], sps: usize, bins: usize) -> Result<EyeHistogram> {
    if sps < 2 {
        return Err(Error::invalid("eye diagrams need at least 2 samples per symbol"));
    }
    if bins == 0 {
        return Err(Error::invalid("eye histogram needs at least one amplitude bin"));
    }
    if waveform.is_empty() {
        return Err(Error::EmptyInput("eye waveform"));
    }
    let (mut lo, mut hi) = waveform
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::fault("eye_histogram", "non-finite waveform sample"));
    }
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let phases = 2 * sps;
    let mut counts = vec![vec![0u64; bins]; phases];
    for (i, &v) in waveform.iter().enumerate() {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[i % phases][k] += 1;
    }
    Ok(EyeHistogram { phases, edges, counts })
}

/// Eye histogram of the noisy receiver-filter output over `blocks`
/// evaluation blocks, in raw photocurrent units. Phase 0 is a decision
/// instant.
pub fn eye_histogram(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    offset: isize,
    seed: u64,
    blocks: usize,
    bins: usize,
) -> Result<EyeHistogram> {
    if blocks == 0 {
        return Err(Error::invalid("eye histogram needs at least one block"));
    }
    let span = link.config().batch_size * link.spec().sps();
    let first = link.decision_indices(offset)?[0];
    let mut waveform = Vec::with_capacity(blocks * span);
    for b in 0..blocks {
        let block = link.block(seed, rng::EVAL_SYMBOLS, rng::EVAL_NOISE, b as u64)?;
        let out = link.run(pulse_shaper, rx_filter, &block, true)?;
        waveform.extend_from_slice(&out.waveform[first..first + span]);
    }
    eye_histogram_from(&waveform, link.spec().sps(), bins)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Vertical eye opening: the smallest gap between the 90th percentile of one
/// level and the 10th percentile of the next, at the best sampling phase
/// within half a symbol of the decision instant. Returns `(phase, opening)`
/// in units of the gain-controlled decision variable; negative openings mean
/// a closed eye.
pub fn eye_opening(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    offset: isize,
    seed: u64,
    blocks: usize,
) -> Result<(isize, f64)> {
    let order = link.constellation().order();
    let half = (link.spec().sps() / 2) as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    for d in -half..=half {
        let shifted = offset + d;
        let mut levels = vec![Vec::new(); order];
        for b in 0..blocks.max(1) {
            let block = link.block(seed, rng::EVAL_SYMBOLS, rng::EVAL_NOISE, b as u64)?;
            let out = link.run(pulse_shaper, rx_filter, &block, true)?;
            let y = link.scaled_decisions(rx_filter, &out, shifted)?;
            for (v, &i) in y.iter().zip(&block.symbols.indices()[link.counted_symbols()]) {
                levels[i as usize].push(*v);
            }
        }
        for l in levels.iter_mut() {
            l.sort_by(f64::total_cmp);
        }
        if levels.iter().any(|l| l.is_empty()) {
            return Err(Error::Estimation("a level is missing from the eye".into()));
        }
        let opening = levels
            .windows(2)
            .map(|w| quantile(&w[1], 0.1) - quantile(&w[0], 0.9))
            .fold(f64::INFINITY, f64::min);
        if opening > best.1 {
            best = (d, opening);
        }
    }
    Ok(best)
}

/// Es/N0 (dB) at which a measured SER-vs-SNR curve crosses `target`, by
/// linear interpolation of log10(SER). `None` if the curve never crosses.
pub fn snr_at_ser(snr_db: &[f64], ser: &[f64], target: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = snr_db
        .iter()
        .zip(ser)
        .filter(|(_, s)| **s > 0.0)
        .map(|(x, s)| (*x, s.log10()))
        .collect();
    let t = target.log10();
    pts.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if (y0 - t) * (y1 - t) <= 0.0 && y0 != y1 {
            Some(x0 + (t - y0) * (x1 - x0) / (y1 - y0))
        } else {
            None
        }
    })
}

/// Excess SNR (dB) over the theory curve needed to reach `target`.
pub fn gap_to_theory_db(order: usize, snr_db: &[f64], ser: &[f64], target: f64) -> Option<f64> {
    let measured = snr_at_ser(snr_db, ser, target)?;
    Some(measured - theory_snr_for_ser(order, target).ok()?)
}

//! The full link between symbol source and decision point, processed in
//! fixed-size blocks with random guard symbols on both sides.
//!
//! ```text
//! symbols -> upsample -> pulse shaper -> DAC -> modulator -> fiber
//!         -> photodiode -> + noise -> ADC -> receiver filter -> decisions
//! ```
//!
//! The frequency-domain blocks act circularly on a block, so only the central
//! `batch_size` symbols are ever scored; the guard symbols absorb wrap-around.

use std::ops::Range;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{
    self, bessel_apply, fiber_propagate, mean_power, modulate, photodiode, BesselLpf, BesselSpec, FiberParams,
    ModulatorParams, NoiseParams,
};
use crate::rng;
use crate::signal::{
    fir_convolve, generate_symbols_with, upsample, Domain, FirFilter, PamConstellation, SampledSignal, SignalSpec,
    SymbolSequence,
};

/// Physical and block-processing parameters of the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub baud_rate: f64,
    pub sps: usize,
    pub pam_order: usize,
    /// Scored symbols per block.
    pub batch_size: usize,
    /// Minimum guard length on each side of a block, in samples.
    pub guard_samples: usize,
    pub dac: Option<BesselSpec>,
    pub adc: Option<BesselSpec>,
    pub modulator: ModulatorParams,
    pub fiber: FiberParams,
    pub noise: NoiseParams,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self::back_to_back(12.0)
    }
}

impl LinkConfig {
    /// 100 GBd 4-PAM back-to-back link with 45 GHz Bessel front-ends at a
    /// fixed Es/N0.
    pub fn back_to_back(snr_db: f64) -> Self {
        Self {
            baud_rate: 100e9,
            sps: 4,
            pam_order: 4,
            batch_size: 1000,
            guard_samples: 256,
            dac: Some(BesselSpec::default()),
            adc: Some(BesselSpec::default()),
            modulator: ModulatorParams::default(),
            fiber: FiberParams::back_to_back(),
            noise: NoiseParams::TargetSnrDb(snr_db),
        }
    }

    /// Same link over 2 km of SSMF at 1270 nm with fixed thermal noise.
    pub fn fiber(p_in_w: f64, sigma: f64) -> Self {
        Self {
            modulator: ModulatorParams {
                p_in_w,
                ..ModulatorParams::default()
            },
            fiber: FiberParams::default(),
            noise: NoiseParams::Sigma(sigma),
            ..Self::back_to_back(12.0)
        }
    }

    /// Intensity-linear link without front-end filters.
    pub fn ideal(snr_db: f64) -> Self {
        Self {
            dac: None,
            adc: None,
            ..Self::back_to_back(snr_db)
        }
    }
}

/// One block of symbols (guards included) and the unit-variance noise
/// realization that goes with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub symbols: SymbolSequence,
    pub noise: Vec<f64>,
}

/// Noiseless-path quantities and the receiver-filter output of one block.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    /// Receiver filter output, one value per sample of the block.
    pub waveform: Vec<f64>,
    pub sigma: f64,
    /// Mean optical power at the photodiode input, W.
    pub received_power: f64,
    /// Photocurrent per unit of pre-normalization drive signal,
    /// `P_in m / peak`, for this block.
    pub drive_gain: f64,
}

/// A configured link with its frequency responses precomputed for the block grid.
#[derive(Debug, Clone)]
pub struct Link {
    config: LinkConfig,
    spec: SignalSpec,
    constellation: PamConstellation,
    guard_symbols: usize,
    len: usize,
    dac: Option<BesselLpf>,
    adc: Option<BesselLpf>,
    fiber: Option<Vec<Complex64>>,
}

impl Link {
    pub fn new(config: LinkConfig) -> Result<Self> {
        let spec = SignalSpec::new(config.baud_rate, config.sps)?;
        let constellation = PamConstellation::new(config.pam_order)?;
        if config.batch_size == 0 {
            return Err(Error::Configuration("batch size must be >= 1".into()));
        }
        if config.fiber.length_m < 0.0 {
            return Err(Error::Configuration("fiber length must be >= 0".into()));
        }
        config
            .modulator
            .validate()
            .map_err(|e| Error::Configuration(e.to_string()))?;
        if let NoiseParams::Sigma(s) = config.noise {
            if !(s >= 0.0) {
                return Err(Error::Configuration(format!("noise sigma must be >= 0, got {s}")));
            }
        }
        let guard_symbols = config.guard_samples.div_ceil(config.sps).max(1);
        let len = (config.batch_size + 2 * guard_symbols) * config.sps;
        let fs = spec.sample_rate();
        let dac = config.dac.map(|b| BesselLpf::new(b, fs, len)).transpose()?;
        let adc = config.adc.map(|b| BesselLpf::new(b, fs, len)).transpose()?;
        let fiber = (config.fiber.length_m > 0.0).then(|| config.fiber.response(fs, len));
        Ok(Self {
            config,
            spec,
            constellation,
            guard_symbols,
            len,
            dac,
            adc,
            fiber,
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn spec(&self) -> SignalSpec {
        self.spec
    }

    pub fn constellation(&self) -> &PamConstellation {
        &self.constellation
    }

    pub fn dac(&self) -> Option<&BesselLpf> {
        self.dac.as_ref()
    }

    pub fn adc(&self) -> Option<&BesselLpf> {
        self.adc.as_ref()
    }

    pub fn fiber_response(&self) -> Option<&[Complex64]> {
        self.fiber.as_deref()
    }

    pub fn guard_symbols(&self) -> usize {
        self.guard_symbols
    }

    pub fn block_symbols(&self) -> usize {
        self.config.batch_size + 2 * self.guard_symbols
    }

    /// Samples per block.
    pub fn block_len(&self) -> usize {
        self.len
    }

    /// Symbol positions within a block that are scored.
    pub fn counted_symbols(&self) -> Range<usize> {
        self.guard_symbols..self.guard_symbols + self.config.batch_size
    }

    /// Largest decision offset (samples) that keeps every scored instant
    /// inside the block.
    pub fn max_offset(&self) -> usize {
        self.guard_symbols * self.spec.sps() - 1
    }

    /// Sample index of each scored decision instant for a given offset.
    pub fn decision_indices(&self, offset: isize) -> Result<Vec<usize>> {
        if offset.unsigned_abs() > self.max_offset() {
            return Err(Error::invalid(format!(
                "decision offset {offset} exceeds guard of {} samples",
                self.max_offset()
            )));
        }
        let sps = self.spec.sps() as isize;
        Ok(self
            .counted_symbols()
            .map(|k| (k as isize * sps + offset) as usize)
            .collect())
    }

    pub fn decisions(&self, waveform: &[f64], offset: isize) -> Result<Vec<f64>> {
        Ok(self
            .decision_indices(offset)?
            .into_iter()
            .map(|i| waveform[i])
            .collect())
    }

    /// Photocurrent per unit drive signal after the modulator's peak
    /// normalization of `x`.
    pub fn drive_gain(&self, x: &[f64]) -> Result<f64> {
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::fault("modulate", format!("drive signal peak is {peak}")));
        }
        let m = &self.config.modulator;
        Ok(m.p_in_w * m.modulation_index / peak)
    }

    /// Energy of the transmit pulse (pulse shaper followed by the DAC) on
    /// the sample grid.
    pub fn pulse_energy(&self, pulse_shaper: &[f64]) -> f64 {
        let mut h = vec![Complex64::new(0.0, 0.0); self.len];
        for (slot, &t) in h.iter_mut().zip(pulse_shaper) {
            slot.re = t;
        }
        crate::fft::forward(&mut h);
        let dac = self.dac.as_ref().map(|d| d.response());
        h.iter()
            .enumerate()
            .map(|(k, v)| v.norm_sqr() * dac.map_or(1.0, |d| d[k].norm_sqr()))
            .sum::<f64>()
            / self.len as f64
    }

    /// Expected per-symbol energy of the signal part of the photocurrent for
    /// a block with the given drive gain (exact for the back-to-back chain).
    pub fn symbol_energy(&self, pulse_shaper: &[f64], drive_gain: f64) -> f64 {
        let es = self.constellation.levels().iter().map(|a| a * a).sum::<f64>() / self.constellation.order() as f64;
        drive_gain * drive_gain * es * self.pulse_energy(pulse_shaper)
    }

    /// Per-sample noise sigma for a block. With a target SNR the sigma tracks
    /// the block's drive gain, so every block sits exactly at the target.
    pub fn noise_sigma(&self, pulse_shaper: &[f64], drive_gain: f64) -> Result<f64> {
        self.config
            .noise
            .sigma_for(self.symbol_energy(pulse_shaper, drive_gain))
    }

    /// Receiver output level produced by the modulator bias alone.
    pub fn bias_level(&self, rx_filter: &FirFilter) -> f64 {
        let m = &self.config.modulator;
        m.p_in_w * m.bias * rx_filter.taps().iter().sum::<f64>()
    }

    /// Decision variables with the bias removed and the block's drive gain
    /// divided out, i.e. an AC-coupled receiver with ideal gain control.
    pub fn scaled_decisions(&self, rx_filter: &FirFilter, out: &BlockOutput, offset: isize) -> Result<Vec<f64>> {
        let c = self.bias_level(rx_filter);
        Ok(self
            .decisions(&out.waveform, offset)?
            .into_iter()
            .map(|v| (v - c) / out.drive_gain)
            .collect())
    }

    /// Block `index` of the given symbol/noise streams of `seed`.
    pub fn block(&self, seed: u64, symbol_stream: u64, noise_stream: u64, index: u64) -> Result<Block> {
        let mut srng = rng::stream_rng(seed, symbol_stream, index);
        let symbols = generate_symbols_with(self.block_symbols(), &self.constellation, &mut srng)?;
        let mut nrng = rng::stream_rng(seed, noise_stream, index);
        let noise = link::unit_noise(self.len, &mut nrng);
        Ok(Block { symbols, noise })
    }

    /// Tape-free pass through the chain built from the block-level API.
    pub fn run(
        &self,
        pulse_shaper: &FirFilter,
        rx_filter: &FirFilter,
        block: &Block,
        noisy: bool,
    ) -> Result<BlockOutput> {
        let x = upsample(&block.symbols, self.spec)?;
        let mut x = fir_convolve(&x, pulse_shaper)?;
        if let Some(dac) = &self.dac {
            x = bessel_apply(&x, dac)?;
        }
        let drive_gain = self.drive_gain(x.as_real()?)?;
        let mut field = modulate(&x, &self.config.modulator)?;
        if self.fiber.is_some() {
            field = fiber_propagate(&field, &self.config.fiber)?;
        }
        let received_power = mean_power(&field);
        let current = photodiode(&field)?;
        let clean = current.as_real()?;
        let sigma = self.noise_sigma(pulse_shaper.taps(), drive_gain)?;
        let samples = if noisy && sigma > 0.0 {
            clean.iter().zip(&block.noise).map(|(c, w)| c + sigma * w).collect()
        } else {
            clean.to_vec()
        };
        let mut y = SampledSignal::real(samples, self.spec, Domain::Photocurrent)?;
        if let Some(adc) = &self.adc {
            y = bessel_apply(&y, adc)?;
        }
        let y = fir_convolve(&y, rx_filter)?;
        let waveform = match y.into_samples() {
            crate::signal::Samples::Real(v) => v,
            crate::signal::Samples::Complex(_) => unreachable!("receiver output is real"),
        };
        if let Some(i) = waveform.iter().position(|v| !v.is_finite()) {
            return Err(Error::fault(
                "link",
                format!("non-finite receiver output at sample {i}"),
            ));
        }
        Ok(BlockOutput {
            waveform,
            sigma,
            received_power,
            drive_gain,
        })
    }

    /// Receiver-filter output when only noise of the given sigma enters after
    /// the photodiode.
    pub fn noise_only(&self, rx_filter: &FirFilter, block: &Block, sigma: f64) -> Result<Vec<f64>> {
        let samples = block.noise.iter().map(|w| sigma * w).collect();
        let mut y = SampledSignal::real(samples, self.spec, Domain::Photocurrent)?;
        if let Some(adc) = &self.adc {
            y = bessel_apply(&y, adc)?;
        }
        Ok(fir_convolve(&y, rx_filter)?.as_real()?.to_vec())
    }
}

/// Pearson correlation of two equal-length sequences.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Decision offset (in samples) that maximizes the correlation between the
/// noiseless receiver output and the transmitted amplitudes, searched over
/// `+/- window_symbols` symbols (clamped to the guard).
pub fn synchronize(
    link: &Link,
    pulse_shaper: &FirFilter,
    rx_filter: &FirFilter,
    window_symbols: usize,
    seed: u64,
) -> Result<isize> {
    let block = link.block(seed, rng::SYNC, rng::SYNC, 0)?;
    let out = link.run(pulse_shaper, rx_filter, &block, false)?;
    let target = &block.symbols.amplitudes()[link.counted_symbols()];
    let window = (window_symbols * link.spec().sps()).min(link.max_offset()) as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    for offset in -window..=window {
        let c = correlation(&link.decisions(&out.waveform, offset)?, target);
        // ties go to the smaller |offset|
        if c > best.1 + 1e-12 || (c > best.1 - 1e-12 && offset.abs() < best.0.abs()) {
            best = (offset, c);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::fault("synchronize", "no finite correlation"));
    }
    Ok(best.0)
}

/// Per-sample sigma that puts the chain with this pulse shaper at
/// `target_snr_db`, for a block of unit drive gain. A block's actual sigma is
/// this value times its drive gain.
pub fn calibrate_snr(link: &Link, pulse_shaper: &FirFilter, target_snr_db: f64) -> Result<f64> {
    link::sigma_for_symbol_energy(link.symbol_energy(pulse_shaper.taps(), 1.0), target_snr_db)
}

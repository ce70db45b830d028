//! Physical blocks between the two learnable filters.
//!
//! Linear blocks (Bessel front-ends, fiber) are applied in the frequency domain
//! with their exact analog transfer functions sampled on the FFT grid of the
//! processed block, so they act circularly on the block.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::{Domain, SampledSignal, Samples};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Coefficients `a_0..=a_n` of the reverse Bessel polynomial of order `n`.
pub fn bessel_coefficients(order: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    (0..=order)
        .map(|k| fact(2 * order - k) / (2f64.powi((order - k) as i32) * fact(k) * fact(order - k)))
        .collect()
}

fn bessel_normalized(coeffs: &[f64], w: f64) -> Complex64 {
    let s = Complex64::new(0.0, w);
    let den = coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c);
    coeffs[0] / den
}

/// Normalized angular frequency where the unit-delay Bessel response is -3 dB.
fn bessel_3db_point(coeffs: &[f64]) -> f64 {
    let target = 0.5f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while bessel_normalized(coeffs, hi).norm_sqr() > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_normalized(coeffs, mid).norm_sqr() > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Analog Bessel low-pass parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselSpec {
    pub order: usize,
    pub cutoff_hz: f64,
}

impl Default for BesselSpec {
    fn default() -> Self {
        Self {
            order: 5,
            cutoff_hz: 45e9,
        }
    }
}

/// Bessel low-pass with its response precomputed on one FFT grid.
#[derive(Debug, Clone)]
pub struct BesselLpf {
    spec: BesselSpec,
    sample_rate: f64,
    response: Vec<Complex64>,
}

impl BesselLpf {
    pub fn new(spec: BesselSpec, sample_rate: f64, len: usize) -> Result<Self> {
        if spec.order == 0 {
            return Err(Error::Configuration("Bessel order must be >= 1".into()));
        }
        if !(spec.cutoff_hz > 0.0 && spec.cutoff_hz.is_finite()) {
            return Err(Error::Configuration(format!(
                "Bessel cutoff must be positive, got {}",
                spec.cutoff_hz
            )));
        }
        if len == 0 {
            return Err(Error::EmptyInput("FFT grid must be non-empty"));
        }
        let coeffs = bessel_coefficients(spec.order);
        let w3 = bessel_3db_point(&coeffs);
        let response = fft::frequencies(len, sample_rate)
            .into_iter()
            .map(|f| bessel_normalized(&coeffs, w3 * f / spec.cutoff_hz))
            .collect();
        Ok(Self {
            spec,
            sample_rate,
            response,
        })
    }

    pub fn spec(&self) -> BesselSpec {
        self.spec
    }

    pub fn response(&self) -> &[Complex64] {
        &self.response
    }

    /// Analog response at frequency `f` in Hz.
    pub fn analog_response(&self, f: f64) -> Complex64 {
        let coeffs = bessel_coefficients(self.spec.order);
        bessel_normalized(&coeffs, bessel_3db_point(&coeffs) * f / self.spec.cutoff_hz)
    }
}

pub fn bessel_apply(x: &SampledSignal, lpf: &BesselLpf) -> Result<SampledSignal> {
    if x.domain() == Domain::OpticalField {
        return Err(Error::invalid("Bessel front-end applies to electrical signals"));
    }
    if x.len() != lpf.response.len() || x.spec().sample_rate() != lpf.sample_rate {
        return Err(Error::Configuration(format!(
            "signal grid ({} samples at {} Hz) does not match filter grid ({} samples at {} Hz)",
            x.len(),
            x.spec().sample_rate(),
            lpf.response.len(),
            lpf.sample_rate
        )));
    }
    let samples = match x.samples() {
        Samples::Real(v) => Samples::Real(fft::filter_real(v, &lpf.response)),
        Samples::Complex(v) => Samples::Complex(fft::filter_complex(v, &lpf.response)),
    };
    Ok(x.with_samples(samples, x.domain()))
}

/// Single-mode fiber with linear chromatic dispersion only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    pub length_m: f64,
    pub wavelength_m: f64,
    pub zero_dispersion_wavelength_m: f64,
    /// Dispersion slope at the zero-dispersion wavelength, ps/(nm^2 km).
    pub dispersion_slope: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self {
            length_m: 2000.0,
            wavelength_m: 1270e-9,
            zero_dispersion_wavelength_m: 1310e-9,
            dispersion_slope: 0.092,
        }
    }
}

impl FiberParams {
    pub fn back_to_back() -> Self {
        Self {
            length_m: 0.0,
            ..Self::default()
        }
    }

    /// Dispersion parameter D in ps/(nm km).
    pub fn dispersion(&self) -> f64 {
        let lambda = self.wavelength_m * 1e9;
        let lambda0 = self.zero_dispersion_wavelength_m * 1e9;
        self.dispersion_slope / 4.0 * (lambda - lambda0.powi(4) / lambda.powi(3))
    }

    /// Group-velocity dispersion beta2 in s^2/m.
    pub fn beta2(&self) -> f64 {
        // ps/(nm km) -> s/m^2
        let d_si = self.dispersion() * 1e-6;
        -d_si * self.wavelength_m.powi(2) / (2.0 * PI * SPEED_OF_LIGHT)
    }

    /// All-pass response `exp(j beta2/2 (2 pi f)^2 L)` on an FFT grid.
    pub fn response(&self, sample_rate: f64, len: usize) -> Vec<Complex64> {
        let k = 0.5 * self.beta2() * self.length_m;
        fft::frequencies(len, sample_rate)
            .into_iter()
            .map(|f| {
                let w = 2.0 * PI * f;
                Complex64::from_polar(1.0, k * w * w)
            })
            .collect()
    }
}

pub fn fiber_propagate(field: &SampledSignal, fiber: &FiberParams) -> Result<SampledSignal> {
    if field.domain() != Domain::OpticalField {
        return Err(Error::invalid("fiber input must be an optical field"));
    }
    if fiber.length_m == 0.0 {
        return Ok(field.clone());
    }
    if !(fiber.length_m > 0.0) {
        return Err(Error::invalid(format!(
            "fiber length must be >= 0, got {}",
            fiber.length_m
        )));
    }
    let h = fiber.response(field.spec().sample_rate(), field.len());
    let out = fft::filter_complex(&field.samples().to_complex(), &h);
    Ok(field.with_samples(Samples::Complex(out), Domain::OpticalField))
}

/// Ideal intensity modulator driven by a peak-normalized electrical signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatorParams {
    /// CW laser power at the modulator input, W.
    pub p_in_w: f64,
    pub modulation_index: f64,
    pub bias: f64,
}

impl Default for ModulatorParams {
    fn default() -> Self {
        Self {
            p_in_w: 1e-3,
            modulation_index: 1.0,
            bias: 1.0,
        }
    }
}

impl ModulatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_in_w > 0.0 && self.p_in_w.is_finite()) {
            return Err(Error::invalid(format!(
                "laser power must be positive, got {}",
                self.p_in_w
            )));
        }
        if !(self.modulation_index > 0.0 && self.modulation_index <= 1.0) {
            return Err(Error::invalid(format!(
                "modulation index must be in (0, 1], got {}",
                self.modulation_index
            )));
        }
        Ok(())
    }
}

/// Divides by the largest magnitude; an all-zero input stays zero.
pub fn peak_normalize(x: &[f64]) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| v / peak).collect()
}

/// `P = P_in max(0, bias + m x_hat)`, field `sqrt(P)` with zero phase.
pub fn modulate(x: &SampledSignal, params: &ModulatorParams) -> Result<SampledSignal> {
    params.validate()?;
    if x.domain() != Domain::Electrical {
        return Err(Error::invalid("modulator input must be electrical"));
    }
    let normalized = peak_normalize(x.as_real()?);
    let field = normalized
        .iter()
        .map(|&v| (params.p_in_w * (params.bias + params.modulation_index * v).max(0.0)).sqrt())
        .collect();
    Ok(x.with_samples(Samples::Real(field), Domain::OpticalField))
}

/// Mean of `|E|^2`, W.
pub fn mean_power(field: &SampledSignal) -> f64 {
    field.samples().energy() / field.len() as f64
}

/// Square-law detection with unit responsivity.
pub fn photodiode(field: &SampledSignal) -> Result<SampledSignal> {
    if field.domain() != Domain::OpticalField {
        return Err(Error::invalid("photodiode input must be an optical field"));
    }
    let current = match field.samples() {
        Samples::Real(v) => v.iter().map(|e| e * e).collect(),
        Samples::Complex(v) => v.iter().map(|e| e.norm_sqr()).collect(),
    };
    Ok(field.with_samples(Samples::Real(current), Domain::Photocurrent))
}

/// Receiver noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParams {
    /// Fixed per-sample standard deviation in photocurrent units.
    Sigma(f64),
    /// Target Es/N0 in dB at the receiver input (see [`sigma_for_symbol_energy`]).
    TargetSnrDb(f64),
}

impl NoiseParams {
    /// Per-sample sigma given the expected per-symbol energy of the
    /// information-bearing part of the photocurrent.
    pub fn sigma_for(&self, symbol_energy: f64) -> Result<f64> {
        match *self {
            NoiseParams::Sigma(s) if s >= 0.0 => Ok(s),
            NoiseParams::Sigma(s) => Err(Error::invalid(format!("noise sigma must be >= 0, got {s}"))),
            NoiseParams::TargetSnrDb(db) => sigma_for_symbol_energy(symbol_energy, db),
        }
    }
}

pub fn add_noise<R: Rng>(y: &SampledSignal, sigma: f64, rng: &mut R) -> Result<SampledSignal> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let noisy = y
        .as_real()?
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(y.with_samples(Samples::Real(noisy), y.domain()))
}

pub fn unit_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Per-sample noise sigma that gives `snr_db` as Es/N0 at the receiver input.
///
/// White noise of per-sample variance `sigma^2` has `N0 = 2 sigma^2` on the
/// sample grid, so a matched, ISI-free receiver sees a 4-PAM error rate of
/// `1.5 Q(sqrt(0.4 Es/N0))`.
pub fn sigma_for_symbol_energy(symbol_energy: f64, snr_db: f64) -> Result<f64> {
    if !(symbol_energy > 0.0 && symbol_energy.is_finite()) {
        return Err(Error::Calibration(format!(
            "reference signal has no usable energy ({symbol_energy})"
        )));
    }
    let snr = 10f64.powf(snr_db / 10.0);
    Ok((symbol_energy / (2.0 * snr)).sqrt())
}

/// Same as [`sigma_for_symbol_energy`] with `Es = sps * var(i)` taken from
/// a per-sample signal variance.
pub fn sigma_for_snr(signal_variance: f64, sps: usize, snr_db: f64) -> Result<f64> {
    sigma_for_symbol_energy(sps as f64 * signal_variance, snr_db)
}

/// Es/N0 in dB measured at the decision point from the noiseless decision
/// samples and the noise-only decision samples.
pub fn decision_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (variance(signal) / (2.0 * variance(noise))).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::SignalSpec;

    // -3 dB point of 945 / (s^5 + 15 s^4 + 105 s^3 + 420 s^2 + 945 s + 945),
    // solved with scipy.optimize.brentq.
    const W3_ORDER5: f64 = 2.4274107021526277;

    fn oracle_bessel5(f: f64, fc: f64) -> Complex64 {
        let s = Complex64::new(0.0, W3_ORDER5 * f / fc);
        945.0 / (s.powi(5) + 15.0 * s.powi(4) + 105.0 * s.powi(3) + 420.0 * s.powi(2) + 945.0 * s + 945.0)
    }

    fn spec() -> SignalSpec {
        SignalSpec::new(100e9, 4).unwrap()
    }

    fn tone(n: usize, bin: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * bin as f64 * i as f64 / n as f64).cos())
            .collect()
    }

    fn tone_amplitude(x: &[f64], bin: usize) -> f64 {
        let n = x.len() as f64;
        let (mut c, mut s) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * bin as f64 * i as f64 / n;
            c += v * ph.cos();
            s += v * ph.sin();
        }
        2.0 * (c * c + s * s).sqrt() / n
    }

    #[test]
    fn bessel_coefficients_order5() {
        assert_eq!(bessel_coefficients(5), vec![945.0, 945.0, 420.0, 105.0, 15.0, 1.0]);
    }

    #[test]
    fn bessel_matches_polynomial_oracle() {
        let lpf = BesselLpf::new(BesselSpec::default(), 400e9, 800).unwrap();
        for f in [0.0, 10e9, 45e9, 80e9, -30e9] {
            let a = lpf.analog_response(f);
            let b = oracle_bessel5(f, 45e9);
            assert!((a - b).norm() < 1e-9, "{f}: {a} vs {b}");
        }
        assert!(lpf.response().iter().all(|h| h.norm() <= 1.0 + 1e-15));
    }

    #[test]
    fn bessel_tone_attenuation() {
        // 800 points at 400 GSa/s: 0.5 GHz bins, 45 GHz is bin 90
        let spec = spec();
        let lpf = BesselLpf::new(BesselSpec::default(), spec.sample_rate(), 800).unwrap();
        let x = SampledSignal::real(tone(800, 90), spec, Domain::Electrical).unwrap();
        let y = bessel_apply(&x, &lpf).unwrap();
        let db = 20.0 * tone_amplitude(y.as_real().unwrap(), 90).log10();
        assert!((db + 3.0).abs() < 0.05, "{db}");
        let expected = 20.0 * oracle_bessel5(45e9, 45e9).norm().log10();
        assert!((db - expected).abs() < 1e-9);

        let z = bessel_apply(&y, &lpf).unwrap();
        let db2 = 20.0 * tone_amplitude(z.as_real().unwrap(), 90).log10();
        assert!((db2 + 6.0).abs() < 0.1, "{db2}");
    }

    #[test]
    fn bessel_keeps_dc() {
        let spec = spec();
        let lpf = BesselLpf::new(BesselSpec::default(), spec.sample_rate(), 64).unwrap();
        let x = SampledSignal::real(vec![0.7; 64], spec, Domain::Electrical).unwrap();
        let y = bessel_apply(&x, &lpf).unwrap();
        assert!(y.as_real().unwrap().iter().all(|v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn bessel_grid_mismatch() {
        let spec = spec();
        let lpf = BesselLpf::new(BesselSpec::default(), spec.sample_rate(), 64).unwrap();
        let x = SampledSignal::real(vec![0.0; 65], spec, Domain::Electrical).unwrap();
        assert!(matches!(bessel_apply(&x, &lpf), Err(Error::Configuration(_))));
        let other = BesselLpf::new(BesselSpec::default(), 2.0 * spec.sample_rate(), 65).unwrap();
        assert!(matches!(bessel_apply(&x, &other), Err(Error::Configuration(_))));
    }

    #[test]
    fn dispersion_parameters() {
        // D = (S0/4)(lambda - lambda0^4/lambda^3) = -3.8575 ps/(nm km),
        // beta2 = -D lambda^2 / (2 pi c) = 3.3031 ps^2/km
        let fp = FiberParams::default();
        assert!((fp.dispersion() - (-3.857_537_579_6)).abs() < 1e-9);
        let beta2_ps2_per_km = fp.beta2() * 1e24 * 1e3;
        assert!((beta2_ps2_per_km - 3.303_064_361_9).abs() < 1e-8);
    }

    #[test]
    fn fiber_is_all_pass() {
        let spec = spec();
        let mut rng = stream_rng(3, 0, 0);
        let e: Vec<f64> = unit_noise(512, &mut rng).iter().map(|v| v.abs().sqrt()).collect();
        let field = SampledSignal::real(e, spec, Domain::OpticalField).unwrap();
        let same = fiber_propagate(&field, &FiberParams::back_to_back()).unwrap();
        assert_eq!(same, field);
        let long = FiberParams {
            length_m: 20_000.0,
            ..FiberParams::default()
        };
        let out = fiber_propagate(&field, &long).unwrap();
        let (e0, e1) = (field.samples().energy(), out.samples().energy());
        assert!(((e1 - e0) / e0).abs() < 1e-10);
        assert!(long
            .response(spec.sample_rate(), 64)
            .iter()
            .all(|h| (h.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn photodiode_is_square_law() {
        let spec = spec();
        let e = SampledSignal::new(
            Samples::Complex(vec![Complex64::new(1.0, 1.0), Complex64::new(0.0, 2.0)]),
            spec,
            Domain::OpticalField,
        )
        .unwrap();
        let y = photodiode(&e).unwrap();
        assert_eq!(y.as_real().unwrap(), &[2.0, 4.0]);
        assert_eq!(y.domain(), Domain::Photocurrent);

        let p = 0.37f64;
        let r = SampledSignal::real(vec![p.sqrt(); 3], spec, Domain::OpticalField).unwrap();
        for v in photodiode(&r).unwrap().as_real().unwrap() {
            assert!((v - p).abs() < 1e-15);
        }
        let scaled = SampledSignal::real(vec![3.0 * p.sqrt(); 3], spec, Domain::OpticalField).unwrap();
        for v in photodiode(&scaled).unwrap().as_real().unwrap() {
            assert!((v - 9.0 * p).abs() < 1e-14);
        }
    }

    #[test]
    fn modulator_bias_and_clip() {
        let spec = spec();
        let params = ModulatorParams {
            p_in_w: 2e-3,
            modulation_index: 0.5,
            bias: 1.0,
        };
        let zero = SampledSignal::real(vec![0.0; 8], spec, Domain::Electrical).unwrap();
        let e = modulate(&zero, &params).unwrap();
        assert!(e.as_real().unwrap().iter().all(|&v| v == 2e-3f64.sqrt()));

        // x_hat = -1 / m = -2 can't be reached after peak normalization with
        // m = 0.5, so use m = 1 where x_hat = -1 lands on the clip boundary.
        let full = ModulatorParams {
            modulation_index: 1.0,
            ..params
        };
        let x = SampledSignal::real(vec![-2.0, 1.0, 0.5], spec, Domain::Electrical).unwrap();
        let e = modulate(&x, &full).unwrap();
        assert_eq!(e.as_real().unwrap()[0], 0.0);

        let bad = ModulatorParams { p_in_w: 0.0, ..params };
        assert!(modulate(&zero, &bad).is_err());
    }

    #[test]
    fn back_to_back_chain_is_affine() {
        let spec = spec();
        let params = ModulatorParams::default();
        let mut rng = stream_rng(5, 0, 0);
        let x = unit_noise(256, &mut rng);
        let sig = SampledSignal::real(x.clone(), spec, Domain::Electrical).unwrap();
        let y = photodiode(&modulate(&sig, &params).unwrap()).unwrap();
        let xhat = peak_normalize(&x);
        for (v, xh) in y.as_real().unwrap().iter().zip(xhat) {
            assert!((v - params.p_in_w * (1.0 + xh)).abs() < 1e-18);
        }
    }

    #[test]
    fn noise_statistics() {
        let spec = spec();
        let y = SampledSignal::real(vec![0.25; 1_000_000], spec, Domain::Photocurrent).unwrap();
        assert_eq!(add_noise(&y, 0.0, &mut stream_rng(1, 0, 0)).unwrap(), y);
        let sigma = 0.3;
        let a = add_noise(&y, sigma, &mut stream_rng(1, 0, 0)).unwrap();
        let b = add_noise(&y, sigma, &mut stream_rng(1, 0, 0)).unwrap();
        assert_eq!(a, b);
        let diff: Vec<f64> = a.as_real().unwrap().iter().map(|v| v - 0.25).collect();
        // relative std of a 1e6-sample variance estimate is sqrt(2/1e6) = 0.14%
        let var = variance(&diff);
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.01, "{var}");
        assert!(add_noise(&y, -1.0, &mut stream_rng(1, 0, 0)).is_err());
    }

    #[test]
    fn snr_scaling() {
        let s1 = sigma_for_snr(1.0, 4, 12.0).unwrap();
        let s2 = sigma_for_snr(1.0, 4, 12.0 - 20.0 * 2f64.log10()).unwrap();
        assert!((s2 / s1 - 2.0).abs() < 1e-12);
        let sig = [1.0, -1.0, 1.0, -1.0];
        let n1 = [0.1, -0.1, 0.1, -0.1];
        let n2 = [0.2, -0.2, 0.2, -0.2];
        let drop = decision_snr_db(&sig, &n1) - decision_snr_db(&sig, &n2);
        assert!((drop - 6.0206).abs() < 1e-3);
        assert!(matches!(sigma_for_snr(0.0, 4, 12.0), Err(Error::Calibration(_))));
    }
}

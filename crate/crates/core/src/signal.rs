//! Symbol and waveform primitives: PAM alphabets, seeded symbol generation,
//! zero-insertion upsampling, decimation, centered FIR convolution and
//! root-raised-cosine design.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng;

/// Symbol rate and oversampling factor of a sampled waveform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    baud_rate: f64,
    sps: usize,
}

impl SignalSpec {
    pub fn new(baud_rate: f64, sps: usize) -> Result<Self> {
        if sps == 0 {
            return Err(Error::invalid("samples per symbol must be >= 1"));
        }
        if !(baud_rate.is_finite() && baud_rate > 0.0) {
            return Err(Error::invalid(format!("baud rate must be positive, got {baud_rate}")));
        }
        Ok(Self { baud_rate, sps })
    }

    pub fn baud_rate(&self) -> f64 {
        self.baud_rate
    }

    pub fn sps(&self) -> usize {
        self.sps
    }

    pub fn sample_rate(&self) -> f64 {
        self.baud_rate * self.sps as f64
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.baud_rate
    }
}

/// Equally spaced, zero-mean, unit-energy M-PAM alphabet with Gray labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PamConstellation {
    levels: Vec<f64>,
    labels: Vec<u32>,
}

impl PamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::invalid(format!("PAM order must be >= 2, got {order}")));
        }
        let m = order as f64;
        // mean of (2i - (M-1))^2 over i is (M^2 - 1) / 3
        let scale = ((m * m - 1.0) / 3.0).sqrt();
        let levels = (0..order).map(|i| (2.0 * i as f64 - (m - 1.0)) / scale).collect();
        let labels = (0..order as u32).map(|i| i ^ (i >> 1)).collect();
        Ok(Self { levels, labels })
    }

    pub fn pam4() -> Self {
        Self::new(4).expect("order 4 is valid")
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Gray label of level `index` (lowest level is all zeros).
    pub fn gray_label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn bits_per_symbol(&self) -> u32 {
        usize::BITS - (self.order() - 1).leading_zeros()
    }
}

/// Alphabet indices together with their mapped amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    indices: Vec<u8>,
    amplitudes: Vec<f64>,
}

impl SymbolSequence {
    pub fn from_indices(indices: Vec<u8>, constellation: &PamConstellation) -> Result<Self> {
        let m = constellation.order();
        let amplitudes = indices
            .iter()
            .map(|&i| {
                constellation
                    .levels()
                    .get(i as usize)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("symbol index {i} >= order {m}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { indices, amplitudes })
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> SymbolSequence {
        SymbolSequence {
            indices: self.indices[range.clone()].to_vec(),
            amplitudes: self.amplitudes[range].to_vec(),
        }
    }
}

/// Draws `count` i.i.d. uniform symbols from `rng`.
pub fn generate_symbols_with<R: Rng>(
    count: usize,
    constellation: &PamConstellation,
    rng: &mut R,
) -> Result<SymbolSequence> {
    if count == 0 {
        return Err(Error::EmptyInput("symbol count must be >= 1"));
    }
    let m = constellation.order();
    let indices = (0..count).map(|_| rng.random_range(0..m) as u8).collect();
    SymbolSequence::from_indices(indices, constellation)
}

/// Draws `count` symbols from the training stream of `seed`.
pub fn generate_symbols(count: usize, constellation: &PamConstellation, seed: u64) -> Result<SymbolSequence> {
    let mut rng = rng::stream_rng(seed, rng::TRAIN_SYMBOLS, 0);
    generate_symbols_with(count, constellation, &mut rng)
}

/// Physical meaning of a waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Electrical,
    OpticalField,
    Photocurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Real(v) => v.len(),
            Samples::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        match self {
            Samples::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            Samples::Complex(v) => v.clone(),
        }
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        match self {
            Samples::Real(v) => v.iter().map(|x| x * x).sum(),
            Samples::Complex(v) => v.iter().map(|x| x.norm_sqr()).sum(),
        }
    }
}

/// A waveform with its sampling grid and physical domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Samples,
    spec: SignalSpec,
    domain: Domain,
}

impl SampledSignal {
    pub fn new(samples: Samples, spec: SignalSpec, domain: Domain) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("signal must contain at least one sample"));
        }
        Ok(Self { samples, spec, domain })
    }

    pub fn real(samples: Vec<f64>, spec: SignalSpec, domain: Domain) -> Result<Self> {
        Self::new(Samples::Real(samples), spec, domain)
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn into_samples(self) -> Samples {
        self.samples
    }

    pub fn spec(&self) -> SignalSpec {
        self.spec
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Real samples, or an error for complex waveforms.
    pub fn as_real(&self) -> Result<&[f64]> {
        match &self.samples {
            Samples::Real(v) => Ok(v),
            Samples::Complex(_) => Err(Error::invalid("expected a real-valued signal")),
        }
    }

    pub(crate) fn with_samples(&self, samples: Samples, domain: Domain) -> Self {
        Self {
            samples,
            spec: self.spec,
            domain,
        }
    }
}

/// FIR filter taps. Only learnable filters are touched by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    learnable: bool,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>, learnable: bool) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::EmptyInput("filter needs at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::fault("FirFilter::new", "non-finite tap"));
        }
        Ok(Self { taps, learnable })
    }

    pub fn identity() -> Self {
        Self {
            taps: vec![1.0],
            learnable: false,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub(crate) fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }

    pub fn set_learnable(&mut self, learnable: bool) {
        self.learnable = learnable;
    }

    pub fn l2_norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// Scales the taps to unit L2 norm.
    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.l2_norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::fault("normalize", format!("filter norm is {norm}")));
        }
        self.taps.iter_mut().for_each(|t| *t /= norm);
        Ok(())
    }
}

/// Zero-insertion upsampling of the symbol amplitudes.
pub fn upsample(symbols: &SymbolSequence, spec: SignalSpec) -> Result<SampledSignal> {
    let samples = upsample_values(symbols.amplitudes(), spec.sps());
    SampledSignal::real(samples, spec, Domain::Electrical)
}

pub fn upsample_values(values: &[f64], sps: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len() * sps];
    for (k, &v) in values.iter().enumerate() {
        out[k * sps] = v;
    }
    out
}

/// Keeps every `sps`-th sample starting at `phase`.
pub fn downsample(x: &[f64], sps: usize, phase: usize) -> Result<Vec<f64>> {
    if sps == 0 {
        return Err(Error::invalid("samples per symbol must be >= 1"));
    }
    if phase >= sps {
        return Err(Error::invalid(format!("phase {phase} out of range for sps {sps}")));
    }
    Ok(x.iter().skip(phase).step_by(sps).copied().collect())
}

/// `y[i] += a * x[i + shift]` over the overlapping range.
pub(crate) fn shifted_axpy(y: &mut [f64], x: &[f64], a: f64, shift: isize) {
    let n = y.len().min(x.len());
    if shift.unsigned_abs() >= n {
        return;
    }
    if shift >= 0 {
        let s = shift as usize;
        y[..n - s].iter_mut().zip(&x[s..n]).for_each(|(p, q)| *p += a * q);
    } else {
        let s = shift.unsigned_abs();
        y[s..n].iter_mut().zip(&x[..n - s]).for_each(|(p, q)| *p += a * q);
    }
}

/// Linear convolution trimmed to the input length, aligned on tap `(N-1)/2`.
///
/// `y[n] = sum_k h[k] * x[n + c - k]` with `c = (N-1)/2` and `x` zero outside
/// its support.
pub fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let c = (h.len().saturating_sub(1) / 2) as isize;
    let mut y = vec![0.0; x.len()];
    for (k, &hk) in h.iter().enumerate() {
        shifted_axpy(&mut y, x, hk, c - k as isize);
    }
    y
}

pub fn fir_convolve(x: &SampledSignal, filter: &FirFilter) -> Result<SampledSignal> {
    if filter.len() > x.len() {
        return Err(Error::invalid(format!(
            "filter length {} exceeds signal length {}",
            filter.len(),
            x.len()
        )));
    }
    let samples = match x.samples() {
        Samples::Real(v) => Samples::Real(convolve_same(v, filter.taps())),
        Samples::Complex(v) => {
            let re: Vec<f64> = v.iter().map(|z| z.re).collect();
            let im: Vec<f64> = v.iter().map(|z| z.im).collect();
            let re = convolve_same(&re, filter.taps());
            let im = convolve_same(&im, filter.taps());
            Samples::Complex(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
        }
    };
    Ok(x.with_samples(samples, x.domain()))
}

/// Continuous-time RRC impulse response with unit symbol period, `t` in symbols.
///
/// Unnormalized; the removable singularities at `t = 0` and `|t| = 1/(4 rolloff)`
/// are replaced by their limits.
pub fn rrc_impulse(t: f64, rolloff: f64) -> f64 {
    let a = rolloff;
    if t.abs() < 1e-12 {
        return 1.0 - a + 4.0 * a / PI;
    }
    let edge = 4.0 * a * t;
    if (edge.abs() - 1.0).abs() < 1e-9 {
        let arg = PI / (4.0 * a);
        return a / 2f64.sqrt() * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    ((PI * t * (1.0 - a)).sin() + edge * (PI * t * (1.0 + a)).cos()) / (PI * t * (1.0 - edge * edge))
}

/// Centered root-raised-cosine taps at `sps` samples per symbol, unit L2 norm.
pub fn design_rrc(num_taps: usize, sps: usize, rolloff: f64) -> Result<FirFilter> {
    if num_taps < 3 {
        return Err(Error::invalid(format!("RRC needs at least 3 taps, got {num_taps}")));
    }
    if sps == 0 {
        return Err(Error::invalid("samples per symbol must be >= 1"));
    }
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::invalid(format!("RRC rolloff must be in (0, 1], got {rolloff}")));
    }
    let center = (num_taps as f64 - 1.0) / 2.0;
    let taps = (0..num_taps)
        .map(|k| rrc_impulse((k as f64 - center) / sps as f64, rolloff))
        .collect();
    let mut filter = FirFilter::new(taps, false)?;
    filter.normalize()?;
    Ok(filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec4() -> SignalSpec {
        SignalSpec::new(100e9, 4).unwrap()
    }

    #[test]
    fn pam4_levels_are_unit_energy() {
        let c = PamConstellation::pam4();
        let s5 = 5f64.sqrt();
        let expected = [-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5];
        for (l, e) in c.levels().iter().zip(expected) {
            assert!((l - e).abs() < 1e-15);
        }
        assert!((c.levels()[3] - 1.34164).abs() < 1e-5);
        let energy: f64 = c.levels().iter().map(|l| l * l).sum::<f64>() / 4.0;
        assert!((energy - 1.0).abs() < 1e-15);
        assert_eq!(
            (0..4).map(|i| c.gray_label(i)).collect::<Vec<_>>(),
            vec![0b00, 0b01, 0b11, 0b10]
        );
        assert_eq!(c.bits_per_symbol(), 2);
    }

    #[test]
    fn symbols_are_reproducible() {
        let c = PamConstellation::pam4();
        let a = generate_symbols(8, &c, 42).unwrap();
        let b = generate_symbols(8, &c, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.indices().iter().all(|&i| i < 4));
        for (&i, &amp) in a.indices().iter().zip(a.amplitudes()) {
            assert_eq!(amp, c.levels()[i as usize]);
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        let c = PamConstellation::pam4();
        assert!(matches!(generate_symbols(0, &c, 1), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn symbol_frequencies_are_uniform() {
        // Binomial std of a frequency at n = 1e6, p = 0.25 is 4.3e-4, so a 0.5%
        // relative band (1.25e-3 absolute) is about 2.9 sigma.
        let c = PamConstellation::pam4();
        let s = generate_symbols(1_000_000, &c, 2024).unwrap();
        let mut counts = [0usize; 4];
        s.indices().iter().for_each(|&i| counts[i as usize] += 1);
        for n in counts {
            let freq = n as f64 / 1e6;
            assert!((freq - 0.25).abs() / 0.25 < 0.005, "frequency {freq}");
        }
    }

    #[test]
    fn upsample_inserts_zeros() {
        let c = PamConstellation::new(2).unwrap();
        let seq = SymbolSequence {
            indices: vec![0, 1],
            amplitudes: vec![1.0, 2.0],
        };
        let _ = c;
        let up = upsample(&seq, spec4()).unwrap();
        assert_eq!(up.as_real().unwrap(), &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(upsample_values(&[1.0, 2.0], 1), vec![1.0, 2.0]);
        assert_eq!(up.samples().energy(), 5.0);
    }

    #[test]
    fn downsample_picks_phase() {
        let x = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
        assert_eq!(downsample(&x, 4, 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(downsample(&x, 4, 1).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(downsample(&x, 4, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn convolution_alignment() {
        let x = SampledSignal::real(vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5], spec4(), Domain::Electrical).unwrap();
        let id = FirFilter::new(vec![1.0], false).unwrap();
        assert_eq!(fir_convolve(&x, &id).unwrap(), x);
        let delayed = FirFilter::new(vec![0.0, 1.0, 0.0], false).unwrap();
        assert_eq!(fir_convolve(&x, &delayed).unwrap(), x);

        let mut imp = vec![0.0; 9];
        imp[4] = 1.0;
        let imp = SampledSignal::real(imp, spec4(), Domain::Electrical).unwrap();
        let f = FirFilter::new(vec![0.1, 0.2, 0.3, 0.4, 0.5], false).unwrap();
        let y = fir_convolve(&imp, &f).unwrap();
        assert_eq!(&y.as_real().unwrap()[2..7], f.taps());

        let long = FirFilter::new(vec![1.0; 7], false).unwrap();
        assert!(fir_convolve(&x, &long).is_err());
    }

    #[test]
    fn rrc_center_limit() {
        // 1 - a + 4a/pi at a = 0.01
        assert!((rrc_impulse(0.0, 0.01) - 1.002_732_4).abs() < 1e-7);
        // the |t| = 1/(4a) limit matches its neighbourhood
        let t0 = 1.0 / (4.0 * 0.25);
        let lim = rrc_impulse(t0, 0.25);
        let near = 0.5 * (rrc_impulse(t0 - 1e-6, 0.25) + rrc_impulse(t0 + 1e-6, 0.25));
        assert!((lim - near).abs() < 1e-6);
    }

    #[test]
    fn rrc_rejects_bad_arguments() {
        assert!(design_rrc(25, 4, 0.0).is_err());
        assert!(design_rrc(2, 4, 0.1).is_err());
        assert!(design_rrc(25, 4, 1.5).is_err());
    }

    #[test]
    fn long_rrc_pair_is_nyquist() {
        let h = design_rrc(257, 4, 0.25).unwrap();
        let n = h.len();
        let full: Vec<f64> = (0..2 * n - 1)
            .map(|i| {
                (0..n)
                    .filter(|&k| i >= k && i - k < n)
                    .map(|k| h.taps()[k] * h.taps()[i - k])
                    .sum()
            })
            .collect();
        let mid = n - 1;
        let main = full[mid];
        assert!((main - 1.0).abs() < 1e-12);
        let worst = (0..full.len())
            .filter(|&i| i != mid && (i as isize - mid as isize) % 4 == 0)
            .map(|i| full[i].abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3 * main, "ISI {worst}");
    }

    proptest! {
        #[test]
        fn convolution_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 32),
            y in prop::collection::vec(-1.0f64..1.0, 32),
            h in prop::collection::vec(-1.0f64..1.0, 1..9),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = convolve_same(&mix, &h);
            let cx = convolve_same(&x, &h);
            let cy = convolve_same(&y, &h);
            for i in 0..32 {
                prop_assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn up_down_round_trip(v in prop::collection::vec(-3.0f64..3.0, 1..50), sps in 1usize..8) {
            let up = upsample_values(&v, sps);
            prop_assert_eq!(downsample(&up, sps, 0).unwrap(), v);
        }

        #[test]
        fn rrc_is_unit_norm_and_symmetric(n in 3usize..120, sps in 1usize..8, rolloff in 0.01f64..1.0) {
            let f = design_rrc(n, sps, rolloff).unwrap();
            prop_assert!((f.l2_norm() - 1.0).abs() < 1e-12);
            for k in 0..n {
                prop_assert!((f.taps()[k] - f.taps()[n - 1 - k]).abs() < 1e-12);
            }
        }
    }
}

//! Reverse-mode adjoints for the link chain.
//!
//! The chain is a fixed pipeline, so the tape is a flat list of primitive ops
//! recorded in forward order, each holding the activations its adjoint needs.
//! Complex activations carry adjoints in the `dL/dRe + i dL/dIm` convention,
//! under which a complex-linear map `C` has adjoint `C^H`.

use rustfft::num_complex::Complex64;

use crate::chain::{Block, Link};
use crate::error::{Error, Result};
use crate::fft;
use crate::signal::{convolve_same, shifted_axpy, upsample_values, FirFilter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    PulseShaper,
    RxFilter,
}

/// Filter taps with their accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Parameter {
    pub fn new(values: Vec<f64>) -> Self {
        let grad = vec![0.0; values.len()];
        Self { values, grad }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub pulse_shaper: Parameter,
    pub rx_filter: Parameter,
}

impl Parameters {
    pub fn from_filters(pulse_shaper: &FirFilter, rx_filter: &FirFilter) -> Self {
        Self {
            pulse_shaper: Parameter::new(pulse_shaper.taps().to_vec()),
            rx_filter: Parameter::new(rx_filter.taps().to_vec()),
        }
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        match id {
            ParamId::PulseShaper => &self.pulse_shaper,
            ParamId::RxFilter => &self.rx_filter,
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        match id {
            ParamId::PulseShaper => &mut self.pulse_shaper,
            ParamId::RxFilter => &mut self.rx_filter,
        }
    }

    pub fn zero_grad(&mut self) {
        self.pulse_shaper.zero_grad();
        self.rx_filter.zero_grad();
    }
}

/// Activation or adjoint flowing along the chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Value {
    fn into_real(self, op: &str) -> Result<Vec<f64>> {
        match self {
            Value::Real(v) => Ok(v),
            Value::Complex(_) => Err(Error::State(format!("{op}: expected a real adjoint"))),
        }
    }

    fn into_complex(self, op: &str) -> Result<Vec<Complex64>> {
        match self {
            Value::Complex(v) => Ok(v),
            Value::Real(_) => Err(Error::State(format!("{op}: expected a complex adjoint"))),
        }
    }
}

#[derive(Debug)]
enum Op<'a> {
    Conv {
        param: ParamId,
        input: Vec<f64>,
        taps: Vec<f64>,
    },
    SpectralReal {
        response: &'a [Complex64],
    },
    SpectralComplex {
        response: &'a [Complex64],
    },
    PeakNormalize {
        input: Vec<f64>,
        peak: f64,
        argmax: usize,
    },
    Affine {
        scale: f64,
    },
    ClipZero {
        active: Vec<bool>,
    },
    Sqrt {
        output: Vec<f64>,
    },
    Square {
        input: Vec<f64>,
    },
    Promote,
    AbsSquare {
        input: Vec<Complex64>,
    },
    AddConstant,
    Gather {
        len: usize,
        indices: Vec<usize>,
    },
    Standardize {
        output: Vec<f64>,
        std: f64,
    },
    Mse {
        residual: Vec<f64>,
    },
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Conv { .. } => "conv",
            Op::SpectralReal { .. } => "spectral_real",
            Op::SpectralComplex { .. } => "spectral_complex",
            Op::PeakNormalize { .. } => "peak_normalize",
            Op::Affine { .. } => "affine",
            Op::ClipZero { .. } => "clip_zero",
            Op::Sqrt { .. } => "sqrt",
            Op::Square { .. } => "square",
            Op::Promote => "promote",
            Op::AbsSquare { .. } => "abs_square",
            Op::AddConstant => "add_constant",
            Op::Gather { .. } => "gather",
            Op::Standardize { .. } => "standardize",
            Op::Mse { .. } => "mse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TapeState {
    Recording,
    Finished,
    Consumed,
}

/// Forward record of one pass through the chain.
#[derive(Debug)]
pub struct Tape<'a> {
    ops: Vec<Op<'a>>,
    state: TapeState,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_real(op: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::fault(op, format!("non-finite activation at sample {i}"))),
        None => Ok(()),
    }
}

fn check_complex(op: &str, v: &[Complex64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::fault(op, format!("non-finite activation at sample {i}"))),
        None => Ok(()),
    }
}

/// `sum_i y[i] * x[i + shift]` over the overlapping range.
fn shifted_dot(y: &[f64], x: &[f64], shift: isize) -> f64 {
    let n = y.len().min(x.len());
    if shift.unsigned_abs() >= n {
        return 0.0;
    }
    if shift >= 0 {
        let s = shift as usize;
        y[..n - s].iter().zip(&x[s..n]).map(|(p, q)| p * q).sum()
    } else {
        let s = shift.unsigned_abs();
        y[s..n].iter().zip(&x[..n - s]).map(|(p, q)| p * q).sum()
    }
}

/// Transpose of [`convolve_same`] in the signal argument.
fn conv_same_adjoint(g: &[f64], h: &[f64]) -> Vec<f64> {
    let c = ((h.len() - 1) / 2) as isize;
    let mut x = vec![0.0; g.len()];
    for (k, &hk) in h.iter().enumerate() {
        shifted_axpy(&mut x, g, hk, k as isize - c);
    }
    x
}

fn conv_same_taps_grad(g: &[f64], x: &[f64], taps: usize) -> Vec<f64> {
    let c = ((taps - 1) / 2) as isize;
    (0..taps).map(|k| shifted_dot(g, x, c - k as isize)).collect()
}

pub fn standardize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (x.iter().map(|v| (v - mean) / std).collect(), std)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            state: TapeState::Recording,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Names of the recorded ops in forward order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.ops.iter().map(Op::name).collect()
    }

    fn push(&mut self, op: Op<'a>) -> Result<()> {
        if self.state != TapeState::Recording {
            return Err(Error::State("tape is closed; reset it before recording".into()));
        }
        self.ops.push(op);
        Ok(())
    }

    pub fn conv(&mut self, x: Vec<f64>, param: ParamId, taps: &[f64]) -> Result<Vec<f64>> {
        if taps.is_empty() || taps.len() > x.len() {
            return Err(Error::invalid(format!(
                "filter length {} incompatible with signal length {}",
                taps.len(),
                x.len()
            )));
        }
        let y = convolve_same(&x, taps);
        check_real("conv", &y)?;
        self.push(Op::Conv {
            param,
            input: x,
            taps: taps.to_vec(),
        })?;
        Ok(y)
    }

    pub fn spectral_real(&mut self, x: Vec<f64>, response: &'a [Complex64]) -> Result<Vec<f64>> {
        if x.len() != response.len() {
            return Err(Error::Configuration(
                "spectral response does not match block length".into(),
            ));
        }
        let y = fft::filter_real(&x, response);
        check_real("spectral_real", &y)?;
        self.push(Op::SpectralReal { response })?;
        Ok(y)
    }

    pub fn spectral_complex(&mut self, x: Vec<Complex64>, response: &'a [Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != response.len() {
            return Err(Error::Configuration(
                "spectral response does not match block length".into(),
            ));
        }
        let y = fft::filter_complex(&x, response);
        check_complex("spectral_complex", &y)?;
        self.push(Op::SpectralComplex { response })?;
        Ok(y)
    }

    pub fn peak_normalize(&mut self, x: Vec<f64>) -> Result<Vec<f64>> {
        let (argmax, peak) = x.iter().enumerate().fold(
            (0, 0.0f64),
            |(i, m), (j, v)| if v.abs() > m { (j, v.abs()) } else { (i, m) },
        );
        let y = if peak == 0.0 {
            vec![0.0; x.len()]
        } else {
            x.iter().map(|v| v / peak).collect()
        };
        check_real("peak_normalize", &y)?;
        self.push(Op::PeakNormalize { input: x, peak, argmax })?;
        Ok(y)
    }

    pub fn affine(&mut self, x: Vec<f64>, scale: f64, offset: f64) -> Result<Vec<f64>> {
        let y: Vec<f64> = x.iter().map(|v| scale * v + offset).collect();
        check_real("affine", &y)?;
        self.push(Op::Affine { scale })?;
        Ok(y)
    }

    pub fn clip_zero(&mut self, x: Vec<f64>) -> Result<Vec<f64>> {
        let active = x.iter().map(|&v| v > 0.0).collect();
        let y = x.iter().map(|&v| v.max(0.0)).collect();
        self.push(Op::ClipZero { active })?;
        Ok(y)
    }

    pub fn sqrt(&mut self, x: Vec<f64>) -> Result<Vec<f64>> {
        let y: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        check_real("sqrt", &y)?;
        self.push(Op::Sqrt { output: y.clone() })?;
        Ok(y)
    }

    pub fn square(&mut self, x: Vec<f64>) -> Result<Vec<f64>> {
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        check_real("square", &y)?;
        self.push(Op::Square { input: x })?;
        Ok(y)
    }

    pub fn promote(&mut self, x: Vec<f64>) -> Result<Vec<Complex64>> {
        self.push(Op::Promote)?;
        Ok(x.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }

    pub fn abs_square(&mut self, x: Vec<Complex64>) -> Result<Vec<f64>> {
        let y: Vec<f64> = x.iter().map(|z| z.norm_sqr()).collect();
        check_real("abs_square", &y)?;
        self.push(Op::AbsSquare { input: x })?;
        Ok(y)
    }

    /// Adds a constant vector (e.g. a fixed noise realization); identity Jacobian.
    pub fn add_constant(&mut self, x: Vec<f64>, constant: &[f64]) -> Result<Vec<f64>> {
        if x.len() != constant.len() {
            return Err(Error::invalid("constant length does not match signal"));
        }
        let y: Vec<f64> = x.iter().zip(constant).map(|(a, b)| a + b).collect();
        check_real("add_constant", &y)?;
        self.push(Op::AddConstant)?;
        Ok(y)
    }

    pub fn gather(&mut self, x: Vec<f64>, indices: Vec<usize>) -> Result<Vec<f64>> {
        let y = indices
            .iter()
            .map(|&i| {
                x.get(i)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("sample index {i} outside block of {}", x.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        self.push(Op::Gather { len: x.len(), indices })?;
        Ok(y)
    }

    /// Zero-mean, unit-RMS scaling over the vector.
    pub fn standardize(&mut self, x: Vec<f64>) -> Result<Vec<f64>> {
        let (y, std) = standardize(&x);
        if !(std > 0.0) {
            return Err(Error::fault("standardize", "decision samples have zero spread"));
        }
        check_real("standardize", &y)?;
        self.push(Op::Standardize { output: y.clone(), std })?;
        Ok(y)
    }

    /// Mean squared error against `target`; closes the tape.
    pub fn mse(&mut self, y: Vec<f64>, target: &[f64]) -> Result<f64> {
        if y.len() != target.len() || y.is_empty() {
            return Err(Error::invalid("prediction and target lengths differ"));
        }
        let residual: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / y.len() as f64;
        if !loss.is_finite() {
            return Err(Error::fault("mse", "non-finite loss"));
        }
        self.push(Op::Mse { residual })?;
        self.state = TapeState::Finished;
        Ok(loss)
    }

    pub fn reset(&mut self) {
        self.ops.clear();
        self.state = TapeState::Recording;
    }

    /// Accumulates `dL/dtheta` of the recorded loss into `params`.
    pub fn backward(&mut self, params: &mut Parameters) -> Result<()> {
        if self.state != TapeState::Finished {
            return Err(Error::State(match self.state {
                TapeState::Consumed => "backward already ran on this tape".into(),
                _ => "backward called before a loss was recorded".into(),
            }));
        }
        self.state = TapeState::Consumed;
        self.propagate(Value::Real(Vec::new()), params).map(|_| ())
    }

    /// Pulls `seed` (the adjoint of the last recorded output) back through an
    /// open tape and returns the adjoint of the first input.
    pub fn backward_from(&mut self, seed: Value, params: &mut Parameters) -> Result<Value> {
        if self.state != TapeState::Recording || self.ops.is_empty() {
            return Err(Error::State("backward_from needs a non-empty open tape".into()));
        }
        self.state = TapeState::Consumed;
        self.propagate(seed, params)
    }

    fn propagate(&self, mut adj: Value, params: &mut Parameters) -> Result<Value> {
        for op in self.ops.iter().rev() {
            let name = op.name();
            adj = match op {
                Op::Mse { residual } => {
                    let b = residual.len() as f64;
                    Value::Real(residual.iter().map(|r| 2.0 * r / b).collect())
                }
                Op::Standardize { output, std } => {
                    let g = adj.into_real(name)?;
                    let n = g.len() as f64;
                    let mean_g = g.iter().sum::<f64>() / n;
                    let mean_gy = g.iter().zip(output).map(|(a, b)| a * b).sum::<f64>() / n;
                    Value::Real(
                        g.iter()
                            .zip(output)
                            .map(|(gi, yi)| (gi - mean_g - yi * mean_gy) / std)
                            .collect(),
                    )
                }
                Op::Gather { len, indices } => {
                    let g = adj.into_real(name)?;
                    let mut x = vec![0.0; *len];
                    for (&i, gi) in indices.iter().zip(g) {
                        x[i] += gi;
                    }
                    Value::Real(x)
                }
                Op::Conv { param, input, taps } => {
                    let g = adj.into_real(name)?;
                    let grad = conv_same_taps_grad(&g, input, taps.len());
                    let p = params.get_mut(*param);
                    if p.grad.len() != grad.len() {
                        return Err(Error::State(format!(
                            "parameter {param:?} has {} taps, tape recorded {}",
                            p.grad.len(),
                            grad.len()
                        )));
                    }
                    p.grad.iter_mut().zip(grad).for_each(|(a, b)| *a += b);
                    Value::Real(conv_same_adjoint(&g, taps))
                }
                Op::SpectralReal { response } => {
                    let g = adj.into_real(name)?;
                    Value::Real(fft::filter_real(&g, &fft::conj_response(response)))
                }
                Op::SpectralComplex { response } => {
                    let g = adj.into_complex(name)?;
                    Value::Complex(fft::filter_complex(&g, &fft::conj_response(response)))
                }
                Op::PeakNormalize { input, peak, argmax } => {
                    let g = adj.into_real(name)?;
                    if *peak == 0.0 {
                        Value::Real(vec![0.0; g.len()])
                    } else {
                        let dot: f64 = g.iter().zip(input).map(|(a, b)| a * b).sum();
                        let mut x: Vec<f64> = g.iter().map(|v| v / peak).collect();
                        x[*argmax] -= input[*argmax].signum() * dot / (peak * peak);
                        Value::Real(x)
                    }
                }
                Op::Affine { scale } => Value::Real(adj.into_real(name)?.iter().map(|g| g * scale).collect()),
                Op::ClipZero { active } => Value::Real(
                    adj.into_real(name)?
                        .iter()
                        .zip(active)
                        .map(|(g, &a)| if a { *g } else { 0.0 })
                        .collect(),
                ),
                Op::Sqrt { output } => Value::Real(
                    adj.into_real(name)?
                        .iter()
                        .zip(output)
                        .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                        .collect(),
                ),
                Op::Square { input } => Value::Real(
                    adj.into_real(name)?
                        .iter()
                        .zip(input)
                        .map(|(g, x)| 2.0 * x * g)
                        .collect(),
                ),
                Op::Promote => Value::Real(adj.into_complex(name)?.iter().map(|z| z.re).collect()),
                Op::AbsSquare { input } => Value::Complex(
                    adj.into_real(name)?
                        .iter()
                        .zip(input)
                        .map(|(g, z)| z * (2.0 * g))
                        .collect(),
                ),
                Op::AddConstant => adj,
            };
            match &adj {
                Value::Real(v) => check_real(name, v)?,
                Value::Complex(v) => check_complex(name, v)?,
            }
        }
        Ok(adj)
    }
}

/// Records the full chain for one block and returns the MSE loss.
///
/// `offset` is the sample offset of the decision instants (see
/// [`crate::chain::synchronize`]).
pub fn forward<'a>(link: &'a Link, params: &Parameters, block: &Block, offset: isize) -> Result<(f64, Tape<'a>)> {
    let cfg = link.config();
    let mut tape = Tape::new();
    let x = upsample_values(block.symbols.amplitudes(), link.spec().sps());
    let mut x = tape.conv(x, ParamId::PulseShaper, params.pulse_shaper.values())?;
    if let Some(dac) = link.dac() {
        x = tape.spectral_real(x, dac.response())?;
    }
    let drive_gain = link.drive_gain(&x)?;
    let x = tape.peak_normalize(x)?;
    let m = &cfg.modulator;
    let power = tape.affine(x, m.p_in_w * m.modulation_index, m.p_in_w * m.bias)?;
    let power = tape.clip_zero(power)?;
    let field = tape.sqrt(power)?;
    let current = match link.fiber_response() {
        Some(h) => {
            let field = tape.promote(field)?;
            let field = tape.spectral_complex(field, h)?;
            tape.abs_square(field)?
        }
        None => tape.square(field)?,
    };
    let sigma = link.noise_sigma(params.pulse_shaper.values(), drive_gain)?;
    let noise: Vec<f64> = block.noise.iter().map(|w| sigma * w).collect();
    let mut y = tape.add_constant(current, &noise)?;
    if let Some(adc) = link.adc() {
        y = tape.spectral_real(y, adc.response())?;
    }
    let y = tape.conv(y, ParamId::RxFilter, params.rx_filter.values())?;
    let y = tape.gather(y, link.decision_indices(offset)?)?;
    let y = tape.standardize(y)?;
    let target = &block.symbols.amplitudes()[link.counted_symbols()];
    let loss = tape.mse(y, target)?;
    Ok((loss, tape))
}

/// Gradient of the MSE of one block with respect to both filters.
pub fn loss_and_gradient(link: &Link, params: &mut Parameters, block: &Block, offset: isize) -> Result<f64> {
    params.zero_grad();
    let (loss, mut tape) = forward(link, params, block, offset)?;
    tape.backward(params)?;
    Ok(loss)
}

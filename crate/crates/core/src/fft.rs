//! Thread-local FFT planning and frequency-domain filtering on the FFT grid.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn forward(buf: &mut [Complex64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// Inverse transform including the 1/N scale.
pub fn inverse(buf: &mut [Complex64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    fft.process(buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
}

/// Bin frequencies in Hz, numpy `fftfreq` ordering (Nyquist bin negative).
pub fn frequencies(n: usize, sample_rate: f64) -> Vec<f64> {
    let n_i = n as isize;
    (0..n_i)
        .map(|k| {
            let k = if k < (n_i + 1) / 2 { k } else { k - n_i };
            k as f64 * sample_rate / n as f64
        })
        .collect()
}

/// Circular filtering `IFFT(H . FFT(x))`.
pub fn filter_complex(x: &[Complex64], response: &[Complex64]) -> Vec<Complex64> {
    debug_assert_eq!(x.len(), response.len());
    let mut buf = x.to_vec();
    forward(&mut buf);
    buf.iter_mut().zip(response).for_each(|(z, h)| *z *= h);
    inverse(&mut buf);
    buf
}

/// Real part of the circular filtering of a real sequence.
pub fn filter_real(x: &[f64], response: &[Complex64]) -> Vec<f64> {
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    filter_complex(&buf, response).into_iter().map(|z| z.re).collect()
}

pub fn conj_response(response: &[Complex64]) -> Vec<Complex64> {
    response.iter().map(|h| h.conj()).collect()
}

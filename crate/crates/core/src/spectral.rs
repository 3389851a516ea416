//! Thin FFT wrappers and Fourier interpolation on periodic grids.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Unnormalized forward DFT, `X_k = sum_j x_j exp(-2 pi i j k / n)`.
pub fn fft(data: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(data.len()).process(data);
}

/// Unnormalized inverse DFT (no `1/n`).
pub fn ifft_unscaled(data: &mut [Complex64]) {
    FftPlanner::new().plan_fft_inverse(data.len()).process(data);
}

/// Inverse DFT including the `1/n` factor.
pub fn ifft(data: &mut [Complex64]) {
    ifft_unscaled(data);
    let s = 1.0 / data.len() as f64;
    data.iter_mut().for_each(|z| *z *= s);
}

/// Angular wavenumbers in FFT order for `n` samples spaced `dx`.
pub fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let base = 2.0 * PI / (n as f64 * dx);
    (0..n)
        .map(|k| {
            let k = if k < n / 2 { k as isize } else { k as isize - n as isize };
            k as f64 * base
        })
        .collect()
}

/// Band-limited translates of periodic samples.
///
/// `f(x_j + s)` is evaluated from the trigonometric interpolant of `values`.
/// The Nyquist mode is treated as a cosine so real input stays real.
pub struct FourierShifter {
    spectrum: Vec<Complex64>,
    k: Vec<f64>,
    nyquist: usize,
}

impl FourierShifter {
    pub fn new(values: &[Complex64], dx: f64) -> Self {
        let n = values.len();
        let mut spectrum = values.to_vec();
        fft(&mut spectrum);
        FourierShifter {
            spectrum,
            k: wavenumbers(n, dx),
            nyquist: n / 2,
        }
    }

    pub fn shifted(&self, shift: f64) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .zip(&self.k)
            .enumerate()
            .map(|(i, (c, k))| {
                if i == self.nyquist {
                    c * (-k * shift).cos()
                } else {
                    c * Complex64::from_polar(1.0, k * shift)
                }
            })
            .collect();
        ifft(&mut buf);
        buf
    }
}

/// Circular convolution `c_s = sum_j a_{s-j} b_j` (indices mod n).
pub fn circular_convolution(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut fa = a.to_vec();
    let mut fb = b.to_vec();
    fft(&mut fa);
    fft(&mut fb);
    let mut out: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    ifft(&mut out);
    out
}

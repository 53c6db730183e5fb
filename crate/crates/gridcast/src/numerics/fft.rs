//! Discrete Fourier transforms.
//!
//! `dft` takes an iterative radix-2 path when the length is a power of two
//! and falls back to direct O(n^2) evaluation otherwise; at the window
//! length used here (24) the direct path costs nothing measurable. Trig
//! arguments are reduced mod n before evaluation to keep the direct path
//! accurate for long signals.

use super::NumericsError;
use std::f64::consts::PI;

/// Complex coefficients of an n-point transform, stored as parallel
/// real/imaginary arrays.
///
/// Satisfies Parseval's identity against its source signal:
/// `sum |x_j|^2 == (1/n) sum |X_k|^2` to 1e-9 relative.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Sum of squared moduli over all coefficients.
    pub fn energy(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum()
    }
}

/// Forward DFT of a real signal: `X_k = sum_j x_j exp(-2*pi*i*j*k/n)`.
pub fn dft(signal: &[f64]) -> Result<Spectrum, NumericsError> {
    if signal.is_empty() {
        return Err(NumericsError::EmptyInput { op: "dft" });
    }
    let n = signal.len();
    let im = vec![0.0; n];
    if n.is_power_of_two() {
        let mut re = signal.to_vec();
        let mut im = im;
        radix2_in_place(&mut re, &mut im, false);
        Ok(Spectrum { re, im })
    } else {
        Ok(direct_dft(signal, &im, false))
    }
}

/// Inverse DFT, returning a complex signal: `x_j = (1/n) sum_k X_k exp(+2*pi*i*j*k/n)`.
///
/// For spectra of real signals the imaginary part comes back ~0;
/// `dft(inverse_dft(X).re)` round-trips to the original coefficients.
pub fn inverse_dft(spectrum: &Spectrum) -> Result<Spectrum, NumericsError> {
    if spectrum.is_empty() {
        return Err(NumericsError::EmptyInput { op: "inverse_dft" });
    }
    let n = spectrum.len() as f64;
    let mut out = if spectrum.len().is_power_of_two() {
        let mut re = spectrum.re.clone();
        let mut im = spectrum.im.clone();
        radix2_in_place(&mut re, &mut im, true);
        Spectrum { re, im }
    } else {
        direct_dft(&spectrum.re, &spectrum.im, true)
    };
    for v in out.re.iter_mut().chain(out.im.iter_mut()) {
        *v /= n;
    }
    Ok(out)
}

/// Direct O(n^2) evaluation on complex input. `inverse` flips the twiddle sign.
fn direct_dft(re: &[f64], im: &[f64], inverse: bool) -> Spectrum {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let mut sum_re = 0.0;
        let mut sum_im = 0.0;
        for j in 0..n {
            // Reduce j*k mod n before forming the angle.
            let angle = sign * 2.0 * PI * ((j * k) % n) as f64 / n as f64;
            let (s, c) = angle.sin_cos();
            sum_re += re[j] * c - im[j] * s;
            sum_im += re[j] * s + im[j] * c;
        }
        out_re[k] = sum_re;
        out_im[k] = sum_im;
    }
    Spectrum {
        re: out_re,
        im: out_im,
    }
}

/// Iterative Cooley-Tukey radix-2 with bit-reversal permutation.
fn radix2_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n < 2 {
        return;
    }
    let levels = n.trailing_zeros();

    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - levels)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut half = 1;
    while half < n {
        let step = sign * PI / half as f64;
        for start in (0..n).step_by(half * 2) {
            for k in 0..half {
                let angle = step * k as f64;
                let (s, c) = angle.sin_cos();
                let i = start + k;
                let j = i + half;
                let t_re = re[j] * c - im[j] * s;
                let t_im = re[j] * s + im[j] * c;
                re[j] = re[i] - t_re;
                im[j] = im[i] - t_im;
                re[i] += t_re;
                im[i] += t_im;
            }
        }
        half *= 2;
    }
}

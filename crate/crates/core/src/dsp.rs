//! Thin FFT wrappers with explicit normalization conventions.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn run(buf: &mut [Complex64], dir: FftDirection) {
    if buf.is_empty() {
        return;
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(buf.len(), dir));
    fft.process(buf);
}

/// `X[k] = sum_n x[n] e^{-j 2 pi k n / N}`, no scaling.
pub fn fft_in_place(buf: &mut [Complex64]) {
    run(buf, FftDirection::Forward);
}

/// `x[k] = sum_n X[n] e^{+j 2 pi k n / N}`, no scaling.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    run(buf, FftDirection::Inverse);
}

/// Unitary inverse DFT (`F_N^H` with the `1/sqrt(N)` factor).
pub fn unitary_idft(input: &[Complex64]) -> Vec<Complex64> {
    let mut out = input.to_vec();
    ifft_in_place(&mut out);
    let s = (input.len() as f64).sqrt().recip();
    out.iter_mut().for_each(|v| *v *= s);
    out
}

/// Unitary forward DFT.
pub fn unitary_dft(input: &[Complex64]) -> Vec<Complex64> {
    let mut out = input.to_vec();
    fft_in_place(&mut out);
    let s = (input.len() as f64).sqrt().recip();
    out.iter_mut().for_each(|v| *v *= s);
    out
}

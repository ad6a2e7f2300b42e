//! FFT plumbing and periodic derivative operators.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, PlanPair>> = RefCell::new(HashMap::new());
}

fn plans(n: usize) -> PlanPair {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone()
    })
}

/// Unnormalized forward DFT in place.
pub fn forward(buf: &mut [Complex64]) {
    plans(buf.len()).0.process(buf);
}

/// Inverse DFT in place, scaled by 1/n so that `inverse(forward(x)) == x`.
pub fn inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    plans(n).1.process(buf);
    let scale = 1.0 / n as f64;
    for z in buf.iter_mut() {
        *z *= scale;
    }
}

/// Angular wavenumbers in FFT order for `n` points on a period `length`.
pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let dk = 2.0 * PI / length;
    (0..n)
        .map(|j| {
            if j < n / 2 {
                j as f64 * dk
            } else {
                (j as f64 - n as f64) * dk
            }
        })
        .collect()
}

/// Multiplies the spectrum by `(ik)^order`. The Nyquist mode is dropped for
/// odd orders so that real input stays real and the operator is antisymmetric.
fn apply_derivative(buf: &mut [Complex64], length: f64, order: u32) {
    let n = buf.len();
    let ks = wavenumbers(n, length);
    forward(buf);
    for (j, (z, k)) in buf.iter_mut().zip(ks).enumerate() {
        if order % 2 == 1 && n % 2 == 0 && j == n / 2 {
            *z = Complex64::new(0.0, 0.0);
            continue;
        }
        *z *= Complex64::new(0.0, k).powu(order);
    }
    inverse(buf);
}

pub fn derivative_real(field: &[f64], length: f64, order: u32) -> Vec<f64> {
    let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    apply_derivative(&mut buf, length, order);
    buf.into_iter().map(|z| z.re).collect()
}

pub fn derivative_complex(field: &[Complex64], length: f64, order: u32) -> Vec<Complex64> {
    let mut buf = field.to_vec();
    apply_derivative(&mut buf, length, order);
    buf
}

pub fn central_difference(field: &[f64], dx: f64) -> Vec<f64> {
    let n = field.len();
    (0..n)
        .map(|k| (field[(k + 1) % n] - field[(k + n - 1) % n]) / (2.0 * dx))
        .collect()
}

pub fn central_second_difference(field: &[f64], dx: f64) -> Vec<f64> {
    let n = field.len();
    (0..n)
        .map(|k| (field[(k + 1) % n] - 2.0 * field[k] + field[(k + n - 1) % n]) / (dx * dx))
        .collect()
}

pub fn central_difference_complex(field: &[Complex64], dx: f64) -> Vec<Complex64> {
    let n = field.len();
    (0..n)
        .map(|k| (field[(k + 1) % n] - field[(k + n - 1) % n]) / (2.0 * dx))
        .collect()
}

pub fn central_second_difference_complex(field: &[Complex64], dx: f64) -> Vec<Complex64> {
    let n = field.len();
    (0..n)
        .map(|k| (field[(k + 1) % n] - 2.0 * field[k] + field[(k + n - 1) % n]) / (dx * dx))
        .collect()
}

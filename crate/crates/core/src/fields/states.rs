//! Standard preparations used by scenarios, demos and tests.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{Grid1D, MadelungFields, Physics, WaveFunction};
use crate::error::{Error, Result};

/// Largest density allowed at the two outermost nodes of a localized state.
pub const EDGE_DENSITY_LIMIT: f64 = 1e-12;

pub fn gaussian_density(x: f64, sigma: f64, center: f64) -> f64 {
    (-(x - center).powi(2) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).sqrt()
}

/// Gaussian density of width `sigma` with linear phase `S = p0 * q`.
pub fn gaussian_fields(
    grid: Grid1D,
    physics: Physics,
    sigma: f64,
    center: f64,
    p0: f64,
) -> Result<MadelungFields> {
    check_width(sigma)?;
    MadelungFields::from_fn(grid, physics, |x| gaussian_density(x, sigma, center), |x| p0 * x)
}

/// `(2 pi sigma^2)^(-1/4) exp(-(q-q0)^2 / 4 sigma^2 + i p0 q / hbar)`.
pub fn gaussian_wavefunction(
    grid: Grid1D,
    hbar: f64,
    sigma: f64,
    center: f64,
    p0: f64,
) -> Result<WaveFunction> {
    check_width(sigma)?;
    let amps = grid
        .nodes()
        .iter()
        .map(|&x| gaussian_amplitude(x, hbar, sigma, center, p0))
        .collect();
    WaveFunction::normalized(grid, amps)
}

fn gaussian_amplitude(x: f64, hbar: f64, sigma: f64, center: f64, p0: f64) -> Complex64 {
    let a = (2.0 * PI * sigma * sigma).powf(-0.25) * (-(x - center).powi(2) / (4.0 * sigma * sigma)).exp();
    Complex64::from_polar(a, p0 * x / hbar)
}

/// Equal-weight superposition of two Gaussians centred at `+-separation/2`.
pub fn two_gaussian_wavefunction(
    grid: Grid1D,
    hbar: f64,
    sigma: f64,
    separation: f64,
    p0: f64,
) -> Result<WaveFunction> {
    check_width(sigma)?;
    let amps = grid
        .nodes()
        .iter()
        .map(|&x| {
            gaussian_amplitude(x, hbar, sigma, 0.5 * separation, p0)
                + gaussian_amplitude(x, hbar, sigma, -0.5 * separation, p0)
        })
        .collect();
    WaveFunction::normalized(grid, amps)
}

/// Uniform plane wave `exp(i p0 q / hbar)`. The momentum is rounded to the
/// nearest value commensurate with the period.
pub fn plane_wave(grid: Grid1D, hbar: f64, p0: f64) -> Result<WaveFunction> {
    let p = commensurate_momentum(&grid, hbar, p0);
    let amps = grid
        .nodes()
        .iter()
        .map(|&x| Complex64::from_polar(1.0, p * x / hbar))
        .collect();
    WaveFunction::normalized(grid, amps)
}

/// Closest momentum whose plane wave is periodic on the grid.
pub fn commensurate_momentum(grid: &Grid1D, hbar: f64, p0: f64) -> f64 {
    let quantum = 2.0 * PI * hbar / grid.length();
    (p0 / quantum).round() * quantum
}

/// Coherent state of `V = m omega^2 q^2 / 2`: a Gaussian of width
/// `sqrt(hbar / 2 m omega)` displaced to `q0` with momentum `p0`.
pub fn coherent_state(grid: Grid1D, physics: Physics, omega: f64, q0: f64, p0: f64) -> Result<WaveFunction> {
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
    }
    let sigma = (physics.hbar / (2.0 * physics.mass * omega)).sqrt();
    gaussian_wavefunction(grid, physics.hbar, sigma, q0, p0)
}

/// Rejects localized preparations that reach the periodic boundary.
pub fn check_edge_density(rho: &[f64]) -> Result<()> {
    let n = rho.len();
    let edge = rho[0].max(rho[n - 1]);
    if edge >= EDGE_DENSITY_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "density at the periodic boundary is {edge:.3e}, must stay below {EDGE_DENSITY_LIMIT:.0e}; widen the grid"
        )));
    }
    Ok(())
}

fn check_width(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

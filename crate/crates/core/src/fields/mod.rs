//! Periodic grid, Madelung fields `(rho, S)`, wave functions and the calculus
//! shared by every other module.

mod grid;
pub mod spectral;
pub mod states;

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use grid::{DerivativeScheme, Grid1D, Physics};

use crate::error::{Error, Result};
use crate::format::sci;

/// Default density floor relative to `max(rho)`.
pub const DEFAULT_FLOOR_RELATIVE: f64 = 1e-12;
/// Allowed deviation of `sum(rho)*dx` from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Largest fraction of floored nodes `to_madelung` accepts by default.
pub const DEFAULT_MAX_FLOORED_FRACTION: f64 = 0.95;

/// The estimation state: position density `rho` and phase `S` on a grid.
///
/// Nodes with `rho <= floor` are *floored*: every quantity with `rho` in a
/// denominator is clamped to zero there and the phase is undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct MadelungFields {
    grid: Grid1D,
    rho: Vec<f64>,
    s: Vec<f64>,
    physics: Physics,
    floor: f64,
    scheme: DerivativeScheme,
}

impl MadelungFields {
    /// Validating constructor; `rho` must integrate to one.
    pub fn new(grid: Grid1D, rho: Vec<f64>, s: Vec<f64>, physics: Physics) -> Result<Self> {
        physics.validate()?;
        if rho.len() != grid.len() || s.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field length mismatch: grid {}, rho {}, s {}",
                grid.len(),
                rho.len(),
                s.len()
            )));
        }
        if let Some(k) = rho.iter().chain(&s).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("fields at index {}", k % grid.len())));
        }
        if let Some(&bad) = rho.iter().find(|&&r| r < -1e-12) {
            return Err(Error::Domain(format!("negative density {bad:.3e}")));
        }
        let rho: Vec<f64> = rho.into_iter().map(|r| r.max(0.0)).collect();
        let integral = grid.integrate(&rho);
        if (integral - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Normalization { integral });
        }
        let floor = DEFAULT_FLOOR_RELATIVE * rho.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            grid,
            rho,
            s,
            physics,
            floor,
            scheme: DerivativeScheme::Spectral,
        })
    }

    /// Rescales `rho` to unit integral before validating.
    pub fn normalized(grid: Grid1D, rho: Vec<f64>, s: Vec<f64>, physics: Physics) -> Result<Self> {
        let integral = grid.integrate(&rho);
        if !(integral > 0.0 && integral.is_finite()) {
            return Err(Error::Normalization { integral });
        }
        let rho = rho.into_iter().map(|r| r / integral).collect();
        Self::new(grid, rho, s, physics)
    }

    /// Builds fields from closures evaluated at the grid nodes.
    pub fn from_fn(
        grid: Grid1D,
        physics: Physics,
        rho: impl Fn(f64) -> f64,
        s: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let xs = grid.nodes();
        let r = xs.iter().map(|&x| rho(x)).collect();
        let p = xs.iter().map(|&x| s(x)).collect();
        Self::normalized(grid, r, p, physics)
    }

    /// Sets the floor to `relative * max(rho)`.
    pub fn with_floor_relative(mut self, relative: f64) -> Self {
        self.floor = relative.max(0.0) * self.max_density();
        self
    }

    pub fn with_scheme(mut self, scheme: DerivativeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Replaces the phase, keeping the density.
    pub fn with_phase(&self, s: Vec<f64>) -> Result<Self> {
        if s.len() != self.grid.len() || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("phase must be finite with grid length".into()));
        }
        Ok(Self { s, ..self.clone() })
    }

    /// Copy with `rho[node] += delta`, skipping normalization and keeping the
    /// absolute floor. Used for functional differentiation.
    pub fn with_density_perturbed(&self, node: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.rho[node] = (out.rho[node] + delta).max(0.0);
        out
    }

    /// Copy with a new density that is not renormalized; the floor is kept.
    pub fn with_density_unchecked(&self, rho: Vec<f64>) -> Self {
        debug_assert_eq!(rho.len(), self.grid.len());
        Self {
            rho,
            ..self.clone()
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn physics(&self) -> Physics {
        self.physics
    }

    pub fn hbar(&self) -> f64 {
        self.physics.hbar
    }

    pub fn mass(&self) -> f64 {
        self.physics.mass
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn scheme(&self) -> DerivativeScheme {
        self.scheme
    }

    pub fn max_density(&self) -> f64 {
        self.rho.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_floored(&self, k: usize) -> bool {
        self.rho[k] <= self.floor
    }

    pub fn floored_mask(&self) -> Vec<bool> {
        self.rho.iter().map(|&r| r <= self.floor).collect()
    }

    pub fn floored_fraction(&self) -> f64 {
        self.floored_mask().iter().filter(|&&f| f).count() as f64 / self.grid.len() as f64
    }

    /// `sum(rho)*dx`.
    pub fn norm(&self) -> f64 {
        self.grid.integrate(&self.rho)
    }

    pub fn gradient(&self, field: &[f64]) -> Vec<f64> {
        self.grid.gradient(field, self.scheme)
    }

    pub fn density_gradient(&self) -> Vec<f64> {
        self.gradient(&self.rho)
    }

    /// `d(rho)/rho`, zero at floored nodes.
    pub fn log_derivative(&self) -> Vec<f64> {
        let drho = self.density_gradient();
        log_derivative_from(&self.rho, &drho, self.floor)
    }

    /// The estimator `dS/dq`, taken from the current `hbar*Im(conj(psi) dpsi)/rho`
    /// so that chirped or winding phases need not be periodic. Zero at floored
    /// nodes.
    pub fn momentum_field(&self) -> Vec<f64> {
        let psi = self.amplitudes();
        let dpsi = self.grid.gradient_complex(&psi, self.scheme);
        psi.iter()
            .zip(&dpsi)
            .zip(&self.rho)
            .map(|((p, d), &r)| {
                if r <= self.floor {
                    0.0
                } else {
                    self.physics.hbar * (p.conj() * d).im / r
                }
            })
            .collect()
    }

    /// `(hbar^2/2m) d^2 sqrt(rho) / sqrt(rho)`, zero at floored nodes.
    pub fn quantum_potential(&self) -> Vec<f64> {
        let amp: Vec<f64> = self.rho.iter().map(|r| r.sqrt()).collect();
        let d2 = self.grid.second_derivative(&amp, self.scheme);
        let c = self.physics.hbar.powi(2) / (2.0 * self.physics.mass);
        amp.iter()
            .zip(&d2)
            .zip(&self.rho)
            .map(|((a, d), &r)| if r <= self.floor { 0.0 } else { c * d / a })
            .collect()
    }

    /// `sum(observable * rho) * dx`.
    pub fn expectation(&self, observable: &[f64]) -> f64 {
        debug_assert_eq!(observable.len(), self.rho.len());
        observable.iter().zip(&self.rho).map(|(o, r)| o * r).sum::<f64>() * self.grid.dx()
    }

    pub fn mean_position(&self) -> f64 {
        self.expectation(&self.grid.nodes())
    }

    fn amplitudes(&self) -> Vec<Complex64> {
        let hbar = self.physics.hbar;
        self.rho
            .iter()
            .zip(&self.s)
            .map(|(r, s)| Complex64::from_polar(r.sqrt(), s / hbar))
            .collect()
    }

    /// `psi_k = sqrt(rho_k) exp(i S_k / hbar)`.
    pub fn to_wavefunction(&self) -> Result<WaveFunction> {
        WaveFunction::new(self.grid, self.amplitudes())
    }
}

pub(crate) fn log_derivative_from(rho: &[f64], drho: &[f64], floor: f64) -> Vec<f64> {
    rho.iter()
        .zip(drho)
        .map(|(&r, &d)| if r <= floor { 0.0 } else { d / r })
        .collect()
}

/// Complex amplitudes on the grid with unit L2 norm.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    grid: Grid1D,
    amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Grid1D, amplitudes: Vec<Complex64>) -> Result<Self> {
        let psi = Self::unchecked(grid, amplitudes)?;
        let norm = psi.norm();
        if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Normalization { integral: norm });
        }
        Ok(psi)
    }

    pub fn normalized(grid: Grid1D, amplitudes: Vec<Complex64>) -> Result<Self> {
        let mut psi = Self::unchecked(grid, amplitudes)?;
        let norm = psi.norm();
        if !(norm > 0.0) {
            return Err(Error::Normalization { integral: norm });
        }
        let scale = 1.0 / norm.sqrt();
        for z in &mut psi.amplitudes {
            *z *= scale;
        }
        Ok(psi)
    }

    fn unchecked(grid: Grid1D, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} amplitudes, got {}",
                grid.len(),
                amplitudes.len()
            )));
        }
        if let Some(k) = amplitudes.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(format!("wave function at node {k}")));
        }
        Ok(Self { grid, amplitudes })
    }

    /// Wraps amplitudes produced by an integrator without re-checking the norm.
    pub(crate) fn from_raw(grid: Grid1D, amplitudes: Vec<Complex64>) -> Self {
        Self { grid, amplitudes }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `sum |psi_k|^2 dx`.
    pub fn norm(&self) -> f64 {
        self.grid.integrate(&self.density())
    }

    pub fn to_madelung(&self, physics: Physics) -> Result<MadelungFields> {
        self.to_madelung_with(physics, DEFAULT_FLOOR_RELATIVE, DEFAULT_MAX_FLOORED_FRACTION)
    }

    /// `rho = |psi|^2`, `S = hbar * unwrapped arg(psi)`.
    ///
    /// Unwrapping walks the grid and only advances across defined nodes; at
    /// floored nodes the last defined phase is held.
    pub fn to_madelung_with(
        &self,
        physics: Physics,
        floor_relative: f64,
        max_floored_fraction: f64,
    ) -> Result<MadelungFields> {
        let norm = self.norm();
        if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Normalization { integral: norm });
        }
        let rho = self.density();
        let floor = floor_relative * rho.iter().cloned().fold(0.0, f64::max);
        let floored = rho.iter().filter(|&&r| r <= floor).count();
        if floored as f64 > max_floored_fraction * rho.len() as f64 {
            return Err(Error::FlooredNodes {
                floored,
                total: rho.len(),
            });
        }
        let mut s = vec![0.0; rho.len()];
        let mut last: Option<(f64, f64)> = None; // (raw arg, unwrapped phase)
        for (k, z) in self.amplitudes.iter().enumerate() {
            if rho[k] <= floor {
                s[k] = last.map_or(0.0, |(_, u)| u);
                continue;
            }
            let arg = z.arg();
            let unwrapped = match last {
                None => arg,
                Some((prev, u)) => u + wrap_angle(arg - prev),
            };
            last = Some((arg, unwrapped));
            s[k] = unwrapped;
        }
        // floored prefix takes the first defined phase
        if let Some(first) = (0..rho.len()).find(|&k| rho[k] > floor) {
            let v = s[first];
            for sk in s.iter_mut().take(first) {
                *sk = v;
            }
        }
        for sk in &mut s {
            *sk *= physics.hbar;
        }
        Ok(MadelungFields::new(self.grid, rho, s, physics)?.with_floor_relative(floor_relative))
    }
}

fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// External potential `V(q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Free,
    /// `m omega^2 q^2 / 2`.
    Harmonic { omega: f64 },
    /// Rectangular barrier of the given height and full width centred at 0.
    Barrier { height: f64, width: f64 },
    /// `a (q^2 - b^2)^2`.
    DoubleWell { a: f64, b: f64 },
    Values { values: Vec<f64> },
}

impl Default for Potential {
    fn default() -> Self {
        Potential::Free
    }
}

impl Potential {
    pub fn values(&self, grid: &Grid1D, physics: Physics) -> Result<Vec<f64>> {
        let xs = grid.nodes();
        let v: Vec<f64> = match self {
            Potential::Free => vec![0.0; grid.len()],
            Potential::Harmonic { omega } => xs
                .iter()
                .map(|x| 0.5 * physics.mass * omega * omega * x * x)
                .collect(),
            Potential::Barrier { height, width } => xs
                .iter()
                .map(|x| if x.abs() < 0.5 * width { *height } else { 0.0 })
                .collect(),
            Potential::DoubleWell { a, b } => {
                xs.iter().map(|x| a * (x * x - b * b).powi(2)).collect()
            }
            Potential::Values { values } => {
                if values.len() != grid.len() {
                    return Err(Error::InvalidParameter(format!(
                        "potential has {} values for {} nodes",
                        values.len(),
                        grid.len()
                    )));
                }
                values.clone()
            }
        };
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("potential at node {k}")));
        }
        Ok(v)
    }
}

/// Writes a field snapshot with columns `x,rho,s,re_psi,im_psi`.
pub fn write_snapshot_csv<W: Write>(out: &mut W, fields: &MadelungFields, psi: &WaveFunction) -> std::io::Result<()> {
    writeln!(out, "x,rho,s,re_psi,im_psi")?;
    for (k, z) in psi.amplitudes().iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            sci(fields.grid().x(k)),
            sci(fields.rho()[k]),
            sci(fields.s()[k]),
            sci(z.re),
            sci(z.im)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;

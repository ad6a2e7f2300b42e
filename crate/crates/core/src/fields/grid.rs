use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral;
use crate::error::{Error, Result};

/// How spatial derivatives are taken on the periodic grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    #[default]
    Spectral,
    CentralDifference,
}

/// Uniform periodic grid with `n_points` nodes `x_k = x_min + k*dx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    n_points: usize,
    x_min: f64,
    x_max: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if n_points < 4 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points must be a power of two >= 4, got {n_points}"
            )));
        }
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidGrid(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        Ok(Self {
            n_points,
            x_min,
            x_max,
        })
    }

    /// Grid of `n_points` nodes centred on zero with period `length`.
    pub fn centered(n_points: usize, length: f64) -> Result<Self> {
        Self::new(n_points, -0.5 * length, 0.5 * length)
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n_points as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.x(k)).collect()
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        spectral::wavenumbers(self.n_points, self.length())
    }

    /// Largest resolved angular wavenumber, `pi/dx`.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI / self.dx()
    }

    /// Rectangle-rule integral, exact for band-limited periodic integrands.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.dx()
    }

    pub fn gradient(&self, field: &[f64], scheme: DerivativeScheme) -> Vec<f64> {
        debug_assert_eq!(field.len(), self.n_points);
        match scheme {
            DerivativeScheme::Spectral => spectral::derivative_real(field, self.length(), 1),
            DerivativeScheme::CentralDifference => spectral::central_difference(field, self.dx()),
        }
    }

    pub fn second_derivative(&self, field: &[f64], scheme: DerivativeScheme) -> Vec<f64> {
        match scheme {
            DerivativeScheme::Spectral => spectral::derivative_real(field, self.length(), 2),
            DerivativeScheme::CentralDifference => {
                spectral::central_second_difference(field, self.dx())
            }
        }
    }

    pub fn gradient_complex(&self, field: &[Complex64], scheme: DerivativeScheme) -> Vec<Complex64> {
        match scheme {
            DerivativeScheme::Spectral => spectral::derivative_complex(field, self.length(), 1),
            DerivativeScheme::CentralDifference => {
                spectral::central_difference_complex(field, self.dx())
            }
        }
    }

    pub fn second_derivative_complex(
        &self,
        field: &[Complex64],
        scheme: DerivativeScheme,
    ) -> Vec<Complex64> {
        match scheme {
            DerivativeScheme::Spectral => spectral::derivative_complex(field, self.length(), 2),
            DerivativeScheme::CentralDifference => {
                spectral::central_second_difference_complex(field, self.dx())
            }
        }
    }

    /// Derivative of a phase-like field that is periodic up to a linear ramp.
    ///
    /// The ramp through the first and last node is removed before the
    /// periodic derivative and its slope added back, so `p*x + c` maps to `p`
    /// up to rounding.
    pub fn ramp_gradient(&self, field: &[f64], scheme: DerivativeScheme) -> Vec<f64> {
        let n = self.n_points;
        let slope = (field[n - 1] - field[0]) / ((n - 1) as f64 * self.dx());
        let detrended: Vec<f64> = field
            .iter()
            .enumerate()
            .map(|(k, v)| v - field[0] - slope * k as f64 * self.dx())
            .collect();
        self.gradient(&detrended, scheme)
            .into_iter()
            .map(|d| d + slope)
            .collect()
    }
}

/// Physical constants of one particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

impl Physics {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        let p = Self { hbar, mass };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {}", self.mass)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Grid1D::new(100, 0.0, 1.0).is_err());
        assert!(Grid1D::new(128, 1.0, 1.0).is_err());
        assert!(Grid1D::new(128, 0.0, 1.0).is_ok());
    }

    #[test]
    fn spectral_gradient_of_sine() {
        let g = Grid1D::new(256, 0.0, 3.0).unwrap();
        let l = g.length();
        let f: Vec<f64> = g.nodes().iter().map(|x| (2.0 * PI * x / l).sin()).collect();
        let d = g.gradient(&f, DerivativeScheme::Spectral);
        for (k, x) in g.nodes().iter().enumerate() {
            let exact = 2.0 * PI / l * (2.0 * PI * x / l).cos();
            assert!((d[k] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = Grid1D::new(64, -1.0, 1.0).unwrap();
        for scheme in [DerivativeScheme::Spectral, DerivativeScheme::CentralDifference] {
            let d = g.gradient(&[2.5; 64], scheme);
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn central_difference_is_second_order() {
        let err = |n: usize| {
            let g = Grid1D::new(n, 0.0, 2.0 * PI).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
            let d = g.gradient(&f, DerivativeScheme::CentralDifference);
            g.nodes()
                .iter()
                .zip(&d)
                .map(|(x, v)| (v - x.cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn ramp_gradient_recovers_slope() {
        let g = Grid1D::centered(128, 20.0).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|x| 1.7 * x - 3.0).collect();
        let d = g.ramp_gradient(&s, DerivativeScheme::Spectral);
        assert!(d.iter().all(|v| (v - 1.7).abs() < 1e-12));
    }
}

//! Fixed, versioned test preparations shared by property checks, the
//! independence classifier and the acceptance suite.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::fields::states::gaussian_density;
use crate::fields::{Grid1D, MadelungFields, Physics};
use crate::functional::ErrorFamily;

/// Revision of the preparation sets below. Bump when any member changes.
pub const BATTERY_VERSION: u32 = 1;

/// Grid used for the smooth periodic suite.
pub fn smooth_grid() -> Grid1D {
    Grid1D::centered(256, 16.0).expect("static grid")
}

/// Five strictly positive, band-limited periodic densities with smooth
/// phases. Their log-derivatives are bounded, so every family is well
/// defined everywhere.
pub fn smooth_suite(physics: Physics) -> Result<Vec<MadelungFields>> {
    let g = smooth_grid();
    let l = g.length();
    let k = 2.0 * PI / l;
    let members: Vec<(Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>)> = vec![
        (Box::new(move |x| (0.8 * (k * x).cos()).exp()), Box::new(|_| 0.0)),
        (
            Box::new(move |x| (0.5 * (k * x).cos() + 0.3 * (2.0 * k * x + 0.7).sin()).exp()),
            Box::new(move |x| 0.4 * (k * x).sin()),
        ),
        (
            Box::new(move |x| (1.2 * (k * (x - 1.0)).cos() - 0.4 * (3.0 * k * x).cos()).exp()),
            Box::new(move |x| -0.3 * (2.0 * k * x).cos()),
        ),
        (
            Box::new(move |x| 1.0 + 0.6 * (k * x).cos() + 0.2 * (3.0 * k * x).sin()),
            Box::new(move |x| 0.2 * (k * x).sin() + 0.1 * (3.0 * k * x).cos()),
        ),
        (Box::new(move |x| (2.0 * (k * x).cos()).exp()), Box::new(|_| 0.0)),
    ];
    members
        .into_iter()
        .map(|(rho, s)| MadelungFields::from_fn(g, physics, rho, s))
        .collect()
}

/// Grid wide enough for localized preparations of width up to 2.
pub fn localized_grid() -> Grid1D {
    Grid1D::centered(512, 48.0).expect("static grid")
}

/// Gaussian of width `sigma` centred at `center`, zero phase.
pub fn gaussian(sigma: f64, center: f64, physics: Physics) -> Result<MadelungFields> {
    MadelungFields::from_fn(localized_grid(), physics, |x| gaussian_density(x, sigma, center), |_| 0.0)
}

/// Two separated Gaussians; a non-Gaussian witness with a positive
/// Cramér-Rao gap.
pub fn bimodal(physics: Physics) -> Result<MadelungFields> {
    MadelungFields::from_fn(
        localized_grid(),
        physics,
        |x| 0.5 * gaussian_density(x, 0.8, -2.5) + 0.5 * gaussian_density(x, 0.8, 2.5),
        |_| 0.0,
    )
}

/// Smoothed top-hat density on `[-w, w]` with edge width `e`.
pub fn smoothed_top_hat(w: f64, e: f64, physics: Physics) -> Result<MadelungFields> {
    let erf_like = |z: f64| z.tanh();
    MadelungFields::from_fn(
        localized_grid(),
        physics,
        move |x| {
            let v = 0.5 * (erf_like((x + w) / e) - erf_like((x - w) / e));
            // keep the far tails exactly Gaussian-small
            v * (-(x / (3.0 * w)).powi(8)).exp()
        },
        |_| 0.0,
    )
}

/// Grid for randomly generated localized scenarios.
pub fn random_grid() -> Grid1D {
    Grid1D::centered(256, 32.0).expect("static grid")
}

/// A random localized scenario: a mixture of one to three Gaussians with a
/// chirped, modulated phase, and a random family among Zero, PowerLaw and
/// integer GradPower.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, physics: Physics) -> Result<(MadelungFields, ErrorFamily)> {
    let components: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.2..1.0),
                rng.random_range(0.6..1.5),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    let total: f64 = components.iter().map(|c| c.0).sum();
    let (p0, chirp, wiggle, wk) = (
        rng.random_range(-1.5..1.5),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.3..1.5),
    );
    let fields = MadelungFields::from_fn(
        random_grid(),
        physics,
        |x| components.iter().map(|&(w, s, c)| w / total * gaussian_density(x, s, c)).sum(),
        |x| p0 * x + 0.5 * chirp * x * x + wiggle * (wk * x).sin(),
    )?;
    let family = match rng.random_range(0..3) {
        0 => ErrorFamily::Zero,
        1 => ErrorFamily::power_law(rng.random_range(-1.5..1.5), rng.random_range(0.25..1.5))?,
        _ => ErrorFamily::grad_power(rng.random_range(-0.5..0.5), rng.random_range(2..=3) as f64)?,
    };
    Ok((fields, family))
}

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use epiqsim::dynamics::{evolve, EvolutionConfig, Snapshot};
use epiqsim::fields::states::{gaussian_wavefunction, two_gaussian_wavefunction};
use epiqsim::fields::{Grid1D, Physics};
use epiqsim::format::sci;
use epiqsim::functional::ErrorFamily;
use epiqsim::Error;

use crate::manifest::{prepare_dir, write_file, Manifest};

pub const DEMO_POINTS: usize = 1024;
pub const DEMO_LENGTH: f64 = 128.0;
pub const DEMO_DT: f64 = 1e-3;
const SNAPSHOTS: usize = 10;
/// Maxima below this fraction of the peak density are not reported as fringes.
const FRINGE_CUTOFF: f64 = 1e-3;

/// Freely spreading Gaussian of initial width `sigma` centred at `center`,
/// without normalization.
fn free_gaussian(x: f64, t: f64, sigma: f64, center: f64, physics: Physics) -> Complex64 {
    let z = Complex64::new(1.0, physics.hbar * t / (2.0 * physics.mass * sigma * sigma));
    let arg = -(x - center).powi(2) / (4.0 * sigma * sigma) / z;
    arg.exp() / z.sqrt()
}

/// Density of the linear two-packet superposition at time `t`.
pub fn linear_two_packet_density(grid: &Grid1D, t: f64, sigma: f64, separation: f64, physics: Physics) -> Vec<f64> {
    let amp = |x: f64, t: f64| {
        free_gaussian(x, t, sigma, 0.5 * separation, physics) + free_gaussian(x, t, sigma, -0.5 * separation, physics)
    };
    let x = grid.nodes();
    let norm: f64 = x.iter().map(|&x| amp(x, 0.0).norm_sqr()).sum::<f64>() * grid.dx();
    x.iter().map(|&x| amp(x, t).norm_sqr() / norm).collect()
}

/// Interior local maxima above `FRINGE_CUTOFF` of the peak.
pub fn fringe_positions(grid: &Grid1D, rho: &[f64]) -> Vec<(f64, f64)> {
    let x = grid.nodes();
    let peak = rho.iter().cloned().fold(0.0, f64::max);
    (1..rho.len() - 1)
        .filter(|&k| rho[k] > rho[k - 1] && rho[k] >= rho[k + 1] && rho[k] > FRINGE_CUTOFF * peak)
        .map(|k| (x[k], rho[k]))
        .collect()
}

fn stack(grid: &Grid1D, snaps: &[Snapshot], linear: Option<&dyn Fn(f64) -> Vec<f64>>) -> anyhow::Result<String> {
    let x = grid.nodes();
    let mut text = String::from(if linear.is_some() { "time,x,rho,rho_linear\n" } else { "time,x,rho\n" });
    for snap in snaps {
        let rho = snap.psi.density();
        let lin = linear.map(|f| f(snap.time));
        for k in 0..x.len() {
            write!(text, "{},{},{}", sci(snap.time), sci(x[k]), sci(rho[k]))?;
            if let Some(lin) = &lin {
                write!(text, ",{}", sci(lin[k]))?;
            }
            text.push('\n');
        }
    }
    Ok(text)
}

pub fn demo_slits(family: &str, out: &Path, t_final: f64, separation: f64, sigma: f64) -> anyhow::Result<()> {
    let family: ErrorFamily = family.parse()?;
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be positive, got {separation}")).into());
    }
    let physics = Physics::default();
    let grid = Grid1D::centered(DEMO_POINTS, DEMO_LENGTH)?;
    let steps = EvolutionConfig::new(DEMO_DT, t_final, family.clone()).n_steps();
    let config = EvolutionConfig::new(DEMO_DT, t_final, family.clone()).with_snapshot_every((steps / SNAPSHOTS).max(1));

    let single = evolve(&gaussian_wavefunction(grid, physics.hbar, sigma, 0.0, 0.0)?, physics, &config)?;
    let double = evolve(
        &two_gaussian_wavefunction(grid, physics.hbar, sigma, separation, 0.0)?,
        physics,
        &config,
    )?;

    let dir = prepare_dir(out)?;
    let mut manifest = Manifest::new("demo-slits").family(&family.spec_string());
    write_file(&dir.join("single_slit.csv"), stack(&grid, &single.snapshots, None)?)?;
    manifest.output("single_slit.csv");
    let linear = |t: f64| linear_two_packet_density(&grid, t, sigma, separation, physics);
    write_file(&dir.join("double_slit.csv"), stack(&grid, &double.snapshots, Some(&linear))?)?;
    manifest.output("double_slit.csv");

    let t_end = double.snapshots.last().map_or(0.0, |s| s.time);
    let mut fringes = String::from("source,x,rho\n");
    for (source, rho) in [("simulated", double.final_state.density()), ("linear", linear(t_end))] {
        for (x, r) in fringe_positions(&grid, &rho) {
            writeln!(fringes, "{source},{},{}", sci(x), sci(r))?;
        }
    }
    write_file(&dir.join("fringes.csv"), fringes)?;
    manifest.output("fringes.csv");
    manifest.write(&dir)
}

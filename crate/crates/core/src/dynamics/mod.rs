//! Time evolution of the estimation state.
//!
//! Two integrators are provided: a Strang split-step scheme acting on the
//! wave function and an explicit RK4 scheme acting on the Madelung pair.
//! The first is the production path; the second exists to cross-check it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{spectral, DerivativeScheme, Grid1D, MadelungFields, Physics, Potential, WaveFunction};
use crate::functional::{energy_correction_d, energy_correction_for_density, nonlinearity_for_density, ErrorFamily};


/// Largest allowed `dt * E_max / hbar`, with `E_max` the largest kinetic
/// eigenvalue on the grid.
pub const CFL_LIMIT: f64 = 0.5;
/// Fraction of nodes floored inside the support at which the Madelung
/// integrator gives up.
pub const MADELUNG_MAX_FLOORED: f64 = 0.01;
/// Most negative density a Madelung step may produce before it is rejected.
pub const NEGATIVE_DENSITY_LIMIT: f64 = -1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    SplitstepStrang,
    MadelungRk4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    /// Steps between recorded snapshots; 0 records only the endpoints.
    pub snapshot_every: usize,
    pub potential: Potential,
    pub family: ErrorFamily,
    pub scheme: DerivativeScheme,
    /// Density floor relative to the current maximum density.
    pub density_floor: f64,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_final: f64, family: ErrorFamily) -> Self {
        Self {
            dt,
            t_final,
            integrator: Integrator::SplitstepStrang,
            snapshot_every: 0,
            potential: Potential::Free,
            family,
            scheme: DerivativeScheme::Spectral,
            density_floor: crate::fields::DEFAULT_FLOOR_RELATIVE,
        }
    }

    pub fn with_potential(mut self, potential: Potential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_snapshot_every(mut self, every: usize) -> Self {
        self.snapshot_every = every;
        self
    }

    pub fn with_density_floor(mut self, relative: f64) -> Self {
        self.density_floor = relative;
        self
    }

    /// Checks the step size against the time span and the grid.
    pub fn validate(&self, grid: &Grid1D, physics: Physics) -> Result<()> {
        physics.validate()?;
        self.family.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_final = {} must be at least dt = {}",
                self.t_final, self.dt
            )));
        }
        if !(self.density_floor >= 0.0 && self.density_floor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "density_floor must lie in [0, 1), got {}",
                self.density_floor
            )));
        }
        let cfl = self.dt * max_kinetic_energy(grid, physics) / physics.hbar;
        if cfl >= CFL_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "time step too large: dt * E_max / hbar = {cfl:.3} (limit {CFL_LIMIT}); use dt < {:.3e}",
                CFL_LIMIT * physics.hbar / max_kinetic_energy(grid, physics)
            )));
        }
        self.potential.values(grid, physics)?;
        Ok(())
    }

    /// Number of steps; the last step is shortened implicitly by using
    /// `t_final / n_steps` as the working step.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// `hbar^2 k_max^2 / 2m`.
pub fn max_kinetic_energy(grid: &Grid1D, physics: Physics) -> f64 {
    let k = grid.k_max();
    physics.hbar * physics.hbar * k * k / (2.0 * physics.mass)
}

/// Conserved and monitored quantities at one instant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConservationRecord {
    pub step: usize,
    pub time: f64,
    pub norm: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// The energy correction `D_f`.
    pub correction: f64,
    /// `<psi|H|psi>`.
    pub quantum_energy: f64,
    /// `<psi|H|psi> + D_f`.
    pub mean_energy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConservationLog {
    pub records: Vec<ConservationRecord>,
}

impl ConservationLog {
    pub fn first(&self) -> Option<&ConservationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&ConservationRecord> {
        self.records.last()
    }

    /// `max |norm - 1|` over the records.
    pub fn max_norm_drift(&self) -> f64 {
        self.records.iter().map(|r| (r.norm - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max |E(t) - E(0)| / |E(0)|` for the chosen energy.
    pub fn max_relative_drift(&self, energy: impl Fn(&ConservationRecord) -> f64) -> f64 {
        let Some(first) = self.records.first() else {
            return 0.0;
        };
        let e0 = energy(first);
        self.records
            .iter()
            .map(|r| (energy(r) - e0).abs() / e0.abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub psi: WaveFunction,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub final_state: WaveFunction,
    pub log: ConservationLog,
    pub snapshots: Vec<Snapshot>,
}

/// The four terms of the mean energy and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyTerms {
    /// `int rho (dS)^2 / 2m`.
    pub kinetic: f64,
    /// `int rho V`.
    pub potential: f64,
    /// `(hbar^2/8m) int rho (drho/rho)^2`.
    pub fisher: f64,
    /// `D_f`.
    pub correction: f64,
    pub total: f64,
}

/// Mean energy of the epistemically restricted distribution, term by term.
pub fn mean_energy(fields: &MadelungFields, potential: &Potential, family: &ErrorFamily) -> Result<EnergyTerms> {
    let m = fields.mass();
    let v = fields.momentum_field();
    let u = fields.log_derivative();
    let kinetic = fields.expectation(&v.iter().map(|p| p * p / (2.0 * m)).collect::<Vec<_>>());
    let potential = fields.expectation(&potential.values(fields.grid(), fields.physics())?);
    let fisher = fields.hbar().powi(2) / (8.0 * m) * fields.expectation(&u.iter().map(|x| x * x).collect::<Vec<_>>());
    let correction = energy_correction_d(family, fields)?;
    Ok(EnergyTerms {
        kinetic,
        potential,
        fisher,
        correction,
        total: kinetic + potential + fisher + correction,
    })
}

/// `(<T>, <V>)` of a wave function, with the kinetic term from Parseval.
pub fn quantum_energy_terms(psi: &WaveFunction, potential_values: &[f64], physics: Physics) -> (f64, f64) {
    let grid = psi.grid();
    let mut buf = psi.amplitudes().to_vec();
    spectral::forward(&mut buf);
    let n = grid.len() as f64;
    let sum: f64 = grid
        .wavenumbers()
        .iter()
        .zip(&buf)
        .map(|(k, z)| k * k * z.norm_sqr())
        .sum();
    let kinetic = physics.hbar * physics.hbar / (2.0 * physics.mass) * sum * grid.dx() / n;
    let rho = psi.density();
    let potential = grid.integrate(&rho.iter().zip(potential_values).map(|(r, v)| r * v).collect::<Vec<_>>());
    (kinetic, potential)
}

/// `<psi|H|psi>` for the linear Hamiltonian.
pub fn quantum_energy(psi: &WaveFunction, potential: &Potential, physics: Physics) -> Result<f64> {
    let v = potential.values(psi.grid(), physics)?;
    let (t, u) = quantum_energy_terms(psi, &v, physics);
    Ok(t + u)
}

/// Precomputed operators for one grid and step size.
struct Propagator<'a> {
    grid: Grid1D,
    physics: Physics,
    config: &'a EvolutionConfig,
    dt: f64,
    potential: Vec<f64>,
    kinetic_phase: Vec<Complex64>,
}

impl<'a> Propagator<'a> {
    fn new(grid: Grid1D, physics: Physics, config: &'a EvolutionConfig, dt: f64) -> Result<Self> {
        let potential = config.potential.values(&grid, physics)?;
        let kinetic_phase = grid
            .wavenumbers()
            .iter()
            .map(|k| Complex64::from_polar(1.0, -physics.hbar * k * k * dt / (2.0 * physics.mass)))
            .collect();
        Ok(Self {
            grid,
            physics,
            config,
            dt,
            potential,
            kinetic_phase,
        })
    }

    fn floor_of(&self, rho: &[f64]) -> f64 {
        self.config.density_floor * rho.iter().cloned().fold(0.0, f64::max)
    }

    fn nonlinearity(&self, rho: &[f64]) -> Result<Vec<f64>> {
        nonlinearity_for_density(
            &self.config.family,
            &self.grid,
            self.physics,
            self.config.scheme,
            rho,
            self.floor_of(rho),
        )
    }

    fn rotate(&self, amps: &mut [Complex64], n: &[f64], fraction: f64) {
        let c = -fraction * self.dt / self.physics.hbar;
        for ((z, v), nf) in amps.iter_mut().zip(&self.potential).zip(n) {
            *z *= Complex64::from_polar(1.0, c * (v + nf));
        }
    }

    /// One Strang step. `n_current` must hold `N_f` of the incoming density
    /// and is replaced by `N_f` of the outgoing one.
    fn strang(&self, amps: &mut [Complex64], n_current: &mut Vec<f64>) -> Result<()> {
        self.rotate(amps, n_current, 0.5);
        spectral::forward(amps);
        for (z, w) in amps.iter_mut().zip(&self.kinetic_phase) {
            *z *= w;
        }
        spectral::inverse(amps);
        let rho: Vec<f64> = amps.iter().map(|z| z.norm_sqr()).collect();
        *n_current = self.nonlinearity(&rho)?;
        self.rotate(amps, n_current, 0.5);
        if amps.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("wave function amplitudes".into()));
        }
        Ok(())
    }

    /// Time derivatives `(d rho/dt, dS/dt)` of the Madelung pair.
    fn madelung_rhs(&self, rho: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (hbar, m) = (self.physics.hbar, self.physics.mass);
        let scheme = self.config.scheme;
        let sqrt_rho: Vec<f64> = rho.iter().map(|r| r.max(0.0).sqrt()).collect();
        let psi: Vec<Complex64> = sqrt_rho
            .iter()
            .zip(s)
            .map(|(a, s)| Complex64::from_polar(*a, s / hbar))
            .collect();
        // -d(rho v) = (hbar/m) Im(conj(psi) psi'') and Q - m v^2/2 = (hbar^2/2m) Re(psi''/psi);
        // both forms keep errors proportional to the local amplitude
        let d2psi = self.grid.second_derivative_complex(&psi, scheme);
        let n = self.nonlinearity(rho)?;
        let mut drho = vec![0.0; rho.len()];
        let ds = (0..rho.len())
            .map(|k| {
                drho[k] = -hbar / m * (psi[k].conj() * d2psi[k]).im;
                let classical = -self.potential[k] - n[k];
                if rho[k] <= 0.0 {
                    return classical;
                }
                classical + hbar * hbar / (2.0 * m) * (d2psi[k] / psi[k]).re
            })
            .collect();
        Ok((drho, ds))
    }

    fn rk4(&self, rho: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.dt;
        let axpy = |x: &[f64], a: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(x, y)| x + a * y).collect() };
        let (k1r, k1s) = self.madelung_rhs(rho, s)?;
        let (k2r, k2s) = self.madelung_rhs(&axpy(rho, 0.5 * h, &k1r), &axpy(s, 0.5 * h, &k1s))?;
        let (k3r, k3s) = self.madelung_rhs(&axpy(rho, 0.5 * h, &k2r), &axpy(s, 0.5 * h, &k2s))?;
        let (k4r, k4s) = self.madelung_rhs(&axpy(rho, h, &k3r), &axpy(s, h, &k3s))?;
        let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
            (0..x.len())
                .map(|k| x[k] + h / 6.0 * (a[k] + 2.0 * b[k] + 2.0 * c[k] + d[k]))
                .collect()
        };
        Ok((combine(rho, &k1r, &k2r, &k3r, &k4r), combine(s, &k1s, &k2s, &k3s, &k4s)))
    }

    fn madelung_step(&self, fields: &MadelungFields) -> Result<MadelungFields> {
        let (mut rho, s) = self.rk4(fields.rho(), fields.s())?;
        if let Some(k) = rho.iter().chain(&s).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Madelung fields at node {}", k % rho.len())));
        }
        // vacuum nodes carry round-off only; nodes inside the support must stay nonnegative
        for (k, r) in rho.iter_mut().enumerate() {
            if *r < NEGATIVE_DENSITY_LIMIT && !fields.is_floored(k) {
                return Err(Error::Domain(format!("density went negative ({r:.3e}) at node {k}")));
            }
            *r = r.max(0.0);
        }
        let out = MadelungFields::new(self.grid, rho, s, self.physics)?
            .with_floor_relative(self.config.density_floor)
            .with_scheme(self.config.scheme);
        check_madelung_floor(&out)?;
        Ok(out)
    }

    fn record(&self, step: usize, time: f64, psi: &WaveFunction) -> Result<ConservationRecord> {
        let (kinetic, potential) = quantum_energy_terms(psi, &self.potential, self.physics);
        let rho = psi.density();
        let correction = energy_correction_for_density(
            &self.config.family,
            &self.grid,
            self.physics,
            self.config.scheme,
            &rho,
            self.floor_of(&rho),
        )?;
        let quantum_energy = kinetic + potential;
        Ok(ConservationRecord {
            step,
            time,
            norm: psi.norm(),
            kinetic,
            potential,
            correction,
            quantum_energy,
            mean_energy: quantum_energy + correction,
        })
    }
}

/// Floored nodes that lie inside the support, i.e. outside the longest
/// cyclic run of floored nodes. The exterior run is vacuum, not a node.
pub fn interior_floored_nodes(floored: &[bool]) -> usize {
    let n = floored.len();
    let total = floored.iter().filter(|&&f| f).count();
    if total == n {
        return n;
    }
    let start = floored.iter().position(|&f| !f).unwrap_or(0);
    let (mut longest, mut run) = (0, 0);
    for i in 1..=n {
        if floored[(start + i) % n] {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    total - longest
}

fn check_madelung_floor(fields: &MadelungFields) -> Result<()> {
    let mask = fields.floored_mask();
    let interior = interior_floored_nodes(&mask);
    if interior as f64 > MADELUNG_MAX_FLOORED * mask.len() as f64 {
        return Err(Error::FlooredNodes {
            floored: interior,
            total: mask.len(),
        });
    }
    Ok(())
}

/// One Strang split-step of length `config.dt`.
pub fn step_splitstep(psi: &WaveFunction, physics: Physics, config: &EvolutionConfig) -> Result<WaveFunction> {
    let prop = Propagator::new(*psi.grid(), physics, config, config.dt)?;
    let mut amps = psi.amplitudes().to_vec();
    let mut n = prop.nonlinearity(&psi.density())?;
    prop.strang(&mut amps, &mut n)?;
    Ok(WaveFunction::from_raw(*psi.grid(), amps))
}

/// One RK4 step of the Madelung pair of length `config.dt`.
pub fn step_madelung(fields: &MadelungFields, config: &EvolutionConfig) -> Result<MadelungFields> {
    let prop = Propagator::new(*fields.grid(), fields.physics(), config, config.dt)?;
    prop.madelung_step(fields)
}

fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Integration { .. } => e,
        other => Error::Integration {
            step,
            reason: other.to_string(),
        },
    }
}

/// Integrates from `initial` to `config.t_final`, recording conservation
/// data and snapshots at step 0, every `snapshot_every` steps and at the end.
pub fn evolve(initial: &WaveFunction, physics: Physics, config: &EvolutionConfig) -> Result<Evolution> {
    let grid = *initial.grid();
    config.validate(&grid, physics)?;
    let n_steps = config.n_steps();
    let dt = config.t_final / n_steps as f64;
    let prop = Propagator::new(grid, physics, config, dt)?;
    let wants = |step: usize| step == 0 || step == n_steps || (config.snapshot_every > 0 && step % config.snapshot_every == 0);

    let mut log = ConservationLog::default();
    let mut snapshots = Vec::new();
    let mut observe = |step: usize, psi: &WaveFunction| -> Result<()> {
        let time = step as f64 * dt;
        log.records.push(prop.record(step, time, psi).map_err(at_step(step))?);
        snapshots.push(Snapshot {
            step,
            time,
            psi: psi.clone(),
        });
        Ok(())
    };

    let final_state = match config.integrator {
        Integrator::SplitstepStrang => {
            let mut amps = initial.amplitudes().to_vec();
            let mut n = prop.nonlinearity(&initial.density()).map_err(at_step(0))?;
            observe(0, initial)?;
            for step in 1..=n_steps {
                prop.strang(&mut amps, &mut n).map_err(at_step(step))?;
                if wants(step) {
                    observe(step, &WaveFunction::from_raw(grid, amps.clone()))?;
                }
            }
            WaveFunction::from_raw(grid, amps)
        }
        Integrator::MadelungRk4 => {
            let mut fields = initial
                .to_madelung_with(physics, config.density_floor, 1.0)
                .map_err(at_step(0))?
                .with_scheme(config.scheme);
            check_madelung_floor(&fields).map_err(at_step(0))?;
            observe(0, initial)?;
            for step in 1..=n_steps {
                fields = prop.madelung_step(&fields).map_err(at_step(step))?;
                if wants(step) {
                    observe(step, &fields.to_wavefunction().map_err(at_step(step))?)?;
                }
            }
            fields.to_wavefunction()?
        }
    };
    Ok(Evolution {
        final_state,
        log,
        snapshots,
    })
}

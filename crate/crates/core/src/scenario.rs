//! Declarative scenario files (TOML) shared by every subcommand.
//!
//! ```toml
//! [grid]
//! n_points = 1024
//! x_min = -40.0
//! x_max = 40.0
//!
//! [initial_state]
//! kind = "gaussian"
//! sigma_q = 1.0
//! p_o = 0.5
//!
//! [error_family]
//! kind = "powerlaw"
//! lambda = 1.0
//! alpha = 0.5
//!
//! [evolution]
//! dt = 0.001
//! t_final = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{EvolutionConfig, Integrator};
use crate::ensemble::XiKind;
use crate::error::{Error, Result};
use crate::fields::states::{check_edge_density, gaussian_wavefunction, plane_wave, two_gaussian_wavefunction};
use crate::fields::{DerivativeScheme, Grid1D, MadelungFields, Physics, Potential, WaveFunction, DEFAULT_FLOOR_RELATIVE};
use crate::functional::ErrorFamily;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Gaussian,
    PlaneWave,
    TwoGaussian,
    FromFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub kind: StateKind,
    #[serde(default = "one")]
    pub sigma_q: f64,
    #[serde(default)]
    pub q_o: f64,
    #[serde(default)]
    pub p_o: f64,
    #[serde(default)]
    pub separation: f64,
    /// CSV with columns `x,rho,s,re_psi,im_psi`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub scheme: DerivativeScheme,
    #[serde(default = "default_floor")]
    pub density_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR_RELATIVE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default = "default_samples")]
    pub n: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub xi_kind: XiKind,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_samples() -> usize {
    1_000_000
}

fn default_seed() -> u64 {
    42
}

fn default_bins() -> usize {
    40
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n: default_samples(),
            seed: default_seed(),
            xi_kind: XiKind::default(),
            bins: default_bins(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub physics: Physics,
    pub initial_state: InitialState,
    #[serde(default)]
    pub potential: Potential,
    #[serde(default = "zero_family")]
    pub error_family: ErrorFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionSpec>,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn zero_family() -> ErrorFamily {
    ErrorFamily::Zero
}

impl ScenarioConfig {
    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid.n_points, self.grid.x_min, self.grid.x_max)
    }

    /// Re-runs every module guard on the parsed values.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.physics.validate()?;
        self.error_family.validate()?;
        self.potential.values(&grid, self.physics)?;
        let psi = self.initial_wavefunction()?;
        if matches!(self.initial_state.kind, StateKind::Gaussian | StateKind::TwoGaussian) {
            check_edge_density(&psi.density())?;
        }
        if let Some(cfg) = self.evolution_config()? {
            cfg.validate(&grid, self.physics)?;
        }
        if self.ensemble.n == 0 {
            return Err(Error::Config("ensemble.n must be at least 1".into()));
        }
        if self.ensemble.bins == 0 {
            return Err(Error::Config("ensemble.bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn initial_wavefunction(&self) -> Result<WaveFunction> {
        let grid = self.grid()?;
        let s = &self.initial_state;
        let hbar = self.physics.hbar;
        match s.kind {
            StateKind::Gaussian => gaussian_wavefunction(grid, hbar, s.sigma_q, s.q_o, s.p_o),
            StateKind::PlaneWave => plane_wave(grid, hbar, s.p_o),
            StateKind::TwoGaussian => {
                if !(s.separation > 0.0) {
                    return Err(Error::Config("two_gaussian needs a positive separation".into()));
                }
                two_gaussian_wavefunction(grid, hbar, s.sigma_q, s.separation, s.p_o)
            }
            StateKind::FromFile => {
                let rel = s
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("from_file needs 'path'".into()))?;
                read_wavefunction_csv(&self.base_dir.join(rel), grid)
            }
        }
    }

    pub fn initial_fields(&self) -> Result<MadelungFields> {
        let fields = self.initial_wavefunction()?.to_madelung(self.physics)?;
        Ok(match &self.evolution {
            Some(e) => fields.with_floor_relative(e.density_floor).with_scheme(e.scheme),
            None => fields,
        })
    }

    pub fn evolution_config(&self) -> Result<Option<EvolutionConfig>> {
        Ok(self.evolution.as_ref().map(|e| {
            let mut cfg = EvolutionConfig::new(e.dt, e.t_final, self.error_family.clone())
                .with_potential(self.potential.clone())
                .with_integrator(e.integrator)
                .with_snapshot_every(e.snapshot_every)
                .with_density_floor(e.density_floor);
            cfg.scheme = e.scheme;
            cfg
        }))
    }

    pub fn require_evolution(&self) -> Result<EvolutionConfig> {
        self.evolution_config()?
            .ok_or_else(|| Error::Config("scenario has no [evolution] section".into()))
    }
}

/// Reads amplitudes from the snapshot schema `x,rho,s,re_psi,im_psi`.
pub fn read_wavefunction_csv(path: &Path, grid: Grid1D) -> Result<WaveFunction> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Config(format!("{} lacks column '{name}'", path.display())))
    };
    let (re, im) = (col("re_psi")?, col("im_psi")?);
    let mut amps = Vec::with_capacity(grid.len());
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |c: usize| -> Result<f64> {
            cells
                .get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("{} row {}: bad number", path.display(), row + 2)))
        };
        amps.push(num_complex::Complex64::new(parse(re)?, parse(im)?));
    }
    if amps.len() != grid.len() {
        return Err(Error::Config(format!(
            "{} has {} rows for a grid of {} nodes",
            path.display(),
            amps.len(),
            grid.len()
        )));
    }
    WaveFunction::normalized(grid, amps)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[grid]
n_points = 512
x_min = -32.0
x_max = 32.0

[initial_state]
kind = "gaussian"
sigma_q = 1.0
p_o = 0.5

[error_family]
kind = "powerlaw"
lambda = 1.0
alpha = 0.5

[evolution]
dt = 0.001
t_final = 0.1
snapshot_every = 50
"#;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        ScenarioConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn parses_a_complete_scenario() {
        let cfg = parse(BASE).unwrap();
        assert_eq!(cfg.grid.n_points, 512);
        assert_eq!(cfg.physics, Physics::default());
        assert_eq!(cfg.error_family, ErrorFamily::power_law(1.0, 0.5).unwrap());
        assert_eq!(cfg.ensemble, EnsembleSpec::default());
        let evo = cfg.require_evolution().unwrap();
        assert_eq!(evo.snapshot_every, 50);
        assert_eq!(evo.integrator, Integrator::SplitstepStrang);
        assert!((cfg.initial_wavefunction().unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(parse(&BASE.replace("sigma_q", "width")), Err(Error::Config(_))));
        assert!(matches!(parse(&format!("{BASE}\nextra = 1\n")), Err(Error::Config(_))));
        assert!(parse(&BASE.replace("n_points = 512", "n_points = 500")).is_err());
        assert!(parse(&BASE.replace("dt = 0.001", "dt = 0.5")).is_err());
        assert!(parse(&BASE.replace("alpha = 0.5", "beta = 0.5")).is_err());
        // a packet touching the periodic boundary
        assert!(parse(&BASE.replace("x_min = -32.0", "x_min = -4.0").replace("x_max = 32.0", "x_max = 4.0")).is_err());
    }

    #[test]
    fn reads_snapshot_csv_as_initial_state() {
        let dir = std::env::temp_dir().join(format!("epiqsim-scenario-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = parse(BASE).unwrap();
        let psi = cfg.initial_wavefunction().unwrap();
        let fields = psi.to_madelung(cfg.physics).unwrap();
        let mut buf = Vec::new();
        crate::fields::write_snapshot_csv(&mut buf, &fields, &psi).unwrap();
        std::fs::write(dir.join("start.csv"), buf).unwrap();
        let text = BASE.replace("kind = \"gaussian\"", "kind = \"from_file\"\npath = \"start.csv\"");
        let loaded = ScenarioConfig::from_toml_str(&text, &dir).unwrap();
        let back = loaded.initial_wavefunction().unwrap();
        for (a, b) in back.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-11);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}

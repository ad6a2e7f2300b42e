//! Two-particle product preparations on a tensor grid and the estimation
//! independence classification of error families.
//!
//! All derivatives here are central differences. A spectral derivative of
//! `rho_1 * rho_2(q2)` carries absolute rounding of order `eps * max|rho'|`,
//! which swamps the tails of a product density and would make exact
//! separability look violated.
//!
//! Violations are reported in a scaled sup norm,
//! `sup|a - b| / max(1, sup|b|)`, over nodes away from the density floor.

use rayon::prelude::*;
use serde::Serialize;

use crate::battery;
use crate::error::{Error, Result};
use crate::fields::{DerivativeScheme, Grid1D, MadelungFields, Physics};
use crate::functional::{eval_f, ErrorFamily, Line};

pub const MAX_AXIS_POINTS: usize = 256;
/// Threshold for pointwise algebraic identities.
pub const STRUCTURAL_THRESHOLD: f64 = 1e-10;
/// Threshold for identities that involve derivatives of the fields.
pub const NONLINEARITY_THRESHOLD: f64 = 1e-8;
/// Threshold for the estimator's cross-dependence.
pub const ESTIMATOR_THRESHOLD: f64 = 1e-12;

const SCHEME: DerivativeScheme = DerivativeScheme::CentralDifference;

/// Independently prepared pair: `rho = rho_1 rho_2`, `S = S_1 + S_2`.
#[derive(Clone, Debug)]
pub struct ProductPreparation {
    pub label: String,
    pub fields_1: MadelungFields,
    pub fields_2: MadelungFields,
}

impl ProductPreparation {
    pub fn new(label: impl Into<String>, fields_1: MadelungFields, fields_2: MadelungFields) -> Result<Self> {
        for f in [&fields_1, &fields_2] {
            if f.grid().len() > MAX_AXIS_POINTS {
                return Err(Error::InvalidGrid(format!(
                    "two-particle grids are capped at {MAX_AXIS_POINTS} points per axis, got {}",
                    f.grid().len()
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            fields_1: fields_1.with_scheme(SCHEME),
            fields_2: fields_2.with_scheme(SCHEME),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.fields_1.grid().len(), self.fields_2.grid().len())
    }

    /// Joint density, row-major in `(q1, q2)`.
    pub fn joint_rho(&self) -> Vec<f64> {
        let (r1, r2) = (self.fields_1.rho(), self.fields_2.rho());
        r1.iter().flat_map(|a| r2.iter().map(move |b| a * b)).collect()
    }

    pub fn joint_s(&self) -> Vec<f64> {
        let (s1, s2) = (self.fields_1.s(), self.fields_2.s());
        s1.iter().flat_map(|a| s2.iter().map(move |b| a + b)).collect()
    }

    pub fn joint_norm(&self) -> f64 {
        let cell = self.fields_1.grid().dx() * self.fields_2.grid().dx();
        self.joint_rho().iter().sum::<f64>() * cell
    }

    /// Relative floor applied to the joint density.
    pub fn joint_floor(&self) -> f64 {
        crate::fields::DEFAULT_FLOOR_RELATIVE * self.fields_1.max_density() * self.fields_2.max_density()
    }
}

/// Values of a joint field along `q_axis` with the other coordinate at `index`.
fn line(joint: &[f64], shape: (usize, usize), axis: usize, index: usize) -> Vec<f64> {
    let (n1, n2) = shape;
    if axis == 0 {
        (0..n1).map(|i| joint[i * n2 + index]).collect()
    } else {
        joint[index * n2..(index + 1) * n2].to_vec()
    }
}

/// Nodes farther than `radius` cells from any floored node, in 1D.
fn clear_of_floor(floored: &[bool], radius: usize) -> Vec<bool> {
    let n = floored.len();
    (0..n)
        .map(|k| (0..=2 * radius).all(|d| !floored[(k + n + d - radius) % n]))
        .collect()
}

struct Scaled {
    num: f64,
    den: f64,
}

impl Scaled {
    fn new() -> Self {
        Self { num: 0.0, den: 0.0 }
    }

    fn push(&mut self, a: f64, b: f64) {
        self.num = self.num.max((a - b).abs());
        self.den = self.den.max(b.abs());
    }

    fn merge(self, other: Self) -> Self {
        Self {
            num: self.num.max(other.num),
            den: self.den.max(other.den),
        }
    }

    fn value(&self) -> f64 {
        self.num / self.den.max(1.0)
    }
}

/// Sup over `q1` of the spread of `dS/dq1` across `q2`, on nodes where the
/// joint density is above its floor.
pub fn estimator_cross_variation(
    grid_1: &Grid1D,
    grid_2: &Grid1D,
    joint_rho: &[f64],
    joint_s: &[f64],
    floor: f64,
) -> f64 {
    let shape = (grid_1.len(), grid_2.len());
    let columns: Vec<Vec<f64>> = (0..shape.1)
        .map(|j| grid_1.ramp_gradient(&line(joint_s, shape, 0, j), SCHEME))
        .collect();
    (0..shape.0)
        .map(|i| {
            let vals: Vec<f64> = (0..shape.1)
                .filter(|&j| joint_rho[i * shape.1 + j] > floor)
                .map(|j| columns[j][i])
                .collect();
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            if vals.is_empty() {
                0.0
            } else {
                hi - lo
            }
        })
        .fold(0.0, f64::max)
}

pub fn check_estimator_independence(prep: &ProductPreparation) -> (bool, f64) {
    let v = estimator_cross_variation(
        prep.fields_1.grid(),
        prep.fields_2.grid(),
        &prep.joint_rho(),
        &prep.joint_s(),
        prep.joint_floor(),
    );
    (v < ESTIMATOR_THRESHOLD, v)
}

fn joint_line<'a>(rho: &'a [f64], drho: &'a [f64], floor: f64, physics: Physics, deriv: &'a dyn Fn(&[f64]) -> Vec<f64>) -> Line<'a> {
    Line {
        rho,
        drho,
        floor,
        physics,
        derivative: deriv,
        local_stencil: true,
    }
}

/// Compares a per-coordinate quantity computed on every `q_axis` line of the
/// joint density with the same quantity computed on that particle's own
/// density. `radius` is the stencil reach of the quantity.
fn compare_lines(
    prep: &ProductPreparation,
    axis: usize,
    radius: usize,
    on_line: &(dyn Fn(&Line<'_>) -> Result<Vec<f64>> + Sync),
    marginal: &[f64],
) -> Result<f64> {
    let shape = prep.shape();
    let joint = prep.joint_rho();
    let floor = prep.joint_floor();
    let (own, other) = if axis == 0 { (&prep.fields_1, &prep.fields_2) } else { (&prep.fields_2, &prep.fields_1) };
    let grid = *own.grid();
    let own_clear = clear_of_floor(&own.floored_mask(), radius);
    let physics = own.physics();
    let scaled = (0..other.grid().len())
        .into_par_iter()
        .map(|index| -> Result<Scaled> {
            let rho = line(&joint, shape, axis, index);
            let drho = grid.gradient(&rho, SCHEME);
            let deriv = move |x: &[f64]| grid.gradient(x, SCHEME);
            let values = on_line(&joint_line(&rho, &drho, floor, physics, &deriv))?;
            let floored: Vec<bool> = rho.iter().map(|&r| r <= floor).collect();
            let clear = clear_of_floor(&floored, radius);
            let mut s = Scaled::new();
            for k in (0..rho.len()).filter(|&k| clear[k] && own_clear[k]) {
                s.push(values[k], marginal[k]);
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scaled.into_iter().fold(Scaled::new(), Scaled::merge).value())
}

/// `f` along `q1` of the joint density against `f(rho_1)`.
pub fn check_error_independence(family: &ErrorFamily, prep: &ProductPreparation) -> Result<(bool, f64)> {
    if family.is_zero() && !matches!(family, ErrorFamily::Custom(_)) {
        return Ok((true, 0.0));
    }
    let mut worst: f64 = 0.0;
    for axis in [0, 1] {
        let own = if axis == 0 { &prep.fields_1 } else { &prep.fields_2 };
        let marginal = eval_f(family, own)?;
        worst = worst.max(compare_lines(prep, axis, 1, &|l: &Line<'_>| l.f(family), &marginal)?);
    }
    Ok((worst < STRUCTURAL_THRESHOLD, worst))
}

/// `N_f` of the joint density, the sum of the per-coordinate terms, against
/// `N_f(rho_1)(q1) + N_f(rho_2)(q2)`. Each coordinate term carries its own
/// dependence, so the sum splits node by node iff each term does.
pub fn check_nonlinearity_decomposability(family: &ErrorFamily, prep: &ProductPreparation) -> Result<(bool, f64)> {
    if family.is_zero() && !matches!(family, ErrorFamily::Custom(_)) {
        return Ok((true, 0.0));
    }
    let shape = prep.shape();
    let marginal = |fields: &MadelungFields| -> Result<Vec<f64>> {
        let drho = fields.density_gradient();
        let grid = *fields.grid();
        let deriv = move |x: &[f64]| grid.gradient(x, SCHEME);
        joint_line(fields.rho(), &drho, fields.floor(), fields.physics(), &deriv).nonlinearity(family)
    };
    let (n1, n2) = (marginal(&prep.fields_1)?, marginal(&prep.fields_2)?);
    let joint = prep.joint_rho();
    let floor = prep.joint_floor();
    let axis_terms = |axis: usize| -> Result<Vec<Vec<f64>>> {
        let own = if axis == 0 { &prep.fields_1 } else { &prep.fields_2 };
        let other_len = if axis == 0 { shape.1 } else { shape.0 };
        let grid = *own.grid();
        (0..other_len)
            .into_par_iter()
            .map(|index| {
                let rho = line(&joint, shape, axis, index);
                let drho = grid.gradient(&rho, SCHEME);
                let deriv = move |x: &[f64]| grid.gradient(x, SCHEME);
                joint_line(&rho, &drho, floor, own.physics(), &deriv).nonlinearity(family)
            })
            .collect()
    };
    let (t1, t2) = (axis_terms(0)?, axis_terms(1)?);
    let floored: Vec<bool> = joint.iter().map(|&r| r <= floor).collect();
    let clear1 = clear_of_floor(&prep.fields_1.floored_mask(), 2);
    let clear2 = clear_of_floor(&prep.fields_2.floored_mask(), 2);
    let mut s = Scaled::new();
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            let near_floor = (0..=4).any(|d| {
                floored[((i + shape.0 + d - 2) % shape.0) * shape.1 + j] || floored[i * shape.1 + (j + shape.1 + d - 2) % shape.1]
            });
            if near_floor || !clear1[i] || !clear2[j] {
                continue;
            }
            s.push(t1[j][i] + t2[i][j], n1[i] + n2[j]);
        }
    }
    let v = s.value();
    Ok((v < NONLINEARITY_THRESHOLD, v))
}

/// Whether the decomposition built from `(S, |Z|^2 rho)` equals the one from
/// `(S, rho)`: the log-derivative and `f`, pointwise.
pub fn check_rescaling_invariance(family: &ErrorFamily, fields: &MadelungFields, z_magnitude: f64) -> Result<(bool, f64)> {
    if !(z_magnitude > 0.0 && z_magnitude.is_finite()) || z_magnitude == 1.0 {
        return Err(Error::InvalidParameter(format!("need a positive |Z| != 1, got {z_magnitude}")));
    }
    let fields = fields.clone().with_scheme(SCHEME);
    let grid = *fields.grid();
    let z2 = z_magnitude * z_magnitude;
    let scaled: Vec<f64> = fields.rho().iter().map(|r| z2 * r).collect();
    let drho = grid.gradient(&scaled, SCHEME);
    let deriv = move |x: &[f64]| grid.gradient(x, SCHEME);
    let line = joint_line(&scaled, &drho, z2 * fields.floor(), fields.physics(), &deriv);
    let f_scaled = line.f(family)?;
    let f = eval_f(family, &fields)?;
    let u = fields.log_derivative();
    let u_scaled = crate::fields::log_derivative_from(&scaled, &drho, z2 * fields.floor());
    let clear = clear_of_floor(&fields.floored_mask(), 1);
    let (mut sf, mut su) = (Scaled::new(), Scaled::new());
    for k in (0..grid.len()).filter(|&k| clear[k]) {
        sf.push(f_scaled[k], f[k]);
        su.push(u_scaled[k], u[k]);
    }
    let v = sf.value().max(su.value());
    Ok((v < STRUCTURAL_THRESHOLD, v))
}

/// One line of the verdict table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreparationResult {
    pub preparation: String,
    pub estimator_violation: f64,
    pub error_violation: f64,
    pub nonlinearity_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndependenceVerdict {
    pub family: String,
    pub estimator_independent: bool,
    pub error_independent: bool,
    pub nonlinearity_decomposable: bool,
    /// Worst error-independence violation over the battery.
    pub max_violation: f64,
    pub max_nonlinearity_violation: f64,
    /// Preparation with the largest error-independence violation, when the
    /// family fails.
    pub witness: Option<String>,
    /// Recorded alongside, never used in the verdict.
    pub rescaling_invariant: bool,
    pub battery_version: u32,
    pub preparations: Vec<PreparationResult>,
}

/// Grid for each particle of the product battery.
pub fn product_grid() -> Grid1D {
    Grid1D::centered(128, 20.0).expect("static grid")
}

/// Five fixed product preparations: Gaussian pairs of varied widths and
/// phases, and Gaussian with bimodal in both orders.
pub fn product_battery(physics: Physics) -> Result<Vec<ProductPreparation>> {
    use crate::fields::states::gaussian_density;
    let g = product_grid();
    let gauss = |sigma: f64, c: f64, p: f64, chirp: f64| {
        MadelungFields::from_fn(g, physics, move |x| gaussian_density(x, sigma, c), move |x| p * x + 0.5 * chirp * x * x)
    };
    let bimodal = || {
        MadelungFields::from_fn(
            g,
            physics,
            |x| 0.6 * gaussian_density(x, 0.9, -2.2) + 0.4 * gaussian_density(x, 0.7, 2.0),
            |x| 0.3 * (0.5 * x).sin(),
        )
    };
    Ok(vec![
        ProductPreparation::new("gaussian(1.0) x gaussian(1.0)", gauss(1.0, 0.0, 0.0, 0.0)?, gauss(1.0, 0.0, 0.0, 0.0)?)?,
        ProductPreparation::new("gaussian(0.7) x gaussian(1.5)", gauss(0.7, 0.5, 0.4, 0.0)?, gauss(1.5, -1.0, -0.2, 0.1)?)?,
        ProductPreparation::new("gaussian(1.3) x gaussian(0.8)", gauss(1.3, -0.8, 0.0, -0.2)?, gauss(0.8, 1.2, 0.6, 0.0)?)?,
        ProductPreparation::new("gaussian(1.0) x bimodal", gauss(1.0, 0.3, 0.2, 0.0)?, bimodal()?)?,
        ProductPreparation::new("bimodal x gaussian(1.2)", bimodal()?, gauss(1.2, 0.0, -0.3, 0.05)?)?,
    ])
}

/// Runs the three checks on the product battery and aggregates the worst case.
pub fn classify(family: &ErrorFamily) -> Result<IndependenceVerdict> {
    family.validate()?;
    let physics = Physics::default();
    let preps = product_battery(physics)?;
    let rows = preps
        .par_iter()
        .map(|prep| -> Result<PreparationResult> {
            let (_, est) = check_estimator_independence(prep);
            let (_, err) = check_error_independence(family, prep)?;
            let (_, nl) = check_nonlinearity_decomposability(family, prep)?;
            Ok(PreparationResult {
                preparation: prep.label.clone(),
                estimator_violation: est,
                error_violation: err,
                nonlinearity_violation: nl,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = |get: fn(&PreparationResult) -> f64| rows.iter().map(get).fold(0.0, f64::max);
    let max_est = worst(|r| r.estimator_violation);
    let max_err = worst(|r| r.error_violation);
    let max_nl = worst(|r| r.nonlinearity_violation);
    let error_independent = max_err < STRUCTURAL_THRESHOLD;
    let witness = if error_independent {
        None
    } else {
        rows.iter()
            .max_by(|a, b| a.error_violation.total_cmp(&b.error_violation))
            .map(|r| r.preparation.clone())
    };
    let (rescaling_invariant, _) = check_rescaling_invariance(family, &battery::bimodal(physics)?.with_scheme(SCHEME), 1.7)?;
    Ok(IndependenceVerdict {
        family: family.spec_string(),
        estimator_independent: max_est < ESTIMATOR_THRESHOLD,
        error_independent,
        nonlinearity_decomposable: max_nl < NONLINEARITY_THRESHOLD,
        max_violation: max_err,
        max_nonlinearity_violation: max_nl,
        witness,
        rescaling_invariant,
        battery_version: battery::BATTERY_VERSION,
        preparations: rows,
    })
}

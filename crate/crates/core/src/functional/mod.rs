//! Estimation-error corrections `f(rho, drho)` and the quantities they induce:
//! the energy correction `D_f`, the nonlinearity `N_f = dD_f/drho` and the
//! uncertainty correction `C_f`.

mod expr;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use expr::{Dual, Expr};

use crate::error::{Error, Result};
use crate::fields::{log_derivative_from, DerivativeScheme, Grid1D, MadelungFields, Physics};

/// Bump size for numeric functional derivatives, relative to `max(rho)`.
pub const BUMP_RELATIVE: f64 = 1e-6;

/// Parsed custom correction together with its source text.
#[derive(Clone, Debug, PartialEq)]
pub struct CustomExpr {
    source: String,
    expr: Expr,
}

impl CustomExpr {
    pub fn parse(source: &str) -> Result<Self> {
        Ok(Self {
            source: source.trim().to_string(),
            expr: Expr::parse(source)?,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

/// The correction `f` added to the standard estimation error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyConfig", into = "FamilyConfig")]
pub enum ErrorFamily {
    /// `f = 0`: standard quantum mechanics.
    Zero,
    /// `f = lambda * rho^alpha`.
    PowerLaw { lambda: f64, alpha: f64 },
    /// `f = lambda * (drho/rho)^beta`.
    GradPower { lambda: f64, beta: f64 },
    Custom(CustomExpr),
}

impl ErrorFamily {
    pub fn power_law(lambda: f64, alpha: f64) -> Result<Self> {
        let f = ErrorFamily::PowerLaw { lambda, alpha };
        f.validate()?;
        Ok(f)
    }

    pub fn grad_power(lambda: f64, beta: f64) -> Result<Self> {
        let f = ErrorFamily::GradPower { lambda, beta };
        f.validate()?;
        Ok(f)
    }

    pub fn custom(source: &str) -> Result<Self> {
        Ok(ErrorFamily::Custom(CustomExpr::parse(source)?))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorFamily::PowerLaw { lambda, alpha } => {
                if !lambda.is_finite() || !alpha.is_finite() || alpha == 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "power law needs finite lambda and nonzero alpha, got ({lambda}, {alpha})"
                    )));
                }
            }
            ErrorFamily::GradPower { lambda, beta } => {
                if !lambda.is_finite() || !beta.is_finite() || beta <= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gradient power needs finite lambda and beta > 1, got ({lambda}, {beta})"
                    )));
                }
            }
            ErrorFamily::Zero | ErrorFamily::Custom(_) => {}
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ErrorFamily::Zero => true,
            ErrorFamily::PowerLaw { lambda, .. } | ErrorFamily::GradPower { lambda, .. } => *lambda == 0.0,
            ErrorFamily::Custom(_) => false,
        }
    }

    /// Strength parameter, if the family has one.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            ErrorFamily::PowerLaw { lambda, .. } | ErrorFamily::GradPower { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    /// Same family with a different strength; `Zero` and `Custom` are returned
    /// unchanged.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        match *self {
            ErrorFamily::PowerLaw { alpha, .. } => ErrorFamily::PowerLaw { lambda, alpha },
            ErrorFamily::GradPower { beta, .. } => ErrorFamily::GradPower { lambda, beta },
            _ => self.clone(),
        }
    }

    /// Compact form accepted by [`FromStr`], e.g. `powerlaw:1:0.5`.
    pub fn spec_string(&self) -> String {
        match self {
            ErrorFamily::Zero => "zero".into(),
            ErrorFamily::PowerLaw { lambda, alpha } => format!("powerlaw:{lambda}:{alpha}"),
            ErrorFamily::GradPower { lambda, beta } => format!("gradpower:{lambda}:{beta}"),
            ErrorFamily::Custom(c) => format!("custom:{}", c.source()),
        }
    }

    /// Pointwise `(f, df/drho, df/d(drho))`. Zero at floored nodes.
    fn local(&self, rho: f64, drho: f64, floor: f64) -> Result<Dual> {
        if rho <= floor {
            return Ok(Dual {
                value: 0.0,
                d_rho: 0.0,
                d_drho: 0.0,
            });
        }
        let d = match self {
            ErrorFamily::Zero => Dual {
                value: 0.0,
                d_rho: 0.0,
                d_drho: 0.0,
            },
            ErrorFamily::PowerLaw { lambda, alpha } => {
                let v = lambda * rho.powf(*alpha);
                Dual {
                    value: v,
                    d_rho: alpha * v / rho,
                    d_drho: 0.0,
                }
            }
            ErrorFamily::GradPower { lambda, beta } => {
                let u = drho / rho;
                let ub = signed_power(u, *beta)?;
                let ub1 = signed_power(u, *beta - 1.0)?;
                Dual {
                    value: lambda * ub,
                    d_rho: -lambda * beta * ub / rho,
                    d_drho: lambda * beta * ub1 / rho,
                }
            }
            ErrorFamily::Custom(c) => c.expr().eval_dual(rho, drho),
        };
        if !(d.value.is_finite() && d.d_rho.is_finite() && d.d_drho.is_finite()) {
            return Err(Error::Domain(format!(
                "{} is not finite at rho = {rho:.6e}, drho = {drho:.6e}",
                self.spec_string()
            )));
        }
        Ok(d)
    }
}

/// `u^beta` for integer `beta`; otherwise requires `u >= 0`.
fn signed_power(u: f64, beta: f64) -> Result<f64> {
    if beta.fract() == 0.0 {
        Ok(u.powi(beta as i32))
    } else if u >= 0.0 {
        Ok(u.powf(beta))
    } else {
        Err(Error::Domain(format!(
            "fractional exponent {beta} of negative log-derivative {u:.6e}"
        )))
    }
}

impl fmt::Display for ErrorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec_string())
    }
}

impl FromStr for ErrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<(f64, f64)> {
            let mut it = rest.split(':');
            let parse = |t: Option<&str>| -> Result<f64> {
                t.ok_or_else(|| Error::Config(format!("family '{s}' needs two numbers")))?
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number in family '{s}'")))
            };
            let a = parse(it.next())?;
            let b = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Config(format!("too many fields in family '{s}'")));
            }
            Ok((a, b))
        };
        match kind.to_ascii_lowercase().as_str() {
            "zero" if rest.is_empty() => Ok(ErrorFamily::Zero),
            "powerlaw" | "power_law" => {
                let (l, a) = nums()?;
                ErrorFamily::power_law(l, a)
            }
            "gradpower" | "grad_power" => {
                let (l, b) = nums()?;
                ErrorFamily::grad_power(l, b)
            }
            "custom" => ErrorFamily::custom(rest),
            _ => Err(Error::Config(format!(
                "unknown family '{s}' (expected zero, powerlaw:L:a, gradpower:L:b or custom:<expr>)"
            ))),
        }
    }
}

/// Config-file form of [`ErrorFamily`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

impl TryFrom<FamilyConfig> for ErrorFamily {
    type Error = Error;

    fn try_from(c: FamilyConfig) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("error_family '{}' requires '{name}'", c.kind)))
        };
        let unexpected = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("error_family '{}' does not take '{what}'", c.kind)))
            }
        };
        match c.kind.to_ascii_lowercase().as_str() {
            "zero" => {
                unexpected(c.lambda.is_none() && c.alpha.is_none() && c.beta.is_none(), "parameters")?;
                unexpected(c.expression.is_none(), "expression")?;
                Ok(ErrorFamily::Zero)
            }
            "powerlaw" | "power_law" => {
                unexpected(c.beta.is_none() && c.expression.is_none(), "beta/expression")?;
                ErrorFamily::power_law(need(c.lambda, "lambda")?, need(c.alpha, "alpha")?)
            }
            "gradpower" | "grad_power" => {
                unexpected(c.alpha.is_none() && c.expression.is_none(), "alpha/expression")?;
                ErrorFamily::grad_power(need(c.lambda, "lambda")?, need(c.beta, "beta")?)
            }
            "custom" => {
                unexpected(c.lambda.is_none() && c.alpha.is_none() && c.beta.is_none(), "numeric parameters")?;
                let src = c
                    .expression
                    .as_deref()
                    .ok_or_else(|| Error::Config("custom error_family requires 'expression'".into()))?;
                ErrorFamily::custom(src)
            }
            other => Err(Error::Config(format!("unknown error_family kind '{other}'"))),
        }
    }
}

impl From<ErrorFamily> for FamilyConfig {
    fn from(f: ErrorFamily) -> Self {
        match f {
            ErrorFamily::Zero => FamilyConfig {
                kind: "zero".into(),
                ..Default::default()
            },
            ErrorFamily::PowerLaw { lambda, alpha } => FamilyConfig {
                kind: "powerlaw".into(),
                lambda: Some(lambda),
                alpha: Some(alpha),
                ..Default::default()
            },
            ErrorFamily::GradPower { lambda, beta } => FamilyConfig {
                kind: "gradpower".into(),
                lambda: Some(lambda),
                beta: Some(beta),
                ..Default::default()
            },
            ErrorFamily::Custom(c) => FamilyConfig {
                kind: "custom".into(),
                expression: Some(c.source),
                ..Default::default()
            },
        }
    }
}

/// Density data along one coordinate line, as consumed by the kernels below.
/// `derivative` is the periodic derivative along that line.
pub(crate) struct Line<'a> {
    pub rho: &'a [f64],
    pub drho: &'a [f64],
    pub floor: f64,
    pub physics: Physics,
    pub derivative: &'a dyn Fn(&[f64]) -> Vec<f64>,
    /// True for finite-difference stencils, where differentiating clamped
    /// fields stays local.
    pub local_stencil: bool,
}

impl Line<'_> {
    pub fn f(&self, family: &ErrorFamily) -> Result<Vec<f64>> {
        self.rho
            .iter()
            .zip(self.drho)
            .map(|(&r, &g)| family.local(r, g, self.floor).map(|d| d.value))
            .collect()
    }

    /// Integrand of `D_f` per node (not yet multiplied by `dx`).
    pub fn energy_density(&self, family: &ErrorFamily) -> Result<Vec<f64>> {
        let f = self.f(family)?;
        let h2m = self.physics.hbar.powi(2) / self.physics.mass;
        Ok(f.iter()
            .zip(self.drho)
            .zip(self.rho)
            .map(|((f, g), r)| 0.25 * h2m * g * f + 0.125 * h2m * r * f * f)
            .collect())
    }

    /// Analytic `N_f`, zero at floored nodes.
    pub fn nonlinearity(&self, family: &ErrorFamily) -> Result<Vec<f64>> {
        let n = self.rho.len();
        let floored: Vec<bool> = self.rho.iter().map(|&r| r <= self.floor).collect();
        let h2m = self.physics.hbar.powi(2) / self.physics.mass;
        let out: Vec<f64> = match family {
            ErrorFamily::Zero => vec![0.0; n],
            ErrorFamily::PowerLaw { lambda, alpha } => {
                let omega = power_law_omega(*lambda, *alpha, self.physics);
                self.rho
                    .iter()
                    .zip(&floored)
                    .map(|(r, &fl)| if fl { 0.0 } else { omega * r.powf(2.0 * alpha) })
                    .collect()
            }
            ErrorFamily::GradPower { lambda, beta } => {
                let u = log_derivative_from(self.rho, self.drho, self.floor);
                let pw = |e: f64| -> Result<Vec<f64>> { u.iter().map(|&x| signed_power(x, e)).collect() };
                let (c1, c2) = (0.25 * h2m * lambda, 0.125 * h2m * lambda * lambda);
                let u_b1 = pw(beta + 1.0)?;
                let u_2b = pw(2.0 * beta)?;
                let u_b_1 = pw(beta - 1.0)?;
                let u_2b_2 = pw(2.0 * beta - 2.0)?;
                let (d_ub, d_u2b1) = if self.local_stencil {
                    ((self.derivative)(&pw(*beta)?), (self.derivative)(&pw(2.0 * beta - 1.0)?))
                } else {
                    // du = rho''/rho - u^2, kept pointwise so floored nodes do not ring
                    let d2rho = (self.derivative)(self.drho);
                    let du: Vec<f64> = (0..n)
                        .map(|k| if floored[k] { 0.0 } else { d2rho[k] / self.rho[k] - u[k] * u[k] })
                        .collect();
                    (
                        (0..n).map(|k| beta * u_b_1[k] * du[k]).collect(),
                        (0..n).map(|k| (2.0 * beta - 1.0) * u_2b_2[k] * du[k]).collect(),
                    )
                };
                (0..n)
                    .map(|k| {
                        if floored[k] {
                            return 0.0;
                        }
                        let (d_ub, d_u2b1) = (d_ub[k], d_u2b1[k]);
                        c1 * (-beta * u_b1[k] - (beta + 1.0) * d_ub)
                            + c2 * (-(2.0 * beta - 1.0) * u_2b[k] - 2.0 * beta * d_u2b1)
                    })
                    .collect()
            }
            ErrorFamily::Custom(_) => {
                // Euler-Lagrange form of L(rho, g) = h2m/4 g f + h2m/8 rho f^2
                let mut l_rho = vec![0.0; n];
                let mut l_g = vec![0.0; n];
                for k in 0..n {
                    let d = family.local(self.rho[k], self.drho[k], self.floor)?;
                    if floored[k] {
                        continue;
                    }
                    let (r, g, f) = (self.rho[k], self.drho[k], d.value);
                    l_rho[k] = 0.25 * h2m * g * d.d_rho + 0.125 * h2m * (f * f + 2.0 * r * f * d.d_rho);
                    l_g[k] = 0.25 * h2m * (f + g * d.d_drho) + 0.25 * h2m * r * f * d.d_drho;
                }
                let d_lg = (self.derivative)(&l_g);
                (0..n)
                    .map(|k| if floored[k] { 0.0 } else { l_rho[k] - d_lg[k] })
                    .collect()
            }
        };
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("nonlinearity at node {k}")));
        }
        Ok(out)
    }
}

/// `Omega = hbar^2 lambda^2 (2 alpha + 1) / 8m`.
pub fn power_law_omega(lambda: f64, alpha: f64, physics: Physics) -> f64 {
    physics.hbar.powi(2) * lambda * lambda * (2.0 * alpha + 1.0) / (8.0 * physics.mass)
}

fn with_line<T>(fields: &MadelungFields, body: impl FnOnce(&Line<'_>) -> Result<T>) -> Result<T> {
    let drho = fields.density_gradient();
    let grid = *fields.grid();
    let scheme = fields.scheme();
    let deriv = move |x: &[f64]| grid.gradient(x, scheme);
    let line = Line {
        rho: fields.rho(),
        drho: &drho,
        floor: fields.floor(),
        physics: fields.physics(),
        derivative: &deriv,
        local_stencil: scheme == DerivativeScheme::CentralDifference,
    };
    body(&line)
}

/// The correction `f` at every node.
pub fn eval_f(family: &ErrorFamily, fields: &MadelungFields) -> Result<Vec<f64>> {
    with_line(fields, |line| line.f(family))
}

/// `D_f = int (hbar^2/4m)(drho/rho) f rho + (hbar^2/8m) f^2 rho dq`.
pub fn energy_correction_d(family: &ErrorFamily, fields: &MadelungFields) -> Result<f64> {
    with_line(fields, |line| {
        let e = line.energy_density(family)?;
        Ok(fields.grid().integrate(&e))
    })
}

/// `C_f = (hbar^2/4) int (2 (drho/rho) f + f^2) rho dq`.
pub fn uncertainty_correction_c(family: &ErrorFamily, fields: &MadelungFields) -> Result<f64> {
    let f = eval_f(family, fields)?;
    let u = fields.log_derivative();
    let h2 = fields.hbar().powi(2);
    let integrand: Vec<f64> = f
        .iter()
        .zip(&u)
        .zip(fields.rho())
        .map(|((f, u), r)| (2.0 * u * f + f * f) * r)
        .collect();
    Ok(0.25 * h2 * fields.grid().integrate(&integrand))
}

/// `N_f` on a bare density array, as used inside time stepping.
pub fn nonlinearity_for_density(
    family: &ErrorFamily,
    grid: &Grid1D,
    physics: Physics,
    scheme: DerivativeScheme,
    rho: &[f64],
    floor: f64,
) -> Result<Vec<f64>> {
    if matches!(family, ErrorFamily::Zero) {
        return Ok(vec![0.0; rho.len()]);
    }
    let drho = grid.gradient(rho, scheme);
    let deriv = |x: &[f64]| grid.gradient(x, scheme);
    Line {
        rho,
        drho: &drho,
        floor,
        physics,
        derivative: &deriv,
        local_stencil: scheme == DerivativeScheme::CentralDifference,
    }
    .nonlinearity(family)
}

/// `D_f` on a bare density array.
pub fn energy_correction_for_density(
    family: &ErrorFamily,
    grid: &Grid1D,
    physics: Physics,
    scheme: DerivativeScheme,
    rho: &[f64],
    floor: f64,
) -> Result<f64> {
    if matches!(family, ErrorFamily::Zero) {
        return Ok(0.0);
    }
    let drho = grid.gradient(rho, scheme);
    let deriv = |x: &[f64]| grid.gradient(x, scheme);
    let e = Line {
        rho,
        drho: &drho,
        floor,
        physics,
        derivative: &deriv,
        local_stencil: scheme == DerivativeScheme::CentralDifference,
    }
    .energy_density(family)?;
    Ok(grid.integrate(&e))
}

/// Central-difference functional derivative `dF/drho(x_k)` using a unit
/// indicator bump of height `BUMP_RELATIVE * max(rho)` at `node`.
pub fn functional_derivative_numeric<F>(functional: F, fields: &MadelungFields, node: usize) -> Result<f64>
where
    F: Fn(&MadelungFields) -> Result<f64>,
{
    let eps = BUMP_RELATIVE * fields.max_density();
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("bump size must be positive".into()));
    }
    let plus = functional(&fields.with_density_perturbed(node, eps))?;
    let minus = functional(&fields.with_density_perturbed(node, -eps))?;
    let d = (plus - minus) / (2.0 * eps * fields.grid().dx());
    if !d.is_finite() {
        return Err(Error::NonFinite(format!("functional derivative at node {node}")));
    }
    Ok(d)
}

/// Functional derivative at every node, evaluated in parallel.
pub fn functional_gradient_numeric<F>(functional: F, fields: &MadelungFields) -> Result<Vec<f64>>
where
    F: Fn(&MadelungFields) -> Result<f64> + Sync,
{
    (0..fields.grid().len())
        .into_par_iter()
        .map(|k| functional_derivative_numeric(&functional, fields, k))
        .collect()
}

/// How `N_f` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityMode {
    /// Closed forms for the named families, Euler-Lagrange form for custom ones.
    Analytic,
    /// Bump-method derivative of the discretized `D_f`.
    NumericFunctionalDerivative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearityEvaluator {
    pub family: ErrorFamily,
    pub mode: NonlinearityMode,
}

impl NonlinearityEvaluator {
    pub fn new(family: ErrorFamily, mode: NonlinearityMode) -> Self {
        Self { family, mode }
    }

    pub fn evaluate(&self, fields: &MadelungFields) -> Result<Vec<f64>> {
        nonlinearity_n(self, fields)
    }
}

/// `N_f = dD_f/drho` at every node. Floored nodes are clamped to zero.
pub fn nonlinearity_n(evaluator: &NonlinearityEvaluator, fields: &MadelungFields) -> Result<Vec<f64>> {
    let family = &evaluator.family;
    if matches!(family, ErrorFamily::Zero) {
        return Ok(vec![0.0; fields.grid().len()]);
    }
    match evaluator.mode {
        NonlinearityMode::Analytic => with_line(fields, |line| line.nonlinearity(family)),
        NonlinearityMode::NumericFunctionalDerivative => {
            let mut n = functional_gradient_numeric(|f| energy_correction_d(family, f), fields)?;
            for (k, v) in n.iter_mut().enumerate() {
                if fields.is_floored(k) {
                    *v = 0.0;
                }
            }
            Ok(n)
        }
    }
}

/// `(1/2m) dC_f/drho`, numerically.
pub fn nonlinearity_from_c(family: &ErrorFamily, fields: &MadelungFields) -> Result<Vec<f64>> {
    if matches!(family, ErrorFamily::Zero) {
        return Ok(vec![0.0; fields.grid().len()]);
    }
    let scale = 0.5 / fields.mass();
    let mut n = functional_gradient_numeric(|f| uncertainty_correction_c(family, f), fields)?;
    for (k, v) in n.iter_mut().enumerate() {
        *v = if fields.is_floored(k) { 0.0 } else { scale * *v };
    }
    Ok(n)
}

/// Sup-norm relative discrepancy `max|a-b| / max|b|` over the nodes where
/// `mask` is true.
pub fn relative_sup_error(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for ((x, y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            num = num.max((x - y).abs());
            den = den.max(y.abs());
        }
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests;

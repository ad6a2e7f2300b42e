//! Mean-squared errors, variances and the generalized uncertainty chain for
//! one `(fields, family)` pair.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::states::gaussian_density;
use crate::fields::{Grid1D, MadelungFields, Physics};
use crate::functional::{eval_f, uncertainty_correction_c, ErrorFamily};

/// Slack on inequality verdicts, relative to the larger side.
pub const INEQUALITY_SLACK: f64 = 1e-10;
/// Cramér-Rao gap below which a state counts as saturating the bound.
pub const SATURATION_GAP: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub family: String,
    /// False when the Fisher information is zero or non-finite.
    pub valid: bool,
    pub ms_error_p: f64,
    pub ms_error_q: f64,
    pub precision_p: f64,
    pub fisher_q: f64,
    pub correction_c: f64,
    pub var_p: f64,
    pub var_q: f64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub cramer_rao_ok: bool,
    pub msr_tradeoff_ok: bool,
    pub hk_generalized_ok: bool,
    pub gaussian_saturation_ok: bool,
}

impl UncertaintyReport {
    pub fn product(&self) -> f64 {
        self.var_p * self.var_q
    }

    /// `E_q^2 - 1/J_q`.
    pub fn cramer_rao_gap(&self) -> f64 {
        self.ms_error_q - 1.0 / self.fisher_q
    }

    /// `sigma_p^2 - Delta_p^2 - E_p^2`, zero up to rounding.
    pub fn variance_split_residual(&self) -> f64 {
        self.var_p - self.precision_p - self.ms_error_p
    }

    pub fn all_inequalities_hold(&self) -> bool {
        self.valid && self.cramer_rao_ok && self.msr_tradeoff_ok && self.hk_generalized_ok
    }
}

fn at_least(lhs: f64, rhs: f64) -> bool {
    lhs - rhs >= -INEQUALITY_SLACK * lhs.abs().max(rhs.abs()).max(1.0)
}

/// `J_q = int (drho/rho)^2 rho dq`.
pub fn fisher_information(fields: &MadelungFields) -> f64 {
    let u = fields.log_derivative();
    let u2: Vec<f64> = u.iter().map(|u| u * u).collect();
    fields.expectation(&u2)
}

/// `E_p^2` by direct quadrature over the two-point `xi = +-hbar` average of
/// the squared error `((xi/2)(drho/rho + f))^2`.
pub fn ms_error_p_direct(fields: &MadelungFields, family: &ErrorFamily) -> Result<f64> {
    let u = fields.log_derivative();
    let f = eval_f(family, fields)?;
    let hbar = fields.hbar();
    let sq: Vec<f64> = u
        .iter()
        .zip(&f)
        .map(|(u, f)| {
            [hbar, -hbar]
                .iter()
                .map(|xi| (0.5 * xi * (u + f)).powi(2))
                .sum::<f64>()
                * 0.5
        })
        .collect();
    Ok(fields.expectation(&sq))
}

/// `sigma_p^2` as the variance of `p(q; xi) = dS + (xi/2)(drho/rho + f)` over
/// `rho` and the two-point `xi` law.
fn momentum_variance_direct(fields: &MadelungFields, family: &ErrorFamily) -> Result<(f64, f64)> {
    let v = fields.momentum_field();
    let u = fields.log_derivative();
    let f = eval_f(family, fields)?;
    let hbar = fields.hbar();
    let branch = |xi: f64| -> Vec<f64> {
        v.iter()
            .zip(&u)
            .zip(&f)
            .map(|((v, u), f)| v + 0.5 * xi * (u + f))
            .collect()
    };
    let (plus, minus) = (branch(hbar), branch(-hbar));
    let mean = 0.5 * (fields.expectation(&plus) + fields.expectation(&minus));
    let dev = |p: &[f64]| -> Vec<f64> { p.iter().map(|p| (p - mean).powi(2)).collect() };
    let var = 0.5 * (fields.expectation(&dev(&plus)) + fields.expectation(&dev(&minus)));
    Ok((mean, var))
}

/// Every scalar of the uncertainty chain and its three inequality verdicts.
pub fn analyze(fields: &MadelungFields, family: &ErrorFamily) -> Result<UncertaintyReport> {
    family.validate()?;
    let hbar = fields.hbar();
    let fisher = fisher_information(fields);
    let c = uncertainty_correction_c(family, fields)?;
    let ms_p = ms_error_p_direct(fields, family)?;

    let x = fields.grid().nodes();
    let mean_q = fields.mean_position();
    let dq2: Vec<f64> = x.iter().map(|x| (x - mean_q).powi(2)).collect();
    let ms_q = fields.expectation(&dq2);

    let v = fields.momentum_field();
    let v_mean = fields.expectation(&v);
    let dv2: Vec<f64> = v.iter().map(|v| (v - v_mean).powi(2)).collect();
    let precision = fields.expectation(&dv2);
    let (mean_p, var_p) = momentum_variance_direct(fields, family)?;

    for (name, value) in [("ms_error_p", ms_p), ("correction_c", c), ("var_p", var_p), ("ms_error_q", ms_q)] {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let valid = fisher.is_finite() && fisher > 0.0;
    let (cr, msr, hk, sat) = if valid {
        let bound = 0.25 * hbar * hbar + c / fisher;
        (
            at_least(ms_q, 1.0 / fisher),
            at_least(ms_p * ms_q, bound),
            at_least(var_p * ms_q, precision * ms_q + bound),
            ms_q - 1.0 / fisher < SATURATION_GAP,
        )
    } else {
        (false, false, false, false)
    };
    Ok(UncertaintyReport {
        family: family.spec_string(),
        valid,
        ms_error_p: ms_p,
        ms_error_q: ms_q,
        precision_p: precision,
        fisher_q: fisher,
        correction_c: c,
        var_p,
        var_q: ms_q,
        mean_q,
        mean_p,
        cramer_rao_ok: cr,
        msr_tradeoff_ok: msr,
        hk_generalized_ok: hk,
        gaussian_saturation_ok: sat,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CramerRao {
    pub saturated: bool,
    pub gap: f64,
}

pub fn cramer_rao_saturation(fields: &MadelungFields) -> CramerRao {
    let mean_q = fields.mean_position();
    let dq2: Vec<f64> = fields.grid().nodes().iter().map(|x| (x - mean_q).powi(2)).collect();
    let gap = fields.expectation(&dq2) - 1.0 / fisher_information(fields);
    CramerRao {
        saturated: gap < SATURATION_GAP,
        gap,
    }
}

/// `C_f` for a Gaussian of width `sigma`, in closed form.
///
/// PowerLaw: `(hbar^2 Lambda^2/4)(2 pi sigma^2)^-alpha / sqrt(2 alpha + 1)`.
/// GradPower with integer `beta`: `(hbar^2/4)(2 Lambda <u^(beta+1)> + Lambda^2 <u^(2 beta)>)`
/// with `u ~ N(0, 1/sigma^2)`.
pub fn gaussian_correction_c(family: &ErrorFamily, sigma: f64, hbar: f64) -> Result<f64> {
    let h2 = hbar * hbar;
    match family {
        ErrorFamily::Zero => Ok(0.0),
        ErrorFamily::PowerLaw { lambda, alpha } => Ok(0.25
            * h2
            * lambda
            * lambda
            * (2.0 * std::f64::consts::PI * sigma * sigma).powf(-alpha)
            / (2.0 * alpha + 1.0).sqrt()),
        ErrorFamily::GradPower { lambda, beta } => {
            if beta.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "no Gaussian closed form for non-integer beta {beta}"
                )));
            }
            let b = *beta as u32;
            let moment = |k: u32| -> f64 {
                if k % 2 == 1 {
                    return 0.0;
                }
                let double_factorial: f64 = (1..k).step_by(2).map(f64::from).product();
                double_factorial / sigma.powi(k as i32)
            };
            Ok(0.25 * h2 * (2.0 * lambda * moment(b + 1) + lambda * lambda * moment(2 * b)))
        }
        ErrorFamily::Custom(_) => Err(Error::InvalidParameter(
            "no Gaussian closed form for custom families".into(),
        )),
    }
}

/// Grid on which a Gaussian of width `sigma` is resolved to quadrature
/// precision.
pub fn gaussian_grid(sigma: f64) -> Result<Grid1D> {
    Grid1D::centered(1024, 32.0 * sigma)
}

pub fn gaussian_fields(sigma: f64, p0: f64, physics: Physics) -> Result<MadelungFields> {
    MadelungFields::from_fn(gaussian_grid(sigma)?, physics, |x| gaussian_density(x, sigma, 0.0), |x| p0 * x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianComparison {
    pub sigma_q: f64,
    pub correction_numeric: f64,
    pub correction_analytic: f64,
    pub product_numeric: f64,
    pub product_analytic: f64,
    pub relative_discrepancy: f64,
}

/// Grid value of `sigma_p^2 sigma_q^2` for a Gaussian against
/// `hbar^2/4 + sigma_q^2 C_f` in closed form.
pub fn check_gaussian_closed_form(
    sigma_q: f64,
    p0: f64,
    family: &ErrorFamily,
    physics: Physics,
) -> Result<GaussianComparison> {
    let fields = gaussian_fields(sigma_q, p0, physics)?;
    let report = analyze(&fields, family)?;
    let c = gaussian_correction_c(family, sigma_q, physics.hbar)?;
    let analytic = 0.25 * physics.hbar.powi(2) + sigma_q * sigma_q * c;
    let numeric = report.product();
    Ok(GaussianComparison {
        sigma_q,
        correction_numeric: report.correction_c,
        correction_analytic: c,
        product_numeric: numeric,
        product_analytic: analytic,
        relative_discrepancy: (numeric - analytic).abs() / analytic.abs(),
    })
}

/// Bisection for a sign change of `C_f` as the family strength runs over
/// `[lo, hi]`.
pub fn locate_correction_root(
    fields: &MadelungFields,
    family: &ErrorFamily,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    let c = |lambda: f64| uncertainty_correction_c(&family.with_lambda(lambda), fields);
    let (mut c_lo, c_hi) = (c(lo)?, c(hi)?);
    if c_lo == 0.0 {
        return Ok(lo);
    }
    if c_hi == 0.0 {
        return Ok(hi);
    }
    if c_lo.signum() == c_hi.signum() {
        return Err(Error::InvalidParameter(format!("C_f does not change sign on [{lo}, {hi}]")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let c_mid = c(mid)?;
        if c_mid == 0.0 {
            return Ok(mid);
        }
        if c_mid.signum() == c_lo.signum() {
            lo = mid;
            c_lo = c_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

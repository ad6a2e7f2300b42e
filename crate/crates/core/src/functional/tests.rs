use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::battery;
use crate::fields::states::{gaussian_density, gaussian_fields};
use crate::fields::{Grid1D, MadelungFields, Physics};

/// Composite Simpson rule of a continuous integrand, independent of the grid
/// calculus under test.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `int u^p rho` for a Gaussian with `u = -(q-q0)/sigma^2`, by quadrature.
fn gaussian_log_moment(p: i32, sigma: f64) -> f64 {
    simpson(
        |x| (-x / (sigma * sigma)).powi(p) * gaussian_density(x, sigma, 0.0),
        -20.0 * sigma,
        20.0 * sigma,
        20_000,
    )
}

fn gaussian(sigma: f64, physics: Physics) -> MadelungFields {
    gaussian_fields(Grid1D::centered(1024, 48.0).unwrap(), physics, sigma, 0.0, 0.0).unwrap()
}

fn bulk(fields: &MadelungFields, level: f64) -> Vec<bool> {
    let m = fields.max_density();
    fields.rho().iter().map(|&r| r > level * m).collect()
}

fn families() -> Vec<ErrorFamily> {
    vec![
        ErrorFamily::Zero,
        ErrorFamily::power_law(1.0, 0.5).unwrap(),
        ErrorFamily::power_law(-0.7, 1.0).unwrap(),
        ErrorFamily::power_law(0.4, 1.5).unwrap(),
        ErrorFamily::grad_power(1.0, 3.0).unwrap(),
        ErrorFamily::grad_power(-0.3, 2.0).unwrap(),
        ErrorFamily::custom("0.5 * (drho/rho)^3 - 0.2 * drho/rho").unwrap(),
        ErrorFamily::custom("rho^2 + 0.3 * drho").unwrap(),
    ]
}

#[test]
fn zero_family_vanishes_everywhere() {
    let f = gaussian(1.0, Physics::default());
    let z = ErrorFamily::Zero;
    assert!(eval_f(&z, &f).unwrap().iter().all(|&v| v == 0.0));
    assert_eq!(energy_correction_d(&z, &f).unwrap(), 0.0);
    assert_eq!(uncertainty_correction_c(&z, &f).unwrap(), 0.0);
    for mode in [NonlinearityMode::Analytic, NonlinearityMode::NumericFunctionalDerivative] {
        let n = nonlinearity_n(&NonlinearityEvaluator::new(z.clone(), mode), &f).unwrap();
        assert!(n.iter().all(|&v| v == 0.0));
    }
    assert!(nonlinearity_from_c(&z, &f).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn power_law_of_uniform_density() {
    let g = Grid1D::new(64, 0.0, 4.0).unwrap();
    let f = MadelungFields::normalized(g, vec![1.0; 64], vec![0.0; 64], Physics::default()).unwrap();
    let v = eval_f(&ErrorFamily::power_law(3.0, 1.0).unwrap(), &f).unwrap();
    assert!(v.iter().all(|x| (x - 0.75).abs() < 1e-14));
}

#[test]
fn grad_power_on_gaussian_matches_analytic() {
    let (sigma, q0, lambda) = (1.0, 0.5, 0.8);
    let f = gaussian_fields(Grid1D::centered(1024, 48.0).unwrap(), Physics::default(), sigma, q0, 0.0).unwrap();
    let v = eval_f(&ErrorFamily::grad_power(lambda, 3.0).unwrap(), &f).unwrap();
    let mask = bulk(&f, 1e-6);
    for k in 0..v.len() {
        let x = f.grid().x(k);
        let exact = lambda * (-(x - q0) / (sigma * sigma)).powi(3);
        if mask[k] && exact.abs() > 1e-6 {
            assert!(((v[k] - exact) / exact).abs() < 1e-8, "node {k}: {} vs {exact}", v[k]);
        }
    }
}

#[test]
fn power_law_half_energy_correction_on_gaussian() {
    for &(sigma, lambda, hbar, mass) in &[(1.0, 1.0, 1.0, 1.0), (0.5, 2.0, 1.0, 1.0), (2.0, -0.7, 0.8, 1.7)] {
        let physics = Physics::new(hbar, mass).unwrap();
        let f = gaussian(sigma, physics);
        let fam = ErrorFamily::power_law(lambda, 0.5).unwrap();
        let closed = hbar * hbar * lambda * lambda / (8.0 * PI.sqrt() * sigma);
        // independent quadrature of (hbar^2 lambda^2 / 4) int rho^2
        let quad = 0.25 * hbar * hbar * lambda * lambda
            * simpson(|x| gaussian_density(x, sigma, 0.0).powi(2), -20.0 * sigma, 20.0 * sigma, 20_000);
        assert!(((quad - closed) / closed).abs() < 1e-10);
        let d = energy_correction_d(&fam, &f).unwrap();
        assert!(((2.0 * mass * d - closed) / closed).abs() < 1e-6, "sigma {sigma}");
        let c = uncertainty_correction_c(&fam, &f).unwrap();
        assert!(((c - closed) / closed).abs() < 1e-6);
    }
}

#[test]
fn grad_power_cubic_energy_correction_on_gaussian() {
    for &(sigma, lambda) in &[(1.0, 1.0), (1.0, -0.2), (1.5, 0.3), (0.8, -1.1)] {
        let f = gaussian(sigma, Physics::default());
        let fam = ErrorFamily::grad_power(lambda, 3.0).unwrap();
        // Gaussian-moment oracle: C = (1/4)(2 lambda <u^4> + lambda^2 <u^6>)
        let oracle = 0.25 * (2.0 * lambda * gaussian_log_moment(4, sigma) + lambda * lambda * gaussian_log_moment(6, sigma));
        let closed = (6.0 * lambda * sigma * sigma + 15.0 * lambda * lambda) / (4.0 * sigma.powi(6));
        assert!(((oracle - closed) / closed).abs() < 1e-9);
        let d = energy_correction_d(&fam, &f).unwrap();
        let c = uncertainty_correction_c(&fam, &f).unwrap();
        assert!(((2.0 * d - closed) / closed).abs() < 1e-6, "D for {sigma},{lambda}");
        assert!(((c - closed) / closed).abs() < 1e-6, "C for {sigma},{lambda}");
    }
}

#[test]
fn power_law_half_nonlinearity_is_cubic_term() {
    let physics = Physics::new(1.0, 1.0).unwrap();
    let f = gaussian(1.0, physics);
    let lambda = 1.3;
    let n = NonlinearityEvaluator::new(ErrorFamily::power_law(lambda, 0.5).unwrap(), NonlinearityMode::Analytic)
        .evaluate(&f)
        .unwrap();
    let omega = lambda * lambda / 4.0;
    assert!((power_law_omega(lambda, 0.5, physics) - omega).abs() < 1e-15);
    for k in 0..n.len() {
        if !f.is_floored(k) {
            assert!((n[k] - omega * f.rho()[k]).abs() < 1e-15);
        }
    }
}

#[test]
fn numeric_derivative_of_linear_functional_is_one() {
    let f = battery::smooth_suite(Physics::default()).unwrap().remove(1);
    for k in [0, 17, 128, 255] {
        let d = functional_derivative_numeric(|g| Ok(g.norm()), &f, k).unwrap();
        assert!((d - 1.0).abs() < 1e-8, "node {k}: {d}");
    }
}

#[test]
fn numeric_derivative_of_quadratic_functional() {
    let f = battery::smooth_suite(Physics::default()).unwrap().remove(2);
    let sq = |g: &MadelungFields| Ok(g.grid().integrate(&g.rho().iter().map(|r| r * r).collect::<Vec<_>>()));
    for k in (0..256).step_by(31) {
        let d = functional_derivative_numeric(sq, &f, k).unwrap();
        assert!((d - 2.0 * f.rho()[k]).abs() < 1e-6);
    }
}

#[test]
fn numeric_derivative_of_fisher_information() {
    // rho = exp(a cos kx): dJ/drho = -4 d^2 sqrt(rho) / sqrt(rho)
    //                             = -4 ((a k sin kx / 2)^2 - a k^2 cos kx / 2)
    let fisher = |g: &MadelungFields| {
        let u = g.log_derivative();
        Ok(g.expectation(&u.iter().map(|v| v * v).collect::<Vec<_>>()))
    };
    let g = Grid1D::centered(128, 8.0).unwrap();
    let (a, k) = (0.8, 2.0 * PI / 8.0);
    let f = MadelungFields::from_fn(g, Physics::default(), |x| (a * (k * x).cos()).exp(), |_| 0.0).unwrap();
    for j in (0..128).step_by(9) {
        let x = f.grid().x(j);
        let expected = -4.0 * ((0.5 * a * k * (k * x).sin()).powi(2) - 0.5 * a * k * k * (k * x).cos());
        let d = functional_derivative_numeric(fisher, &f, j).unwrap();
        assert!((d - expected).abs() < 1e-6, "node {j}: {d} vs {expected}");
    }
}

#[test]
fn analytic_and_numeric_nonlinearity_agree_on_smooth_suite() {
    let physics = Physics::new(0.9, 1.3).unwrap();
    for (i, f) in battery::smooth_suite(physics).unwrap().iter().enumerate() {
        let mask = vec![true; f.grid().len()];
        for fam in families() {
            let a = NonlinearityEvaluator::new(fam.clone(), NonlinearityMode::Analytic).evaluate(f).unwrap();
            let b = NonlinearityEvaluator::new(fam.clone(), NonlinearityMode::NumericFunctionalDerivative)
                .evaluate(f)
                .unwrap();
            let err = relative_sup_error(&a, &b, &mask);
            assert!(err < 1e-4, "density {i}, {fam}: {err:.3e}");
            let c = nonlinearity_from_c(&fam, f).unwrap();
            let err = relative_sup_error(&c, &a, &mask);
            assert!(err < 1e-4, "from C, density {i}, {fam}: {err:.3e}");
        }
    }
}

#[test]
fn bump_derivatives_on_gaussian() {
    use crate::fields::DerivativeScheme;
    let g = Grid1D::centered(256, 24.0).unwrap();
    let base = MadelungFields::from_fn(g, Physics::default(), |x| gaussian_density(x, 1.0, 0.0), |_| 0.0).unwrap();
    let cases = [
        (DerivativeScheme::Spectral, ErrorFamily::power_law(1.0, 0.5).unwrap()),
        (DerivativeScheme::CentralDifference, ErrorFamily::grad_power(1.0, 3.0).unwrap()),
    ];
    for (scheme, fam) in cases {
        let f = base.clone().with_scheme(scheme);
        let mask = bulk(&f, 1e-2);
        let a = NonlinearityEvaluator::new(fam.clone(), NonlinearityMode::Analytic).evaluate(&f).unwrap();
        let b = NonlinearityEvaluator::new(fam.clone(), NonlinearityMode::NumericFunctionalDerivative)
            .evaluate(&f)
            .unwrap();
        let c = nonlinearity_from_c(&fam, &f).unwrap();
        assert!(relative_sup_error(&b, &a, &mask) < 1e-4, "{fam}");
        assert!(relative_sup_error(&c, &a, &mask) < 1e-4, "{fam}");
    }
}

#[test]
fn grad_power_nonlinearity_on_gaussian_matches_continuum() {
    let (sigma, lambda) = (1.2, 0.7);
    let f = gaussian(sigma, Physics::default());
    let n = NonlinearityEvaluator::new(ErrorFamily::grad_power(lambda, 3.0).unwrap(), NonlinearityMode::Analytic)
        .evaluate(&f)
        .unwrap();
    let (c1, c2) = (lambda / 4.0, lambda * lambda / 8.0);
    let du = -1.0 / (sigma * sigma);
    let exact: Vec<f64> = f
        .grid()
        .nodes()
        .iter()
        .map(|&x| {
            let u = -x / (sigma * sigma);
            c1 * (-3.0 * u.powi(4) - 12.0 * u * u * du) + c2 * (-5.0 * u.powi(6) - 30.0 * u.powi(4) * du)
        })
        .collect();
    let err = relative_sup_error(&n, &exact, &bulk(&f, 1e-3));
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn c_equals_two_m_d_for_all_families() {
    let physics = Physics::new(1.1, 0.6).unwrap();
    for f in battery::smooth_suite(physics).unwrap() {
        for fam in families() {
            let c = uncertainty_correction_c(&fam, &f).unwrap();
            let d = energy_correction_d(&fam, &f).unwrap();
            assert!((c - 2.0 * physics.mass * d).abs() < 1e-10 * (1.0 + c.abs()), "{fam}");
        }
    }
}

#[test]
fn nonzero_families_give_nonzero_nonlinearity() {
    let f = battery::smooth_suite(Physics::default()).unwrap().remove(1);
    for fam in families().into_iter().filter(|f| !f.is_zero()) {
        let n = NonlinearityEvaluator::new(fam.clone(), NonlinearityMode::Analytic).evaluate(&f).unwrap();
        assert!(n.iter().any(|v| v.abs() > 1e-6), "{fam}");
    }
}

#[test]
fn nonlinearity_ignores_phase() {
    let base = battery::smooth_suite(Physics::default()).unwrap().remove(2);
    let shifted = base.with_phase(base.s().iter().map(|s| s + 3.7).collect()).unwrap();
    let rephased = base.with_phase(base.s().iter().map(|s| 2.0 * s - 1.0).collect()).unwrap();
    for fam in families() {
        let ev = NonlinearityEvaluator::new(fam, NonlinearityMode::Analytic);
        let a = ev.evaluate(&base).unwrap();
        assert_eq!(a, ev.evaluate(&shifted).unwrap());
        assert_eq!(a, ev.evaluate(&rephased).unwrap());
    }
}

#[test]
fn fractional_grad_power_needs_positive_base() {
    let f = gaussian(1.0, Physics::default());
    let fam = ErrorFamily::grad_power(1.0, 2.5).unwrap();
    assert!(matches!(eval_f(&fam, &f), Err(Error::Domain(_))));
    let n = NonlinearityEvaluator::new(fam, NonlinearityMode::Analytic).evaluate(&f);
    assert!(matches!(n, Err(Error::Domain(_))));
    assert!(eval_f(&ErrorFamily::grad_power(1.0, 2.0).unwrap(), &f).is_ok());
}

#[test]
fn family_validation_and_parsing() {
    assert!(ErrorFamily::power_law(1.0, 0.0).is_err());
    assert!(ErrorFamily::grad_power(1.0, 1.0).is_err());
    assert!(ErrorFamily::custom("rho * S").is_err());
    for s in ["zero", "powerlaw:1:0.5", "gradpower:-0.2:3", "custom:(drho/rho)^3"] {
        let f: ErrorFamily = s.parse().unwrap();
        let again: ErrorFamily = f.spec_string().parse().unwrap();
        assert_eq!(f, again);
    }
    assert!("powerlaw:1".parse::<ErrorFamily>().is_err());
    assert!("quartic:1:2".parse::<ErrorFamily>().is_err());
}

#[test]
fn family_config_round_trip() {
    #[derive(serde::Deserialize, serde::Serialize)]
    struct Wrap {
        error_family: ErrorFamily,
    }
    let w: Wrap = toml::from_str("[error_family]\nkind = \"gradpower\"\nlambda = -0.2\nbeta = 3\n").unwrap();
    assert_eq!(w.error_family, ErrorFamily::GradPower { lambda: -0.2, beta: 3.0 });
    let text = toml::to_string(&w).unwrap();
    let back: Wrap = toml::from_str(&text).unwrap();
    assert_eq!(back.error_family, w.error_family);
    assert!(toml::from_str::<Wrap>("[error_family]\nkind = \"powerlaw\"\nlambda = 1\nalpha = 0.5\nbeta = 2\n").is_err());
    assert!(toml::from_str::<Wrap>("[error_family]\nkind = \"zero\"\ncolour = 1\n").is_err());
    let w: Wrap = toml::from_str("[error_family]\nkind = \"custom\"\nexpression = \"rho^2\"\n").unwrap();
    assert_eq!(w.error_family.spec_string(), "custom:rho^2");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The generic Euler-Lagrange path applied to `lambda * rho^alpha`
    /// reproduces `Omega rho^(2 alpha)`; the fitted coefficient matches the
    /// closed-form `Omega`.
    #[test]
    fn omega_fit_matches_closed_form(
        lambda in -2.0f64..2.0,
        alpha in prop::sample::select(vec![0.5, 1.0, 1.5, 2.0]),
        a1 in 0.1f64..1.0,
        a2 in -0.5f64..0.5,
        phase in 0.0f64..6.0,
        hbar in 0.5f64..1.5,
        mass in 0.5f64..2.0,
    ) {
        prop_assume!(lambda.abs() > 0.05);
        let g = Grid1D::centered(256, 10.0).unwrap();
        let k = 2.0 * PI / g.length();
        let physics = Physics::new(hbar, mass).unwrap();
        let f = MadelungFields::from_fn(g, physics, |x| (a1 * (k * x).cos() + a2 * (2.0 * k * x + phase).sin()).exp(), |_| 0.0).unwrap();
        let custom = ErrorFamily::custom(&format!("{lambda} * rho^{alpha}")).unwrap();
        let n = NonlinearityEvaluator::new(custom, NonlinearityMode::Analytic).evaluate(&f).unwrap();
        let basis: Vec<f64> = f.rho().iter().map(|r| r.powf(2.0 * alpha)).collect();
        let fit = n.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>() / basis.iter().map(|b| b * b).sum::<f64>();
        let omega = power_law_omega(lambda, alpha, physics);
        prop_assert!(((fit - omega) / omega).abs() < 1e-10, "fit {} omega {}", fit, omega);
    }
}

use std::f64::consts::PI;

use num_complex::Complex64;

use super::states::*;
use super::*;

fn wide_grid() -> Grid1D {
    Grid1D::centered(512, 40.0).unwrap()
}

#[test]
fn gaussian_wavefunction_matches_closed_form() {
    let g = wide_grid();
    let (sigma, q0, p0) = (1.3, 0.4, 0.7);
    let f = gaussian_fields(g, Physics::default(), sigma, q0, p0).unwrap();
    let psi = f.to_wavefunction().unwrap();
    for (k, z) in psi.amplitudes().iter().enumerate() {
        let x = g.x(k);
        let exact = Complex64::from_polar(
            (2.0 * PI * sigma * sigma).powf(-0.25) * (-(x - q0).powi(2) / (4.0 * sigma * sigma)).exp(),
            p0 * x,
        );
        assert!((z - exact).norm() < 1e-12);
    }
}

#[test]
fn uniform_zero_phase_is_constant_real() {
    let g = Grid1D::new(64, 0.0, 2.0).unwrap();
    let f = MadelungFields::normalized(g, vec![1.0; 64], vec![0.0; 64], Physics::default()).unwrap();
    let psi = f.to_wavefunction().unwrap();
    let c = (0.5f64).sqrt();
    for z in psi.amplitudes() {
        assert!((z.re - c).abs() < 1e-15 && z.im == 0.0);
    }
}

#[test]
fn born_rule_holds_pointwise() {
    let g = Grid1D::centered(128, 12.0).unwrap();
    let f = MadelungFields::from_fn(
        g,
        Physics::new(0.7, 2.0).unwrap(),
        |x| (1.0 + 0.5 * (x).cos()) * (-x * x / 8.0).exp(),
        |x| 0.3 * x * x - (2.0 * x).sin(),
    )
    .unwrap();
    let psi = f.to_wavefunction().unwrap();
    for (a, b) in psi.density().iter().zip(f.rho()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn unnormalized_input_is_rejected() {
    let g = Grid1D::new(16, 0.0, 1.0).unwrap();
    let err = MadelungFields::new(g, vec![2.0; 16], vec![0.0; 16], Physics::default()).unwrap_err();
    assert!(matches!(err, Error::Normalization { .. }));
    let amps = vec![Complex64::new(2.0, 0.0); 16];
    assert!(WaveFunction::new(g, amps).is_err());
}

#[test]
fn plane_wave_phase_is_linear() {
    let g = Grid1D::centered(128, 10.0).unwrap();
    let p0 = commensurate_momentum(&g, 1.0, 2.0);
    let psi = plane_wave(g, 1.0, p0).unwrap();
    let f = psi.to_madelung(Physics::default()).unwrap();
    let offset = f.s()[0] - p0 * g.x(0);
    for k in 0..g.len() {
        assert!((f.s()[k] - p0 * g.x(k) - offset).abs() < 1e-10);
        assert!((f.rho()[k] - 0.1).abs() < 1e-12);
    }
}

#[test]
fn real_positive_psi_has_constant_phase() {
    let g = wide_grid();
    let psi = gaussian_wavefunction(g, 1.0, 1.0, 0.0, 0.0).unwrap();
    let f = psi.to_madelung(Physics::default()).unwrap();
    assert!(f.s().iter().all(|s| s.abs() < 1e-15));
}

#[test]
fn madelung_round_trip_up_to_global_phase() {
    let g = wide_grid();
    let physics = Physics::new(1.0, 1.0).unwrap();
    let f = MadelungFields::from_fn(
        g,
        physics,
        |x| gaussian_density(x, 1.5, 1.0) + 0.5 * gaussian_density(x, 0.8, -2.0),
        |x| 0.5 * x * x + 3.0 * x,
    )
    .unwrap();
    let psi = f.to_wavefunction().unwrap();
    let back = psi.to_madelung(physics).unwrap();
    let first = (0..g.len()).find(|&k| !f.is_floored(k)).unwrap();
    let offset = back.s()[first] - f.s()[first];
    for k in 0..g.len() {
        assert!((back.rho()[k] - f.rho()[k]).abs() < 1e-15);
        if !f.is_floored(k) {
            assert!((back.s()[k] - f.s()[k] - offset).abs() < 1e-9, "node {k}");
        }
    }
    let psi2 = back.to_wavefunction().unwrap();
    let phase = psi2.amplitudes()[first] / psi.amplitudes()[first];
    for k in 0..g.len() {
        if !f.is_floored(k) {
            assert!((psi2.amplitudes()[k] - phase * psi.amplitudes()[k]).norm() < 1e-9);
        }
    }
}

#[test]
fn too_many_floored_nodes_is_an_error() {
    let g = Grid1D::centered(256, 400.0).unwrap();
    let psi = gaussian_wavefunction(g, 1.0, 0.5, 0.0, 0.0).unwrap();
    let err = psi.to_madelung(Physics::default()).unwrap_err();
    assert!(matches!(err, Error::FlooredNodes { .. }));
}

#[test]
fn gaussian_log_derivative_matches_analytic() {
    let g = wide_grid();
    let (sigma, q0) = (1.0, 0.5);
    let f = gaussian_fields(g, Physics::default(), sigma, q0, 0.0).unwrap();
    let d = f.density_gradient();
    for k in 0..g.len() {
        let x = g.x(k);
        let exact = -(x - q0) / (sigma * sigma) * f.rho()[k];
        if f.rho()[k] > 1e-6 * f.max_density() {
            assert!((d[k] - exact).abs() <= 1e-8 * exact.abs().max(1e-3 * f.max_density()));
        }
    }
}

#[test]
fn expectation_examples() {
    let g = wide_grid();
    let (sigma, q0) = (1.2, -0.7);
    let f = gaussian_fields(g, Physics::default(), sigma, q0, 0.0).unwrap();
    assert!((f.expectation(&vec![1.0; g.len()]) - 1.0).abs() < 1e-12);
    assert!((f.mean_position() - q0).abs() < 1e-8);
    let sq: Vec<f64> = g.nodes().iter().map(|x| (x - q0).powi(2)).collect();
    assert!((f.expectation(&sq) - sigma * sigma).abs() < 1e-6);
}

#[test]
fn expectation_is_linear() {
    let g = wide_grid();
    let f = gaussian_fields(g, Physics::default(), 1.0, 0.0, 0.0).unwrap();
    let a: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
    let b: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
    let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
    let lhs = f.expectation(&combo);
    let rhs = 2.0 * f.expectation(&a) - 3.0 * f.expectation(&b);
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn momentum_field_handles_linear_and_chirped_phase() {
    let g = wide_grid();
    let f = MadelungFields::from_fn(g, Physics::default(), |x| gaussian_density(x, 1.0, 0.0), |x| {
        0.37 * x + 0.25 * x * x
    })
    .unwrap();
    let v = f.momentum_field();
    for k in 0..g.len() {
        if f.rho()[k] > 1e-8 * f.max_density() {
            assert!((v[k] - (0.37 + 0.5 * g.x(k))).abs() < 1e-8, "node {k}");
        }
    }
}

#[test]
fn quantum_potential_of_gaussian() {
    let g = wide_grid();
    let sigma = 1.1;
    let f = gaussian_fields(g, Physics::default(), sigma, 0.0, 0.0).unwrap();
    let q = f.quantum_potential();
    for k in 0..g.len() {
        let x = g.x(k);
        let exact = 0.5 * (x * x / (4.0 * sigma.powi(4)) - 1.0 / (2.0 * sigma * sigma));
        if f.rho()[k] > 1e-6 * f.max_density() {
            assert!((q[k] - exact).abs() < 1e-7, "node {k}: {} vs {exact}", q[k]);
        }
    }
}

#[test]
fn named_potentials_are_finite() {
    let g = wide_grid();
    for p in [
        Potential::Free,
        Potential::Harmonic { omega: 2.0 },
        Potential::Barrier { height: 5.0, width: 1.0 },
        Potential::DoubleWell { a: 0.1, b: 2.0 },
    ] {
        let v = p.values(&g, Physics::default()).unwrap();
        assert_eq!(v.len(), g.len());
    }
    let bad = Potential::Values { values: vec![f64::NAN; g.len()] };
    assert!(bad.values(&g, Physics::default()).is_err());
}

#[test]
fn snapshot_csv_layout() {
    let g = Grid1D::new(4, 0.0, 1.0).unwrap();
    let f = MadelungFields::normalized(g, vec![1.0; 4], vec![0.0; 4], Physics::default()).unwrap();
    let psi = f.to_wavefunction().unwrap();
    let mut buf = Vec::new();
    write_snapshot_csv(&mut buf, &f, &psi).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,rho,s,re_psi,im_psi"));
    assert_eq!(
        lines.next(),
        Some("0.000000000000e+00,1.000000000000e+00,0.000000000000e+00,1.000000000000e+00,0.000000000000e+00")
    );
}

#[test]
fn edge_density_guard() {
    let g = Grid1D::centered(256, 16.0).unwrap();
    let f = gaussian_fields(g, Physics::default(), 1.0, 0.0, 0.0).unwrap();
    assert!(check_edge_density(f.rho()).is_ok());
    let f = gaussian_fields(g, Physics::default(), 3.0, 0.0, 0.0).unwrap();
    assert!(check_edge_density(f.rho()).is_err());
}

use std::path::Path;

use epiqsim::dynamics::evolve;
use epiqsim::functional::ErrorFamily;
use epiqsim::scenario::ScenarioConfig;
use epiqsim::uncertainty::{analyze, gaussian_correction_c};

fn configs() -> Vec<std::path::PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
}

#[test]
fn bundled_configs_load_and_evolve() {
    let paths = configs();
    assert!(paths.len() >= 3);
    for path in paths {
        let cfg = ScenarioConfig::load(&path).unwrap();
        let evo = cfg.require_evolution().unwrap();
        let out = evolve(&cfg.initial_wavefunction().unwrap(), cfg.physics, &evo).unwrap();
        assert!(out.log.max_norm_drift() < 1e-10, "{}", path.display());
        assert!(analyze(&cfg.initial_fields().unwrap(), &cfg.error_family).unwrap().valid);
    }
}

#[test]
fn free_gaussian_config_reproduces_the_closed_form() {
    let path = configs().into_iter().find(|p| p.ends_with("gaussian_free.toml")).unwrap();
    let cfg = ScenarioConfig::load(&path).unwrap();
    assert_eq!(cfg.error_family, ErrorFamily::power_law(1.0, 0.5).unwrap());
    let r = analyze(&cfg.initial_fields().unwrap(), &cfg.error_family).unwrap();
    let c = gaussian_correction_c(&cfg.error_family, cfg.initial_state.sigma_q, cfg.physics.hbar).unwrap();
    assert!((r.correction_c - c).abs() < 1e-9, "{} vs {c}", r.correction_c);
    assert!((r.mean_p - cfg.initial_state.p_o).abs() < 1e-9);
}

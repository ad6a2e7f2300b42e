use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use epiqsim::dynamics::evolve;
use epiqsim::ensemble::{summarize, XiDistribution};
use epiqsim::fields::write_snapshot_csv;
use epiqsim::format::sci;
use epiqsim::functional::{energy_correction_d, ErrorFamily};
use epiqsim::independence::classify as classify_family;
use epiqsim::scenario::ScenarioConfig;
use epiqsim::uncertainty::{analyze, UncertaintyReport};
use epiqsim::Error;

use crate::manifest::{prepare_dir, write_file, Manifest};
use crate::{Format, SweepParam};

fn load(config: &Path) -> anyhow::Result<ScenarioConfig> {
    Ok(ScenarioConfig::load(config)?)
}

pub fn simulate(config: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let evo = cfg.require_evolution()?;
    let psi = cfg.initial_wavefunction()?;
    let result = evolve(&psi, cfg.physics, &evo)?;
    let dir = prepare_dir(out)?;
    let mut manifest = Manifest::new("simulate").config(config)?.family(&cfg.error_family.spec_string());

    let mut table = String::from("step,time,norm,kinetic,potential,correction,quantum_energy,mean_energy\n");
    for r in &result.log.records {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            r.step,
            sci(r.time),
            sci(r.norm),
            sci(r.kinetic),
            sci(r.potential),
            sci(r.correction),
            sci(r.quantum_energy),
            sci(r.mean_energy)
        )?;
    }
    write_file(&dir.join("trajectory.csv"), table)?;
    manifest.output("trajectory.csv");

    let mut index = String::from("snapshot,step,time\n");
    for (i, snap) in result.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i:04}.csv");
        let fields = snap.psi.to_madelung_with(cfg.physics, evo.density_floor, 1.0)?;
        let mut buf = Vec::new();
        write_snapshot_csv(&mut buf, &fields, &snap.psi)?;
        write_file(&dir.join(&name), buf)?;
        writeln!(index, "{i},{},{}", snap.step, sci(snap.time))?;
        manifest.output(name);
    }
    write_file(&dir.join("snapshots.csv"), index)?;
    manifest.output("snapshots.csv");
    manifest.write(&dir)
}

const REPORT_COLUMNS: &str = "family,valid,ms_error_p,ms_error_q,precision_p,fisher_q,correction_c,var_p,var_q,mean_q,mean_p,product,cramer_rao_ok,msr_tradeoff_ok,hk_generalized_ok,gaussian_saturation_ok";

fn report_row(r: &UncertaintyReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.family,
        r.valid,
        sci(r.ms_error_p),
        sci(r.ms_error_q),
        sci(r.precision_p),
        sci(r.fisher_q),
        sci(r.correction_c),
        sci(r.var_p),
        sci(r.var_q),
        sci(r.mean_q),
        sci(r.mean_p),
        sci(r.product()),
        r.cramer_rao_ok,
        r.msr_tradeoff_ok,
        r.hk_generalized_ok,
        r.gaussian_saturation_ok
    )
}

pub fn uncertainty(config: &Path, out: Option<&Path>, format: Format) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let report = analyze(&cfg.initial_fields()?, &cfg.error_family)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let csv = format!("{REPORT_COLUMNS}\n{}\n", report_row(&report));
    match format {
        Format::Json => print!("{json}"),
        Format::Csv => print!("{csv}"),
    }
    if let Some(out) = out {
        let dir = prepare_dir(out)?;
        let mut manifest = Manifest::new("uncertainty").config(config)?.family(&report.family);
        write_file(&dir.join("uncertainty.json"), &json)?;
        write_file(&dir.join("uncertainty.csv"), &csv)?;
        manifest.output("uncertainty.json");
        manifest.output("uncertainty.csv");
        manifest.write(&dir)?;
    }
    Ok(())
}

pub fn ensemble(config: &Path, out: &Path, n: Option<usize>, seed: Option<u64>, raw: bool) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let n = n.unwrap_or(cfg.ensemble.n);
    let seed = seed.unwrap_or(cfg.ensemble.seed);
    let xi = XiDistribution::new(cfg.ensemble.xi_kind, cfg.physics.hbar)?;
    let (summary, samples) = summarize(&cfg.initial_fields()?, &cfg.error_family, &xi, n, seed, cfg.ensemble.bins)?;
    let dir = prepare_dir(out)?;
    let mut manifest = Manifest::new("ensemble").config(config)?.seed(seed).family(&summary.family);
    write_file(&dir.join("samples_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    manifest.output("samples_summary.json");
    if raw {
        let mut text = String::with_capacity(64 * samples.len() + 16);
        text.push_str("q,xi,p\n");
        for s in &samples {
            writeln!(text, "{},{},{}", sci(s.q), sci(s.xi), sci(s.p))?;
        }
        write_file(&dir.join("samples.csv"), text)?;
        manifest.output("samples.csv");
    }
    manifest.write(&dir)?;
    println!(
        "n={} ms_error={} predicted={} all_ok={}",
        summary.n,
        sci(summary.ms_error.mean),
        sci(summary.ms_error_predicted),
        summary.all_ok
    );
    Ok(())
}

pub fn classify(family: &str, out: Option<&Path>) -> anyhow::Result<()> {
    let family: ErrorFamily = family.parse()?;
    let verdict = classify_family(&family)?;
    let json = serde_json::to_string_pretty(&verdict)? + "\n";
    print!("{json}");
    if let Some(out) = out {
        let dir = prepare_dir(out)?;
        let mut manifest = Manifest::new("classify").family(&verdict.family);
        write_file(&dir.join("verdict.json"), &json)?;
        manifest.output("verdict.json");
        manifest.write(&dir)?;
    }
    Ok(())
}

/// Parses `a:b:n` into `n` evenly spaced values from `a` to `b`.
pub fn parse_range(text: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Config(format!("range must look like a:b:n, got '{text}'"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

fn with_param(family: &ErrorFamily, param: SweepParam, value: f64) -> Result<ErrorFamily, Error> {
    let unsupported = || Error::Config(format!("family '{}' has no parameter {param:?}", family.spec_string()));
    let f = match (family, param) {
        (ErrorFamily::PowerLaw { .. } | ErrorFamily::GradPower { .. }, SweepParam::Lambda) => family.with_lambda(value),
        (ErrorFamily::PowerLaw { lambda, .. }, SweepParam::Alpha) => ErrorFamily::PowerLaw { lambda: *lambda, alpha: value },
        (ErrorFamily::GradPower { lambda, .. }, SweepParam::Beta) => ErrorFamily::GradPower { lambda: *lambda, beta: value },
        _ => return Err(unsupported()),
    };
    f.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(f)
}

#[derive(Serialize)]
struct SweepPoint {
    index: usize,
    value: f64,
    correction_d: f64,
    report: UncertaintyReport,
}

pub fn sweep(config: &Path, param: SweepParam, range: &str, out: &Path) -> anyhow::Result<()> {
    let cfg = load(config)?;
    let values = parse_range(range)?;
    let families = values
        .iter()
        .map(|&v| with_param(&cfg.error_family, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let fields = cfg.initial_fields()?;
    let dir = prepare_dir(out)?;
    let mut manifest = Manifest::new("sweep").config(config)?.family(&cfg.error_family.spec_string());
    // each point owns its subdirectory
    let points = families
        .par_iter()
        .zip(values.par_iter())
        .enumerate()
        .map(|(index, (family, &value))| -> anyhow::Result<SweepPoint> {
            let point = SweepPoint {
                index,
                value,
                correction_d: energy_correction_d(family, &fields)?,
                report: analyze(&fields, family)?,
            };
            let sub = prepare_dir(&dir.join(format!("point_{index:04}")))?;
            write_file(&sub.join("report.json"), serde_json::to_string_pretty(&point)? + "\n")?;
            Ok(point)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let name = format!("{param:?}").to_lowercase();
    let mut table = format!("{name},correction_c,correction_d,product,ms_error_p,var_p,fisher_q,hk_generalized_ok\n");
    for p in &points {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            sci(p.value),
            sci(p.report.correction_c),
            sci(p.correction_d),
            sci(p.report.product()),
            sci(p.report.ms_error_p),
            sci(p.report.var_p),
            sci(p.report.fisher_q),
            p.report.hk_generalized_ok
        )?;
        manifest.output(format!("point_{:04}/report.json", p.index));
    }
    write_file(&dir.join("sweep.csv"), table).context("writing sweep table")?;
    manifest.output("sweep.csv");
    manifest.write(&dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_include_both_ends() {
        assert_eq!(parse_range("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_range("-0.6:0.2:5").unwrap().len(), 5);
        assert_eq!(parse_range("2:5:1").unwrap(), vec![2.0]);
        for bad in ["0:1", "a:1:3", "0:1:0", "0:1:x"] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_parameters_match_the_family() {
        let pl = ErrorFamily::power_law(1.0, 0.5).unwrap();
        assert_eq!(with_param(&pl, SweepParam::Alpha, 2.0).unwrap(), ErrorFamily::power_law(1.0, 2.0).unwrap());
        assert!(with_param(&pl, SweepParam::Beta, 3.0).is_err());
        assert!(with_param(&ErrorFamily::Zero, SweepParam::Lambda, 1.0).is_err());
        assert!(with_param(&ErrorFamily::grad_power(1.0, 3.0).unwrap(), SweepParam::Beta, 0.5).is_err());
    }
}

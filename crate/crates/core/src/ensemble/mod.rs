//! Monte Carlo realization of the epistemic model: positions drawn from
//! `rho`, a global variable `xi`, and momenta
//! `p = dS/dq + (xi/2)(drho/rho + f)`.
//!
//! Position sampling inverts a piecewise-linear CDF whose knots sit on cell
//! edges, so node `k` carries mass `rho_k dx` spread uniformly over its cell.
//! Fields are read at the node owning the cell. Sample averages therefore
//! converge to the grid quadratures used everywhere else, without
//! interpolation bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::MadelungFields;
use crate::functional::{eval_f, ErrorFamily};

pub const SHARD_SIZE: usize = 65_536;
/// Width of every statistical gate, in standard errors.
pub const SE_GATE: f64 = 5.0;
/// Fewest samples for a bin to count as populated.
pub const MIN_BIN_COUNT: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiKind {
    /// `+-hbar` with probability one half each.
    #[default]
    TwoPoint,
    /// Normal with mean zero and standard deviation `hbar`.
    Gaussian,
}

impl std::str::FromStr for XiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_point" => Ok(XiKind::TwoPoint),
            "gaussian" => Ok(XiKind::Gaussian),
            other => Err(Error::Config(format!("unknown xi kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiDistribution {
    pub kind: XiKind,
    pub hbar: f64,
}

impl XiDistribution {
    pub fn new(kind: XiKind, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!("hbar must be positive, got {hbar}")));
        }
        Ok(Self { kind, hbar })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            XiKind::TwoPoint => {
                if rng.random_bool(0.5) {
                    self.hbar
                } else {
                    -self.hbar
                }
            }
            XiKind::Gaussian => Normal::new(0.0, self.hbar).expect("positive width").sample(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnsembleSample {
    pub q: f64,
    pub xi: f64,
    pub p: f64,
    /// Grid node whose cell contains `q`.
    #[serde(skip)]
    pub node: usize,
}

/// Node tables shared by every draw: cumulative cell masses, the estimator
/// `dS/dq` and the error shape `drho/rho + f`.
#[derive(Clone, Debug)]
pub struct SamplingTable {
    x: Vec<f64>,
    dx: f64,
    cumulative: Vec<f64>,
    estimator: Vec<f64>,
    error_shape: Vec<f64>,
    weights: Vec<f64>,
}

impl SamplingTable {
    pub fn new(fields: &MadelungFields, family: &ErrorFamily) -> Result<Self> {
        let grid = fields.grid();
        let dx = grid.dx();
        // floored nodes get no mass
        let weights: Vec<f64> = (0..grid.len())
            .map(|k| if fields.is_floored(k) { 0.0 } else { fields.rho()[k] * dx })
            .collect();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Domain("no density mass above the floor".into()));
        }
        let u = fields.log_derivative();
        let f = eval_f(family, fields)?;
        Ok(Self {
            x: grid.nodes(),
            dx,
            cumulative,
            estimator: fields.momentum_field(),
            error_shape: u.iter().zip(&f).map(|(u, f)| u + f).collect(),
            weights,
        })
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().expect("nonempty grid")
    }

    pub fn estimator(&self) -> &[f64] {
        &self.estimator
    }

    pub fn error_shape(&self) -> &[f64] {
        &self.error_shape
    }

    /// `rho_k dx` with floored nodes zeroed.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sampling-law expectation of a node field.
    pub fn expect(&self, g: &[f64]) -> f64 {
        self.weights.iter().zip(g).map(|(w, g)| w * g).sum::<f64>() / self.total_mass()
    }

    /// Node and position for a uniform variate in `[0, 1)`.
    pub fn position(&self, uniform: f64) -> (usize, f64) {
        let target = uniform * self.total_mass();
        let k = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1);
        let below = if k == 0 { 0.0 } else { self.cumulative[k - 1] };
        let t = ((target - below) / self.weights[k]).clamp(0.0, 1.0);
        (k, self.x[k] + (t - 0.5) * self.dx)
    }

    pub fn momentum(&self, node: usize, xi: f64) -> f64 {
        self.estimator[node] + 0.5 * xi * self.error_shape[node]
    }

    fn draw<R: Rng + ?Sized>(&self, xi_dist: &XiDistribution, rng: &mut R) -> EnsembleSample {
        let (node, q) = self.position(rng.random::<f64>());
        let xi = xi_dist.sample(rng);
        EnsembleSample {
            q,
            xi,
            p: self.momentum(node, xi),
            node,
        }
    }
}

/// Generator for shard `index`: ChaCha8 keyed by `seed` on stream `index`.
pub fn shard_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` samples in shards of [`SHARD_SIZE`]; the stream depends only on
/// `seed`, never on the thread count.
pub fn draw_from_table(table: &SamplingTable, xi_dist: &XiDistribution, n: usize, seed: u64) -> Vec<EnsembleSample> {
    let shards = n.div_ceil(SHARD_SIZE);
    (0..shards)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = shard_rng(seed, i as u64);
            let len = SHARD_SIZE.min(n - i * SHARD_SIZE);
            (0..len).map(move |_| table.draw(xi_dist, &mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

pub fn draw_samples(
    fields: &MadelungFields,
    family: &ErrorFamily,
    xi_dist: &XiDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<EnsembleSample>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let table = SamplingTable::new(fields, family)?;
    Ok(draw_from_table(&table, xi_dist, n, seed))
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub count: usize,
    pub mean: f64,
    pub se: f64,
}

impl MeanEstimate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        let se = if n > 1 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { f64::INFINITY };
        Self { count: n, mean, se }
    }

    /// Distance to `target` in standard errors.
    pub fn z(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.se
    }

    pub fn within(&self, target: f64) -> bool {
        if self.se == 0.0 {
            return (self.mean - target).abs() <= 1e-12 * target.abs().max(1.0);
        }
        self.z(target) <= SE_GATE
    }
}

/// Two independent estimates agree within the gate.
pub fn indistinguishable(a: &MeanEstimate, b: &MeanEstimate) -> bool {
    let se = a.se.hypot(b.se);
    (a.mean - b.mean).abs() <= SE_GATE * se
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub estimate: MeanEstimate,
    /// `rho`-weighted average of `dS/dq` over the cells of the bin.
    pub expected: f64,
    pub populated: bool,
    pub ok: bool,
}

/// Average momentum of the samples with `lo <= q < hi`.
pub fn conditional_mean_p(samples: &[EnsembleSample], lo: f64, hi: f64) -> MeanEstimate {
    MeanEstimate::of(samples.iter().filter(|s| s.q >= lo && s.q < hi).map(|s| s.p))
}

/// Conditional means on `n_bins` bins of whole cells covering the support,
/// each gated against the weighted estimator. Underpopulated bins are
/// reported but not gated.
pub fn conditional_mean_profile(table: &SamplingTable, samples: &[EnsembleSample], n_bins: usize) -> Vec<BinStat> {
    let support: Vec<usize> = (0..table.weights.len()).filter(|&k| table.weights[k] > 0.0).collect();
    let (first, last) = (support[0], *support.last().expect("nonempty support"));
    let span = last - first + 1;
    let n_bins = n_bins.clamp(1, span);
    let mut sums = vec![(0usize, 0.0, 0.0); n_bins];
    let bin_of = |k: usize| ((k - first) * n_bins / span).min(n_bins - 1);
    for s in samples {
        if s.node < first || s.node > last {
            continue;
        }
        let b = &mut sums[bin_of(s.node)];
        b.0 += 1;
        b.1 += s.p;
        b.2 += s.p * s.p;
    }
    (0..n_bins)
        .map(|b| {
            let nodes: Vec<usize> = (first..=last).filter(|&k| bin_of(k) == b).collect();
            let mass: f64 = nodes.iter().map(|&k| table.weights[k]).sum();
            let expected = if mass > 0.0 {
                nodes.iter().map(|&k| table.weights[k] * table.estimator[k]).sum::<f64>() / mass
            } else {
                0.0
            };
            let (count, sum, sq) = sums[b];
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            let var = if count > 1 { (sq - count as f64 * mean * mean) / (count - 1) as f64 } else { f64::INFINITY };
            let estimate = MeanEstimate {
                count,
                mean,
                se: (var.max(0.0) / count.max(1) as f64).sqrt(),
            };
            let populated = count >= MIN_BIN_COUNT;
            let lo = table.x[nodes[0]] - 0.5 * table.dx;
            let hi = table.x[*nodes.last().expect("bin has cells")] + 0.5 * table.dx;
            BinStat {
                lo,
                hi,
                estimate,
                expected,
                populated,
                ok: !populated || estimate.within(expected),
            }
        })
        .collect()
}

/// Empirical `E_p^2 = <(p - dS/dq)^2>` with its standard error.
pub fn ms_error(table: &SamplingTable, samples: &[EnsembleSample]) -> MeanEstimate {
    MeanEstimate::of(samples.iter().map(|s| (s.p - table.estimator[s.node]).powi(2)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalityRow {
    pub label: String,
    pub ms_error: f64,
    /// Paired increase `MS(dS + dT) - MS(dS)` over the same samples.
    pub increase: MeanEstimate,
    /// `int dT^2 rho dq`.
    pub predicted_margin: f64,
    pub strictly_larger: bool,
    pub margin_ok: bool,
}

/// Paired comparison of the estimator `dS/dq` against `dS/dq + dT` for each
/// node perturbation `dT`.
pub fn verify_optimal_estimator(
    table: &SamplingTable,
    samples: &[EnsembleSample],
    perturbations: &[(String, Vec<f64>)],
) -> Result<Vec<OptimalityRow>> {
    let n_nodes = table.weights.len();
    perturbations
        .iter()
        .map(|(label, dt)| {
            if dt.len() != n_nodes || dt.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("perturbation '{label}' is not a finite node field")));
            }
            let increase = MeanEstimate::of(samples.iter().map(|s| {
                let e = s.p - table.estimator[s.node];
                let d = dt[s.node];
                (e - d).powi(2) - e * e
            }));
            let ms = MeanEstimate::of(samples.iter().map(|s| (s.p - table.estimator[s.node] - dt[s.node]).powi(2)));
            let dt2: Vec<f64> = dt.iter().map(|d| d * d).collect();
            let predicted = table.expect(&dt2);
            let nonzero = predicted > 0.0;
            Ok(OptimalityRow {
                label: label.clone(),
                ms_error: ms.mean,
                increase,
                predicted_margin: predicted,
                strictly_larger: !nonzero || increase.mean > 0.0,
                margin_ok: increase.within(predicted),
            })
        })
        .collect()
}

/// Ten fixed perturbations of the estimator: constants, linear and
/// quadratic ramps about the mean position, and localized bumps.
pub fn perturbation_battery(fields: &MadelungFields) -> Vec<(String, Vec<f64>)> {
    let x = fields.grid().nodes();
    let q0 = fields.mean_position();
    let spread = {
        let d: Vec<f64> = x.iter().map(|x| (x - q0).powi(2)).collect();
        fields.expectation(&d).sqrt()
    };
    let field = |g: &dyn Fn(f64) -> f64| -> Vec<f64> { x.iter().map(|&x| g((x - q0) / spread)).collect() };
    vec![
        ("const 0.1".into(), field(&|_| 0.1)),
        ("const -0.3".into(), field(&|_| -0.3)),
        ("const 0.02".into(), field(&|_| 0.02)),
        ("ramp 0.5".into(), field(&|z| 0.5 * z)),
        ("ramp -0.2".into(), field(&|z| -0.2 * z)),
        ("quadratic 0.1".into(), field(&|z| 0.1 * z * z)),
        ("sine 0.25".into(), field(&|z| 0.25 * (2.0 * z).sin())),
        ("bump left".into(), field(&|z| 0.4 * (-(z + 1.0).powi(2) * 4.0).exp())),
        ("bump right".into(), field(&|z| -0.4 * (-(z - 0.5).powi(2) * 4.0).exp())),
        ("tanh 0.15".into(), field(&|z| 0.15 * (3.0 * z).tanh())),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UnbiasednessBranch {
    pub xi: f64,
    pub mean_error: MeanEstimate,
    pub ok: bool,
}

/// For each fixed `xi = +-hbar`, the mean of `eps = (xi/2)(drho/rho + f)`
/// over positions drawn from `rho`.
pub fn unbiasedness_check(
    fields: &MadelungFields,
    family: &ErrorFamily,
    n: usize,
    seed: u64,
) -> Result<Vec<UnbiasednessBranch>> {
    let table = SamplingTable::new(fields, family)?;
    let hbar = fields.hbar();
    let shards = n.div_ceil(SHARD_SIZE);
    let nodes: Vec<usize> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = shard_rng(seed, i as u64);
            let len = SHARD_SIZE.min(n - i * SHARD_SIZE);
            let table = &table;
            (0..len).map(move |_| table.position(rng.random::<f64>()).0).collect::<Vec<_>>()
        })
        .collect();
    Ok([hbar, -hbar]
        .into_iter()
        .map(|xi| {
            let est = MeanEstimate::of(nodes.iter().map(|&k| 0.5 * xi * table.error_shape[k]));
            UnbiasednessBranch {
                xi,
                mean_error: est,
                ok: est.within(0.0),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n: usize,
    pub seed: u64,
    pub xi_kind: XiKind,
    pub family: String,
    pub xi_mean: MeanEstimate,
    pub xi_second_moment: MeanEstimate,
    pub mean_p: MeanEstimate,
    pub ms_error: MeanEstimate,
    /// `(hbar^2/4) J_q + C_f` from grid quadrature.
    pub ms_error_predicted: f64,
    pub ms_error_ok: bool,
    pub bins_checked: usize,
    pub bins_failed: usize,
    pub optimality: Vec<OptimalityRow>,
    pub all_ok: bool,
}

/// Full statistical suite on one preparation.
pub fn summarize(
    fields: &MadelungFields,
    family: &ErrorFamily,
    xi_dist: &XiDistribution,
    n: usize,
    seed: u64,
    n_bins: usize,
) -> Result<(EnsembleSummary, Vec<EnsembleSample>)> {
    let table = SamplingTable::new(fields, family)?;
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let samples = draw_from_table(&table, xi_dist, n, seed);
    let report = crate::uncertainty::analyze(fields, family)?;
    let predicted = 0.25 * fields.hbar().powi(2) * report.fisher_q + report.correction_c;
    let ms = ms_error(&table, &samples);
    let bins = conditional_mean_profile(&table, &samples, n_bins);
    let optimality = verify_optimal_estimator(&table, &samples, &perturbation_battery(fields))?;
    let xi_mean = MeanEstimate::of(samples.iter().map(|s| s.xi));
    let xi_second_moment = MeanEstimate::of(samples.iter().map(|s| s.xi * s.xi));
    let mean_p = MeanEstimate::of(samples.iter().map(|s| s.p));
    let bins_checked = bins.iter().filter(|b| b.populated).count();
    let bins_failed = bins.iter().filter(|b| !b.ok).count();
    let ms_error_ok = ms.within(predicted);
    let all_ok = ms_error_ok
        && bins_failed == 0
        && optimality.iter().all(|r| r.strictly_larger && r.margin_ok)
        && xi_mean.within(0.0)
        && xi_second_moment.within(xi_dist.hbar * xi_dist.hbar);
    Ok((
        EnsembleSummary {
            n,
            seed,
            xi_kind: xi_dist.kind,
            family: family.spec_string(),
            xi_mean,
            xi_second_moment,
            mean_p,
            ms_error: ms,
            ms_error_predicted: predicted,
            ms_error_ok,
            bins_checked,
            bins_failed,
            optimality,
            all_ok,
        },
        samples,
    ))
}

//! Seeded Monte Carlo replications and the statistical checks that compare
//! them with the quadrature oracles.
//!
//! Replication `i` always draws from stream `(seed, i)` and results are
//! collected in index order, so a run is a pure function of its inputs no
//! matter how many worker threads execute it.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::arrival::{simulate_point_measure, IntensityModel, PointMeasure};
use crate::environment::{sample_path, EnvironmentModel, EnvironmentPath};
use crate::error::{Error, Result};
use crate::mean_measure::{m_bar, m_epsilon, QuadratureSpec};
use crate::queue::{accumulated_input, count_active, count_region, reflected_workload, Region};
use crate::rng::{environment_stream, replication_stream};
use crate::service::ServiceModel;

/// Significance level of the chi-square sub-check.
pub const CHI_SQUARE_ALPHA: f64 = 0.01;
/// Width, in standard errors, of every Monte Carlo band.
pub const SIGMA_BAND: f64 = 3.0;
/// Minimum expected count per chi-square bin.
const MIN_BIN_EXPECTED: f64 = 5.0;

/// Everything needed to simulate one configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub env: EnvironmentModel,
    pub intensity: IntensityModel,
    pub service: ServiceModel,
    /// Arrival horizon `T`.
    pub horizon: f64,
    /// Sorted probe times in `(0, T]`.
    pub probes: Vec<f64>,
    /// Drain rate of the single-server storage queue.
    pub drain_rate: f64,
    /// Environment grid step.
    pub step_u: f64,
    pub quadrature: QuadratureSpec,
}

impl Scenario {
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Ok(Self {
            intensity: self.intensity.with_epsilon(epsilon)?,
            ..self.clone()
        })
    }

    /// Quenched path number `index`, long enough for `horizon / epsilon`.
    ///
    /// Paths with the same index share their prefix whatever the requested
    /// length, so one path serves every `ε` of a sweep.
    pub fn quenched_path(&self, seed: u64, index: u64, epsilon: f64) -> Result<EnvironmentPath> {
        let mut rng = environment_stream(seed, index);
        sample_path(&self.env, self.horizon / epsilon, self.step_u, &mut rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One environment path shared by every replication.
    Quenched,
    /// A fresh environment path per replication.
    Annealed,
}

/// One replication: the realized point measure and its functionals at the
/// probe times.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: u64,
    pub path_id: u64,
    pub measure: PointMeasure,
    /// `N(t)` at each probe.
    pub active: Vec<u64>,
    /// `(M(A₁), M(A₂), M(A₃))` for the first two probes, when there are two.
    pub regions: Option<[u64; 3]>,
    /// `A(t)` at each probe.
    pub accumulated: Vec<f64>,
    /// `X(t)` at each probe.
    pub workload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub seed: u64,
    pub mode: SamplingMode,
    pub epsilon: f64,
    pub probes: Vec<f64>,
    pub replications: Vec<Replication>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.replications.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replications.is_empty()
    }

    /// `N(probes[k])` across replications.
    pub fn active_at(&self, k: usize) -> Vec<u64> {
        self.replications.iter().map(|r| r.active[k]).collect()
    }

    /// Region counts `M(A_i)` across replications, `i ∈ {0, 1, 2}`.
    pub fn region(&self, i: usize) -> Vec<u64> {
        self.replications
            .iter()
            .map(|r| r.regions.map_or(0, |c| c[i]))
            .collect()
    }
}

fn record(scenario: &Scenario, index: u64, path_id: u64, measure: PointMeasure) -> Result<Replication> {
    let probes = &scenario.probes;
    let active = probes.iter().map(|&t| count_active(&measure, t) as u64).collect();
    let regions = (probes.len() >= 2).then(|| {
        let (t1, t2) = (probes[0], probes[1]);
        [Region::a1(t1, t2), Region::a2(t1, t2), Region::a3(t1, t2)]
            .map(|r| count_region(&measure, &r) as u64)
    });
    let accumulated = probes.iter().map(|&t| accumulated_input(&measure, t)).collect();
    let reflected = reflected_workload(&measure, scenario.drain_rate, probes)?;
    let workload = probes.iter().map(|&t| reflected.workload.eval(t)).collect();
    Ok(Replication {
        index,
        path_id,
        measure,
        active,
        regions,
        accumulated,
        workload,
    })
}

/// Single replication `index` on a given path.
pub fn simulate_once(scenario: &Scenario, path: &EnvironmentPath, seed: u64, index: u64, path_id: u64) -> Result<Replication> {
    let mut rng = replication_stream(seed, index);
    let measure = simulate_point_measure(&scenario.intensity, &scenario.service, path, scenario.horizon, &mut rng)?;
    record(scenario, index, path_id, measure)
}

/// `count` replications on one fixed path.
pub fn run_replications_on(
    scenario: &Scenario,
    path: &EnvironmentPath,
    path_id: u64,
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::Domain("need at least one replication".into()));
    }
    let replications = (0..count as u64)
        .into_par_iter()
        .map(|i| simulate_once(scenario, path, seed, i, path_id))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        seed,
        mode: SamplingMode::Quenched,
        epsilon: scenario.intensity.epsilon(),
        probes: scenario.probes.clone(),
        replications,
    })
}

/// `count` independent replications. Quenched runs share environment path 0;
/// annealed runs draw the environment from each replication's own stream.
pub fn run_replications(scenario: &Scenario, mode: SamplingMode, count: usize, seed: u64) -> Result<SampleSet> {
    let eps = scenario.intensity.epsilon();
    match mode {
        SamplingMode::Quenched => {
            let path = scenario.quenched_path(seed, 0, eps)?;
            run_replications_on(scenario, &path, 0, count, seed)
        }
        SamplingMode::Annealed => {
            if count == 0 {
                return Err(Error::Domain("need at least one replication".into()));
            }
            let replications = (0..count as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replication_stream(seed, i);
                    let path = sample_path(&scenario.env, scenario.horizon / eps, scenario.step_u, &mut rng)?;
                    let measure = simulate_point_measure(&scenario.intensity, &scenario.service, &path, scenario.horizon, &mut rng)?;
                    record(scenario, i, i, measure)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SampleSet {
                seed,
                mode,
                epsilon: eps,
                probes: scenario.probes.clone(),
                replications,
            })
        }
    }
}

/// A check outcome. `band` is the allowed distance from `reference` (or the
/// critical value, as described by the check's name). Composite checks pass
/// iff all children pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub name: String,
    pub observed: f64,
    pub reference: f64,
    pub band: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<TestReport>,
}

impl TestReport {
    pub fn new(name: impl Into<String>, observed: f64, reference: f64, band: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            observed,
            reference,
            band,
            pass,
            checks: Vec::new(),
        }
    }

    /// Passes iff `|observed − reference| ≤ band`.
    pub fn within(name: impl Into<String>, observed: f64, reference: f64, band: f64) -> Self {
        let pass = (observed - reference).abs() <= band;
        Self::new(name, observed, reference, band, pass)
    }

    pub fn group(name: impl Into<String>, checks: Vec<TestReport>) -> Self {
        let passed = checks.iter().filter(|c| c.pass).count();
        let total = checks.len();
        Self {
            name: name.into(),
            observed: passed as f64,
            reference: total as f64,
            band: 0.0,
            pass: passed == total,
            checks,
        }
    }

    /// Flattens the tree into `(path, pass)` lines.
    pub fn lines(&self) -> Vec<(String, bool)> {
        let mut out = vec![(self.name.clone(), self.pass)];
        for c in &self.checks {
            out.extend(c.lines().into_iter().map(|(n, p)| (format!("{} / {}", self.name, n), p)));
        }
        out
    }
}

fn mean_and_variance(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = xs.clone().count();
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var, n)
}

/// Chi-square goodness of fit of integer counts to `Poisson(mean)`, with
/// adjacent cells merged until each expects at least five observations.
/// Returns `(statistic, degrees of freedom, p-value)`.
pub fn poisson_chi_square(counts: &[u64], mean: f64) -> (f64, usize, f64) {
    let n = counts.len() as f64;
    let max_obs = counts.iter().copied().max().unwrap_or(0) as usize;
    let k_max = max_obs.max((mean + 10.0 * mean.sqrt() + 10.0).ceil() as usize);
    let mut histogram = vec![0u64; k_max + 1];
    for &c in counts {
        histogram[c as usize] += 1;
    }

    // (expected, observed) per merged cell; the last cell is the open tail
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pmf = (-mean).exp();
    let mut cdf = 0.0;
    let (mut exp_acc, mut obs_acc) = (0.0, 0.0);
    let mut tail_start = 0;
    for (k, &observed) in histogram.iter().enumerate() {
        exp_acc += n * pmf;
        obs_acc += observed as f64;
        cdf += pmf;
        pmf *= mean / (k + 1) as f64;
        if exp_acc >= MIN_BIN_EXPECTED {
            cells.push((exp_acc, obs_acc));
            exp_acc = 0.0;
            obs_acc = 0.0;
            tail_start = k + 1;
        }
    }
    let tail_expected = n * (1.0 - cdf) + exp_acc;
    let tail_observed: f64 = histogram[tail_start..].iter().map(|&c| c as f64).sum();
    match cells.last_mut() {
        Some(last) if tail_expected < MIN_BIN_EXPECTED => {
            last.0 += tail_expected;
            last.1 += tail_observed;
        }
        _ => cells.push((tail_expected, tail_observed)),
    }
    if cells.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let statistic: f64 = cells.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let p = ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .sf(statistic);
    (statistic, dof, p)
}

/// Checks that counts look like `Poisson(mean_ref)`: sample mean within
/// three standard errors, dispersion index within `1 ± 3√(2/R)`, and a
/// chi-square test at level 0.01.
pub fn poisson_gof(name: &str, counts: &[u64], mean_ref: f64) -> Result<TestReport> {
    let r = counts.len();
    if r < 1000 {
        return Err(Error::Domain(format!("poisson_gof needs at least 1000 samples, got {r}")));
    }
    let rf = r as f64;
    let (mean, var, _) = mean_and_variance(counts.iter().map(|&c| c as f64));
    if !(mean_ref > 0.0) {
        let degenerate = mean == 0.0 && mean_ref == 0.0;
        return Ok(TestReport::new(format!("{name}: poisson"), mean, mean_ref, 0.0, degenerate));
    }
    let mean_check = TestReport::within("mean", mean, mean_ref, SIGMA_BAND * (mean_ref / rf).sqrt());
    let dispersion = if mean > 0.0 { var / mean } else { f64::NAN };
    let dispersion_check = TestReport::within("dispersion index", dispersion, 1.0, SIGMA_BAND * (2.0 / rf).sqrt());
    let (_, _, p) = poisson_chi_square(counts, mean_ref);
    let chi_check = TestReport::new("chi-square p-value", p, CHI_SQUARE_ALPHA, CHI_SQUARE_ALPHA, p > CHI_SQUARE_ALPHA);
    Ok(TestReport::group(
        format!("{name}: poisson"),
        vec![mean_check, dispersion_check, chi_check],
    ))
}

/// Compares the empirical `E[exp(−ξ₁N(t₁) − ξ₂N(t₂))]` with
/// `∏ exp(−(1 − e^{−λ_i}) m_i)`, `(λ₁, λ₂, λ₃) = (ξ₁, ξ₁ + ξ₂, ξ₂)`.
pub fn laplace_check(name: &str, n1: &[u64], n2: &[u64], xi: (f64, f64), m_refs: [f64; 3]) -> Result<TestReport> {
    if n1.len() != n2.len() || n1.is_empty() {
        return Err(Error::Domain("laplace_check needs paired, non-empty samples".into()));
    }
    let (x1, x2) = xi;
    let lambdas = [x1, x1 + x2, x2];
    let predicted = lambdas
        .iter()
        .zip(m_refs)
        .map(|(l, m)| (-(-(-l).exp_m1()) * m).exp())
        .product::<f64>();
    let values = n1
        .iter()
        .zip(n2)
        .map(|(&a, &b)| (-(x1 * a as f64) - x2 * b as f64).exp());
    let (mean, var, n) = mean_and_variance(values);
    let se = (var / n as f64).sqrt();
    let band = if se > 0.0 { SIGMA_BAND * se } else { 1e-12 };
    Ok(TestReport::within(format!("{name}: joint laplace transform"), mean, predicted, band))
}

fn correlation(a: &[u64], b: &[u64]) -> f64 {
    let (ma, va, _) = mean_and_variance(a.iter().map(|&x| x as f64));
    let (mb, vb, _) = mean_and_variance(b.iter().map(|&x| x as f64));
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    let n = a.len() as f64;
    let cov = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb))
        .sum::<f64>()
        / (n - 1.0);
    cov / (va * vb).sqrt()
}

/// Pairwise correlations of the three region counts within `3/√R`, and each
/// marginal Poisson with its region mean.
pub fn independence_check(name: &str, regions: [&[u64]; 3], means: [f64; 3]) -> Result<TestReport> {
    let r = regions[0].len();
    if regions.iter().any(|c| c.len() != r) {
        return Err(Error::Domain("region samples differ in length".into()));
    }
    let band = SIGMA_BAND / (r as f64).sqrt();
    let mut checks = Vec::new();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let rho = correlation(regions[i], regions[j]);
        checks.push(TestReport::within(format!("corr(A{}, A{})", i + 1, j + 1), rho, 0.0, band));
    }
    for i in 0..3 {
        checks.push(poisson_gof(&format!("A{}", i + 1), regions[i], means[i])?);
    }
    Ok(TestReport::group(format!("{name}: region independence"), checks))
}

/// Pathwise and mean checks on accumulated input and reflected workload.
///
/// `oracle_mean` is `∫₀ᵗ m^ε(s) ds` at time `t`, from the quadrature module.
pub fn functional_checks(samples: &SampleSet, drain_rate: f64, t: f64, oracle_mean: f64) -> Result<Vec<TestReport>> {
    let grid_end = samples.probes.iter().copied().fold(t, f64::max);
    let grid: Vec<f64> = samples.probes.iter().copied().chain([t, grid_end]).collect();
    let mut monotone = 0usize;
    let mut nonnegative = 0usize;
    let mut complementary = 0usize;
    for rep in &samples.replications {
        let out = reflected_workload(&rep.measure, drain_rate, &grid)?;
        let times = out.workload.times();
        let input: Vec<f64> = times.iter().map(|&s| accumulated_input(&rep.measure, s)).collect();
        if input.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
        let scale = input.last().copied().unwrap_or(0.0).max(drain_rate * grid_end).max(1.0);
        let tol = 1e-12 * scale;
        let x = out.workload.values();
        if x.iter().all(|&v| v >= -tol) {
            nonnegative += 1;
        }
        let reg = out.regulator.values();
        let ok = (1..times.len()).all(|k| reg[k] - reg[k - 1] <= tol || (x[k - 1] <= tol && x[k] <= tol));
        if ok {
            complementary += 1;
        }
    }
    let r = samples.len() as f64;
    let fraction = |k: usize| k as f64 / r;
    let accumulated: Vec<f64> = samples
        .replications
        .iter()
        .map(|rep| accumulated_input(&rep.measure, t))
        .collect();
    let (mean, var, n) = mean_and_variance(accumulated.iter().copied());
    let se = (var / n as f64).sqrt();
    Ok(vec![
        TestReport::within("accumulated input nondecreasing (fraction)", fraction(monotone), 1.0, 0.0),
        TestReport::within("workload nonnegative (fraction)", fraction(nonnegative), 1.0, 0.0),
        TestReport::within("reflection complementarity (fraction)", fraction(complementary), 1.0, 0.0),
        TestReport::within(format!("mean accumulated input at t={t}"), mean, oracle_mean, SIGMA_BAND * se),
    ])
}

/// Fraction of replications satisfying `N(t₁) = M(A₁) + M(A₂)` and
/// `N(t₂) = M(A₂) + M(A₃)`.
pub fn decomposition_identity(samples: &SampleSet) -> f64 {
    let ok = samples
        .replications
        .iter()
        .filter(|rep| match rep.regions {
            Some([a1, a2, a3]) => rep.active[0] == a1 + a2 && rep.active[1] == a2 + a3,
            None => false,
        })
        .count();
    ok as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub t: f64,
    /// `m^ε(t)` on path 0, the path the Monte Carlo runs on.
    pub m_eps: f64,
    pub m_bar: f64,
    /// Mean over paths of `|m^ε(t) − m̄(t)|`.
    pub path_err: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    /// `|Ê[e^{−N(t)}] − exp(−(1 − e^{−1}) m̄(t))|`, distance to the limit law.
    pub laplace_gap: f64,
    /// Monte Carlo mean within three standard errors of `m^ε(t)`.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `m^ε(t)` per path, indexed `[epsilon][probe][path]`.
    pub per_path: Vec<Vec<Vec<f64>>>,
    /// Whether `path_err` strictly decreases along the epsilon list, per probe.
    pub monotone: Vec<bool>,
}

/// Runs the homogenization sweep over a decreasing list of `ε`.
pub fn epsilon_sweep(
    scenario: &Scenario,
    eps_list: &[f64],
    probes: &[f64],
    replications: usize,
    paths: usize,
    seed: u64,
) -> Result<SweepTable> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Domain("epsilon list must be non-empty and strictly decreasing".into()));
    }
    if paths == 0 {
        return Err(Error::Domain("need at least one environment path".into()));
    }
    let eps_min = *eps_list.last().expect("non-empty");
    let spec = scenario.quadrature;
    let limits = probes
        .iter()
        .map(|&t| m_bar(&scenario.intensity, &scenario.service, &scenario.env, t, &spec))
        .collect::<Result<Vec<_>>>()?;
    let env_paths = (0..paths as u64)
        .into_par_iter()
        .map(|p| scenario.quenched_path(seed, p, eps_min))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut per_path = Vec::new();
    for &eps in eps_list {
        let local = scenario.with_epsilon(eps)?;
        let means: Vec<Vec<f64>> = probes
            .iter()
            .map(|&t| {
                env_paths
                    .par_iter()
                    .map(|path| Ok(m_epsilon(&local.intensity, &local.service, path, t, &spec)?.value))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let local = Scenario {
            probes: probes.to_vec(),
            ..local
        };
        let samples = run_replications_on(&local, &env_paths[0], 0, replications, seed)?;
        for (k, &t) in probes.iter().enumerate() {
            let counts = samples.active_at(k);
            let (mc_mean, var, n) = mean_and_variance(counts.iter().map(|&c| c as f64));
            let mc_se = (var / n as f64).sqrt();
            let empirical_lt = counts.iter().map(|&c| (-(c as f64)).exp()).sum::<f64>() / n as f64;
            let limit_lt = (-(1.0 - (-1.0f64).exp()) * limits[k]).exp();
            let m_eps = means[k][0];
            let path_err = means[k].iter().map(|m| (m - limits[k]).abs()).sum::<f64>() / paths as f64;
            rows.push(SweepRow {
                epsilon: eps,
                t,
                m_eps,
                m_bar: limits[k],
                path_err,
                mc_mean,
                mc_se,
                laplace_gap: (empirical_lt - limit_lt).abs(),
                pass: (mc_mean - m_eps).abs() <= SIGMA_BAND * (m_eps / n as f64).sqrt(),
            });
        }
        per_path.push(means);
    }
    let monotone = (0..probes.len())
        .map(|k| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.t == probes[k]).map(|r| r.path_err).collect();
            errs.windows(2).all(|w| w[1] < w[0])
        })
        .collect();
    Ok(SweepTable {
        rows,
        per_path,
        monotone,
    })
}

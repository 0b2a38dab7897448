//! Subcommand orchestration and artifact export.
//!
//! Every CSV starts with a `# config_hash=<sha256> seed=<seed>` line; JSON
//! artifacts carry the same two values as fields. Files are written to a
//! `.partial` name first and renamed once complete, so an interrupted or
//! failed run never leaves a file that looks finished.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, FieldError, Result};
use crate::harness::{
    decomposition_identity, epsilon_sweep, functional_checks, independence_check, laplace_check, poisson_gof,
    run_replications, SamplingMode, SweepTable, TestReport,
};
use crate::mean_measure::{accumulated_mean, m_bar, m_epsilon, region_mean};
use crate::queue::Region;
use crate::service::{linear_grid, log_grid, validate_hypothesis_f, ServiceModel, ValidationReport};

/// Relative error bound on the path-averaged homogenized mean at the
/// smallest `ε` of the sweep.
pub const HOMOGENIZATION_RTOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    MeanMeasure,
    Sweep,
    Verify,
    ValidateService,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Whether every check of the subcommand passed. Always true for the
    /// subcommands that only export data.
    pub pass: bool,
    pub artifacts: Vec<PathBuf>,
}

fn header(cfg: &ExperimentConfig) -> String {
    format!("# config_hash={} seed={}\n", cfg.hash(), cfg.seed)
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let partial = dir.join(format!("{name}.partial"));
    fs::write(&partial, contents)?;
    fs::rename(&partial, &target)?;
    Ok(target)
}

pub fn run(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    match command {
        Command::Simulate => simulate(cfg, out),
        Command::MeanMeasure => mean_measure(cfg, out),
        Command::Sweep => sweep(cfg, out),
        Command::Verify => verify(cfg, out),
        Command::ValidateService => validate_service(cfg, out),
    }
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let scenario = cfg.scenario()?;
    let samples = run_replications(&scenario, cfg.mode, cfg.replications, cfg.seed)?;
    let mut csv = header(cfg);
    csv.push_str("rep,t,N,A,X\n");
    for rep in &samples.replications {
        for (k, t) in samples.probes.iter().enumerate() {
            writeln!(csv, "{},{},{},{},{}", rep.index, t, rep.active[k], rep.accumulated[k], rep.workload[k]).unwrap();
        }
    }
    Ok(RunOutcome {
        pass: true,
        artifacts: vec![write_artifact(out, "simulate.csv", &csv)?],
    })
}

fn mean_measure(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let scenario = cfg.scenario()?;
    let spec = cfg.quadrature();
    let eps_min = cfg.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let path = scenario.quenched_path(cfg.seed, 0, eps_min)?;
    let limits = cfg
        .probes
        .iter()
        .map(|&t| m_bar(&scenario.intensity, &scenario.service, &scenario.env, t, &spec))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = header(cfg);
    csv.push_str("epsilon,t,m_epsilon,m_bar,abs_err,rel_err,panels_used\n");
    for &eps in &cfg.epsilons {
        let im = cfg.intensity(eps)?;
        for (&t, &mb) in cfg.probes.iter().zip(&limits) {
            let q = m_epsilon(&im, &scenario.service, &path, t, &spec)?;
            let abs_err = (q.value - mb).abs();
            let rel_err = if mb != 0.0 { abs_err / mb.abs() } else { f64::NAN };
            writeln!(csv, "{eps},{t},{},{mb},{abs_err},{rel_err},{}", q.value, q.panels).unwrap();
        }
    }
    Ok(RunOutcome {
        pass: true,
        artifacts: vec![write_artifact(out, "mean_measure.csv", &csv)?],
    })
}

fn sweep_csv(cfg: &ExperimentConfig, table: &SweepTable) -> String {
    let mut csv = header(cfg);
    csv.push_str("epsilon,t,m_eps,m_bar,path_err,mc_mean,mc_se,laplace_gap,pass\n");
    for r in &table.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.epsilon, r.t, r.m_eps, r.m_bar, r.path_err, r.mc_mean, r.mc_se, r.laplace_gap, r.pass
        )
        .unwrap();
    }
    csv
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepTable> {
    epsilon_sweep(&cfg.scenario()?, &cfg.epsilons, &cfg.probes, cfg.replications, cfg.paths, cfg.seed)
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let table = run_sweep(cfg)?;
    let pass = table.rows.iter().all(|r| r.pass) && table.monotone.iter().all(|&m| m);
    Ok(RunOutcome {
        pass,
        artifacts: vec![write_artifact(out, "sweep.csv", &sweep_csv(cfg, &table))?],
    })
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    config_hash: String,
    seed: u64,
    pass: bool,
    checks: &'a [TestReport],
}

/// Quenched Poisson law of `N(t₁)` at `ε`, against `m^ε(t₁)` on the same path.
fn poisson_at(cfg: &ExperimentConfig, eps: f64) -> Result<TestReport> {
    let scenario = cfg.scenario()?.with_epsilon(eps)?;
    let spec = cfg.quadrature();
    let path = scenario.quenched_path(cfg.seed, 0, eps)?;
    let t = cfg.probes[0];
    let samples = crate::harness::run_replications_on(&scenario, &path, 0, cfg.replications, cfg.seed)?;
    let m = m_epsilon(&scenario.intensity, &scenario.service, &path, t, &spec)?.value;
    poisson_gof(&format!("N({t}) at eps={eps}"), &samples.active_at(0), m)
}

/// Checks of the quenched law at the config's `intensity.epsilon`: joint
/// Laplace transform, pathwise decomposition, region independence and the
/// functional corollaries.
fn joint_checks(cfg: &ExperimentConfig) -> Result<Vec<TestReport>> {
    let scenario = cfg.scenario()?;
    let spec = cfg.quadrature();
    let path = scenario.quenched_path(cfg.seed, 0, cfg.epsilon)?;
    let samples = crate::harness::run_replications_on(&scenario, &path, 0, cfg.replications, cfg.seed)?;
    let (im, sm) = (&scenario.intensity, &scenario.service);
    let mut checks = Vec::new();
    if cfg.probes.len() >= 2 {
        let (t1, t2) = (cfg.probes[0], cfg.probes[1]);
        let regions = [Region::a1(t1, t2), Region::a2(t1, t2), Region::a3(t1, t2)];
        let means = regions
            .iter()
            .map(|r| Ok(region_mean(im, sm, &path, r, &spec)?.value))
            .collect::<Result<Vec<_>>>()?;
        let means = [means[0], means[1], means[2]];
        checks.push(laplace_check(
            &format!("(N({t1}), N({t2}))"),
            &samples.active_at(0),
            &samples.active_at(1),
            cfg.xi,
            means,
        )?);
        checks.push(TestReport::within(
            "pathwise decomposition N(t1) = M(A1) + M(A2), N(t2) = M(A2) + M(A3) (fraction)",
            decomposition_identity(&samples),
            1.0,
            0.0,
        ));
        let (r1, r2, r3) = (samples.region(0), samples.region(1), samples.region(2));
        checks.push(independence_check(&format!("({t1}, {t2})"), [&r1, &r2, &r3], means)?);
    }
    let t = cfg.probes[0];
    let oracle = accumulated_mean(im, sm, &path, t, &spec)?.value;
    checks.push(TestReport::group(
        "functional corollaries",
        functional_checks(&samples, cfg.drain_rate, t, oracle)?,
    ));
    Ok(checks)
}

/// Homogenization of the mean at the first probe: path-averaged error
/// strictly decreasing in `ε`, and within [`HOMOGENIZATION_RTOL`] of `m̄`
/// at the smallest `ε`.
pub fn homogenization_checks(table: &SweepTable, t: f64) -> Vec<TestReport> {
    let rows: Vec<_> = table.rows.iter().filter(|r| r.t == t).collect();
    let decreasing = rows.windows(2).filter(|w| w[1].path_err < w[0].path_err).count();
    let last = rows.last().expect("sweep has rows");
    let rel = last.path_err / last.m_bar.abs();
    vec![
        TestReport::new(
            format!("path-averaged |m_eps({t}) - m_bar({t})| strictly decreasing (steps)"),
            decreasing as f64,
            (rows.len() - 1) as f64,
            0.0,
            decreasing == rows.len() - 1,
        ),
        TestReport::new(
            format!("path-averaged relative error at eps={} vs m_bar({t})", last.epsilon),
            rel,
            0.0,
            HOMOGENIZATION_RTOL,
            rel <= HOMOGENIZATION_RTOL,
        ),
    ]
}

fn verify(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    if cfg.mode != SamplingMode::Quenched {
        return Err(Error::Config(vec![FieldError::new("experiment.mode", "verify checks the quenched law")]));
    }
    let mut eps_checked = vec![cfg.epsilon];
    for &e in [cfg.epsilons.first(), cfg.epsilons.last()].into_iter().flatten() {
        if !eps_checked.contains(&e) {
            eps_checked.push(e);
        }
    }
    let mut poisson = Vec::new();
    for eps in eps_checked {
        poisson.push(poisson_at(cfg, eps)?);
    }
    let mut checks = vec![TestReport::group("quenched poisson law", poisson)];
    checks.extend(joint_checks(cfg)?);

    let table = run_sweep(cfg)?;
    checks.push(TestReport::group("homogenization of the mean", homogenization_checks(&table, cfg.probes[0])));

    let pass = checks.iter().all(|c| c.pass);
    let report = Report {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        pass,
        checks: &checks,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))? + "\n";
    let sweep_path = write_artifact(out, "sweep.csv", &sweep_csv(cfg, &table))?;
    let report_path = write_artifact(out, "report.json", &json)?;
    Ok(RunOutcome {
        pass,
        artifacts: vec![report_path, sweep_path],
    })
}

#[derive(Debug, Serialize)]
struct ValidationArtifact<'a> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: &'a ValidationReport,
}

/// Grid used by `validate-service`: `s ∈ [0, 10]`, `r` log-spaced on
/// `[0.01, 100]`.
pub fn validation_grids() -> (Vec<f64>, Vec<f64>) {
    (linear_grid(0.0, 10.0, 201), log_grid(0.01, 100.0, 401))
}

fn validate_service(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let sm = cfg.service_model()?;
    let alpha = match (cfg.check_alpha, &sm) {
        (Some(a), _) => a,
        (None, ServiceModel::OscillatingPareto { alpha, .. }) => *alpha,
        (None, _) => {
            return Err(Error::Config(vec![FieldError::new("service.check.alpha", "required for this service kind")]));
        }
    };
    let c = cfg
        .check_c
        .ok_or_else(|| Error::Config(vec![FieldError::new("service.check.c", "missing required key")]))?;
    let (s_grid, r_grid) = validation_grids();
    let report = validate_hypothesis_f(&sm, alpha, c, &s_grid, &r_grid)?;
    let artifact = ValidationArtifact {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        report: &report,
    };
    let json = serde_json::to_string_pretty(&artifact).map_err(|e| Error::Io(e.to_string()))? + "\n";
    Ok(RunOutcome {
        pass: report.pass,
        artifacts: vec![write_artifact(out, "validation.json", &json)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
            env.kind = "ou"
            env.a = 1.0
            env.sigma = 1.0
            intensity.psi = "tanh"
            service.kind = "exponential"
            service.rate = 1.0
            experiment.horizon = 2.0
            experiment.probes = [1.0, 2.0]
            experiment.epsilons = [0.5, 0.1]
            experiment.replications = 50
            experiment.seed = 3
            {extra}
            "#
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn simulate_with_zero_rate_writes_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config("intensity.lambda = 0.0");
        run(Command::Simulate, &cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert_eq!(lines.next(), Some("rep,t,N,A,X"));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 100);
        for row in rows {
            let cols: Vec<_> = row.split(',').collect();
            assert_eq!(&cols[2..], &["0", "0", "0"]);
        }
    }

    #[test]
    fn mean_measure_is_byte_identical() {
        let cfg = small_config("");
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run(Command::MeanMeasure, &cfg, a.path()).unwrap();
        run(Command::MeanMeasure, &cfg, b.path()).unwrap();
        let read = |d: &tempfile::TempDir| fs::read(d.path().join("mean_measure.csv")).unwrap();
        assert_eq!(read(&a), read(&b));
        assert!(!a.path().join("mean_measure.csv.partial").exists());
    }

    #[test]
    fn validate_service_requires_declared_constant() {
        let dir = tempfile::tempdir().unwrap();
        let err = run(Command::ValidateService, &small_config(""), dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(ref f) if f[0].key == "service.check.alpha"));
        let cfg = small_config("service.check.alpha = 1.0\nservice.check.c = 1.0");
        let outcome = run(Command::ValidateService, &cfg, dir.path()).unwrap();
        assert!(outcome.pass);
    }

    #[test]
    fn simulate_reports_thinning_inconsistency() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config("intensity.K = 1.0");
        assert!(matches!(
            run(Command::Simulate, &cfg, dir.path()),
            Err(Error::ModelInconsistency { .. })
        ));
        assert!(!dir.path().join("simulate.csv").exists());
    }
}

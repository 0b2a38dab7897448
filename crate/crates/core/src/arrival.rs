//! Quenched arrival streams: a nonhomogeneous Poisson process with intensity
//! `λ(s) ψ(Z_{s/ε})` (or `Ψ(s, Z_{s/ε})`) sampled by thinning against one
//! fixed environment path, then marked with service durations.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::environment::EnvironmentPath;
use crate::error::{Error, Result};
use crate::functions::{EnvFunction, JointIntensity, TimeProfile};
use crate::rng::SimRng;
use crate::service::ServiceModel;

/// Relative slack allowed before an intensity value counts as exceeding the
/// declared bound (absorbs rounding in e.g. `1 + ½ sin`).
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum IntensityForm {
    Separable { lambda: TimeProfile, psi: EnvFunction },
    General { joint: JointIntensity },
}

#[derive(Debug, Clone)]
pub struct IntensityModel {
    form: IntensityForm,
    epsilon: f64,
    bound: f64,
}

impl IntensityModel {
    /// `λ(s) ψ(Z_{s/ε})`, thinned against `K_λ K_ψ`.
    pub fn separable(lambda: TimeProfile, psi: EnvFunction, epsilon: f64) -> Result<Self> {
        let bound = lambda.bound() * psi.bound();
        Self::build(IntensityForm::Separable { lambda, psi }, epsilon, bound)
    }

    /// `Ψ(s, Z_{s/ε})`, thinned against `K_Ψ`.
    pub fn general(joint: JointIntensity, epsilon: f64) -> Result<Self> {
        let bound = joint.bound();
        Self::build(IntensityForm::General { joint }, epsilon, bound)
    }

    fn build(form: IntensityForm, epsilon: f64, bound: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidModel(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "intensity bound must be finite and >= 0, got {bound}"
            )));
        }
        Ok(Self {
            form,
            epsilon,
            bound,
        })
    }

    /// Overrides the thinning bound with a user-declared supremum.
    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "intensity bound must be finite and >= 0, got {bound}"
            )));
        }
        self.bound = bound;
        Ok(self)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::build(self.form.clone(), epsilon, self.bound)
    }

    pub fn form(&self) -> &IntensityForm {
        &self.form
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Intensity at slow time `s` given the environment state `z = Z_{s/ε}`.
    #[inline]
    pub fn rate(&self, s: f64, z: &[f64]) -> f64 {
        match &self.form {
            IntensityForm::Separable { lambda, psi } => lambda.eval(s) * psi.eval(z),
            IntensityForm::General { joint } => joint.eval(s, z),
        }
    }

    /// Slow-time horizon covered by `path` at this `ε`.
    pub fn covered_horizon(&self, path: &EnvironmentPath) -> f64 {
        path.horizon() * self.epsilon
    }

    /// Spot-checks the declared bound over `[0, horizon]` on `n` points of
    /// the path. Returns the first violation found.
    pub fn check_bound(&self, path: &EnvironmentPath, horizon: f64, n: usize) -> Result<()> {
        let n = n.max(2);
        for i in 0..n {
            let s = horizon * i as f64 / (n - 1) as f64;
            let observed = intensity_at(self, path, s)?;
            if observed > self.bound * (1.0 + BOUND_SLACK) {
                return Err(Error::ModelInconsistency {
                    at: s,
                    observed,
                    bound: self.bound,
                });
            }
        }
        Ok(())
    }
}

/// Density of `μ^ε` at `s`.
pub fn intensity_at(im: &IntensityModel, path: &EnvironmentPath, s: f64) -> Result<f64> {
    let u = s / im.epsilon;
    let z = path.value_at(u).map_err(|_| Error::OutOfRange {
        what: "arrival time",
        value: s,
        limit: im.covered_horizon(path),
    })?;
    Ok(im.rate(s, z))
}

/// Arrival epochs on `[0, horizon]` by thinning a homogeneous Poisson
/// stream of rate `im.bound()`.
pub fn sample_arrivals(
    im: &IntensityModel,
    path: &EnvironmentPath,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("arrival horizon must be finite and >= 0, got {horizon}")));
    }
    let covered = im.covered_horizon(path);
    if horizon / im.epsilon > path.horizon() {
        return Err(Error::OutOfRange {
            what: "arrival horizon",
            value: horizon,
            limit: covered,
        });
    }
    let bound = im.bound;
    let mut arrivals = Vec::new();
    if bound == 0.0 {
        return Ok(arrivals);
    }
    let gaps = Exp::new(bound).expect("positive bound");
    let mut s = 0.0;
    loop {
        s += gaps.sample(rng);
        if s > horizon {
            break;
        }
        let rate = intensity_at(im, path, s)?;
        if rate > bound * (1.0 + BOUND_SLACK) {
            return Err(Error::ModelInconsistency {
                at: s,
                observed: rate,
                bound,
            });
        }
        if rng.random::<f64>() * bound < rate {
            arrivals.push(s);
        }
    }
    Ok(arrivals)
}

/// One job: arrival epoch `Γ` and service duration `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub arrival: f64,
    pub service: f64,
}

impl Job {
    pub fn departure(&self) -> f64 {
        self.arrival + self.service
    }
}

/// The marked point process `Σ δ_{(Γ_k, L_k)}` of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasure {
    jobs: Vec<Job>,
    horizon: f64,
}

impl PointMeasure {
    /// Builds a measure from jobs, which must be sorted by arrival and have
    /// positive durations.
    pub fn new(jobs: Vec<Job>, horizon: f64) -> Result<Self> {
        if jobs.windows(2).any(|w| w[1].arrival < w[0].arrival) {
            return Err(Error::Domain("jobs must be sorted by arrival epoch".into()));
        }
        if jobs.iter().any(|j| !(j.service > 0.0) || !(j.arrival >= 0.0) || j.arrival > horizon) {
            return Err(Error::Domain(
                "jobs need arrival in [0, horizon] and positive service".into(),
            ));
        }
        Ok(Self { jobs, horizon })
    }

    pub fn from_pairs(pairs: &[(f64, f64)], horizon: f64) -> Result<Self> {
        let jobs = pairs
            .iter()
            .map(|&(arrival, service)| Job { arrival, service })
            .collect();
        Self::new(jobs, horizon)
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }
}

/// Attaches an independent mark `L_k ~ ν(Γ_k, ·)` to each arrival.
pub fn build_point_measure(
    arrivals: &[f64],
    sm: &ServiceModel,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<PointMeasure> {
    let jobs = arrivals
        .iter()
        .map(|&arrival| Job {
            arrival,
            service: sm.sample(arrival, rng),
        })
        .collect();
    PointMeasure::new(jobs, horizon)
}

/// Thinning followed by marking, on a single stream.
pub fn simulate_point_measure(
    im: &IntensityModel,
    sm: &ServiceModel,
    path: &EnvironmentPath,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<PointMeasure> {
    let arrivals = sample_arrivals(im, path, horizon, rng)?;
    build_point_measure(&arrivals, sm, horizon, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{make_ou_env, sample_path};
    use crate::rng::{environment_stream, replication_stream};
    use std::f64::consts::FRAC_PI_2;

    fn flat_path(horizon: f64) -> EnvironmentPath {
        EnvironmentPath::new(vec![0.0, horizon], vec![0.0, 0.0], 1).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let path = flat_path(1e6);
        let im = IntensityModel::separable(TimeProfile::constant(2.0), EnvFunction::constant(1.0), 0.1).unwrap();
        for s in [0.0, 0.3, 100.0] {
            assert_eq!(intensity_at(&im, &path, s).unwrap(), 2.0);
        }
        let im = IntensityModel::separable(TimeProfile::constant(1.0), EnvFunction::tanh1(), 0.1).unwrap();
        assert_eq!(intensity_at(&im, &path, 5.0).unwrap(), 1.0);
        let im = IntensityModel::separable(TimeProfile::sin1(), EnvFunction::tanh1(), 0.1).unwrap();
        assert!((intensity_at(&im, &path, FRAC_PI_2).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(
            intensity_at(&im, &flat_path(10.0), 2.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(IntensityModel::separable(TimeProfile::constant(1.0), EnvFunction::constant(1.0), 0.0).is_err());
        assert!(IntensityModel::general(JointIntensity::tanh_shift(), -1.0).is_err());
    }

    #[test]
    fn unit_rate_count_is_poisson_sized() {
        let im = IntensityModel::separable(TimeProfile::constant(1.0), EnvFunction::constant(1.0), 1.0).unwrap();
        let arrivals = sample_arrivals(&im, &flat_path(1000.0), 1000.0, &mut replication_stream(4, 0)).unwrap();
        let n = arrivals.len() as f64;
        assert!((n - 1000.0).abs() <= 4.0 * 1000f64.sqrt(), "{n}");
        assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
        assert!(arrivals.iter().all(|&s| (0.0..=1000.0).contains(&s)));
    }

    #[test]
    fn zero_rate_gives_no_arrivals() {
        let im = IntensityModel::separable(TimeProfile::constant(0.0), EnvFunction::tanh1(), 0.5).unwrap();
        let arrivals = sample_arrivals(&im, &flat_path(100.0), 50.0, &mut replication_stream(4, 0)).unwrap();
        assert!(arrivals.is_empty());
    }

    #[test]
    fn understated_bound_is_an_error() {
        let im = IntensityModel::separable(TimeProfile::constant(2.0), EnvFunction::constant(1.0), 1.0)
            .unwrap()
            .with_bound(1.0)
            .unwrap();
        let err = sample_arrivals(&im, &flat_path(100.0), 100.0, &mut replication_stream(4, 0)).unwrap_err();
        assert!(matches!(err, Error::ModelInconsistency { observed, .. } if observed == 2.0));
        assert!(im.check_bound(&flat_path(100.0), 100.0, 10).is_err());
    }

    #[test]
    fn short_path_is_rejected() {
        let im = IntensityModel::separable(TimeProfile::constant(1.0), EnvFunction::constant(1.0), 0.01).unwrap();
        let err = sample_arrivals(&im, &flat_path(50.0), 1.0, &mut replication_stream(4, 0)).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
    }

    #[test]
    fn point_measure_marks() {
        let mut rng = replication_stream(8, 0);
        let empty = build_point_measure(&[], &ServiceModel::exponential(1.0).unwrap(), 1.0, &mut rng).unwrap();
        assert!(empty.is_empty());

        let constant = ServiceModel::constant(2.5).unwrap();
        let pm = build_point_measure(&[0.1, 0.4, 0.9], &constant, 1.0, &mut rng).unwrap();
        assert_eq!(pm.len(), 3);
        assert!(pm.jobs().iter().all(|j| j.service == 2.5));

        let n = 100_000;
        let zeros = vec![0.0; n];
        let pm = build_point_measure(&zeros, &ServiceModel::exponential(1.0).unwrap(), 0.0, &mut rng).unwrap();
        let mean = pm.jobs().iter().map(|j| j.service).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() <= 4.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn point_measure_validation() {
        assert!(PointMeasure::from_pairs(&[(2.0, 1.0), (1.0, 1.0)], 3.0).is_err());
        assert!(PointMeasure::from_pairs(&[(1.0, 0.0)], 3.0).is_err());
        assert!(PointMeasure::from_pairs(&[(4.0, 1.0)], 3.0).is_err());
    }

    #[test]
    fn same_seed_same_measure() {
        let env = make_ou_env(&[1.0], &[2f64.sqrt()], &[0.0]).unwrap();
        let path = sample_path(&env, 300.0, 0.05, &mut environment_stream(1, 0)).unwrap();
        let im = IntensityModel::separable(TimeProfile::sin1(), EnvFunction::tanh1(), 0.01).unwrap();
        let sm = ServiceModel::exponential(1.0).unwrap();
        let a = simulate_point_measure(&im, &sm, &path, 3.0, &mut replication_stream(2, 7)).unwrap();
        let b = simulate_point_measure(&im, &sm, &path, 3.0, &mut replication_stream(2, 7)).unwrap();
        let c = simulate_point_measure(&im, &sm, &path, 3.0, &mut replication_stream(2, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

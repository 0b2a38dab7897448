//! Experiment configuration.
//!
//! The format is line-oriented `key = value` with dotted section prefixes,
//! read with a TOML parser, so `[env]` headers and comments also work.
//! Every key is listed in [`KEYS`]; anything else is rejected.
//!
//! ```text
//! env.kind = "ou"            # ou | dtmc | ctmc
//! env.a = 1.0                # OU mean reversion, scalar or per coordinate
//! env.sigma = 1.4142135623730951
//! env.z0 = 0.0
//! env.step_u = 0.05          # environment grid step in fast time
//! intensity.lambda = 1.0     # number or "sin1"
//! intensity.psi = "tanh"     # number, "one" or "tanh"
//! intensity.epsilon = 0.1
//! service.kind = "exponential"
//! service.rate = 1.0
//! experiment.horizon = 3.0
//! experiment.probes = [1.0, 2.0]
//! experiment.epsilons = [0.5, 0.1, 0.02, 0.004, 0.001]
//! experiment.replications = 20000
//! experiment.paths = 20
//! experiment.seed = 42
//! ```

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use toml::Value;

use crate::arrival::IntensityModel;
use crate::environment::{make_ctmc_env, make_dtmc_env, make_ou_env, EnvironmentModel};
use crate::error::{Error, FieldError, Result};
use crate::functions::{EnvFunction, JointIntensity, TimeProfile};
use crate::harness::{SamplingMode, Scenario};
use crate::mean_measure::QuadratureSpec;
use crate::service::ServiceModel;

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "env.kind",
    "env.a",
    "env.sigma",
    "env.z0",
    "env.P",
    "env.Q",
    "env.states",
    "env.x0",
    "env.step_u",
    "intensity.form",
    "intensity.lambda",
    "intensity.psi",
    "intensity.Psi",
    "intensity.K",
    "intensity.epsilon",
    "service.kind",
    "service.alpha",
    "service.beta",
    "service.k",
    "service.rate",
    "service.value",
    "service.check.alpha",
    "service.check.c",
    "experiment.horizon",
    "experiment.probes",
    "experiment.epsilons",
    "experiment.replications",
    "experiment.paths",
    "experiment.seed",
    "experiment.rtol",
    "experiment.out_dir",
    "experiment.drain_rate",
    "experiment.mode",
    "experiment.xi",
];

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Ou { a: Vec<f64>, sigma: Vec<f64>, z0: Vec<f64> },
    Dtmc { p: Vec<Vec<f64>>, states: Vec<Vec<f64>>, x0: usize },
    Ctmc { q: Vec<Vec<f64>>, states: Vec<Vec<f64>>, x0: usize },
}

/// A deterministic time profile: a constant or `1 + ½ sin s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileSpec {
    Constant(f64),
    Sin1,
}

impl ProfileSpec {
    pub fn build(self) -> TimeProfile {
        match self {
            Self::Constant(c) => TimeProfile::constant(c),
            Self::Sin1 => TimeProfile::sin1(),
        }
    }

    fn to_value(self) -> Value {
        match self {
            Self::Constant(c) => Value::Float(c),
            Self::Sin1 => Value::String("sin1".into()),
        }
    }
}

/// An environment modulation: a constant or `1 + ½ tanh z₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiSpec {
    Constant(f64),
    Tanh,
}

impl PsiSpec {
    pub fn build(self) -> EnvFunction {
        match self {
            Self::Constant(c) => EnvFunction::constant(c),
            Self::Tanh => EnvFunction::tanh1(),
        }
    }

    fn to_value(self) -> Value {
        match self {
            Self::Constant(c) => Value::Float(c),
            Self::Tanh => Value::String("tanh".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointSpec {
    /// `λ(s) ψ(z)` built from `intensity.lambda` and `intensity.psi`.
    Product,
    /// `1 + ½ tanh(z₁ + sin s)`.
    TanhShift,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceSpec {
    Pareto { alpha: f64, beta: f64, k: f64 },
    Exponential { rate: ProfileSpec },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub step_u: f64,
    pub lambda: ProfileSpec,
    pub psi: PsiSpec,
    /// `Some` selects the general (non-separable) intensity form.
    pub joint: Option<JointSpec>,
    pub bound: Option<f64>,
    pub epsilon: f64,
    pub service: ServiceSpec,
    pub check_alpha: Option<f64>,
    pub check_c: Option<f64>,
    pub horizon: f64,
    pub probes: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub replications: usize,
    pub paths: usize,
    pub seed: u64,
    pub rtol: f64,
    pub out_dir: String,
    pub drain_rate: f64,
    pub mode: SamplingMode,
    pub xi: (f64, f64),
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Fields {
    values: BTreeMap<String, Value>,
    errors: Vec<FieldError>,
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_f64_list(v: &Value) -> Option<Vec<f64>> {
    match v {
        Value::Array(items) => items.iter().map(as_f64).collect(),
        other => as_f64(other).map(|x| vec![x]),
    }
}

fn as_matrix(v: &Value) -> Option<Vec<Vec<f64>>> {
    match v {
        Value::Array(rows) => rows.iter().map(as_f64_list).collect(),
        _ => None,
    }
}

impl Fields {
    fn error(&mut self, key: &str, message: impl Into<String>) {
        self.errors.push(FieldError::new(key, message));
    }

    fn get<T>(&mut self, key: &str, what: &str, convert: impl Fn(&Value) -> Option<T>) -> Option<T> {
        let v = self.values.remove(key)?;
        let out = convert(&v);
        if out.is_none() {
            self.error(key, format!("expected {what}, found {v}"));
        }
        out
    }

    fn require<T>(&mut self, key: &str, what: &str, convert: impl Fn(&Value) -> Option<T>) -> Option<T> {
        let present = self.values.contains_key(key);
        let out = self.get(key, what, convert);
        if !present {
            self.error(key, "missing required key");
        }
        out
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        self.get(key, "a number", as_f64)
    }

    fn required_number(&mut self, key: &str) -> Option<f64> {
        self.require(key, "a number", as_f64)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.get(key, "a string", |v| v.as_str().map(str::to_owned))
    }

    fn count(&mut self, key: &str) -> Option<u64> {
        self.require(key, "a nonnegative integer", |v| v.as_integer().and_then(|i| u64::try_from(i).ok()))
    }

    fn positive(&mut self, key: &str, x: Option<f64>) -> Option<f64> {
        match x {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                self.error(key, format!("must be positive and finite, got {v}"));
                None
            }
            other => other,
        }
    }
}

/// Parses and validates a config, reporting every field problem at once.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![FieldError::new("<syntax>", e.message().to_string())]))?;
    let mut values = BTreeMap::new();
    flatten("", &table, &mut values);
    let mut f = Fields {
        values,
        errors: Vec::new(),
    };

    let kind = f.require("env.kind", "a string", |v| v.as_str().map(str::to_owned));
    let env = match kind.as_deref() {
        Some("ou") => {
            let a = f.require("env.a", "a number or list of numbers", as_f64_list);
            let sigma = f.require("env.sigma", "a number or list of numbers", as_f64_list);
            let z0 = f.get("env.z0", "a number or list of numbers", as_f64_list);
            a.zip(sigma).map(|(a, sigma)| {
                let z0 = z0.unwrap_or_else(|| vec![0.0; a.len()]);
                EnvSpec::Ou { a, sigma, z0 }
            })
        }
        Some(k @ ("dtmc" | "ctmc")) => {
            let mkey = if k == "dtmc" { "env.P" } else { "env.Q" };
            let m = f.require(mkey, "a matrix (list of rows)", as_matrix);
            let states = f.require("env.states", "a list of states", |v| match v {
                Value::Array(items) => items.iter().map(as_f64_list).collect(),
                _ => None,
            });
            let x0 = f.count("env.x0").map(|x| x as usize);
            match (m, states, x0) {
                (Some(m), Some(states), Some(x0)) if k == "dtmc" => Some(EnvSpec::Dtmc { p: m, states, x0 }),
                (Some(m), Some(states), Some(x0)) => Some(EnvSpec::Ctmc { q: m, states, x0 }),
                _ => None,
            }
        }
        Some(other) => {
            f.error("env.kind", format!("unknown environment kind {other:?}; expected ou, dtmc or ctmc"));
            None
        }
        None => None,
    };
    let step_u = f.number("env.step_u").unwrap_or(0.05);
    let step_u = f.positive("env.step_u", Some(step_u));

    let profile = |v: &Value| match v {
        Value::String(s) if s == "sin1" => Some(ProfileSpec::Sin1),
        Value::String(s) if s == "const" => Some(ProfileSpec::Constant(1.0)),
        other => as_f64(other).map(ProfileSpec::Constant),
    };
    let lambda = f.get("intensity.lambda", "a number, \"const\" or \"sin1\"", profile).unwrap_or(ProfileSpec::Constant(1.0));
    let psi = f
        .get("intensity.psi", "a number, \"one\" or \"tanh\"", |v| match v {
            Value::String(s) if s == "tanh" => Some(PsiSpec::Tanh),
            Value::String(s) if s == "one" => Some(PsiSpec::Constant(1.0)),
            other => as_f64(other).map(PsiSpec::Constant),
        })
        .unwrap_or(PsiSpec::Constant(1.0));
    let form = f.string("intensity.form").unwrap_or_else(|| "separable".into());
    let joint_name = f.string("intensity.Psi");
    let joint = match (form.as_str(), joint_name.as_deref()) {
        ("separable", None) => None,
        ("separable", Some(_)) => {
            f.error("intensity.Psi", "only valid with intensity.form = \"general\"");
            None
        }
        ("general", None | Some("product")) => Some(JointSpec::Product),
        ("general", Some("tanh_shift")) => Some(JointSpec::TanhShift),
        ("general", Some(other)) => {
            f.error("intensity.Psi", format!("unknown joint intensity {other:?}; expected product or tanh_shift"));
            None
        }
        (other, _) => {
            f.error("intensity.form", format!("unknown form {other:?}; expected separable or general"));
            None
        }
    };
    let bound = f.number("intensity.K");
    let bound = f.positive("intensity.K", bound);
    let epsilon = f.number("intensity.epsilon").unwrap_or(0.1);
    let epsilon = f.positive("intensity.epsilon", Some(epsilon));

    let service = match f.require("service.kind", "a string", |v| v.as_str().map(str::to_owned)).as_deref() {
        Some("pareto") => {
            let alpha = f.required_number("service.alpha");
            let beta = f.number("service.beta").unwrap_or(0.0);
            let k = f.number("service.k").unwrap_or(1.0);
            alpha.map(|alpha| ServiceSpec::Pareto { alpha, beta, k })
        }
        Some("exponential") => f
            .require("service.rate", "a number or \"sin1\"", profile)
            .map(|rate| ServiceSpec::Exponential { rate }),
        Some("constant") => f.required_number("service.value").map(|value| ServiceSpec::Constant { value }),
        Some(other) => {
            f.error("service.kind", format!("unknown service kind {other:?}; expected pareto, exponential or constant"));
            None
        }
        None => None,
    };
    let check_alpha = f.number("service.check.alpha");
    let check_alpha = f.positive("service.check.alpha", check_alpha);
    let check_c = f.number("service.check.c");
    let check_c = f.positive("service.check.c", check_c);

    let horizon = f.required_number("experiment.horizon");
    let horizon = f.positive("experiment.horizon", horizon);
    let probes = f.require("experiment.probes", "a list of numbers", as_f64_list);
    if let (Some(t), Some(p)) = (horizon, &probes) {
        if p.is_empty() {
            f.error("experiment.probes", "need at least one probe time");
        } else if let Some(bad) = p.iter().find(|&&x| !(x > 0.0 && x <= t)) {
            f.error("experiment.probes", format!("probe time {bad} lies outside (0, {t}]"));
        } else if p.windows(2).any(|w| w[1] <= w[0]) {
            f.error("experiment.probes", "probe times must be strictly increasing");
        }
    }
    let epsilons = f.get("experiment.epsilons", "a list of numbers", as_f64_list).unwrap_or_else(|| epsilon.into_iter().collect());
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        f.error("experiment.epsilons", "need a non-empty list of positive values");
    } else if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        f.error("experiment.epsilons", "values must be strictly decreasing");
    }
    let replications = f.count("experiment.replications");
    if replications == Some(0) {
        f.error("experiment.replications", "need at least one replication");
    }
    let paths = f.get("experiment.paths", "a positive integer", |v| v.as_integer().and_then(|i| u64::try_from(i).ok())).unwrap_or(1);
    if paths == 0 {
        f.error("experiment.paths", "need at least one path");
    }
    let seed = f.count("experiment.seed");
    let rtol = f.number("experiment.rtol").unwrap_or(1e-6);
    let rtol = f.positive("experiment.rtol", Some(rtol));
    let out_dir = f.string("experiment.out_dir").unwrap_or_else(|| "out".into());
    let drain_rate = f.number("experiment.drain_rate").unwrap_or(1.0);
    let drain_rate = f.positive("experiment.drain_rate", Some(drain_rate));
    let mode = match f.string("experiment.mode").as_deref() {
        None | Some("quenched") => Some(SamplingMode::Quenched),
        Some("annealed") => Some(SamplingMode::Annealed),
        Some(other) => {
            f.error("experiment.mode", format!("unknown mode {other:?}; expected quenched or annealed"));
            None
        }
    };
    let xi = f.get("experiment.xi", "a pair of numbers", as_f64_list).unwrap_or_else(|| vec![1.0, 1.0]);
    if xi.len() != 2 || xi.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        f.error("experiment.xi", "expected two nonnegative numbers");
    }

    let unknown: Vec<String> = f.values.keys().cloned().collect();
    for key in unknown {
        let message = if KEYS.contains(&key.as_str()) {
            "not used by the selected model"
        } else {
            "unknown key"
        };
        f.error(&key, message);
    }

    if !f.errors.is_empty() {
        return Err(Error::Config(f.errors));
    }
    let missing = || Error::Config(vec![FieldError::new("<config>", "incomplete")]);
    let cfg = ExperimentConfig {
        env: env.ok_or_else(missing)?,
        step_u: step_u.ok_or_else(missing)?,
        lambda,
        psi,
        joint,
        bound,
        epsilon: epsilon.ok_or_else(missing)?,
        service: service.ok_or_else(missing)?,
        check_alpha,
        check_c,
        horizon: horizon.ok_or_else(missing)?,
        probes: probes.ok_or_else(missing)?,
        epsilons,
        replications: replications.ok_or_else(missing)? as usize,
        paths: paths as usize,
        seed: seed.ok_or_else(missing)?,
        rtol: rtol.ok_or_else(missing)?,
        out_dir,
        drain_rate: drain_rate.ok_or_else(missing)?,
        mode: mode.ok_or_else(missing)?,
        xi: (xi[0], xi[1]),
    };
    cfg.validate_models()?;
    Ok(cfg)
}

fn float_list(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

fn matrix(rows: &[Vec<f64>]) -> Value {
    Value::Array(rows.iter().map(|r| float_list(r)).collect())
}

impl ExperimentConfig {
    /// Builds every model once so construction errors surface at parse time,
    /// attributed to their section.
    fn validate_models(&self) -> Result<()> {
        let mut errors = Vec::new();
        let tag = |key: &str, e: Error| FieldError::new(key, e.to_string());
        if let Err(e) = self.environment() {
            errors.push(tag("env", e));
        }
        if let Err(e) = self.service_model() {
            errors.push(tag("service", e));
        }
        if let Err(e) = self.intensity(self.epsilon) {
            errors.push(tag("intensity", e));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn environment(&self) -> Result<EnvironmentModel> {
        match &self.env {
            EnvSpec::Ou { a, sigma, z0 } => make_ou_env(a, sigma, z0),
            EnvSpec::Dtmc { p, states, x0 } => make_dtmc_env(p, states, *x0),
            EnvSpec::Ctmc { q, states, x0 } => make_ctmc_env(q, states, *x0),
        }
    }

    pub fn service_model(&self) -> Result<ServiceModel> {
        match self.service {
            ServiceSpec::Pareto { alpha, beta, k } => ServiceModel::oscillating_pareto(alpha, beta, k),
            ServiceSpec::Exponential { rate: ProfileSpec::Constant(r) } => ServiceModel::exponential(r),
            ServiceSpec::Exponential { rate } => Ok(ServiceModel::exponential_profile(rate.build())),
            ServiceSpec::Constant { value } => ServiceModel::constant(value),
        }
    }

    pub fn intensity(&self, epsilon: f64) -> Result<IntensityModel> {
        let model = match self.joint {
            None => IntensityModel::separable(self.lambda.build(), self.psi.build(), epsilon)?,
            Some(JointSpec::Product) => {
                IntensityModel::general(JointIntensity::product(self.lambda.build(), self.psi.build()), epsilon)?
            }
            Some(JointSpec::TanhShift) => IntensityModel::general(JointIntensity::tanh_shift(), epsilon)?,
        };
        match self.bound {
            Some(k) => model.with_bound(k),
            None => Ok(model),
        }
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::with_rtol(self.rtol)
    }

    /// Scenario at the config's own `intensity.epsilon`.
    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario {
            env: self.environment()?,
            intensity: self.intensity(self.epsilon)?,
            service: self.service_model()?,
            horizon: self.horizon,
            probes: self.probes.clone(),
            drain_rate: self.drain_rate,
            step_u: self.step_u,
            quadrature: self.quadrature(),
        })
    }

    /// Canonical `key = value` lines. Parsing them yields an equal config.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(&str, Value)> = Vec::new();
        match &self.env {
            EnvSpec::Ou { a, sigma, z0 } => {
                lines.push(("env.kind", Value::String("ou".into())));
                lines.push(("env.a", float_list(a)));
                lines.push(("env.sigma", float_list(sigma)));
                lines.push(("env.z0", float_list(z0)));
            }
            EnvSpec::Dtmc { p, states, x0 } => {
                lines.push(("env.kind", Value::String("dtmc".into())));
                lines.push(("env.P", matrix(p)));
                lines.push(("env.states", matrix(states)));
                lines.push(("env.x0", Value::Integer(*x0 as i64)));
            }
            EnvSpec::Ctmc { q, states, x0 } => {
                lines.push(("env.kind", Value::String("ctmc".into())));
                lines.push(("env.Q", matrix(q)));
                lines.push(("env.states", matrix(states)));
                lines.push(("env.x0", Value::Integer(*x0 as i64)));
            }
        }
        lines.push(("env.step_u", Value::Float(self.step_u)));
        match self.joint {
            None => lines.push(("intensity.form", Value::String("separable".into()))),
            Some(j) => {
                lines.push(("intensity.form", Value::String("general".into())));
                let name = match j {
                    JointSpec::Product => "product",
                    JointSpec::TanhShift => "tanh_shift",
                };
                lines.push(("intensity.Psi", Value::String(name.into())));
            }
        }
        lines.push(("intensity.lambda", self.lambda.to_value()));
        lines.push(("intensity.psi", self.psi.to_value()));
        if let Some(k) = self.bound {
            lines.push(("intensity.K", Value::Float(k)));
        }
        lines.push(("intensity.epsilon", Value::Float(self.epsilon)));
        match self.service {
            ServiceSpec::Pareto { alpha, beta, k } => {
                lines.push(("service.kind", Value::String("pareto".into())));
                lines.push(("service.alpha", Value::Float(alpha)));
                lines.push(("service.beta", Value::Float(beta)));
                lines.push(("service.k", Value::Float(k)));
            }
            ServiceSpec::Exponential { rate } => {
                lines.push(("service.kind", Value::String("exponential".into())));
                lines.push(("service.rate", rate.to_value()));
            }
            ServiceSpec::Constant { value } => {
                lines.push(("service.kind", Value::String("constant".into())));
                lines.push(("service.value", Value::Float(value)));
            }
        }
        if let Some(a) = self.check_alpha {
            lines.push(("service.check.alpha", Value::Float(a)));
        }
        if let Some(c) = self.check_c {
            lines.push(("service.check.c", Value::Float(c)));
        }
        lines.push(("experiment.horizon", Value::Float(self.horizon)));
        lines.push(("experiment.probes", float_list(&self.probes)));
        lines.push(("experiment.epsilons", float_list(&self.epsilons)));
        lines.push(("experiment.replications", Value::Integer(self.replications as i64)));
        lines.push(("experiment.paths", Value::Integer(self.paths as i64)));
        lines.push(("experiment.seed", Value::Integer(self.seed as i64)));
        lines.push(("experiment.rtol", Value::Float(self.rtol)));
        lines.push(("experiment.out_dir", Value::String(self.out_dir.clone())));
        lines.push(("experiment.drain_rate", Value::Float(self.drain_rate)));
        let mode = match self.mode {
            SamplingMode::Quenched => "quenched",
            SamplingMode::Annealed => "annealed",
        };
        lines.push(("experiment.mode", Value::String(mode.into())));
        lines.push(("experiment.xi", float_list(&[self.xi.0, self.xi.1])));
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

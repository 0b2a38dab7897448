//! Named, bounded real functions used to build intensities and service rates.
//!
//! Each wrapper carries a declared supremum. Thinning relies on it, so a
//! wrong bound is reported as a model inconsistency rather than clipped.

use std::fmt;
use std::sync::Arc;

type TimeFn = dyn Fn(f64) -> f64 + Send + Sync;
type StateFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type JointFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// A deterministic function of time, e.g. the slow arrival profile `λ(s)`.
#[derive(Clone)]
pub struct TimeProfile {
    name: String,
    bound: f64,
    f: Arc<TimeFn>,
}

impl TimeProfile {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            bound,
            f: Arc::new(f),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), c.abs(), move |_| c)
    }

    /// `1 + ½ sin(s)`.
    pub fn sin1() -> Self {
        Self::new("sin1", 1.5, |s| 1.0 + 0.5 * s.sin())
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Returns the constant value when this profile was built by [`TimeProfile::constant`].
    pub fn as_constant(&self) -> Option<f64> {
        self.name
            .strip_prefix("const(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|v| v.parse().ok())
    }
}

impl fmt::Debug for TimeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeProfile")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish()
    }
}

/// A function of the environment state, the `ψ` that modulates arrivals.
#[derive(Clone)]
pub struct EnvFunction {
    name: String,
    bound: f64,
    f: Arc<StateFn>,
}

impl EnvFunction {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            bound,
            f: Arc::new(f),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), c.abs(), move |_| c)
    }

    /// `1 + ½ tanh(z₁)`, acting on the first coordinate.
    pub fn tanh1() -> Self {
        Self::new("tanh", 1.5, |z| 1.0 + 0.5 * z[0].tanh())
    }

    /// The first coordinate itself. Only bounded on bounded state spaces,
    /// so the caller declares the bound.
    pub fn identity(bound: f64) -> Self {
        Self::new("identity", bound, |z| z[0])
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for EnvFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvFunction")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish()
    }
}

/// A non-separable intensity `Ψ(s, z)`.
#[derive(Clone)]
pub struct JointIntensity {
    name: String,
    bound: f64,
    f: Arc<JointFn>,
}

impl JointIntensity {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            bound,
            f: Arc::new(f),
        }
    }

    /// `Ψ(s, z) = λ(s) ψ(z)`, the separable case written in general form.
    pub fn product(lambda: TimeProfile, psi: EnvFunction) -> Self {
        let bound = lambda.bound() * psi.bound();
        let name = format!("{}*{}", lambda.name(), psi.name());
        Self::new(name, bound, move |s, z| lambda.eval(s) * psi.eval(z))
    }

    /// `Ψ(s, z) = 1 + ½ tanh(z₁ + sin s)`, a genuinely non-separable example.
    pub fn tanh_shift() -> Self {
        Self::new("tanh_shift", 1.5, |s, z| 1.0 + 0.5 * (z[0] + s.sin()).tanh())
    }

    #[inline]
    pub fn eval(&self, s: f64, z: &[f64]) -> f64 {
        (self.f)(s, z)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for JointIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JointIntensity")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_evaluate() {
        assert_eq!(TimeProfile::constant(2.0).eval(17.0), 2.0);
        assert_eq!(TimeProfile::constant(2.5).as_constant(), Some(2.5));
        assert_eq!(TimeProfile::sin1().as_constant(), None);
        assert!((TimeProfile::sin1().eval(std::f64::consts::FRAC_PI_2) - 1.5).abs() < 1e-15);
        assert_eq!(EnvFunction::tanh1().eval(&[0.0]), 1.0);
        let joint = JointIntensity::product(TimeProfile::constant(2.0), EnvFunction::tanh1());
        assert_eq!(joint.eval(3.0, &[0.0]), 2.0);
        assert_eq!(joint.bound(), 3.0);
    }
}

//! Deterministic quadrature for the quenched mean `m^ε(t)`, the region means
//! `m_i^ε`, the offered-load profile `σ(t)` and the homogenized limit `m̄(t)`.
//!
//! All integrals use a composite midpoint rule whose panels sit on global
//! multiples of the step. When the environment path is uniform the step is
//! chosen to divide `ε × (path step)`, so every panel lies inside a single
//! environment cell and the hold-left discontinuities never fall inside a
//! panel. The step is halved until two successive values agree to `rtol`.

use crate::arrival::IntensityModel;
use crate::environment::{invariant_expectation, psi_bar, EnvironmentModel, EnvironmentPath, InvariantQuadrature};
use crate::error::{Error, Result};
use crate::functions::TimeProfile;
use crate::queue::Region;
use crate::service::ServiceModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Base step before refinement.
    pub h: f64,
    /// Relative tolerance between successive halvings.
    pub rtol: f64,
    /// Give up once a single pass needs more panels than this.
    pub max_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            h: 0.01,
            rtol: 1e-6,
            max_panels: 1 << 24,
        }
    }
}

impl QuadratureSpec {
    pub fn with_rtol(rtol: f64) -> Self {
        Self {
            rtol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.rtol > 0.0) {
            return Err(Error::Domain(format!(
                "quadrature step and tolerance must be positive, got h = {}, rtol = {}",
                self.h, self.rtol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Panels used by the accepted (finest) pass.
    pub panels: usize,
}

/// Absolute floor on the refinement test, for integrals that vanish.
const ABS_FLOOR: f64 = 1e-12;

fn midpoint_pass(f: &impl Fn(f64) -> f64, a: f64, b: f64, h: f64) -> (f64, usize) {
    let first = (a / h).floor() as i64;
    let last = (b / h).ceil() as i64;
    let mut total = 0.0;
    let mut panels = 0;
    for k in first..last {
        let lo = (k as f64 * h).max(a);
        let hi = ((k + 1) as f64 * h).min(b);
        if hi > lo {
            total += f(0.5 * (lo + hi)) * (hi - lo);
            panels += 1;
        }
    }
    (total, panels)
}

/// Composite midpoint on `[a, b]`, halving `h` until converged.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, h: f64, spec: &QuadratureSpec) -> Result<QuadResult> {
    spec.validate()?;
    if !(a <= b) {
        return Err(Error::Domain(format!("integration bounds out of order: [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, panels: 0 });
    }
    let mut h = h;
    let (mut previous, _) = midpoint_pass(&f, a, b, h);
    loop {
        h *= 0.5;
        let (current, panels) = midpoint_pass(&f, a, b, h);
        let residual = (current - previous).abs();
        if residual <= spec.rtol * current.abs() + ABS_FLOOR {
            return Ok(QuadResult {
                value: current,
                panels,
            });
        }
        if panels >= spec.max_panels {
            return Err(Error::NumericalFailure {
                message: format!("midpoint refinement hit the panel cap on [{a}, {b}]"),
                estimate: current,
                residual,
            });
        }
        previous = current;
    }
}

/// Initial step resolving the fast scale: at most `ε/10`, and an exact
/// divisor of `ε × path step` when the path grid is uniform.
pub fn fast_step(im: &IntensityModel, path: &EnvironmentPath, spec: &QuadratureSpec) -> f64 {
    let eps = im.epsilon();
    let h = spec.h.min(eps / 10.0);
    match path.step() {
        Some(step) => {
            let cell = step * eps;
            cell / (cell / h).ceil()
        }
        None => h,
    }
}

fn env_value(path: &EnvironmentPath, u: f64) -> &[f64] {
    let j = path
        .index_at(u.min(path.horizon()))
        .expect("covered range checked by caller");
    path.node(j)
}

fn check_cover(im: &IntensityModel, path: &EnvironmentPath, t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    if t / im.epsilon() > path.horizon() {
        return Err(Error::OutOfRange {
            what: "mean-measure time",
            value: t,
            limit: im.covered_horizon(path),
        });
    }
    Ok(())
}

/// `m^ε(t) = ∫₀ᵗ μ^ε(s) F̄_s(t − s) ds` on a fixed path.
pub fn m_epsilon(
    im: &IntensityModel,
    sm: &ServiceModel,
    path: &EnvironmentPath,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    check_cover(im, path, t)?;
    let eps = im.epsilon();
    let integrand = |s: f64| im.rate(s, env_value(path, s / eps)) * sm.survival(s, t - s);
    integrate(integrand, 0.0, t, fast_step(im, path, spec), spec)
}

/// Quenched mean of the region count `M^ε(region)`:
/// `∫ μ^ε(s) [F̄_s(d_lo − s) − F̄_s(d_hi − s)] ds` over the arrival window.
pub fn region_mean(
    im: &IntensityModel,
    sm: &ServiceModel,
    path: &EnvironmentPath,
    region: &Region,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    let (lo, hi) = region.arrival;
    let lo = lo.max(0.0);
    if !hi.is_finite() {
        return Err(Error::Domain("region arrival window must be bounded".into()));
    }
    if hi <= lo {
        return Ok(QuadResult { value: 0.0, panels: 0 });
    }
    check_cover(im, path, hi)?;
    let (d_lo, d_hi) = region.departure;
    let eps = im.epsilon();
    let integrand = |s: f64| {
        let p = sm.survival(s, d_lo - s) - sm.survival(s, d_hi - s);
        im.rate(s, env_value(path, s / eps)) * p
    };
    integrate(integrand, lo, hi, fast_step(im, path, spec), spec)
}

/// `E_Z[A^ε(t)] = ∫₀ᵗ m^ε(u) du = ∫₀ᵗ μ^ε(s) E[min(L, t − s)] ds`.
pub fn accumulated_mean(
    im: &IntensityModel,
    sm: &ServiceModel,
    path: &EnvironmentPath,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    check_cover(im, path, t)?;
    let eps = im.epsilon();
    let integrand = |s: f64| im.rate(s, env_value(path, s / eps)) * sm.integrated_tail(s, t - s);
    integrate(integrand, 0.0, t, fast_step(im, path, spec), spec)
}

/// `σ(t) = ∫₀ᵗ λ(s) F̄_s(t − s) ds`.
pub fn sigma_t(lambda: &TimeProfile, sm: &ServiceModel, t: f64, spec: &QuadratureSpec) -> Result<QuadResult> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    integrate(|s| lambda.eval(s) * sm.survival(s, t - s), 0.0, t, spec.h, spec)
}

/// Homogenized mean `m̄(t)`.
///
/// Separable intensities return `σ(t) ψ̄`. General intensities integrate
/// `E[Ψ(s, Z̄)] F̄_s(t − s)`, with the invariant average tabulated on a
/// uniform grid in `s` and interpolated by local cubics.
pub fn m_bar(
    im: &IntensityModel,
    sm: &ServiceModel,
    env: &EnvironmentModel,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let inner = InvariantQuadrature {
        rtol: spec.rtol.min(1e-8),
        ..InvariantQuadrature::default()
    };
    match im.form() {
        crate::arrival::IntensityForm::Separable { lambda, psi } => {
            let sigma = sigma_t(lambda, sm, t, spec)?.value;
            Ok(sigma * psi_bar(env, psi, inner)?)
        }
        crate::arrival::IntensityForm::General { joint } => {
            if t == 0.0 {
                return Ok(0.0);
            }
            let average = |s: f64| invariant_expectation(env, |z| joint.eval(s, z), inner);
            let table = InvariantAverageTable::build(average, t, spec.rtol)?;
            Ok(integrate(|s| table.eval(s) * sm.survival(s, t - s), 0.0, t, spec.h, spec)?.value)
        }
    }
}

/// Uniform table of `s ↦ E[Ψ(s, Z̄)]` on `[0, end]` with 4-point Lagrange
/// interpolation.
struct InvariantAverageTable {
    step: f64,
    values: Vec<f64>,
}

impl InvariantAverageTable {
    const MAX_INTERVALS: usize = 1 << 16;

    fn build(f: impl Fn(f64) -> Result<f64>, end: f64, rtol: f64) -> Result<Self> {
        let tabulate = |n: usize| -> Result<Self> {
            let step = end / n as f64;
            let values = (0..=n).map(|i| f(i as f64 * step)).collect::<Result<Vec<_>>>()?;
            Ok(Self { step, values })
        };
        let mut n = 16;
        let mut coarse = tabulate(n)?;
        loop {
            let fine = tabulate(2 * n)?;
            let scale = fine.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let residual = fine
                .values
                .iter()
                .enumerate()
                .skip(1)
                .step_by(2)
                .map(|(i, v)| (coarse.eval(i as f64 * fine.step) - v).abs())
                .fold(0.0, f64::max);
            if residual <= rtol * scale + ABS_FLOOR {
                return Ok(fine);
            }
            n *= 2;
            if n > Self::MAX_INTERVALS {
                return Err(Error::NumericalFailure {
                    message: "invariant-average table did not converge".into(),
                    estimate: fine.values[fine.values.len() / 2],
                    residual,
                });
            }
            coarse = fine;
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.values.len() - 1;
        let x = s / self.step;
        let k = (x.floor() as isize).clamp(1, n as isize - 2) as usize;
        let start = k - 1;
        let mut total = 0.0;
        for i in 0..4 {
            let xi = (start + i) as f64;
            let mut basis = 1.0;
            for j in 0..4 {
                if i != j {
                    let xj = (start + j) as f64;
                    basis *= (x - xj) / (xi - xj);
                }
            }
            total += basis * self.values[start + i];
        }
        total
    }
}

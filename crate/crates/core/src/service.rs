//! Service-time families `ν(s, ·)` indexed by the arrival epoch `s`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functions::TimeProfile;
use crate::rng::SimRng;

#[derive(Debug, Clone)]
pub enum ServiceModel {
    /// `F̄_s(r) = min(1, c_s / r^α)` with `c_s = 1 + β sin(k s)`.
    OscillatingPareto { alpha: f64, beta: f64, k: f64 },
    /// `F̄_s(r) = exp(-rate(s) r)`.
    Exponential { rate: TimeProfile },
    /// Deterministic duration.
    Constant { duration: f64 },
}

impl ServiceModel {
    pub fn oscillating_pareto(alpha: f64, beta: f64, k: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidModel(format!("Pareto exponent must be positive, got {alpha}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidModel(format!("oscillation amplitude must lie in [0, 1), got {beta}")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::InvalidModel(format!("oscillation frequency must be >= 0, got {k}")));
        }
        Ok(ServiceModel::OscillatingPareto { alpha, beta, k })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidModel(format!("exponential rate must be positive, got {rate}")));
        }
        Ok(ServiceModel::Exponential {
            rate: TimeProfile::constant(rate),
        })
    }

    /// Exponential service whose rate depends on the arrival epoch. The
    /// profile must stay positive; this is checked at evaluation time.
    pub fn exponential_profile(rate: TimeProfile) -> Self {
        ServiceModel::Exponential { rate }
    }

    pub fn constant(duration: f64) -> Result<Self> {
        if !(duration > 0.0) || duration.is_nan() {
            return Err(Error::InvalidModel(format!("constant service must be positive, got {duration}")));
        }
        Ok(ServiceModel::Constant { duration })
    }

    /// Pareto scale `c_s`; 1 for the other families.
    pub fn scale(&self, s: f64) -> f64 {
        match self {
            ServiceModel::OscillatingPareto { beta, k, .. } => 1.0 + beta * (k * s).sin(),
            _ => 1.0,
        }
    }

    fn rate_at(rate: &TimeProfile, s: f64) -> f64 {
        let r = rate.eval(s);
        assert!(r > 0.0, "exponential service rate must be positive, got {r} at s = {s}");
        r
    }

    /// `F̄_s(r) = ℙ(L > r | Γ = s)`.
    pub fn tail(&self, s: f64, r: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("arrival epoch must be >= 0, got {s}")));
        }
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("duration must be >= 0, got {r}")));
        }
        Ok(self.survival(s, r))
    }

    /// Unchecked survival function extended to the whole line: 1 for
    /// negative `x`, 0 at `+∞`.
    pub fn survival(&self, s: f64, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        if x == f64::INFINITY {
            return 0.0;
        }
        match self {
            ServiceModel::OscillatingPareto { alpha, .. } => {
                if x == 0.0 {
                    1.0
                } else {
                    (self.scale(s) / x.powf(*alpha)).min(1.0)
                }
            }
            ServiceModel::Exponential { rate } => (-Self::rate_at(rate, s) * x).exp(),
            ServiceModel::Constant { duration } => {
                if x < *duration {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫₀ˣ F̄_s(v) dv = E[min(L, x)]`, in closed form.
    pub fn integrated_tail(&self, s: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            ServiceModel::OscillatingPareto { alpha, .. } => {
                let c = self.scale(s);
                let knee = c.powf(1.0 / alpha);
                if x <= knee {
                    return x;
                }
                let tail = if (alpha - 1.0).abs() < 1e-12 {
                    c * (x / knee).ln()
                } else {
                    c * (x.powf(1.0 - alpha) - knee.powf(1.0 - alpha)) / (1.0 - alpha)
                };
                knee + tail
            }
            ServiceModel::Exponential { rate } => {
                let mu = Self::rate_at(rate, s);
                -(-mu * x).exp_m1() / mu
            }
            ServiceModel::Constant { duration } => x.min(*duration),
        }
    }

    /// Draws `L ~ ν(s, ·)` by inversion.
    pub fn sample(&self, s: f64, rng: &mut SimRng) -> f64 {
        match self {
            ServiceModel::OscillatingPareto { alpha, .. } => {
                // u ∈ (0, 1], so the draw is finite and ≥ c_s^{1/α}
                let u = 1.0 - rng.random::<f64>();
                (self.scale(s) / u).powf(1.0 / alpha)
            }
            ServiceModel::Exponential { rate } => {
                let u = 1.0 - rng.random::<f64>();
                -u.ln() / Self::rate_at(rate, s)
            }
            ServiceModel::Constant { duration } => *duration,
        }
    }
}

/// Any family of survival functions indexed by arrival epoch.
pub trait TailFamily {
    fn survival_at(&self, s: f64, r: f64) -> f64;
}

impl TailFamily for ServiceModel {
    fn survival_at(&self, s: f64, r: f64) -> f64 {
        self.survival(s, r)
    }
}

impl<F: Fn(f64, f64) -> f64> TailFamily for F {
    fn survival_at(&self, s: f64, r: f64) -> f64 {
        self(s, r)
    }
}

/// Result of checking the tail bound `F̄_s(r) ≤ c (r^{-α} ∧ 1)` and the
/// increment bound `|F̄_s(r) − F̄_t(r)| ≤ c (1+r)^{-1-α} (t−s)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub alpha: f64,
    pub c: f64,
    /// `max F̄_s(r) (r^α ∨ 1) / c`.
    pub tail_ratio: f64,
    /// Grid point `(s, r)` where the tail ratio peaks.
    pub tail_witness: (f64, f64),
    pub tail_pass: bool,
    /// `max |F̄_s(r) − F̄_t(r)| (1+r)^{1+α} / (c (t−s))` over adjacent `s < t`.
    pub increment_ratio: f64,
    /// Grid point `(s, t, r)` where the increment ratio peaks.
    pub increment_witness: (f64, f64, f64),
    pub increment_pass: bool,
    pub pass: bool,
}

pub fn validate_hypothesis_f(
    family: &impl TailFamily,
    alpha: f64,
    c: f64,
    s_grid: &[f64],
    r_grid: &[f64],
) -> Result<ValidationReport> {
    if !(alpha > 0.0 && c > 0.0) {
        return Err(Error::Domain(format!("declared alpha and c must be positive, got {alpha}, {c}")));
    }
    if s_grid.is_empty() || r_grid.is_empty() {
        return Err(Error::Domain("validation grids must be non-empty".into()));
    }
    if s_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0))
        || r_grid.iter().any(|r| !(r.is_finite() && *r > 0.0))
    {
        return Err(Error::Domain("validation grids must be finite with s >= 0 and r > 0".into()));
    }
    let mut s_sorted = s_grid.to_vec();
    s_sorted.sort_by(f64::total_cmp);
    s_sorted.dedup();

    let mut tail_ratio = f64::NEG_INFINITY;
    let mut tail_witness = (s_sorted[0], r_grid[0]);
    for &s in &s_sorted {
        for &r in r_grid {
            let ratio = family.survival_at(s, r) * r.powf(alpha).max(1.0) / c;
            if ratio > tail_ratio {
                tail_ratio = ratio;
                tail_witness = (s, r);
            }
        }
    }

    let mut increment_ratio = 0.0;
    let mut increment_witness = (s_sorted[0], s_sorted[0], r_grid[0]);
    for pair in s_sorted.windows(2) {
        let (s, t) = (pair[0], pair[1]);
        for &r in r_grid {
            let diff = (family.survival_at(s, r) - family.survival_at(t, r)).abs();
            let ratio = diff * (1.0 + r).powf(1.0 + alpha) / (c * (t - s));
            if ratio > increment_ratio {
                increment_ratio = ratio;
                increment_witness = (s, t, r);
            }
        }
    }

    let tail_pass = tail_ratio <= 1.0;
    let increment_pass = increment_ratio <= 1.0;
    Ok(ValidationReport {
        alpha,
        c,
        tail_ratio,
        tail_witness,
        tail_pass,
        increment_ratio,
        increment_witness,
        increment_pass,
        pass: tail_pass && increment_pass,
    })
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `n` log-spaced points on `[lo, hi]`, `lo > 0`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linear_grid(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_stream;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn tail_examples() {
        let pure = ServiceModel::oscillating_pareto(2.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(pure.tail(3.0, 2.0).unwrap(), 0.25);
        let osc = ServiceModel::oscillating_pareto(2.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(osc.tail(FRAC_PI_2, 2.0).unwrap(), 0.375, epsilon = 1e-15);
        for model in [
            pure,
            osc,
            ServiceModel::exponential(1.0).unwrap(),
            ServiceModel::constant(2.0).unwrap(),
        ] {
            assert_eq!(model.tail(1.0, 0.0).unwrap(), 1.0);
            assert!(matches!(model.tail(1.0, -1.0), Err(Error::Domain(_))));
            assert!(matches!(model.tail(-1.0, 1.0), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn constant_tail_is_right_continuous() {
        let m = ServiceModel::constant(1.0).unwrap();
        assert_eq!(m.tail(0.0, 0.999).unwrap(), 1.0);
        assert_eq!(m.tail(0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_models() {
        assert!(ServiceModel::oscillating_pareto(0.0, 0.1, 1.0).is_err());
        assert!(ServiceModel::oscillating_pareto(2.0, 1.0, 1.0).is_err());
        assert!(ServiceModel::oscillating_pareto(2.0, 0.5, -1.0).is_err());
        assert!(ServiceModel::exponential(0.0).is_err());
        assert!(ServiceModel::constant(0.0).is_err());
    }

    #[test]
    fn pareto_scale_stays_in_band() {
        let m = ServiceModel::oscillating_pareto(1.5, 0.3, 2.0).unwrap();
        for s in linear_grid(0.0, 20.0, 400) {
            let c = m.scale(s);
            assert!((0.7..=1.3).contains(&c));
        }
    }

    #[test]
    fn constant_always_samples_its_duration() {
        let m = ServiceModel::constant(3.25).unwrap();
        let mut rng = replication_stream(1, 0);
        assert!((0..100).all(|_| m.sample(5.0, &mut rng) == 3.25));
    }

    /// Kolmogorov–Smirnov distance to Exp(1); 1.628/√n is the 1% critical value.
    #[test]
    fn exponential_sampler_passes_ks() {
        let m = ServiceModel::exponential(1.0).unwrap();
        let mut rng = replication_stream(11, 0);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| m.sample(0.0, &mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = 1.0 - (-x).exp();
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (cdf - lo).abs().max((hi - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / (n as f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn pareto_sampler_matches_tail_probability() {
        let m = ServiceModel::oscillating_pareto(2.0, 0.0, 0.0).unwrap();
        let mut rng = replication_stream(12, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| m.sample(0.0, &mut rng) > 2.0).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.25).abs() <= 3.0 * (0.25f64 * 0.75 / n as f64).sqrt(), "{freq}");
    }

    #[test]
    fn sampler_and_tail_agree_on_grid() {
        let models = [
            ServiceModel::oscillating_pareto(2.0, 0.5, 1.0).unwrap(),
            ServiceModel::oscillating_pareto(0.8, 0.9, 3.0).unwrap(),
            ServiceModel::exponential_profile(TimeProfile::sin1()),
            ServiceModel::constant(0.7).unwrap(),
        ];
        let n = 100_000;
        for (mi, model) in models.iter().enumerate() {
            for (si, &s) in [0.0, 1.3, 4.0].iter().enumerate() {
                let mut rng = replication_stream(100 + mi as u64, si as u64);
                let draws: Vec<f64> = (0..n).map(|_| model.sample(s, &mut rng)).collect();
                for &r in &[0.3, 0.9, 1.2, 2.5] {
                    let p = model.tail(s, r).unwrap();
                    let freq = draws.iter().filter(|&&l| l > r).count() as f64 / n as f64;
                    let se = (p * (1.0 - p) / n as f64).sqrt();
                    assert!((freq - p).abs() <= 4.0 * se + 1e-12, "model {mi} s {s} r {r}: {freq} vs {p}");
                }
            }
        }
    }

    #[test]
    fn tails_are_monotone_in_duration() {
        let models = [
            ServiceModel::oscillating_pareto(2.0, 0.5, 1.0).unwrap(),
            ServiceModel::exponential_profile(TimeProfile::sin1()),
            ServiceModel::constant(1.0).unwrap(),
        ];
        let rs = log_grid(1e-3, 1e3, 300);
        for m in &models {
            for s in linear_grid(0.0, 10.0, 50) {
                let tails: Vec<f64> = rs.iter().map(|&r| m.tail(s, r).unwrap()).collect();
                assert!(tails.windows(2).all(|w| w[0] >= w[1]));
                assert!(tails.iter().all(|p| (0.0..=1.0).contains(p)));
                assert!(m.tail(s, 1e12).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_amplitude_pareto_ignores_epoch() {
        let m = ServiceModel::oscillating_pareto(1.7, 0.0, 5.0).unwrap();
        for r in log_grid(0.01, 100.0, 50) {
            let reference = m.tail(0.0, r).unwrap();
            assert_eq!(reference, (1.0 / r.powf(1.7)).min(1.0));
            for s in linear_grid(0.0, 10.0, 21) {
                assert_eq!(m.tail(s, r).unwrap(), reference);
            }
        }
    }

    #[test]
    fn integrated_tail_matches_numeric_integral() {
        let models = [
            ServiceModel::oscillating_pareto(2.0, 0.5, 1.0).unwrap(),
            ServiceModel::oscillating_pareto(1.0, 0.2, 1.0).unwrap(),
            ServiceModel::oscillating_pareto(0.5, 0.2, 1.0).unwrap(),
            ServiceModel::exponential(2.0).unwrap(),
            ServiceModel::constant(0.8).unwrap(),
        ];
        for m in &models {
            for &x in &[0.3, 1.0, 2.7] {
                let n = 200_000;
                let h = x / n as f64;
                let numeric: f64 = (0..n).map(|i| m.survival(0.4, (i as f64 + 0.5) * h) * h).sum();
                // one cell of width h bounds the midpoint error at a jump
                approx::assert_abs_diff_eq!(m.integrated_tail(0.4, x), numeric, epsilon = h);
            }
        }
    }

    #[test]
    fn validator_on_constant_service() {
        let m = ServiceModel::constant(1.0).unwrap();
        let report = validate_hypothesis_f(&m, 1.0, 2.0, &linear_grid(0.0, 10.0, 11), &log_grid(0.01, 100.0, 101)).unwrap();
        assert!(report.tail_pass);
        assert!(report.increment_pass);
        assert_eq!(report.increment_ratio, 0.0);
    }

    #[test]
    fn validator_flags_unbounded_epoch_derivative() {
        let planted = |s: f64, r: f64| ((1.0 + s * s) / r).min(1.0);
        let report = validate_hypothesis_f(&planted, 1.0, 10.0, &linear_grid(0.0, 10.0, 101), &log_grid(0.01, 100.0, 101)).unwrap();
        assert!(!report.increment_pass);
        assert!(!report.pass);
        // the witness sits at large s where the s-derivative blows up
        assert!(report.increment_witness.0 > 5.0);
    }

    #[test]
    fn validator_rejects_bad_grids() {
        let m = ServiceModel::constant(1.0).unwrap();
        assert!(validate_hypothesis_f(&m, 1.0, 1.0, &[], &[1.0]).is_err());
        assert!(validate_hypothesis_f(&m, 1.0, 1.0, &[0.0], &[0.0]).is_err());
    }
}

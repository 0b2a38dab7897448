//! Pathwise queue functionals of a point measure: active jobs `N(t)`, region
//! counts, accumulated input `A(t) = ∫₀ᵗ N`, and the reflected workload of a
//! rate-`r` server fed by `A`.

use crate::arrival::PointMeasure;
use crate::error::{Error, Result};

/// Number of jobs with `Γ < t < Γ + L`.
pub fn count_active(m: &PointMeasure, t: f64) -> usize {
    m.jobs()
        .iter()
        .take_while(|j| j.arrival < t)
        .filter(|j| t < j.departure())
        .count()
}

/// A rectangle in (arrival, departure) coordinates: `lo < Γ ≤ hi` and
/// `lo < Γ + L ≤ hi` on the respective windows. The departure window may be
/// unbounded above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub arrival: (f64, f64),
    pub departure: (f64, f64),
}

impl Region {
    pub fn new(arrival: (f64, f64), departure: (f64, f64)) -> Result<Self> {
        let ok = |(lo, hi): (f64, f64)| lo <= hi && !lo.is_nan() && !hi.is_nan();
        if !ok(arrival) || !ok(departure) {
            return Err(Error::Domain(format!(
                "region windows must be ordered, got {arrival:?} x {departure:?}"
            )));
        }
        Ok(Self { arrival, departure })
    }

    /// Arrived by `t₁`, departs in `(t₁, t₂]`.
    pub fn a1(t1: f64, t2: f64) -> Self {
        Self {
            arrival: (0.0, t1),
            departure: (t1, t2),
        }
    }

    /// Arrived by `t₁`, still present after `t₂`.
    pub fn a2(t1: f64, t2: f64) -> Self {
        Self {
            arrival: (0.0, t1),
            departure: (t2, f64::INFINITY),
        }
    }

    /// Arrived in `(t₁, t₂]`, still present after `t₂`.
    pub fn a3(t1: f64, t2: f64) -> Self {
        Self {
            arrival: (t1, t2),
            departure: (t2, f64::INFINITY),
        }
    }

    /// Cell `A_{i,j}` of the partition built on `0 = t₀ < t₁ < … < t_n < t_{n+1} = ∞`:
    /// arrival in `(t_{i−1}, t_i]`, departure in `(t_j, t_{j+1}]`, for `1 ≤ i ≤ j ≤ n`.
    pub fn cell(times: &[f64], i: usize, j: usize) -> Result<Self> {
        let n = times.len();
        if i == 0 || i > j || j > n {
            return Err(Error::Domain(format!("cell ({i}, {j}) invalid for {n} times")));
        }
        let at = |k: usize| match k {
            0 => 0.0,
            k if k > n => f64::INFINITY,
            k => times[k - 1],
        };
        Region::new((at(i - 1), at(i)), (at(j), at(j + 1)))
    }

    pub fn contains(&self, arrival: f64, departure: f64) -> bool {
        self.arrival.0 < arrival
            && arrival <= self.arrival.1
            && self.departure.0 < departure
            && departure <= self.departure.1
    }
}

pub fn count_region(m: &PointMeasure, region: &Region) -> usize {
    m.jobs()
        .iter()
        .take_while(|j| j.arrival <= region.arrival.1)
        .filter(|j| region.contains(j.arrival, j.departure()))
        .count()
}

/// `A(t) = Σ_k (min(t, Γ_k + L_k) − Γ_k)⁺`, the exact area under `N`.
pub fn accumulated_input(m: &PointMeasure, t: f64) -> f64 {
    m.jobs()
        .iter()
        .take_while(|j| j.arrival < t)
        .map(|j| (t.min(j.departure()) - j.arrival).max(0.0))
        .fold(0.0, |acc, x| acc + x)
}

/// Right-continuous step function.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Domain("step path needs matching non-empty breakpoints and values".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t`; before the first breakpoint the first value is used.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&b| b <= t);
        self.values[k.saturating_sub(1)]
    }

    /// `∫_{t₀}^{t} path`, with `t₀` the first breakpoint.
    pub fn integral(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.times.len() {
            let start = self.times[k];
            if start >= t {
                break;
            }
            let end = self.times.get(k + 1).copied().unwrap_or(f64::INFINITY).min(t);
            total += self.values[k] * (end - start);
        }
        total
    }
}

/// Continuous piecewise-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Domain("linear path needs matching non-empty breakpoints and values".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation, constant extrapolation outside the breakpoints.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&b| b <= t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.times.len() {
            return self.values[k - 1];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Right-continuous version of `N` on `[0, end]`, jumping at every arrival
/// and departure. At a jump instant it differs from [`count_active`], which
/// uses strict inequalities.
pub fn active_path(m: &PointMeasure, end: f64) -> StepPath {
    let mut times = breakpoints(m, end);
    if times.last() != Some(&end) && end > 0.0 {
        times.push(end);
    }
    let values = times
        .iter()
        .map(|&t| {
            m.jobs()
                .iter()
                .filter(|j| j.arrival <= t && t < j.departure())
                .count() as f64
        })
        .collect();
    StepPath { times, values }
}

/// Sorted, deduplicated `{0} ∪ {Γ_k, Γ_k + L_k} ∩ [0, end]`.
fn breakpoints(m: &PointMeasure, end: f64) -> Vec<f64> {
    let mut times = vec![0.0];
    for j in m.jobs() {
        for b in [j.arrival, j.departure()] {
            if b > 0.0 && b <= end {
                times.push(b);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Output of the reflection map on `[0, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedWorkload {
    /// Net input `Y(t) = A(t) − r t`.
    pub netput: PiecewiseLinearPath,
    /// Workload `X = Y + R ≥ 0`.
    pub workload: PiecewiseLinearPath,
    /// Regulator `R(t) = −min(0, inf_{s≤t} Y(s))`, nondecreasing.
    pub regulator: PiecewiseLinearPath,
}

/// Solves `dX = N dt − r 1{X > 0} dt`, `X(0) = 0`, through the explicit
/// one-sided reflection `X = Y − min(0, inf Y)`.
///
/// The breakpoint set is the union of `t_grid`, all arrival and departure
/// epochs up to `max(t_grid)`, and every point where `Y` crosses its running
/// infimum, so the returned paths are exact.
pub fn reflected_workload(m: &PointMeasure, r: f64, t_grid: &[f64]) -> Result<ReflectedWorkload> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("drain rate must be positive, got {r}")));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Domain("time grid must be finite and nonnegative".into()));
    }
    let end = t_grid.iter().copied().fold(0.0, f64::max);
    let mut base = breakpoints(m, end);
    base.extend(t_grid.iter().copied());
    base.sort_by(f64::total_cmp);
    base.dedup();

    let mut times = Vec::with_capacity(base.len() * 2);
    let mut netput = Vec::with_capacity(base.len() * 2);
    let mut regulator = Vec::with_capacity(base.len() * 2);
    times.push(0.0);
    netput.push(0.0);
    regulator.push(0.0);

    let mut running_min = 0.0f64;
    let mut prev_t = 0.0;
    let mut prev_y = 0.0;
    for &t in base.iter().skip_while(|&&t| t == 0.0) {
        // N is constant on (prev_t, t): sample it at the midpoint
        let mid = 0.5 * (prev_t + t);
        let slope = count_active(m, mid) as f64 - r;
        let y = accumulated_input(m, t) - r * t;
        if slope < 0.0 && prev_y > running_min && y < running_min {
            let cross = prev_t + (running_min - prev_y) / slope;
            if cross > prev_t && cross < t {
                times.push(cross);
                netput.push(running_min);
                regulator.push(-running_min);
            }
        }
        running_min = running_min.min(y);
        times.push(t);
        netput.push(y);
        regulator.push(-running_min);
        prev_t = t;
        prev_y = y;
    }
    let workload: Vec<f64> = netput
        .iter()
        .zip(&regulator)
        .map(|(y, reg)| y + reg)
        .collect();
    Ok(ReflectedWorkload {
        netput: PiecewiseLinearPath::new(times.clone(), netput)?,
        workload: PiecewiseLinearPath::new(times.clone(), workload)?,
        regulator: PiecewiseLinearPath::new(times, regulator)?,
    })
}

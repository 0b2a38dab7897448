//! Ergodic environment processes and their sampled (quenched) paths.
//!
//! Three families are supported:
//!
//! * a diagonal Ornstein–Uhlenbeck process `dZ = -a Z du + σ dW`, whose
//!   invariant law is Gaussian with variance `σ²/(2a)` per coordinate;
//! * a discrete-time chain read on the continuous clock as `Z_u = X_⌊u⌋`;
//! * a continuous-time chain with exact exponential holding times.
//!
//! Paths are stored hold-left on a grid. OU nodes are drawn from the exact
//! transition kernel, so the only approximation is holding between nodes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::functions::EnvFunction;
use crate::rng::SimRng;

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OuModel {
    a: Vec<f64>,
    sigma: Vec<f64>,
    z0: Vec<f64>,
}

impl OuModel {
    pub fn mean_reversion(&self) -> &[f64] {
        &self.a
    }

    pub fn noise(&self) -> &[f64] {
        &self.sigma
    }

    pub fn initial(&self) -> &[f64] {
        &self.z0
    }

    /// Per-coordinate variance of the invariant Gaussian law.
    pub fn invariant_variance(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.sigma)
            .map(|(a, s)| s * s / (2.0 * a))
            .collect()
    }
}

/// A finite-state chain: transition matrix (discrete time) or generator
/// (continuous time), the point of `ℝ^d` attached to each state, and the
/// stationary vector computed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    matrix: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    initial: usize,
    stationary: Vec<f64>,
}

impl ChainModel {
    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentModel {
    OrnsteinUhlenbeck(OuModel),
    DiscreteChain(ChainModel),
    ContinuousChain(ChainModel),
}

impl EnvironmentModel {
    pub fn dimension(&self) -> usize {
        match self {
            EnvironmentModel::OrnsteinUhlenbeck(ou) => ou.a.len(),
            EnvironmentModel::DiscreteChain(c) | EnvironmentModel::ContinuousChain(c) => {
                c.states[0].len()
            }
        }
    }

    pub fn initial_point(&self) -> Vec<f64> {
        match self {
            EnvironmentModel::OrnsteinUhlenbeck(ou) => ou.z0.clone(),
            EnvironmentModel::DiscreteChain(c) | EnvironmentModel::ContinuousChain(c) => {
                c.states[c.initial].clone()
            }
        }
    }

    /// Stationary vector for chain models, `None` for OU.
    pub fn stationary(&self) -> Option<&[f64]> {
        match self {
            EnvironmentModel::OrnsteinUhlenbeck(_) => None,
            EnvironmentModel::DiscreteChain(c) | EnvironmentModel::ContinuousChain(c) => {
                Some(&c.stationary)
            }
        }
    }
}

pub fn make_ou_env(a: &[f64], sigma: &[f64], z0: &[f64]) -> Result<EnvironmentModel> {
    if a.is_empty() {
        return Err(Error::InvalidModel("OU dimension must be at least 1".into()));
    }
    if sigma.len() != a.len() || z0.len() != a.len() {
        return Err(Error::InvalidModel(format!(
            "OU parameter lengths disagree: a has {}, sigma {}, z0 {}",
            a.len(),
            sigma.len(),
            z0.len()
        )));
    }
    if let Some(bad) = a.iter().chain(sigma).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidModel(format!(
            "OU mean reversion and noise must be positive, got {bad}"
        )));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("OU initial point must be finite".into()));
    }
    Ok(EnvironmentModel::OrnsteinUhlenbeck(OuModel {
        a: a.to_vec(),
        sigma: sigma.to_vec(),
        z0: z0.to_vec(),
    }))
}

/// Discrete-time chain `X` on the states, read as `Z_u = X_⌊u⌋`.
pub fn make_dtmc_env(
    transition: &[Vec<f64>],
    states: &[Vec<f64>],
    x0: usize,
) -> Result<EnvironmentModel> {
    check_chain_shape(transition, states, x0)?;
    for (i, row) in transition.iter().enumerate() {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidModel(format!(
                "transition row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "transition row {i} sums to {sum}, expected 1"
            )));
        }
    }
    if !irreducible(transition) {
        return Err(Error::InvalidModel("transition matrix is reducible".into()));
    }
    let stationary = stationary_vector(transition, true)?;
    Ok(EnvironmentModel::DiscreteChain(ChainModel {
        matrix: transition.to_vec(),
        states: states.to_vec(),
        initial: x0,
        stationary,
    }))
}

/// Continuous-time chain with generator `Q` (rows sum to zero).
pub fn make_ctmc_env(
    generator: &[Vec<f64>],
    states: &[Vec<f64>],
    x0: usize,
) -> Result<EnvironmentModel> {
    check_chain_shape(generator, states, x0)?;
    for (i, row) in generator.iter().enumerate() {
        if row.iter().any(|q| !q.is_finite()) {
            return Err(Error::InvalidModel(format!("generator row {i} is not finite")));
        }
        if row
            .iter()
            .enumerate()
            .any(|(j, q)| j != i && *q < 0.0)
        {
            return Err(Error::InvalidModel(format!(
                "generator row {i} has a negative off-diagonal rate"
            )));
        }
        let sum: f64 = row.iter().sum();
        let scale = row.iter().map(|q| q.abs()).fold(1.0, f64::max);
        if sum.abs() > ROW_SUM_TOL * scale {
            return Err(Error::InvalidModel(format!(
                "generator row {i} sums to {sum}, expected 0"
            )));
        }
    }
    if !irreducible(generator) {
        return Err(Error::InvalidModel("generator is reducible".into()));
    }
    let stationary = stationary_vector(generator, false)?;
    Ok(EnvironmentModel::ContinuousChain(ChainModel {
        matrix: generator.to_vec(),
        states: states.to_vec(),
        initial: x0,
        stationary,
    }))
}

fn check_chain_shape(matrix: &[Vec<f64>], states: &[Vec<f64>], x0: usize) -> Result<()> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::InvalidModel("chain needs at least one state".into()));
    }
    if matrix.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidModel("chain matrix is not square".into()));
    }
    if states.len() != n {
        return Err(Error::InvalidModel(format!(
            "{} state values given for a {n}-state chain",
            states.len()
        )));
    }
    let d = states[0].len();
    if d == 0 || states.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidModel(
            "state values must share one positive dimension".into(),
        ));
    }
    if states.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("state values must be finite".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if states[i] == states[j] {
                return Err(Error::InvalidModel(format!(
                    "states {i} and {j} carry the same value"
                )));
            }
        }
    }
    if x0 >= n {
        return Err(Error::InvalidModel(format!(
            "initial state {x0} out of range for {n} states"
        )));
    }
    Ok(())
}

/// Every state reaches every other along positive off-diagonal entries.
fn irreducible(matrix: &[Vec<f64>]) -> bool {
    let n = matrix.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { matrix[i][j] } else { matrix[j][i] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `π M = π` (stochastic) or `π Q = 0` (generator) with `Σπ = 1`.
fn stationary_vector(matrix: &[Vec<f64>], stochastic: bool) -> Result<Vec<f64>> {
    let n = matrix.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        let m = matrix[j][i];
        if stochastic && i == j {
            m - 1.0
        } else {
            m
        }
    });
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let solution = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidModel("stationary system is singular".into()))?;
    let mut pi: Vec<f64> = solution.iter().map(|p| p.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// One realization of the environment on `[0, horizon]`, held left between
/// grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPath {
    grid: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
    step: Option<f64>,
}

impl EnvironmentPath {
    /// Builds a path from grid nodes and row-major values (`dim` per node).
    pub fn new(grid: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if grid.is_empty() || grid[0] != 0.0 {
            return Err(Error::Domain("path grid must start at 0".into()));
        }
        if dim == 0 || values.len() != grid.len() * dim {
            return Err(Error::Domain(format!(
                "expected {} values for {} nodes of dimension {dim}",
                grid.len() * dim,
                grid.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|u| !u.is_finite()) {
            return Err(Error::Domain("path grid must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("path values must be finite".into()));
        }
        Ok(Self {
            grid,
            values,
            dim,
            step: None,
        })
    }

    /// Marks the grid as uniform with spacing `step` (except possibly the
    /// last cell), enabling O(1) lookup.
    fn with_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Uniform node spacing, when the path was sampled on a uniform grid.
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Index of the cell `[u_j, u_{j+1})` holding `u`; the last node owns `u = horizon`.
    pub fn index_at(&self, u: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(u >= 0.0 && u <= horizon) {
            return Err(Error::OutOfRange {
                what: "environment time",
                value: u,
                limit: horizon,
            });
        }
        let last = self.grid.len() - 1;
        let j = match self.step {
            Some(h) => {
                let mut j = ((u / h) as usize).min(last);
                while j < last && self.grid[j + 1] <= u {
                    j += 1;
                }
                while self.grid[j] > u {
                    j -= 1;
                }
                j
            }
            None => self.grid.partition_point(|&g| g <= u) - 1,
        };
        Ok(j)
    }

    pub fn value_at(&self, u: f64) -> Result<&[f64]> {
        Ok(self.node(self.index_at(u)?))
    }

    /// Exact `∫₀ᵗ f(Z_u) du` on the hold-left path.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64, t: f64) -> Result<f64> {
        let end = self.index_at(t)?;
        let mut total = 0.0;
        for j in 0..end {
            total += f(self.node(j)) * (self.grid[j + 1] - self.grid[j]);
        }
        total += f(self.node(end)) * (t - self.grid[end]);
        Ok(total)
    }
}

/// Samples `Z` on `[0, horizon_u]`.
///
/// OU paths use the exact Gaussian transition on a grid of spacing `step_u`;
/// discrete chains jump at integers; continuous chains at exact jump times.
pub fn sample_path(
    env: &EnvironmentModel,
    horizon_u: f64,
    step_u: f64,
    rng: &mut SimRng,
) -> Result<EnvironmentPath> {
    if !(horizon_u >= 0.0 && horizon_u.is_finite()) {
        return Err(Error::Domain(format!("path horizon must be finite and >= 0, got {horizon_u}")));
    }
    if !(step_u > 0.0 && step_u.is_finite()) {
        return Err(Error::Domain(format!("path step must be positive, got {step_u}")));
    }
    match env {
        EnvironmentModel::OrnsteinUhlenbeck(ou) => Ok(sample_ou(ou, horizon_u, step_u, rng)),
        EnvironmentModel::DiscreteChain(chain) => Ok(sample_dtmc(chain, horizon_u, rng)),
        EnvironmentModel::ContinuousChain(chain) => Ok(sample_ctmc(chain, horizon_u, rng)),
    }
}

fn uniform_grid(horizon: f64, step: f64) -> Vec<f64> {
    let n = (horizon / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    let last = grid[n];
    if (last - horizon).abs() <= 1e-9 * step {
        grid[n] = horizon;
    } else if last < horizon {
        grid.push(horizon);
    } else {
        grid[n] = horizon;
    }
    if grid.len() >= 2 && grid[grid.len() - 1] <= grid[grid.len() - 2] {
        grid.pop();
    }
    grid
}

fn sample_ou(ou: &OuModel, horizon: f64, step: f64, rng: &mut SimRng) -> EnvironmentPath {
    let d = ou.a.len();
    let grid = uniform_grid(horizon, step);
    let mut values = Vec::with_capacity(grid.len() * d);
    values.extend_from_slice(&ou.z0);

    let kernel = |dt: f64| -> Vec<(f64, f64)> {
        ou.a
            .iter()
            .zip(&ou.sigma)
            .map(|(&a, &s)| {
                let decay = (-a * dt).exp();
                let sd = (s * s * (-(-2.0 * a * dt).exp_m1()) / (2.0 * a)).sqrt();
                (decay, sd)
            })
            .collect()
    };
    let regular = kernel(step);
    for k in 1..grid.len() {
        let dt = grid[k] - grid[k - 1];
        let irregular;
        let coeffs = if (dt - step).abs() <= 1e-12 * step {
            &regular
        } else {
            irregular = kernel(dt);
            &irregular
        };
        for (i, &(decay, sd)) in coeffs.iter().enumerate() {
            let prev = values[(k - 1) * d + i];
            let noise: f64 = StandardNormal.sample(rng);
            values.push(prev * decay + sd * noise);
        }
    }
    EnvironmentPath {
        grid,
        values,
        dim: d,
        step: None,
    }
    .with_step(step)
}

fn next_state(row_cdf: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random::<f64>() * row_cdf[row_cdf.len() - 1];
    row_cdf
        .partition_point(|&c| c <= u)
        .min(row_cdf.len() - 1)
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    row.iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

fn sample_dtmc(chain: &ChainModel, horizon: f64, rng: &mut SimRng) -> EnvironmentPath {
    let d = chain.states[0].len();
    let cdfs: Vec<Vec<f64>> = chain.matrix.iter().map(|r| cumulative(r)).collect();
    let grid = uniform_grid(horizon, 1.0);
    let mut values = Vec::with_capacity(grid.len() * d);
    let mut state = chain.initial;
    values.extend_from_slice(&chain.states[state]);
    for u in &grid[1..] {
        // only integer nodes are transitions; a trailing fractional node holds
        if u.fract() == 0.0 {
            state = next_state(&cdfs[state], rng);
        }
        values.extend_from_slice(&chain.states[state]);
    }
    EnvironmentPath {
        grid,
        values,
        dim: d,
        step: None,
    }
    .with_step(1.0)
}

fn sample_ctmc(chain: &ChainModel, horizon: f64, rng: &mut SimRng) -> EnvironmentPath {
    let d = chain.states[0].len();
    let n = chain.matrix.len();
    let jump_cdfs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { chain.matrix[i][j] })
                .collect();
            cumulative(&row)
        })
        .collect();
    let mut grid = vec![0.0];
    let mut state = chain.initial;
    let mut values = chain.states[state].clone();
    let mut t = 0.0;
    loop {
        let rate = -chain.matrix[state][state];
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = Exp::new(rate).expect("positive rate").sample(rng);
        t += hold;
        if t >= horizon {
            break;
        }
        state = next_state(&jump_cdfs[state], rng);
        grid.push(t);
        values.extend_from_slice(&chain.states[state]);
    }
    if horizon > *grid.last().expect("non-empty") {
        grid.push(horizon);
        values.extend_from_slice(&chain.states[state]);
    }
    EnvironmentPath {
        grid,
        values,
        dim: d,
        step: None,
    }
}

/// Tolerances for invariant-measure averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantQuadrature {
    pub rtol: f64,
    /// Cap on the number of tensor-product nodes.
    pub max_nodes: usize,
}

impl Default for InvariantQuadrature {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            max_nodes: 4_000_000,
        }
    }
}

/// `∫ f dπ` against the invariant law of the environment.
pub fn invariant_expectation(
    env: &EnvironmentModel,
    f: impl Fn(&[f64]) -> f64,
    spec: InvariantQuadrature,
) -> Result<f64> {
    match env {
        EnvironmentModel::OrnsteinUhlenbeck(ou) => {
            let sds: Vec<f64> = ou.invariant_variance().iter().map(|v| v.sqrt()).collect();
            gaussian_expectation(&sds, f, spec)
        }
        EnvironmentModel::DiscreteChain(c) | EnvironmentModel::ContinuousChain(c) => Ok(c
            .stationary
            .iter()
            .zip(&c.states)
            .map(|(p, z)| p * f(z))
            .sum()),
    }
}

/// `ψ̄ = ∫ ψ dπ`.
pub fn psi_bar(env: &EnvironmentModel, psi: &EnvFunction, spec: InvariantQuadrature) -> Result<f64> {
    invariant_expectation(env, |z| psi.eval(z), spec)
}

// 5-point Gauss–Legendre on [-1, 1]
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Truncation half-width in standard deviations; the neglected mass is
/// below 2e-23 per coordinate.
const GAUSS_HALF_WIDTH: f64 = 10.0;

fn gaussian_expectation(
    sds: &[f64],
    f: impl Fn(&[f64]) -> f64,
    spec: InvariantQuadrature,
) -> Result<f64> {
    let d = sds.len();
    let mut panels = 8usize;
    let mut previous = tensor_rule(sds, panels, &f);
    loop {
        let next_panels = panels * 2;
        let nodes = (next_panels * GL_NODES.len()).pow(d as u32);
        if nodes > spec.max_nodes {
            return Err(Error::NumericalFailure {
                message: "invariant-law quadrature did not converge within the node cap".into(),
                estimate: previous,
                residual: f64::NAN,
            });
        }
        let current = tensor_rule(sds, next_panels, &f);
        let residual = (current - previous).abs();
        if residual <= spec.rtol * current.abs() + 1e-15 {
            return Ok(current);
        }
        if next_panels >= 1024 {
            return Err(Error::NumericalFailure {
                message: "invariant-law quadrature did not converge".into(),
                estimate: current,
                residual,
            });
        }
        previous = current;
        panels = next_panels;
    }
}

fn tensor_rule(sds: &[f64], panels: usize, f: &impl Fn(&[f64]) -> f64) -> f64 {
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let width = 2.0 * GAUSS_HALF_WIDTH / panels as f64;
    // standard-normal nodes and density-weighted weights, shared by all axes
    let mut nodes = Vec::with_capacity(panels * GL_NODES.len());
    let mut weights = Vec::with_capacity(panels * GL_NODES.len());
    for p in 0..panels {
        let centre = -GAUSS_HALF_WIDTH + (p as f64 + 0.5) * width;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let z = centre + 0.5 * width * x;
            nodes.push(z);
            weights.push(0.5 * width * w * inv_sqrt_2pi * (-0.5 * z * z).exp());
        }
    }
    let d = sds.len();
    let m = nodes.len();
    let mut index = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for k in 0..d {
            point[k] = nodes[index[k]] * sds[k];
            weight *= weights[index[k]];
        }
        total += weight * f(&point);
        let mut k = 0;
        loop {
            if k == d {
                return total;
            }
            index[k] += 1;
            if index[k] < m {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

/// `|t⁻¹ ∫₀ᵗ ψ(Z_u) du − ψ̄|` on a sampled path.
pub fn ergodic_error(path: &EnvironmentPath, psi: &EnvFunction, psi_bar: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("averaging time must be positive, got {t}")));
    }
    let integral = path.integrate(|z| psi.eval(z), t)?;
    Ok((integral / t - psi_bar).abs())
}

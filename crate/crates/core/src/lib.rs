//! Infinite-server queues fed by a Poisson stream whose intensity is
//! modulated by a fast-oscillating ergodic environment.
//!
//! The crate samples quenched environment paths, simulates the marked point
//! process of arrivals and service times, evaluates queue functionals
//! (`N(t)`, region counts, accumulated input, reflected workload), computes
//! the exact quenched means and their homogenized limits by quadrature, and
//! checks the simulation against those oracles with a seeded Monte Carlo
//! harness.

// NaN inputs must fail validation, so negated comparisons are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrival;
pub mod config;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod functions;
pub mod harness;
pub mod mean_measure;
pub mod queue;
pub mod rng;
pub mod service;

pub use error::{Error, Result};

//! Personalized distributed stochastic bilevel optimization.
//!
//! Every node `i` of a peer-to-peer network holds an outer objective
//! `f_i(x, theta)` and an inner objective `g_i(x, theta)` that is strongly
//! convex in `theta`. The nodes jointly minimize `(1/m) sum_i f_i(x, theta_i*(x))`
//! over a shared `x`, exchanging iterates only with their neighbours.
//!
//! The crate is organised bottom-up:
//!
//! * [`net_graph`] builds topologies, Metropolis weights and the spectral gap.
//! * [`problem`] defines the [`problem::BilevelOracle`] trait with a quadratic
//!   family and a logistic-regression hyperparameter instance.
//! * [`hypergrad`] holds the single-step trackers, momentum and the
//!   Neumann-series estimators.
//! * [`optimizers`] runs the loopless method (local-gradient and
//!   gradient-tracking directions) and the Q-loop baselines.
//! * [`metrics`] evaluates stationarity, error terms, the Lyapunov value and
//!   the heterogeneity bound.
//! * [`expcli`] parses experiment configs, runs presets and writes traces
//!   and plots.

pub mod error;
pub mod expcli;
pub mod hypergrad;
pub mod metrics;
pub mod net_graph;
pub mod optimizers;
pub mod problem;
pub mod rng;

pub use error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

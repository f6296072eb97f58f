//! Per-node bilevel oracles.
//!
//! Node `i` holds `f_i(x, theta)` (outer) and `g_i(x, theta)` (inner,
//! strongly convex in `theta`). Oracles expose deterministic derivatives,
//! unbiased stochastic samplers driven by a caller-owned [`Stream`], and
//! the constants the theory needs.

pub mod data;
pub mod logreg;
pub mod quadratic;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hypergrad::exact_hv;
use crate::rng::Stream;
use crate::{Matrix, Vector};

pub use data::{
    load_libsvm, make_synthetic_dataset, parse_libsvm, partition_heterogeneous, sample_minibatch,
    write_libsvm, Dataset, NodePartition, PartitionMode,
};
pub use logreg::{make_logreg_hpo, LogRegHpo};
pub use quadratic::{make_quadratic, QuadraticProblem, QuadraticSpec};

/// Standard deviations of the five stochastic oracles for a single draw.
/// A minibatch of size `b` divides the variance by `b`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseLevels {
    pub g_theta: f64,
    pub g_thetatheta: f64,
    pub g_xtheta: f64,
    pub f_theta: f64,
    pub f_x: f64,
}

impl NoiseLevels {
    pub fn uniform(sigma: f64) -> Self {
        NoiseLevels {
            g_theta: sigma,
            g_thetatheta: sigma,
            g_xtheta: sigma,
            f_theta: sigma,
            f_x: sigma,
        }
    }

    pub fn is_zero(&self) -> bool {
        [
            self.g_theta,
            self.g_thetatheta,
            self.g_xtheta,
            self.f_theta,
            self.f_x,
        ]
        .iter()
        .all(|&s| s == 0.0)
    }
}

/// Smoothness, strong-convexity, boundedness and heterogeneity constants
/// of an oracle, as measured or bounded from instance data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawConstants {
    pub mu_g: f64,
    pub l_f_x: f64,
    pub l_f_theta: f64,
    pub l_g_theta: f64,
    pub l_g_xtheta: f64,
    pub l_g_thetatheta: f64,
    pub c_f_theta: f64,
    pub c_g_xtheta: f64,
    pub noise: NoiseLevels,
    /// Outer-level heterogeneity bound, when one is known.
    pub b_f_sq: Option<f64>,
    /// Inner-level heterogeneity bound, when one is known.
    pub b_g_sq: Option<f64>,
}

/// Minibatch sizes for inner-level (`g`) and outer-level (`f`) samplers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSizes {
    pub inner: usize,
    pub outer: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        BatchSizes { inner: 1, outer: 1 }
    }
}

pub trait BilevelOracle: Send + Sync {
    fn num_nodes(&self) -> usize;
    /// Dimension `n` of the shared outer variable.
    fn outer_dim(&self) -> usize;
    /// Dimension `p` of each personal inner variable.
    fn inner_dim(&self) -> usize;
    fn constants(&self) -> &RawConstants;

    fn f_value(&self, i: usize, x: &Vector, theta: &Vector) -> f64;
    fn g_value(&self, i: usize, x: &Vector, theta: &Vector) -> f64;

    fn grad_x_f(&self, i: usize, x: &Vector, theta: &Vector) -> Vector;
    fn grad_theta_f(&self, i: usize, x: &Vector, theta: &Vector) -> Vector;
    fn grad_theta_g(&self, i: usize, x: &Vector, theta: &Vector) -> Vector;
    /// Symmetric `p x p` Hessian of `g_i` in `theta`.
    fn hess_theta_g(&self, i: usize, x: &Vector, theta: &Vector) -> Matrix;
    /// Mixed second derivative of `g_i`, shaped `n x p`.
    fn jac_xtheta_g(&self, i: usize, x: &Vector, theta: &Vector) -> Matrix;

    fn sample_grad_x_f(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector;
    fn sample_grad_theta_f(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector;
    fn sample_grad_theta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector;
    fn sample_hess_theta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Matrix;
    fn sample_jac_xtheta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Matrix;

    /// Closed-form `theta_i*(x)` when one exists.
    fn analytic_inner_solution(&self, _i: usize, _x: &Vector) -> Option<Vector> {
        None
    }

    /// High-accuracy `theta_i*(x)`: closed form if available, otherwise a
    /// numerical solver.
    fn reference_inner_solution(&self, i: usize, x: &Vector) -> Result<Vector> {
        self.analytic_inner_solution(i, x).ok_or(Error::NotAnalytic)
    }

    fn is_analytic(&self) -> bool {
        false
    }
}

/// `theta_i*(x)` for oracles with a closed form.
pub fn quadratic_inner_solution(
    oracle: &dyn BilevelOracle,
    i: usize,
    x: &Vector,
) -> Result<Vector> {
    oracle
        .analytic_inner_solution(i, x)
        .ok_or(Error::NotAnalytic)
}

/// `grad_x f - J [H]^{-1} grad_theta f` at a given `theta`.
pub fn hypergradient_at(
    oracle: &dyn BilevelOracle,
    i: usize,
    x: &Vector,
    theta: &Vector,
) -> Result<Vector> {
    let h = oracle.hess_theta_g(i, x, theta);
    let v = exact_hv(&h, &oracle.grad_theta_f(i, x, theta))?;
    Ok(oracle.grad_x_f(i, x, theta) - oracle.jac_xtheta_g(i, x, theta) * v)
}

/// `grad Phi_i(x)` through the closed-form inner solution.
pub fn analytic_hypergradient(oracle: &dyn BilevelOracle, i: usize, x: &Vector) -> Result<Vector> {
    let theta = quadratic_inner_solution(oracle, i, x)?;
    hypergradient_at(oracle, i, x, &theta)
}

/// `grad Phi_i(x)` through the reference inner solution (closed form or
/// Newton-refined).
pub fn reference_hypergradient(oracle: &dyn BilevelOracle, i: usize, x: &Vector) -> Result<Vector> {
    let theta = oracle.reference_inner_solution(i, x)?;
    hypergradient_at(oracle, i, x, &theta)
}

/// `Phi_i(x) = f_i(x, theta_i*(x))`.
pub fn phi_value(oracle: &dyn BilevelOracle, i: usize, x: &Vector) -> Result<f64> {
    let theta = oracle.reference_inner_solution(i, x)?;
    Ok(oracle.f_value(i, x, &theta))
}

/// Network objective `(1/m) sum_i Phi_i(x)`.
pub fn phi_mean(oracle: &dyn BilevelOracle, x: &Vector) -> Result<f64> {
    let m = oracle.num_nodes();
    let mut acc = 0.0;
    for i in 0..m {
        acc += phi_value(oracle, i, x)?;
    }
    Ok(acc / m as f64)
}

pub(crate) fn std_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn symmetrize(h: &Matrix) -> Matrix {
    (h + h.transpose()) * 0.5
}

/// Vector noise with `E||e||^2 = sigma^2 / batch`.
pub(crate) fn vector_noise(rng: &mut Stream, d: usize, sigma: f64, batch: usize) -> Vector {
    let s = sigma / ((d * batch.max(1)) as f64).sqrt();
    Vector::from_fn(d, |_, _| s * std_normal(rng))
}

/// Dense matrix noise with `E||E||_F^2 = sigma^2 / batch`.
pub(crate) fn matrix_noise(
    rng: &mut Stream,
    r: usize,
    c: usize,
    sigma: f64,
    batch: usize,
) -> Matrix {
    let s = sigma / ((r * c * batch.max(1)) as f64).sqrt();
    Matrix::from_fn(r, c, |_, _| s * std_normal(rng))
}

/// Symmetric noise `(G + G^T)/2` scaled so that `E||E||_F^2 = sigma^2 / batch`.
pub(crate) fn symmetric_noise(rng: &mut Stream, p: usize, sigma: f64, batch: usize) -> Matrix {
    let s = (2.0 / (p * (p + 1)) as f64).sqrt() * sigma / (batch.max(1) as f64).sqrt();
    let g = Matrix::from_fn(p, p, |_, _| s * std_normal(rng));
    symmetrize(&g)
}

pub(crate) fn check_dim(v: &Vector, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

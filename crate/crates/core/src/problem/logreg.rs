//! Regularization-strength tuning for logistic regression.
//!
//! The outer variable `lambda` (dimension `p`) sets a per-feature ridge
//! penalty. Node `i` fits `theta` on its training split and is scored on its
//! validation split:
//!
//! `g_i(lambda, theta) = sum_train log(1 + exp(-b s^T theta)) + theta^T diag(e^lambda) theta`
//!
//! `f_i(lambda, theta) = sum_val log(1 + exp(-b s^T theta))`

use std::sync::Arc;

use nalgebra::Cholesky;

use super::data::{sample_minibatch, Dataset, NodePartition};
use super::quadratic::spectral_norm;
use super::{BilevelOracle, NoiseLevels, RawConstants};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::{Matrix, Vector};

/// Default half-width of the box `||lambda||_inf <= r` used for constants.
pub const DEFAULT_LAMBDA_BOX: f64 = 3.0;
/// Gradient-norm tolerance of the reference Newton solver, relative to the
/// gradient norm at `theta = 0` when that exceeds one.
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 200;
/// `max |d^2/dz^2 sigmoid(z)| = 1/(6 sqrt 3)`.
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_6;

#[derive(Clone, Debug)]
pub struct LogRegHpo {
    data: Arc<Dataset>,
    partition: NodePartition,
    p: usize,
    lambda_box: f64,
    constants: RawConstants,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-z))` without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Builds the oracle over an `m`-node partition of `dataset`.
pub fn make_logreg_hpo(dataset: Dataset, partition: NodePartition, m: usize) -> Result<LogRegHpo> {
    LogRegHpo::new(Arc::new(dataset), partition, m, DEFAULT_LAMBDA_BOX)
}

impl LogRegHpo {
    pub fn new(
        data: Arc<Dataset>,
        partition: NodePartition,
        m: usize,
        lambda_box: f64,
    ) -> Result<Self> {
        if partition.num_nodes() != m || partition.val.len() != m {
            return Err(Error::InvalidParams(format!(
                "partition has {} nodes, expected {m}",
                partition.num_nodes()
            )));
        }
        for i in 0..m {
            if partition.train[i].is_empty() || partition.val[i].is_empty() {
                return Err(Error::EmptyPartition(i));
            }
            if partition.train[i]
                .iter()
                .chain(&partition.val[i])
                .any(|&j| j >= data.len())
            {
                return Err(Error::InvalidParams(format!(
                    "node {i} indexes past the dataset"
                )));
            }
        }
        let p = data.dim();
        if p == 0 {
            return Err(Error::InvalidDimensions("dataset has no features".into()));
        }
        let mut out = LogRegHpo {
            data,
            partition,
            p,
            lambda_box,
            constants: RawConstants {
                mu_g: 0.0,
                l_f_x: 0.0,
                l_f_theta: 0.0,
                l_g_theta: 0.0,
                l_g_xtheta: 0.0,
                l_g_thetatheta: 0.0,
                c_f_theta: 0.0,
                c_g_xtheta: 0.0,
                noise: NoiseLevels::default(),
                b_f_sq: None,
                b_g_sq: None,
            },
        };
        out.bound_constants();
        Ok(out)
    }

    pub fn partition(&self) -> &NodePartition {
        &self.partition
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// Bounds over `||lambda||_inf <= lambda_box`. The single-draw noise
    /// levels bound the variance of a batch-one estimate scaled by the split
    /// size.
    fn bound_constants(&mut self) {
        let r = self.lambda_box;
        let reg_hi = 2.0 * r.exp();
        let mu = 2.0 * (-r).exp();
        let (mut lg, mut l3, mut lf, mut cf): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
        let mut theta_bound: f64 = 0.0;
        let (mut s_gt, mut s_gtt, mut s_ft): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for i in 0..self.partition.num_nodes() {
            let tr = &self.partition.train[i];
            let va = &self.partition.val[i];
            let gram = |idx: &[usize]| {
                let mut g = Matrix::zeros(self.p, self.p);
                for &j in idx {
                    let s = &self.data.features[j];
                    g.ger(1.0, s, s, 1.0);
                }
                g
            };
            lg = lg.max(0.25 * spectral_norm(&gram(tr)) + reg_hi);
            lf = lf.max(0.25 * spectral_norm(&gram(va)));
            let norms_tr: Vec<f64> = tr.iter().map(|&j| self.data.features[j].norm()).collect();
            let norms_va: Vec<f64> = va.iter().map(|&j| self.data.features[j].norm()).collect();
            l3 = l3.max(SIGMOID_CURVATURE * norms_tr.iter().map(|s| s.powi(3)).sum::<f64>());
            cf = cf.max(norms_va.iter().sum());
            let g0 = self.grad_theta_g(i, &Vector::zeros(self.p), &Vector::zeros(self.p));
            theta_bound = theta_bound.max(g0.norm() / mu);
            let nt = tr.len() as f64;
            let nv = va.len() as f64;
            s_gt = s_gt.max(nt * norms_tr.iter().map(|s| s * s).sum::<f64>());
            s_gtt = s_gtt.max(nt * norms_tr.iter().map(|s| s.powi(4) / 16.0).sum::<f64>());
            s_ft = s_ft.max(nv * norms_va.iter().map(|s| s * s).sum::<f64>());
        }
        let k = &mut self.constants;
        k.mu_g = mu;
        k.l_g_theta = lg;
        k.l_f_theta = lf;
        k.l_f_x = 0.0;
        k.l_g_thetatheta = l3 + reg_hi;
        k.l_g_xtheta = reg_hi * (1.0 + theta_bound);
        k.c_g_xtheta = reg_hi * theta_bound;
        k.c_f_theta = cf;
        k.noise = NoiseLevels {
            g_theta: s_gt.sqrt(),
            g_thetatheta: s_gtt.sqrt(),
            g_xtheta: 0.0,
            f_theta: s_ft.sqrt(),
            f_x: 0.0,
        };
    }

    fn loss_grad(&self, idx: &[usize], theta: &Vector, scale: f64) -> Vector {
        let mut g = Vector::zeros(self.p);
        for &j in idx {
            let s = &self.data.features[j];
            let b = self.data.labels[j];
            let w = -b * sigmoid(-b * s.dot(theta));
            g.axpy(scale * w, s, 1.0);
        }
        g
    }

    fn loss_hess(&self, idx: &[usize], theta: &Vector, scale: f64) -> Matrix {
        let mut h = Matrix::zeros(self.p, self.p);
        for &j in idx {
            let s = &self.data.features[j];
            let sg = sigmoid(s.dot(theta));
            h.ger(scale * sg * (1.0 - sg), s, s, 1.0);
        }
        h
    }

    fn loss_value(&self, idx: &[usize], theta: &Vector) -> f64 {
        idx.iter()
            .map(|&j| log1p_exp_neg(self.data.labels[j] * self.data.features[j].dot(theta)))
            .sum()
    }

    /// Index list and scale for a batch: the whole split when the batch
    /// covers it, otherwise a with-replacement sample scaled by `N/B`.
    fn batch_of(&self, idx: &[usize], batch: usize, rng: &mut Stream) -> (Vec<usize>, f64) {
        if batch == 0 || batch >= idx.len() {
            (idx.to_vec(), 1.0)
        } else {
            (
                sample_minibatch(rng, idx, batch),
                idx.len() as f64 / batch as f64,
            )
        }
    }

    fn reg(lambda: &Vector) -> Vector {
        lambda.map(|l| 2.0 * l.exp())
    }

    /// Damped Newton with Armijo backtracking from `theta = 0`.
    pub fn newton_inner_solution(&self, i: usize, lambda: &Vector) -> Result<Vector> {
        let mut theta = Vector::zeros(self.p);
        let tol = NEWTON_TOL * self.grad_theta_g(i, lambda, &theta).norm().max(1.0);
        for _ in 0..NEWTON_MAX_ITERS {
            let g = self.grad_theta_g(i, lambda, &theta);
            let gn = g.norm();
            if gn <= tol {
                return Ok(theta);
            }
            let h = self.hess_theta_g(i, lambda, &theta);
            let dir = Cholesky::new(h)
                .ok_or_else(|| {
                    Error::InnerSolverFailed("Hessian lost positive definiteness".into())
                })?
                .solve(&g);
            let f0 = self.g_value(i, lambda, &theta);
            let slope = g.dot(&dir);
            // Below rounding level the Armijo test is noise and can accept
            // vanishing steps; the full Newton step is then the right one.
            let accepted = if slope <= 1e-12 * (1.0 + f0.abs()) {
                theta -= &dir;
                true
            } else {
                let mut t = 1.0;
                let mut ok = false;
                for _ in 0..60 {
                    let cand = &theta - &dir * t;
                    if self.g_value(i, lambda, &cand) <= f0 - 1e-4 * t * slope {
                        theta = cand;
                        ok = true;
                        break;
                    }
                    t *= 0.5;
                }
                ok
            };
            if !accepted {
                // Rounding stalls the line search only very close to the optimum.
                theta -= dir;
                let gn_new = self.grad_theta_g(i, lambda, &theta).norm();
                if gn_new <= tol {
                    return Ok(theta);
                }
                if gn_new >= gn {
                    return Err(Error::InnerSolverFailed(format!(
                        "line search stalled at gradient norm {gn:e} on node {i}"
                    )));
                }
            }
        }
        let gn = self.grad_theta_g(i, lambda, &theta).norm();
        if gn <= tol {
            Ok(theta)
        } else {
            Err(Error::InnerSolverFailed(format!(
                "{NEWTON_MAX_ITERS} Newton steps left gradient norm {gn:e} on node {i}"
            )))
        }
    }
}

impl BilevelOracle for LogRegHpo {
    fn num_nodes(&self) -> usize {
        self.partition.num_nodes()
    }

    fn outer_dim(&self) -> usize {
        self.p
    }

    fn inner_dim(&self) -> usize {
        self.p
    }

    fn constants(&self) -> &RawConstants {
        &self.constants
    }

    fn f_value(&self, i: usize, _x: &Vector, theta: &Vector) -> f64 {
        self.loss_value(&self.partition.val[i], theta)
    }

    fn g_value(&self, i: usize, x: &Vector, theta: &Vector) -> f64 {
        let reg: f64 = theta
            .iter()
            .zip(x.iter())
            .map(|(t, l)| l.exp() * t * t)
            .sum();
        self.loss_value(&self.partition.train[i], theta) + reg
    }

    fn grad_x_f(&self, _i: usize, _x: &Vector, _theta: &Vector) -> Vector {
        Vector::zeros(self.p)
    }

    fn grad_theta_f(&self, i: usize, _x: &Vector, theta: &Vector) -> Vector {
        self.loss_grad(&self.partition.val[i], theta, 1.0)
    }

    fn grad_theta_g(&self, i: usize, x: &Vector, theta: &Vector) -> Vector {
        self.loss_grad(&self.partition.train[i], theta, 1.0) + Self::reg(x).component_mul(theta)
    }

    fn hess_theta_g(&self, i: usize, x: &Vector, theta: &Vector) -> Matrix {
        self.loss_hess(&self.partition.train[i], theta, 1.0) + Matrix::from_diagonal(&Self::reg(x))
    }

    fn jac_xtheta_g(&self, _i: usize, x: &Vector, theta: &Vector) -> Matrix {
        Matrix::from_diagonal(&Self::reg(x).component_mul(theta))
    }

    fn sample_grad_x_f(
        &self,
        _i: usize,
        _x: &Vector,
        _theta: &Vector,
        _batch: usize,
        _rng: &mut Stream,
    ) -> Vector {
        Vector::zeros(self.p)
    }

    fn sample_grad_theta_f(
        &self,
        i: usize,
        _x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector {
        let (idx, scale) = self.batch_of(&self.partition.val[i], batch, rng);
        self.loss_grad(&idx, theta, scale)
    }

    fn sample_grad_theta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector {
        let (idx, scale) = self.batch_of(&self.partition.train[i], batch, rng);
        self.loss_grad(&idx, theta, scale) + Self::reg(x).component_mul(theta)
    }

    fn sample_hess_theta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Matrix {
        let (idx, scale) = self.batch_of(&self.partition.train[i], batch, rng);
        self.loss_hess(&idx, theta, scale) + Matrix::from_diagonal(&Self::reg(x))
    }

    fn sample_jac_xtheta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        _batch: usize,
        _rng: &mut Stream,
    ) -> Matrix {
        self.jac_xtheta_g(i, x, theta)
    }

    fn reference_inner_solution(&self, i: usize, x: &Vector) -> Result<Vector> {
        self.newton_inner_solution(i, x)
    }
}

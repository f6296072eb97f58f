//! Hypergradient estimation primitives.
//!
//! The loopless trackers update `theta` (inner iterate), `v` (estimate of
//! `[H]^{-1} grad_theta f`) and `z` (smoothed hypergradient) by one step per
//! round. The Q-loop baselines instead rebuild `v` every round from a
//! truncated Neumann series.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Oracle call counts. Hessian and Jacobian counts are per sampled matrix
/// (or matrix action); `grad` counts sampled gradient vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounters {
    pub hessian: u64,
    pub jacobian: u64,
    pub grad: u64,
}

impl std::ops::AddAssign for CallCounters {
    fn add_assign(&mut self, o: Self) {
        self.hessian += o.hessian;
        self.jacobian += o.jacobian;
        self.grad += o.grad;
    }
}

/// Inner iterate and Hessian-inverse-vector tracker of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct HvState {
    pub theta: Vector,
    pub v: Vector,
    pub d: Vector,
    pub h: Vector,
}

impl HvState {
    pub fn zeros(p: usize) -> Self {
        HvState {
            theta: Vector::zeros(p),
            v: Vector::zeros(p),
            d: Vector::zeros(p),
            h: Vector::zeros(p),
        }
    }
}

/// Raw hypergradient sample `s` and its moving average `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub s: Vector,
    pub z: Vector,
}

fn same_len(a: &Vector, b: &Vector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0) {
        return Err(Error::StepSizeOutOfRange {
            name,
            value,
            range: "(0, inf)".into(),
        });
    }
    Ok(())
}

/// `theta <- theta - beta * d_sample`.
pub fn inner_step(state: &mut HvState, beta: f64, d_sample: &Vector) -> Result<()> {
    positive("beta", beta)?;
    same_len(&state.theta, d_sample)?;
    state.theta.axpy(-beta, d_sample, 1.0);
    Ok(())
}

/// `0 < lambda < 1/mu_g`.
pub fn check_hv_lambda(lambda: f64, mu_g: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda * mu_g < 1.0) {
        return Err(Error::StepSizeOutOfRange {
            name: "lambda",
            value: lambda,
            range: format!("(0, 1/mu_g = {})", 1.0 / mu_g),
        });
    }
    Ok(())
}

/// `h = sym(H) v - grad`, the gradient of `1/2 v^T H v - grad^T v`.
pub fn hv_residual(hess: &Matrix, v: &Vector, grad: &Vector) -> Result<Vector> {
    if hess.nrows() != v.len() || hess.ncols() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: hess.nrows(),
        });
    }
    same_len(v, grad)?;
    let hv = hess * v;
    let htv = hess.tr_mul(v);
    Ok((hv + htv) * 0.5 - grad)
}

/// One tracker step `v <- v - lambda (sym(H) v - grad)`; counts one Hessian.
pub fn hv_step(
    state: &mut HvState,
    lambda: f64,
    mu_g: f64,
    hess: &Matrix,
    grad: &Vector,
    counters: &mut CallCounters,
) -> Result<()> {
    check_hv_lambda(lambda, mu_g)?;
    let h = hv_residual(hess, &state.v, grad)?;
    counters.hessian += 1;
    state.v.axpy(-lambda, &h, 1.0);
    state.h = h;
    Ok(())
}

/// `s = grad_x f - J v`.
pub fn hypergrad_sample(grad_x_f: &Vector, jac: &Matrix, v: &Vector) -> Result<Vector> {
    if jac.nrows() != grad_x_f.len() || jac.ncols() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: grad_x_f.len(),
            got: jac.nrows(),
        });
    }
    Ok(grad_x_f - jac * v)
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    Ok(())
}

/// `z <- s + (1 - gamma)(z - s)`; `gamma = 1` switches momentum off.
pub fn momentum_step(state: &mut MomentumState, gamma: f64, s: &Vector) -> Result<()> {
    check_gamma(gamma)?;
    same_len(&state.z, s)?;
    state.z = s + (&state.z - s) * (1.0 - gamma);
    state.s = s.clone();
    Ok(())
}

/// `0 < lambda <= 1/L_{g,theta}`.
pub fn check_neumann_lambda(lambda: f64, l_g_theta: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda * l_g_theta <= 1.0) {
        return Err(Error::StepSizeOutOfRange {
            name: "lambda",
            value: lambda,
            range: format!("(0, 1/L_g_theta = {}]", 1.0 / l_g_theta),
        });
    }
    Ok(())
}

/// `lambda sum_{q=0}^{Q} (I - lambda H)^q rhs` by Horner's rule from zero:
/// `u <- rhs + (I - lambda H) u`, repeated `Q+1` times. Each repetition
/// calls `hess_action` once.
pub fn neumann_inverse_apply<F>(
    mut hess_action: F,
    lambda: f64,
    l_g_theta: f64,
    q: usize,
    rhs: &Vector,
    counters: &mut CallCounters,
) -> Result<Vector>
where
    F: FnMut(&Vector) -> Vector,
{
    check_neumann_lambda(lambda, l_g_theta)?;
    let mut u = Vector::zeros(rhs.len());
    for _ in 0..=q {
        let hu = hess_action(&u);
        counters.hessian += 1;
        u = rhs + &u - hu * lambda;
    }
    Ok(u * lambda)
}

/// Output of [`shia_hv`].
#[derive(Clone, Debug)]
pub struct ShiaOutput {
    pub estimate: Vector,
    /// `(I - lambda H)^{Q+1} grad`. The truncation error equals
    /// `H^{-1}` applied to this vector.
    pub tail: Vector,
}

/// Summed form: `lambda sum_{t=0}^{Q} p_t` with `p_0 = grad`,
/// `p_{t+1} = (I - lambda H) p_t`. Produces the same value as
/// [`neumann_inverse_apply`]; the last power is kept as the tail.
pub fn shia_hv<F>(
    mut hess_action: F,
    lambda: f64,
    l_g_theta: f64,
    q: usize,
    grad: &Vector,
    counters: &mut CallCounters,
) -> Result<ShiaOutput>
where
    F: FnMut(&Vector) -> Vector,
{
    check_neumann_lambda(lambda, l_g_theta)?;
    let mut term = grad.clone();
    let mut sum = Vector::zeros(grad.len());
    for _ in 0..=q {
        sum += &term;
        let ht = hess_action(&term);
        counters.hessian += 1;
        term -= ht * lambda;
    }
    Ok(ShiaOutput {
        estimate: sum * lambda,
        tail: term,
    })
}

/// Solves `H v = grad` by Cholesky.
pub fn exact_hv(hess: &Matrix, grad: &Vector) -> Result<Vector> {
    if hess.nrows() != grad.len() || hess.ncols() != grad.len() {
        return Err(Error::DimensionMismatch {
            expected: grad.len(),
            got: hess.nrows(),
        });
    }
    let ch = Cholesky::new(hess.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(ch.solve(grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn m1(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn inner_step_arithmetic() {
        let mut st = HvState::zeros(2);
        st.theta = Vector::from_vec(vec![1.0, 1.0]);
        inner_step(&mut st, 0.5, &Vector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(st.theta.as_slice(), &[0.0, 1.0]);
        inner_step(&mut st, 0.5, &Vector::zeros(2)).unwrap();
        assert_eq!(st.theta.as_slice(), &[0.0, 1.0]);
        assert!(inner_step(&mut st, 0.5, &Vector::zeros(3)).is_err());
        assert!(inner_step(&mut st, 0.0, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn scalar_inner_contraction() {
        // g = (theta - x)^2, grad = 2(theta - x)
        let x = 3.0;
        let beta = 0.2;
        let mut st = HvState::zeros(1);
        for _ in 0..20 {
            let before = (st.theta[0] - x).abs();
            let d = s(2.0 * (st.theta[0] - x));
            inner_step(&mut st, beta, &d).unwrap();
            let ratio = (st.theta[0] - x).abs() / before;
            assert!((ratio - (1.0 - 2.0 * beta).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_hv_recursion() {
        let mut st = HvState::zeros(1);
        let mut c = CallCounters::default();
        hv_step(&mut st, 0.25, 2.0, &m1(2.0), &s(1.0), &mut c).unwrap();
        assert!((st.v[0] - 0.25).abs() < 1e-15);
        hv_step(&mut st, 0.25, 2.0, &m1(2.0), &s(1.0), &mut c).unwrap();
        assert!((st.v[0] - 0.375).abs() < 1e-15);
        for _ in 0..200 {
            hv_step(&mut st, 0.25, 2.0, &m1(2.0), &s(1.0), &mut c).unwrap();
        }
        assert!((st.v[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.hessian, 202);
        assert!(hv_step(&mut st, 0.5, 2.0, &m1(2.0), &s(1.0), &mut c).is_err());
    }

    #[test]
    fn hv_fixed_point() {
        let mut st = HvState::zeros(1);
        st.v = s(0.5);
        hv_step(
            &mut st,
            0.25,
            2.0,
            &m1(2.0),
            &s(1.0),
            &mut CallCounters::default(),
        )
        .unwrap();
        assert_eq!(st.v[0], 0.5);
    }

    #[test]
    fn hypergrad_sample_cases() {
        let g = Vector::from_vec(vec![1.0, 2.0]);
        let j = Matrix::from_row_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(hypergrad_sample(&g, &j, &s(0.0)).unwrap(), g);
        assert_eq!(
            hypergrad_sample(&g, &j, &s(1.0)).unwrap().as_slice(),
            &[-2.0, -2.0]
        );
        assert!(hypergrad_sample(&g, &j, &Vector::zeros(2)).is_err());
        // scalar bilevel instance at x = 2: grad_x f = 0, J = -1, v* = 1/2
        assert_eq!(
            hypergrad_sample(&s(0.0), &m1(-1.0), &s(0.5)).unwrap()[0],
            0.5
        );
    }

    #[test]
    fn momentum_cases() {
        let mut st = MomentumState {
            s: s(0.0),
            z: s(0.0),
        };
        momentum_step(&mut st, 0.4, &s(10.0)).unwrap();
        assert!((st.z[0] - 4.0).abs() < 1e-15);
        momentum_step(&mut st, 1.0, &s(-3.0)).unwrap();
        assert_eq!(st.z[0], -3.0);
        for _ in 0..5 {
            let before = (st.z[0] - 7.0).abs();
            momentum_step(&mut st, 0.3, &s(7.0)).unwrap();
            assert!(((st.z[0] - 7.0).abs() - 0.7 * before).abs() < 1e-12);
        }
        assert!(matches!(
            momentum_step(&mut st, 0.0, &s(1.0)),
            Err(Error::GammaOutOfRange(_))
        ));
        assert!(momentum_step(&mut st, 1.5, &s(1.0)).is_err());
    }

    #[test]
    fn neumann_scalar() {
        let mut c = CallCounters::default();
        let h = |v: &Vector| v * 2.0;
        let r = neumann_inverse_apply(h, 0.25, 2.0, 3, &s(1.0), &mut c).unwrap();
        assert!((r[0] - 0.46875).abs() < 1e-15);
        assert_eq!(c.hessian, 4);
        let r0 = neumann_inverse_apply(h, 0.25, 2.0, 0, &s(1.0), &mut c).unwrap();
        assert_eq!(r0[0], 0.25);
        let sh = shia_hv(h, 0.25, 2.0, 1, &s(1.0), &mut c).unwrap();
        assert!((sh.estimate[0] - 0.375).abs() < 1e-15);
        assert!(neumann_inverse_apply(h, 0.6, 2.0, 3, &s(1.0), &mut c).is_err());
    }

    #[test]
    fn shia_with_inverse_step_is_one_term() {
        let lam = 0.2;
        let h = |v: &Vector| v / lam;
        let g = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        for q in [0, 1, 4] {
            let out = shia_hv(h, lam, 1.0 / lam, q, &g, &mut CallCounters::default()).unwrap();
            assert!((out.estimate - &g * lam).norm() < 1e-15);
        }
    }

    #[test]
    fn exact_hv_cases() {
        let g = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(exact_hv(&Matrix::identity(2, 2), &g).unwrap(), g);
        assert!((exact_hv(&m1(2.0), &s(1.0)).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(matches!(
            exact_hv(&m1(-1.0), &s(1.0)),
            Err(Error::NotPositiveDefinite)
        ));
    }
}

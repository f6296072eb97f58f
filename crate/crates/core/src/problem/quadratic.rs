//! Strongly convex quadratic bilevel family with closed-form inner solutions.
//!
//! `g_i(x, theta) = 1/2 theta^T A_i theta - (B_i x + c_i)^T theta` and
//! `f_i(x, theta) = 1/2 (theta - t_i)^T T (theta - t_i) + 1/2 x^T R x`.
//! `T` and `R` are shared across nodes, so outer-level heterogeneity lives in
//! `t_i` and inner-level heterogeneity in `(A_i, B_i, c_i)`.

use nalgebra::{Cholesky, Dyn, SymmetricEigen};
use rand::Rng;

use super::{
    check_dim, matrix_noise, std_normal, symmetric_noise, vector_noise, BilevelOracle, NoiseLevels,
    RawConstants,
};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::{Matrix, Vector};

/// Generator parameters for [`make_quadratic`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSpec {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    /// Smallest eigenvalue of every `A_i`.
    pub mu_g: f64,
    /// Largest eigenvalue of every `A_i`.
    pub l_g_theta: f64,
    /// Scale of the coupling matrices `B_i`.
    pub coupling: f64,
    /// Eigenvalue range of `T`.
    pub t_eig_min: f64,
    pub t_eig_max: f64,
    /// `R = outer_reg * I`.
    pub outer_reg: f64,
    pub noise: NoiseLevels,
    /// Spread of the targets `t_i`.
    pub b_f_scale: f64,
    /// Spread of `(A_i, B_i, c_i)`; zero makes every inner problem identical.
    pub b_g_scale: f64,
    /// Radius of the ball `||x|| <= r` over which the bounded constants hold.
    pub domain_radius: f64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        QuadraticSpec {
            m: 8,
            n: 10,
            p: 10,
            mu_g: 1.0,
            l_g_theta: 4.0,
            coupling: 1.0,
            t_eig_min: 0.5,
            t_eig_max: 1.5,
            outer_reg: 0.1,
            noise: NoiseLevels::default(),
            b_f_scale: 0.0,
            b_g_scale: 0.0,
            domain_radius: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    n: usize,
    p: usize,
    a: Vec<Matrix>,
    a_chol: Vec<Cholesky<f64, Dyn>>,
    b: Vec<Matrix>,
    c: Vec<Vector>,
    t_mat: Matrix,
    t: Vec<Vector>,
    r: Matrix,
    noise: NoiseLevels,
    radius: f64,
    constants: RawConstants,
}

pub(crate) fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

fn random_orthogonal(rng: &mut Stream, p: usize) -> Matrix {
    let g = Matrix::from_fn(p, p, |_, _| std_normal(rng));
    g.qr().q()
}

fn spd_with_eigs(rng: &mut Stream, eigs: &[f64]) -> Matrix {
    let q = random_orthogonal(rng, eigs.len());
    let d = Matrix::from_diagonal(&Vector::from_column_slice(eigs));
    let a = &q * d * q.transpose();
    super::symmetrize(&a)
}

/// Draws a random quadratic instance. Node matrices satisfy
/// `mu_g I <= A_i <= l_g_theta I`; with `b_g_scale = 0` all inner problems
/// coincide and with `b_f_scale = 0` all targets coincide.
pub fn make_quadratic(spec: &QuadraticSpec, seed: u64) -> Result<QuadraticProblem> {
    let QuadraticSpec { m, n, p, .. } = *spec;
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::InvalidDimensions(format!("m={m}, n={n}, p={p}")));
    }
    if !(spec.mu_g > 0.0) || spec.l_g_theta < spec.mu_g {
        return Err(Error::InvalidParams(format!(
            "need 0 < mu_g <= l_g_theta, got {} and {}",
            spec.mu_g, spec.l_g_theta
        )));
    }
    if spec.t_eig_min < 0.0 || spec.t_eig_max < spec.t_eig_min || spec.outer_reg < 0.0 {
        return Err(Error::InvalidParams(
            "T and R must be positive semidefinite".into(),
        ));
    }
    if spec.b_f_scale < 0.0 || spec.b_g_scale < 0.0 || !(spec.domain_radius > 0.0) {
        return Err(Error::InvalidParams(
            "scales must be non-negative and the radius positive".into(),
        ));
    }
    let mut r = rng::aux_stream(seed, 0x71756164);
    let (mu, l) = (spec.mu_g, spec.l_g_theta);
    let base_eigs: Vec<f64> = if p == 1 {
        vec![mu]
    } else {
        (0..p)
            .map(|k| mu + (l - mu) * k as f64 / (p - 1) as f64)
            .collect()
    };
    let a_base = spd_with_eigs(&mut r, &base_eigs);
    let sn = 1.0 / (n as f64).sqrt();
    let b_base = Matrix::from_fn(p, n, |_, _| spec.coupling * sn * std_normal(&mut r));
    let c_base = Vector::from_fn(p, |_, _| std_normal(&mut r));
    let t_eigs: Vec<f64> = (0..p)
        .map(|_| r.random_range(spec.t_eig_min..=spec.t_eig_max))
        .collect();
    let t_mat = spd_with_eigs(&mut r, &t_eigs);
    let t_base = Vector::from_fn(p, |_, _| std_normal(&mut r));

    let mix = spec.b_g_scale.min(1.0);
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut c = Vec::with_capacity(m);
    let mut t = Vec::with_capacity(m);
    for _ in 0..m {
        let eigs: Vec<f64> = (0..p).map(|_| r.random_range(mu..=l)).collect();
        let a_rand = spd_with_eigs(&mut r, &eigs);
        a.push(&a_base * (1.0 - mix) + a_rand * mix);
        let gb = Matrix::from_fn(p, n, |_, _| spec.coupling * sn * std_normal(&mut r));
        b.push(&b_base + gb * spec.b_g_scale);
        let gc = Vector::from_fn(p, |_, _| std_normal(&mut r));
        c.push(&c_base + gc * spec.b_g_scale);
        let gt = Vector::from_fn(p, |_, _| std_normal(&mut r));
        t.push(&t_base + gt * spec.b_f_scale);
    }
    let rmat = Matrix::identity(n, n) * spec.outer_reg;
    QuadraticProblem::from_parts(a, b, c, t_mat, t, rmat, spec.noise, spec.domain_radius)
}

impl QuadraticProblem {
    /// Builds an instance from explicit data and measures its constants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: Vec<Matrix>,
        b: Vec<Matrix>,
        c: Vec<Vector>,
        t_mat: Matrix,
        t: Vec<Vector>,
        r: Matrix,
        noise: NoiseLevels,
        radius: f64,
    ) -> Result<Self> {
        let m = a.len();
        if m == 0 || b.len() != m || c.len() != m || t.len() != m {
            return Err(Error::InvalidDimensions(
                "per-node data must have equal, nonzero length".into(),
            ));
        }
        let p = a[0].nrows();
        let n = r.nrows();
        if p == 0 || n == 0 || r.ncols() != n || t_mat.shape() != (p, p) {
            return Err(Error::InvalidDimensions(format!("p={p}, n={n}")));
        }
        for i in 0..m {
            if a[i].shape() != (p, p)
                || b[i].shape() != (p, n)
                || c[i].len() != p
                || t[i].len() != p
            {
                return Err(Error::InvalidDimensions(format!(
                    "node {i} data has wrong shape"
                )));
            }
        }
        let mut a_chol = Vec::with_capacity(m);
        let mut mu = f64::INFINITY;
        let mut lg: f64 = 0.0;
        for ai in &a {
            let e = SymmetricEigen::new(super::symmetrize(ai)).eigenvalues;
            mu = mu.min(e.min());
            lg = lg.max(e.max());
            a_chol.push(Cholesky::new(ai.clone()).ok_or(Error::NotPositiveDefinite)?);
        }
        if !(mu > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut prob = QuadraticProblem {
            n,
            p,
            a,
            a_chol,
            b,
            c,
            t_mat,
            t,
            r,
            noise,
            radius,
            constants: RawConstants {
                mu_g: mu,
                l_f_x: 0.0,
                l_f_theta: 0.0,
                l_g_theta: lg,
                l_g_xtheta: 0.0,
                l_g_thetatheta: 0.0,
                c_f_theta: 0.0,
                c_g_xtheta: 0.0,
                noise,
                b_f_sq: None,
                b_g_sq: None,
            },
        };
        prob.measure_constants();
        Ok(prob)
    }

    fn measure_constants(&mut self) {
        let m = self.a.len();
        let r = self.radius;
        let k = &mut self.constants;
        k.l_f_x = spectral_norm(&self.r);
        k.l_f_theta = spectral_norm(&self.t_mat);
        k.c_g_xtheta = self.b.iter().map(spectral_norm).fold(0.0, f64::max);
        let mut cf: f64 = 0.0;
        for i in 0..m {
            let pinv_b = self.a_chol[i].solve(&self.b[i]);
            let q = self.a_chol[i].solve(&self.c[i]);
            let v = spectral_norm(&(&self.t_mat * pinv_b)) * r
                + (&self.t_mat * (q - &self.t[i])).norm();
            cf = cf.max(v);
        }
        k.c_f_theta = cf;

        let t_bar = self
            .t
            .iter()
            .fold(Vector::zeros(self.p), |acc, ti| acc + ti)
            / m as f64;
        k.b_f_sq = Some(
            self.t
                .iter()
                .map(|ti| (&self.t_mat * (ti - &t_bar)).norm_squared())
                .sum(),
        );

        let (mut grad_term, mut jac_term, mut hess_term) = (0.0, 0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let da = &self.a[i] - &self.a[j];
                let db = &self.b[i] - &self.b[j];
                let dc = &self.c[i] - &self.c[j];
                let mij = &da * self.a_chol[j].solve(&self.b[j]) - &db;
                let nij = &da * self.a_chol[j].solve(&self.c[j]) - &dc;
                grad_term += (spectral_norm(&mij) * r + nij.norm()).powi(2);
                jac_term += spectral_norm(&db).powi(2);
                hess_term += spectral_norm(&da).powi(2);
            }
        }
        let mf = m as f64;
        k.b_g_sq = Some((grad_term / mf).max(jac_term / mf).max(hess_term / mf));
    }

    pub fn a(&self, i: usize) -> &Matrix {
        &self.a[i]
    }

    pub fn b(&self, i: usize) -> &Matrix {
        &self.b[i]
    }

    pub fn c(&self, i: usize) -> &Vector {
        &self.c[i]
    }

    pub fn t_matrix(&self) -> &Matrix {
        &self.t_mat
    }

    pub fn target(&self, i: usize) -> &Vector {
        &self.t[i]
    }

    pub fn r_matrix(&self) -> &Matrix {
        &self.r
    }

    pub fn domain_radius(&self) -> f64 {
        self.radius
    }

    pub fn noise(&self) -> NoiseLevels {
        self.noise
    }

    /// Same instance with different noise levels.
    pub fn with_noise(&self, noise: NoiseLevels) -> Self {
        let mut out = self.clone();
        out.noise = noise;
        out.constants.noise = noise;
        out
    }

    /// Minimizer of `(1/m) sum_i Phi_i`, from `Phi_i(x) = f_i(x, P_i x + q_i)`
    /// with `P_i = A_i^{-1} B_i`, `q_i = A_i^{-1} c_i`. `None` if the
    /// averaged Hessian is singular.
    pub fn outer_minimizer(&self) -> Option<Vector> {
        let m = self.a.len() as f64;
        let mut h = self.r.clone();
        let mut g = Vector::zeros(self.n);
        for i in 0..self.a.len() {
            let pm = self.a_chol[i].solve(&self.b[i]);
            let q = self.a_chol[i].solve(&self.c[i]);
            let tp = &self.t_mat * &pm;
            h += pm.transpose() * &tp / m;
            g += pm.transpose() * (&self.t_mat * (q - &self.t[i])) / m;
        }
        Cholesky::new(h).map(|ch| -ch.solve(&g))
    }
}

impl BilevelOracle for QuadraticProblem {
    fn num_nodes(&self) -> usize {
        self.a.len()
    }

    fn outer_dim(&self) -> usize {
        self.n
    }

    fn inner_dim(&self) -> usize {
        self.p
    }

    fn constants(&self) -> &RawConstants {
        &self.constants
    }

    fn f_value(&self, i: usize, x: &Vector, theta: &Vector) -> f64 {
        let d = theta - &self.t[i];
        0.5 * d.dot(&(&self.t_mat * &d)) + 0.5 * x.dot(&(&self.r * x))
    }

    fn g_value(&self, i: usize, x: &Vector, theta: &Vector) -> f64 {
        0.5 * theta.dot(&(&self.a[i] * theta)) - (&self.b[i] * x + &self.c[i]).dot(theta)
    }

    fn grad_x_f(&self, _i: usize, x: &Vector, _theta: &Vector) -> Vector {
        &self.r * x
    }

    fn grad_theta_f(&self, i: usize, _x: &Vector, theta: &Vector) -> Vector {
        &self.t_mat * (theta - &self.t[i])
    }

    fn grad_theta_g(&self, i: usize, x: &Vector, theta: &Vector) -> Vector {
        &self.a[i] * theta - &self.b[i] * x - &self.c[i]
    }

    fn hess_theta_g(&self, i: usize, _x: &Vector, _theta: &Vector) -> Matrix {
        self.a[i].clone()
    }

    fn jac_xtheta_g(&self, i: usize, _x: &Vector, _theta: &Vector) -> Matrix {
        -self.b[i].transpose()
    }

    fn sample_grad_x_f(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector {
        self.grad_x_f(i, x, theta) + vector_noise(rng, self.n, self.noise.f_x, batch)
    }

    fn sample_grad_theta_f(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector {
        self.grad_theta_f(i, x, theta) + vector_noise(rng, self.p, self.noise.f_theta, batch)
    }

    fn sample_grad_theta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Vector {
        self.grad_theta_g(i, x, theta) + vector_noise(rng, self.p, self.noise.g_theta, batch)
    }

    fn sample_hess_theta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Matrix {
        self.hess_theta_g(i, x, theta)
            + symmetric_noise(rng, self.p, self.noise.g_thetatheta, batch)
    }

    fn sample_jac_xtheta_g(
        &self,
        i: usize,
        x: &Vector,
        theta: &Vector,
        batch: usize,
        rng: &mut Stream,
    ) -> Matrix {
        self.jac_xtheta_g(i, x, theta)
            + matrix_noise(rng, self.n, self.p, self.noise.g_xtheta, batch)
    }

    fn analytic_inner_solution(&self, i: usize, x: &Vector) -> Option<Vector> {
        check_dim(x, self.n).ok()?;
        Some(self.a_chol[i].solve(&(&self.b[i] * x + &self.c[i])))
    }

    fn is_analytic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{analytic_hypergradient, quadratic_inner_solution};

    fn scalar() -> QuadraticProblem {
        let one = |v: f64| Matrix::from_element(1, 1, v);
        QuadraticProblem::from_parts(
            vec![one(2.0)],
            vec![one(1.0)],
            vec![Vector::zeros(1)],
            one(1.0),
            vec![Vector::zeros(1)],
            one(0.0),
            NoiseLevels::default(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn scalar_instance() {
        let q = scalar();
        let x = Vector::from_element(1, 2.0);
        let th = quadratic_inner_solution(&q, 0, &x).unwrap();
        assert!((th[0] - 1.0).abs() < 1e-15);
        let g = analytic_hypergradient(&q, 0, &x).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert!(quadratic_inner_solution(&q, 0, &Vector::zeros(1)).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn generated_constants_bracket_spectrum() {
        let spec = QuadraticSpec {
            m: 4,
            n: 3,
            p: 3,
            b_g_scale: 0.3,
            b_f_scale: 0.5,
            ..Default::default()
        };
        let q = make_quadratic(&spec, 1).unwrap();
        let k = q.constants();
        assert!(k.mu_g >= spec.mu_g - 1e-12);
        assert!(k.l_g_theta <= spec.l_g_theta + 1e-12);
        assert!(k.b_f_sq.unwrap() > 0.0 && k.b_g_sq.unwrap() > 0.0);
    }

    #[test]
    fn homogeneous_has_zero_spread() {
        let q = make_quadratic(&QuadraticSpec::default(), 2).unwrap();
        assert!(q.constants().b_f_sq.unwrap() < 1e-25);
        assert_eq!(q.constants().b_g_sq, Some(0.0));
        for i in 1..8 {
            assert_eq!(q.a(i), q.a(0));
            assert_eq!(q.b(i), q.b(0));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = QuadraticSpec {
            mu_g: 0.0,
            ..Default::default()
        };
        assert!(make_quadratic(&bad, 0).is_err());
        let bad = QuadraticSpec {
            p: 0,
            ..Default::default()
        };
        assert!(matches!(
            make_quadratic(&bad, 0),
            Err(Error::InvalidDimensions(_))
        ));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = QuadraticSpec {
            b_g_scale: 0.2,
            ..Default::default()
        };
        let a = make_quadratic(&spec, 9).unwrap();
        let b = make_quadratic(&spec, 9).unwrap();
        assert_eq!(a.a(3), b.a(3));
        assert_eq!(a.c(5), b.c(5));
    }
}

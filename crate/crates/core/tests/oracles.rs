//! Hypergradients, Hessian-inverse estimators and the heterogeneity bound
//! against independent references: finite differences, dense solves and
//! direct measurement.

use std::sync::Arc;

use dsbo::hypergrad::{exact_hv, neumann_inverse_apply, shia_hv, CallCounters};
use dsbo::metrics::heterogeneity;
use dsbo::problem::{
    analytic_hypergradient, make_quadratic, make_synthetic_dataset, partition_heterogeneous,
    phi_value, reference_hypergradient, BilevelOracle, LogRegHpo, PartitionMode, QuadraticSpec,
};
use dsbo::problem::logreg::DEFAULT_LAMBDA_BOX;
use dsbo::{Matrix, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn central_difference(oracle: &dyn BilevelOracle, i: usize, x: &Vector, h: f64) -> Vector {
    Vector::from_fn(x.len(), |j, _| {
        let mut e = Vector::zeros(x.len());
        e[j] = h;
        let up = phi_value(oracle, i, &(x + &e)).unwrap();
        let down = phi_value(oracle, i, &(x - &e)).unwrap();
        (up - down) / (2.0 * h)
    })
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn quadratic_hypergradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let spec = QuadraticSpec {
            m: 3,
            n: 4,
            p: 5,
            b_f_scale: 0.5,
            b_g_scale: 0.5,
            ..QuadraticSpec::default()
        };
        let prob = make_quadratic(&spec, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = Vector::from_fn(spec.n, |_, _| r.random_range(-2.0..2.0));
        for i in 0..spec.m {
            let g = analytic_hypergradient(&prob, i, &x).unwrap();
            let fd = central_difference(&prob, i, &x, 1e-5);
            assert!(rel_err(&g, &fd) <= 1e-5, "seed {seed} node {i}: {}", rel_err(&g, &fd));
        }
    }
}

#[test]
fn logistic_hypergradient_matches_finite_differences() {
    let ds = make_synthetic_dataset(5, 240, 1.0, 4).unwrap();
    let part = partition_heterogeneous(&ds, 4, PartitionMode::Weak, 0.3, 4).unwrap();
    let prob = LogRegHpo::new(Arc::new(ds), part, 4, DEFAULT_LAMBDA_BOX).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let x = Vector::from_fn(5, |_, _| r.random_range(-1.5..1.5));
        let i = r.random_range(0..4);
        let g = reference_hypergradient(&prob, i, &x).unwrap();
        let fd = central_difference(&prob, i, &x, 1e-5);
        assert!(rel_err(&g, &fd) <= 1e-5, "{}", rel_err(&g, &fd));
    }
}

fn random_spd(r: &mut ChaCha8Rng, p: usize, mu: f64, l: f64) -> Matrix {
    let g = Matrix::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
    let q = g.qr().q();
    let mut eigs = Vector::from_fn(p, |_, _| r.random_range(mu..=l));
    eigs[0] = mu;
    if p > 1 {
        eigs[p - 1] = l;
    }
    let a = &q * Matrix::from_diagonal(&eigs) * q.transpose();
    (&a + a.transpose()) * 0.5
}

#[test]
fn truncated_series_within_geometric_bound() {
    let mut r = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..50 {
        let p = r.random_range(1..=20);
        let mu = r.random_range(0.1..1.0);
        let l = mu + r.random_range(0.0..10.0);
        let h = random_spd(&mut r, p, mu, l);
        let rhs = Vector::from_fn(p, |_, _| r.random_range(-1.0..1.0));
        let exact = h.clone().lu().solve(&rhs).unwrap();
        let lambda = 1.0 / l;
        for q in [0usize, 1, 5, 20] {
            let mut c1 = CallCounters::default();
            let mut c2 = CallCounters::default();
            let ns = neumann_inverse_apply(|u| &h * u, lambda, l, q, &rhs, &mut c1).unwrap();
            let sh = shia_hv(|u| &h * u, lambda, l, q, &rhs, &mut c2).unwrap();
            let bound = (1.0 - lambda * mu).powi(q as i32 + 1) * rhs.norm() / mu;
            let err = (&ns - &exact).norm();
            assert!(err <= bound * (1.0 + 1e-10) + 1e-14, "trial {trial} q {q}: {err} > {bound}");
            assert!((&ns - &sh.estimate).norm() <= 1e-12 * (1.0 + ns.norm()));
            assert_eq!(c1.hessian, q as u64 + 1);
            assert_eq!(c2.hessian, q as u64 + 1);
            // the remainder is the inverse applied to the tail
            let tail_err = (&exact - &sh.estimate - exact_hv(&h, &sh.tail).unwrap()).norm();
            assert!(tail_err <= 1e-9 * (1.0 + exact.norm()));
        }
    }
}

#[test]
fn heterogeneity_bound_has_no_violations() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for inst in 0..20u64 {
        let spec = QuadraticSpec {
            m: r.random_range(2..=8),
            n: r.random_range(1..=6),
            p: r.random_range(1..=6),
            coupling: r.random_range(0.2..2.0),
            b_f_scale: r.random_range(0.0..1.0),
            b_g_scale: r.random_range(0.0..1.0),
            domain_radius: 5.0,
            ..QuadraticSpec::default()
        };
        let prob = make_quadratic(&spec, inst).unwrap();
        for _ in 0..5 {
            let dir = Vector::from_fn(spec.n, |_, _| r.random_range(-1.0..1.0));
            let x = dir.normalize() * r.random_range(0.0..spec.domain_radius);
            let h = heterogeneity(&prob, &x).unwrap();
            assert!(h.measured <= h.bound * (1.0 + 1e-12), "{} > {}", h.measured, h.bound);
            checked += 1;
        }
    }
    assert_eq!(checked, 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn neumann_error_decreases_with_terms(seed in 0u64..1000, p in 1usize..8, q in 0usize..30) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let h = random_spd(&mut r, p, 0.5, 3.0);
        let rhs = Vector::from_fn(p, |_, _| r.random_range(-1.0..1.0));
        let exact = exact_hv(&h, &rhs).unwrap();
        let mut c = CallCounters::default();
        let a = neumann_inverse_apply(|u| &h * u, 1.0 / 3.0, 3.0, q, &rhs, &mut c).unwrap();
        let b = neumann_inverse_apply(|u| &h * u, 1.0 / 3.0, 3.0, q + 1, &rhs, &mut c).unwrap();
        prop_assert!((&b - &exact).norm() <= (&a - &exact).norm() + 1e-13);
    }

    #[test]
    fn quadratic_fd_on_random_points(seed in 0u64..200, scale in 0.1f64..3.0) {
        let spec = QuadraticSpec { m: 2, n: 3, p: 3, b_f_scale: 0.3, b_g_scale: 0.3, ..QuadraticSpec::default() };
        let prob = make_quadratic(&spec, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Vector::from_fn(3, |_, _| scale * r.random_range(-1.0..1.0));
        let g = analytic_hypergradient(&prob, 1, &x).unwrap();
        let fd = central_difference(&prob, 1, &x, 1e-5);
        prop_assert!((&g - &fd).norm() <= 1e-5 * (1.0 + fd.norm()));
    }
}

//! Closed-form hypergradient of a quadratic node against central finite
//! differences of its reduced objective, and the Neumann-series estimate of
//! the Hessian-inverse-vector product.

use dsbo::hypergrad::{exact_hv, neumann_inverse_apply, CallCounters};
use dsbo::problem::{analytic_hypergradient, make_quadratic, phi_value, BilevelOracle, QuadraticSpec};
use dsbo::Vector;

fn main() -> dsbo::Result<()> {
    let spec = QuadraticSpec {
        m: 4,
        b_f_scale: 0.5,
        b_g_scale: 0.5,
        ..QuadraticSpec::default()
    };
    let prob = make_quadratic(&spec, 7)?;
    let x = Vector::from_fn(spec.n, |i, _| (i as f64 * 0.7).sin());
    let g = analytic_hypergradient(&prob, 0, &x)?;
    let h = 1e-5;
    let fd = Vector::from_fn(spec.n, |j, _| {
        let mut e = Vector::zeros(spec.n);
        e[j] = h;
        (phi_value(&prob, 0, &(&x + &e)).unwrap() - phi_value(&prob, 0, &(&x - &e)).unwrap())
            / (2.0 * h)
    });
    println!("hypergradient relative FD error: {:.2e}", (&g - &fd).norm() / g.norm());

    let theta = Vector::zeros(spec.p);
    let hess = prob.hess_theta_g(0, &x, &theta);
    let rhs = prob.grad_theta_f(0, &x, &theta);
    let exact = exact_hv(&hess, &rhs)?;
    let lambda = 1.0 / spec.l_g_theta;
    for q in [0, 5, 20, 80] {
        let mut c = CallCounters::default();
        let est = neumann_inverse_apply(|u| &hess * u, lambda, spec.l_g_theta, q, &rhs, &mut c)?;
        println!("Q={q:<3} error={:.3e} hessian_actions={}", (est - &exact).norm(), c.hessian);
    }
    Ok(())
}

//! Theory-facing diagnostics: derived constants, stationarity, the error
//! terms of the Lyapunov function and the heterogeneity bound.

use crate::error::{Error, Result};
use crate::hypergrad::exact_hv;
use crate::optimizers::{NodeState, Scheme, StepSizes};
use crate::problem::{phi_mean, reference_hypergradient, BilevelOracle, NoiseLevels, RawConstants};
use crate::Vector;

/// Raw constants plus every quantity derived from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantsRecord {
    pub raw: RawConstants,
    /// Lipschitz constant of `theta*(x)`.
    pub l_theta_star: f64,
    pub l_v: f64,
    /// Lipschitz constant of `v*(x)`.
    pub l_v_star: f64,
    pub l_f: f64,
    /// Smoothness of `Phi`.
    pub l: f64,
    pub kappa: f64,
    /// Bound on `||v*||`.
    pub m_bound: f64,
    pub l_fg_x: f64,
    pub l_fg_theta: f64,
    pub omega: f64,
    pub phi: f64,
}

impl ConstantsRecord {
    pub fn mu(&self) -> f64 {
        self.raw.mu_g
    }

    pub fn noise(&self) -> NoiseLevels {
        self.raw.noise
    }

    /// `32 C^2 L_fg,theta / mu^2 + L_fg,x`, which recurs in the step-size rules.
    pub fn inner_coupling(&self) -> f64 {
        let c = self.raw.c_g_xtheta;
        let mu = self.raw.mu_g;
        32.0 * c * c * self.l_fg_theta / (mu * mu) + self.l_fg_x
    }
}

fn nonneg(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::NonpositiveConstant { name, value });
    }
    Ok(())
}

/// Derives the composite constants. `mu_g` and `L_g,theta` must be
/// positive; the rest may be zero (e.g. `L_g,xtheta` of a quadratic).
pub fn derive_constants(raw: &RawConstants) -> Result<ConstantsRecord> {
    for (name, v) in [("mu_g", raw.mu_g), ("L_g_theta", raw.l_g_theta)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonpositiveConstant { name, value: v });
        }
    }
    nonneg("L_f_x", raw.l_f_x)?;
    nonneg("L_f_theta", raw.l_f_theta)?;
    nonneg("L_g_xtheta", raw.l_g_xtheta)?;
    nonneg("L_g_thetatheta", raw.l_g_thetatheta)?;
    nonneg("C_f_theta", raw.c_f_theta)?;
    nonneg("C_g_xtheta", raw.c_g_xtheta)?;
    let n = raw.noise;
    for (name, v) in [
        ("sigma_g_theta", n.g_theta),
        ("sigma_g_thetatheta", n.g_thetatheta),
        ("sigma_g_xtheta", n.g_xtheta),
        ("sigma_f_theta", n.f_theta),
        ("sigma_f_x", n.f_x),
    ] {
        nonneg(name, v)?;
    }

    let mu = raw.mu_g;
    let c = raw.c_g_xtheta;
    let l_theta_star = c / mu;
    let l_v = raw.l_f_theta / mu + raw.c_f_theta * raw.l_g_thetatheta / (mu * mu);
    let l_v_star = l_v * (1.0 + l_theta_star);
    let l_f = raw.l_f_x + c * l_v + raw.c_f_theta * raw.l_g_xtheta / mu;
    let l = l_f * (1.0 + l_theta_star);
    let kappa = [
        raw.l_f_x,
        raw.l_f_theta,
        raw.l_g_theta,
        raw.l_g_xtheta,
        raw.l_g_thetatheta,
    ]
    .into_iter()
    .fold(0.0, f64::max)
        / mu;
    let m_bound = raw.c_f_theta / mu;
    let l_fg_x = 2.0 * raw.l_f_x.powi(2) + 4.0 * m_bound.powi(2) * raw.l_g_xtheta.powi(2);
    let l_fg_theta =
        2.0 * raw.l_f_theta.powi(2) + 4.0 * m_bound.powi(2) * raw.l_g_thetatheta.powi(2);
    let omega = mu * raw.l_g_theta / (2.0 * (mu + raw.l_g_theta));
    let phi = (l_fg_x + 32.0 * c * c * l_fg_theta / (mu * mu))
        * (1.0 + 4.0 * raw.l_g_theta.powi(2) / omega.powi(2));
    Ok(ConstantsRecord {
        raw: *raw,
        l_theta_star,
        l_v,
        l_v_star,
        l_f,
        l,
        kappa,
        m_bound,
        l_fg_x,
        l_fg_theta,
        omega,
        phi,
    })
}

/// Weights `(C_1, C_2)` of the heterogeneity bound `C_1 b_f^2 + C_2 b_g^2`.
pub fn heterogeneity_weights(raw: &RawConstants) -> (f64, f64) {
    let mu = raw.mu_g;
    let c = raw.c_g_xtheta;
    let cf = raw.c_f_theta;
    let c1 = 4.0 + 4.0 * c * c / (mu * mu);
    let c2 = 4.0
        * (4.0 * cf * cf * c * c / mu.powi(4)
            + 4.0 * cf * cf / (mu * mu)
            + raw.l_f_x.powi(2) / (mu * mu)
            + raw.l_f_theta.powi(2) * c * c / mu.powi(4)
            + 4.0 * cf * cf * c * c * raw.l_g_thetatheta.powi(2) / mu.powi(6)
            + 4.0 * cf * cf * raw.l_g_xtheta.powi(2) / mu.powi(4));
    (c1, c2)
}

/// Measured `sum_i ||grad Phi_i(x) - grad Phi(x)||^2` and its bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Heterogeneity {
    pub measured: f64,
    pub bound: f64,
}

pub fn heterogeneity(oracle: &dyn BilevelOracle, x: &Vector) -> Result<Heterogeneity> {
    if !oracle.is_analytic() {
        return Err(Error::NotAnalytic);
    }
    let raw = oracle.constants();
    let (b_f, b_g) = match (raw.b_f_sq, raw.b_g_sq) {
        (Some(f), Some(g)) => (f, g),
        _ => return Err(Error::NotAnalytic),
    };
    let grads = node_hypergradients(oracle, x)?;
    let mean = mean_of(&grads);
    let measured = grads.iter().map(|g| (g - &mean).norm_squared()).sum();
    let (c1, c2) = heterogeneity_weights(raw);
    Ok(Heterogeneity {
        measured,
        bound: c1 * b_f + c2 * b_g,
    })
}

fn node_hypergradients(oracle: &dyn BilevelOracle, x: &Vector) -> Result<Vec<Vector>> {
    (0..oracle.num_nodes())
        .map(|i| {
            reference_hypergradient(oracle, i, x).map_err(|e| match e {
                Error::NotAnalytic => e,
                other => Error::InnerSolverFailed(other.to_string()),
            })
        })
        .collect()
}

pub(crate) fn mean_of(vs: &[Vector]) -> Vector {
    let mut acc = Vector::zeros(vs[0].len());
    for v in vs {
        acc += v;
    }
    acc / vs.len() as f64
}

fn spread(vs: &[Vector]) -> f64 {
    let mean = mean_of(vs);
    vs.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / vs.len() as f64
}

/// `||grad Phi(x)||^2` with `grad Phi` the network average.
pub fn stationarity(oracle: &dyn BilevelOracle, x_bar: &Vector) -> Result<f64> {
    Ok(mean_of(&node_hypergradients(oracle, x_bar)?).norm_squared())
}

/// One recorded snapshot of a run. Error terms are averaged over nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub stationarity: f64,
    pub consensus_err: f64,
    pub grad_err: f64,
    pub hv_err: Option<f64>,
    pub inner_err: Option<f64>,
    pub ave_var_err: f64,
    pub var_err: f64,
    pub lyapunov: Option<f64>,
    pub hessian_calls: u64,
    pub grad_calls: u64,
    pub wall_time_ms: f64,
}

/// The diagnostics of one swarm snapshot. Terms that need the exact inner
/// solution and Hessian-inverse product are `None` on non-analytic oracles.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBreakdown {
    pub stationarity: f64,
    pub consensus_err: f64,
    pub grad_err: f64,
    pub hv_err: Option<f64>,
    pub inner_err: Option<f64>,
    pub ave_var_err: f64,
    pub var_err: f64,
}

pub fn error_breakdown(nodes: &[NodeState], oracle: &dyn BilevelOracle) -> Result<ErrorBreakdown> {
    if nodes.len() != oracle.num_nodes() || nodes.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: oracle.num_nodes(),
            got: nodes.len(),
        });
    }
    let m = nodes.len() as f64;
    let xs: Vec<Vector> = nodes.iter().map(|n| n.x.clone()).collect();
    let ys: Vec<Vector> = nodes.iter().map(|n| n.y.clone()).collect();
    let zs: Vec<Vector> = nodes.iter().map(|n| n.z.clone()).collect();
    let x_bar = mean_of(&xs);
    let grads = node_hypergradients(oracle, &x_bar)?;
    let grad_bar = mean_of(&grads);
    let z_bar = mean_of(&zs);

    let (hv_err, inner_err) = if oracle.is_analytic() {
        let mut hv = 0.0;
        let mut inner = 0.0;
        for (i, node) in nodes.iter().enumerate() {
            let theta = oracle.reference_inner_solution(i, &x_bar)?;
            let h = oracle.hess_theta_g(i, &x_bar, &theta);
            let v = exact_hv(&h, &oracle.grad_theta_f(i, &x_bar, &theta))?;
            hv += (&node.v - v).norm_squared();
            inner += (&node.theta - theta).norm_squared();
        }
        (Some(hv / m), Some(inner / m))
    } else {
        (None, None)
    };

    Ok(ErrorBreakdown {
        stationarity: grad_bar.norm_squared(),
        consensus_err: spread(&xs),
        grad_err: spread(&ys),
        hv_err,
        inner_err,
        ave_var_err: (&grad_bar - z_bar).norm_squared(),
        var_err: grads
            .iter()
            .zip(&zs)
            .map(|(g, z)| (g - z).norm_squared())
            .sum::<f64>()
            / m,
    })
}

/// `d_0 .. d_6` for the local-gradient or gradient-tracking analysis.
pub fn lyapunov_coefficients(
    rec: &ConstantsRecord,
    steps: &StepSizes,
    rho: f64,
    variant: Scheme,
) -> [f64; 7] {
    let StepSizes {
        alpha,
        beta,
        lambda,
        gamma,
        tau,
    } = *steps;
    let c = rec.raw.c_g_xtheta;
    let mu = rec.mu();
    let gap = 1.0 - rho;
    let d1 = 8.0 * c * c * tau * alpha / (mu * lambda);
    let d2 = rec.inner_coupling() * tau * alpha / (rec.omega * beta);
    let d3 = tau * alpha / (2.0 * gamma);
    let phi = rec.phi;
    let (d4, d5, d6) = if variant.is_tracking() {
        (
            64.0 * phi * tau * gamma * alpha * alpha / gap.powi(4),
            4.0 * phi * alpha / gap,
            16.0 * phi * tau * alpha * alpha / gap.powi(3),
        )
    } else {
        (
            24.0 * phi * tau * alpha.powi(4) / (gap * gap * gamma),
            2.0 * phi * alpha / gap,
            0.0,
        )
    };
    [1.0, d1, d2, d3, d4, d5, d6]
}

/// Value of the Lyapunov function at a snapshot, with the breakdown it was
/// assembled from.
pub fn lyapunov(
    nodes: &[NodeState],
    oracle: &dyn BilevelOracle,
    rec: &ConstantsRecord,
    steps: &StepSizes,
    rho: f64,
    variant: Scheme,
) -> Result<(f64, ErrorBreakdown)> {
    if !oracle.is_analytic() {
        return Err(Error::NotAnalytic);
    }
    let e = error_breakdown(nodes, oracle)?;
    let xs: Vec<Vector> = nodes.iter().map(|n| n.x.clone()).collect();
    let phi = phi_mean(oracle, &mean_of(&xs))?;
    Ok((lyapunov_from(&e, phi, rec, steps, rho, variant), e))
}

pub(crate) fn lyapunov_from(
    e: &ErrorBreakdown,
    phi_value: f64,
    rec: &ConstantsRecord,
    steps: &StepSizes,
    rho: f64,
    variant: Scheme,
) -> f64 {
    let d = lyapunov_coefficients(rec, steps, rho, variant);
    let terms = [
        phi_value,
        e.hv_err.unwrap_or(0.0),
        e.inner_err.unwrap_or(0.0),
        e.ave_var_err,
        e.var_err,
        e.consensus_err,
        e.grad_err,
    ];
    d.iter().zip(terms).map(|(d, t)| d * t).sum()
}

/// Step-size proportionality constants `gamma = c_gamma alpha` etc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRatios {
    pub c_gamma: f64,
    pub c_lambda: f64,
    pub c_beta: f64,
}

/// Aggregate variance constants of the rate bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceAggregates {
    /// Weight of the heterogeneity bias, `24 alpha phi / ((1-rho)^2 gamma)` at unit `alpha`.
    pub vartheta: f64,
    pub sigma_sq: f64,
    /// Peer-level part `sigma_p`.
    pub sigma_p: f64,
    /// Consensus-level part `sigma_c`.
    pub sigma_c: f64,
    pub sigma_hat: f64,
}

pub fn variance_aggregates(
    rec: &ConstantsRecord,
    ratios: &StepRatios,
    rho: f64,
    m: usize,
    variant: Scheme,
) -> VarianceAggregates {
    let StepRatios {
        c_gamma,
        c_lambda,
        c_beta,
    } = *ratios;
    let c = rec.raw.c_g_xtheta;
    let mu = rec.mu();
    let n = rec.noise();
    let mb = rec.m_bound;
    let gap = 1.0 - rho;
    let mf = m as f64;
    let phi = rec.phi;
    // d_j / tau at unit alpha
    let d1 = 8.0 * c * c / (mu * c_lambda);
    let d2 = rec.inner_coupling() / (rec.omega * c_beta);
    let d3 = 1.0 / (2.0 * c_gamma);
    let vartheta = 24.0 * phi / (gap * gap * c_gamma);
    let tracking = variant.is_tracking();
    let d4 = if tracking {
        64.0 * phi * c_gamma / gap.powi(4)
    } else {
        0.0
    };
    let d6 = if tracking {
        16.0 * phi / gap.powi(3)
    } else {
        0.0
    };
    let outer_var = n.f_x.powi(2) + 2.0 * mb * mb * n.g_xtheta.powi(2);
    let mut lead = d3 / mf + d4;
    if tracking {
        lead += 2.0 * d6 / gap;
    }
    let sigma_sq = lead * outer_var * c_gamma * c_gamma
        + 2.0
            * d1
            * (n.f_theta.powi(2) + 2.0 * mb * mb * n.g_thetatheta.powi(2))
            * c_lambda
            * c_lambda
        + 2.0 * d2 * n.g_theta.powi(2) * c_beta * c_beta;
    let sigma_p = d1.sqrt() * (n.f_theta + 2.0 * mb * n.g_thetatheta) * c_lambda
        + d2.sqrt() * n.g_theta * c_beta;
    let sigma_c = d3.sqrt() * (n.f_x + 2.0 * mb * n.g_xtheta) * c_gamma;
    let sigma_hat = if tracking {
        2f64.sqrt() * sigma_p + 2.0 / mf.sqrt() * sigma_c
    } else {
        2f64.sqrt() * sigma_p + (2.0 / mf).sqrt() * sigma_c
    };
    VarianceAggregates {
        vartheta,
        sigma_sq,
        sigma_p,
        sigma_c,
        sigma_hat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(l: f64, mu: f64) -> RawConstants {
        RawConstants {
            mu_g: mu,
            l_f_x: l,
            l_f_theta: l,
            l_g_theta: l,
            l_g_xtheta: l,
            l_g_thetatheta: l,
            c_f_theta: l,
            c_g_xtheta: l,
            noise: NoiseLevels::default(),
            b_f_sq: None,
            b_g_sq: None,
        }
    }

    #[test]
    fn kappa_and_m() {
        let r = derive_constants(&raw(2.0, 1.0)).unwrap();
        assert_eq!(r.kappa, 2.0);
        let r = derive_constants(&raw(1.0, 1.0)).unwrap();
        assert_eq!(r.m_bound, 1.0);
    }

    #[test]
    fn chained_lipschitz() {
        let r = derive_constants(&raw(1.0, 1.0)).unwrap();
        assert_eq!(r.l_theta_star, 1.0);
        assert_eq!(r.l_v, 2.0);
        assert_eq!(r.l_v_star, 4.0);
        // L_f = 1 + 1*2 + 1*1 = 4, L = 8
        assert_eq!(r.l_f, 4.0);
        assert_eq!(r.l, 8.0);
        // omega = 1/4, phi = (2+4 + 32*(2+4)) * (1 + 4*16)
        assert_eq!(r.omega, 0.25);
        assert_eq!(r.phi, 198.0 * 65.0);
    }

    #[test]
    fn rejects_bad_constants() {
        let mut r = raw(1.0, 0.0);
        assert!(matches!(
            derive_constants(&r),
            Err(Error::NonpositiveConstant { name: "mu_g", .. })
        ));
        r.mu_g = 1.0;
        r.c_f_theta = -1.0;
        assert!(derive_constants(&r).is_err());
        r.c_f_theta = f64::NAN;
        assert!(derive_constants(&r).is_err());
        r.c_f_theta = 0.0;
        assert!(derive_constants(&r).is_ok());
    }

    #[test]
    fn c1_value() {
        let (c1, _) = heterogeneity_weights(&raw(1.0, 1.0));
        assert_eq!(c1, 8.0);
    }

    #[test]
    fn d1_and_lg_d6() {
        let rec = derive_constants(&raw(1.0, 1.0)).unwrap();
        let steps = StepSizes {
            alpha: 0.01,
            beta: 0.01,
            lambda: 0.008,
            gamma: 0.4,
            tau: 0.5,
        };
        let d = lyapunov_coefficients(&rec, &steps, 0.5, Scheme::Lg);
        assert!((d[1] - 5.0).abs() < 1e-12);
        assert_eq!(d[6], 0.0);
        let d = lyapunov_coefficients(&rec, &steps, 0.5, Scheme::Gt);
        assert!(d[6] > 0.0);
    }

    #[test]
    fn monotone_in_mu() {
        let mut prev = derive_constants(&raw(3.0, 0.5)).unwrap();
        for k in 1..20 {
            let r = derive_constants(&raw(3.0, 0.5 + 0.25 * k as f64)).unwrap();
            assert!(r.kappa <= prev.kappa);
            assert!(r.m_bound <= prev.m_bound);
            assert!(r.l_theta_star <= prev.l_theta_star);
            prev = r;
        }
    }
}

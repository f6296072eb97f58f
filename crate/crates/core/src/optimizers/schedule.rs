//! Step-size schedules of the rate corollaries.
//!
//! `alpha` follows a min-rule over an upper bound `u` (or `u'`) and the
//! `K`-dependent balancing terms; the other step sizes are proportional to
//! `alpha`. Every constant the analysis leaves open can be overridden via
//! [`ScheduleTuning`].

use std::fmt;
use std::str::FromStr;

use super::{beta_cap, Scheme, StepSizes};
use crate::error::{Error, Result};
use crate::metrics::{heterogeneity_weights, variance_aggregates, ConstantsRecord, StepRatios};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    Lg,
    Gt,
    LgDeterministic,
    GtDeterministic,
    Manual,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Lg => "lg",
            ScheduleKind::Gt => "gt",
            ScheduleKind::LgDeterministic => "lg_deterministic",
            ScheduleKind::GtDeterministic => "gt_deterministic",
            ScheduleKind::Manual => "manual",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lg" => Ok(ScheduleKind::Lg),
            "gt" => Ok(ScheduleKind::Gt),
            "lg_deterministic" => Ok(ScheduleKind::LgDeterministic),
            "gt_deterministic" => Ok(ScheduleKind::GtDeterministic),
            "manual" => Ok(ScheduleKind::Manual),
            _ => Err(format!("unknown schedule '{s}'")),
        }
    }
}

impl ScheduleKind {
    fn variant(self) -> Scheme {
        match self {
            ScheduleKind::Gt | ScheduleKind::GtDeterministic => Scheme::Gt,
            _ => Scheme::Lg,
        }
    }
}

/// Overrides for the constants of the schedule. `None` means the default
/// derived from the constants record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleTuning {
    pub tau: f64,
    /// Initial Lyapunov gap estimate.
    pub v0: f64,
    pub u: Option<f64>,
    pub a0: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub c_gamma: Option<f64>,
    pub c_lambda: Option<f64>,
    pub c_beta: Option<f64>,
    /// Replaces `C_1 b_f^2 + C_2 b_g^2`.
    pub b_sq: Option<f64>,
    /// Apply the noise- and network-dependent caps of the analysis on top of
    /// `lambda < 1/mu`, the `beta` bound and `gamma <= 1`.
    pub theorem_caps: bool,
}

impl Default for ScheduleTuning {
    fn default() -> Self {
        ScheduleTuning {
            tau: 0.5,
            v0: 1.0,
            u: None,
            a0: None,
            a1: None,
            a2: None,
            c_gamma: None,
            c_lambda: None,
            c_beta: None,
            b_sq: None,
            theorem_caps: true,
        }
    }
}

/// Upper bound on `alpha` and caps on the proportional step sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepBounds {
    pub u: f64,
    pub lambda_cap: f64,
    pub beta_cap: f64,
    pub gamma_cap: f64,
    pub ratios: StepRatios,
}

/// `a / b`, or infinity when `b` is zero.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

fn min_of(vals: &[f64]) -> f64 {
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Default proportionality constants: the smallest admissible values.
pub fn default_ratios(rec: &ConstantsRecord, tau: f64) -> StepRatios {
    let c = rec.raw.c_g_xtheta;
    StepRatios {
        c_gamma: 4.0 * rec.l * tau,
        c_lambda: 48.0 * rec.l_v_star * c * tau / rec.mu(),
        c_beta: 6.0 * rec.l_theta_star / rec.omega * rec.inner_coupling().sqrt() * tau,
    }
}

pub fn step_bounds(
    rec: &ConstantsRecord,
    rho: f64,
    tuning: &ScheduleTuning,
    variant: Scheme,
) -> StepBounds {
    let tau = tuning.tau;
    let c = rec.raw.c_g_xtheta;
    let mu = rec.mu();
    let lg = rec.raw.l_g_theta;
    let l = rec.l;
    let gap = 1.0 - rho;
    let phi = rec.phi;
    let ic = rec.inner_coupling();
    let lfgx = rec.l_fg_x;
    let s_gxt = rec.raw.noise.g_xtheta;
    let s_gtt = rec.raw.noise.g_thetatheta;
    let bc = beta_cap(mu, lg);

    let defaults = default_ratios(rec, tau);
    let ratios = StepRatios {
        c_gamma: tuning.c_gamma.unwrap_or(defaults.c_gamma),
        c_lambda: tuning.c_lambda.unwrap_or(defaults.c_lambda),
        c_beta: tuning.c_beta.unwrap_or(defaults.c_beta),
    };

    let u3_lambda = ratio(
        1f64.min(ratio(mu * mu, 8.0 * s_gxt * s_gxt)),
        96.0 * tau * rec.l_v_star * c,
    );
    let u3_beta = ratio(bc * rec.omega, 12.0 * tau * ic.sqrt() * rec.l_theta_star);

    if variant.is_tracking() {
        let tl = tau * l;
        let g43 = gap.powf(4.0 / 3.0);
        let u1 = (1.0 / (2.0 * tl)).min(ratio(gap * gap, 32.0 * phi.sqrt() * tl.sqrt()));
        let u2 = min_of(&[
            ratio(0.8 * c * c, s_gtt * s_gtt),
            ratio(g43 * tl.cbrt(), 6.0 * phi.cbrt()),
            ratio(
                g43 * tl.cbrt() * c.powf(2.0 / 3.0),
                3.0 * phi.cbrt() * s_gtt.powf(2.0 / 3.0),
            ),
            ratio(g43 * tl.cbrt() * ic.cbrt(), 4.0 * phi.cbrt() * lfgx.cbrt()),
            ratio(g43 * tl.cbrt(), 4.0 * lfgx.cbrt()),
        ]);
        let u = min_of(&[u1, 1f64.min(u2) / (8.0 * tl), u3_lambda, u3_beta]);
        StepBounds {
            u,
            lambda_cap: (1.0 / mu).min(ratio(mu, 20.0 * s_gtt * s_gtt)),
            beta_cap: bc,
            gamma_cap: 1f64.min(u2),
            ratios,
        }
    } else {
        let g23 = gap.powf(2.0 / 3.0);
        let u1 = 1.0 / (2.0 * tau * l);
        let u2 = min_of(&[
            ratio(gap, 12.0 * phi.sqrt()),
            ratio(g23, 4.0 * phi.cbrt()),
            ratio(ic.cbrt() * g23, 4.0 * phi.cbrt()),
            ratio(gap.sqrt(), 3.0 * lfgx.powf(0.25)),
            ratio(
                c.powf(2.0 / 3.0) * g23,
                4.0 * phi.cbrt() * s_gxt.powf(2.0 / 3.0),
            ),
        ]);
        let gamma_cap = 1f64.min(ratio(2.0 * c * c, s_gxt * s_gxt));
        let u3 = min_of(&[u3_lambda, u3_beta, gamma_cap / (8.0 * l * tau)]);
        StepBounds {
            u: min_of(&[u1, u2, u3]),
            lambda_cap: (1.0 / mu).min(ratio(mu, 8.0 * s_gxt * s_gxt)),
            beta_cap: bc,
            gamma_cap,
            ratios,
        }
    }
}

/// Builds step sizes for `K` rounds. `manual` supplies the values for
/// [`ScheduleKind::Manual`], which are only checked.
pub fn schedule_stepsizes(
    kind: ScheduleKind,
    iterations: usize,
    rec: Option<&ConstantsRecord>,
    rho: f64,
    m: usize,
    manual: Option<StepSizes>,
    tuning: &ScheduleTuning,
) -> Result<StepSizes> {
    if kind == ScheduleKind::Manual {
        let steps = manual.ok_or_else(|| {
            Error::ConfigInvalid("manual schedule needs explicit step sizes".into())
        })?;
        match rec {
            Some(r) => steps.validate(&r.raw, Scheme::Lg, false)?,
            None => steps.check_basic()?,
        }
        return Ok(steps);
    }
    let rec = rec.ok_or_else(|| {
        Error::ConfigInvalid(format!("schedule '{kind}' needs the constants record"))
    })?;
    if !(tuning.tau > 0.0 && tuning.tau <= 1.0) {
        return Err(Error::StepSizeOutOfRange {
            name: "tau",
            value: tuning.tau,
            range: "(0, 1]".into(),
        });
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParams(format!("rho = {rho} outside [0, 1)")));
    }
    let variant = kind.variant();
    let bounds = step_bounds(rec, rho, tuning, variant);
    let u = tuning.u.unwrap_or(bounds.u);
    let agg = variance_aggregates(rec, &bounds.ratios, rho, m, variant);
    let kp1 = (iterations + 1) as f64;

    let alpha = match kind {
        ScheduleKind::Lg | ScheduleKind::LgDeterministic => {
            let a0 = tuning.a0.unwrap_or(4.0 * tuning.v0);
            let b_sq = tuning.b_sq.unwrap_or_else(|| {
                let (c1, c2) = heterogeneity_weights(&rec.raw);
                c1 * rec.raw.b_f_sq.unwrap_or(0.0) + c2 * rec.raw.b_g_sq.unwrap_or(0.0)
            });
            let a2 = tuning.a2.unwrap_or(4.0 * agg.vartheta * b_sq / m as f64);
            let cubic = ratio(a0, a2 * kp1).cbrt();
            if kind == ScheduleKind::LgDeterministic {
                u.min(cubic)
            } else {
                let a1 = tuning.a1.unwrap_or(4.0 * agg.sigma_hat * agg.sigma_hat);
                min_of(&[u, ratio(a0, a1 * kp1).sqrt(), cubic])
            }
        }
        ScheduleKind::Gt => {
            let a0 = tuning.a0.unwrap_or(2.0 * tuning.v0);
            let a1 = tuning.a1.unwrap_or(2.0 * agg.sigma_hat * agg.sigma_hat);
            u.min(ratio(a0, a1 * kp1).sqrt())
        }
        ScheduleKind::GtDeterministic => u,
        ScheduleKind::Manual => unreachable!(),
    };
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InfeasibleSchedule {
            name: "alpha",
            lower: alpha,
            cap: u,
        });
    }

    let r = bounds.ratios;
    let (gamma_cap, lambda_cap) = if tuning.theorem_caps {
        (bounds.gamma_cap, bounds.lambda_cap)
    } else {
        (1.0, 1.0 / rec.mu())
    };
    let mut out = [0.0; 3];
    for (slot, (name, c, cap)) in out.iter_mut().zip([
        ("gamma", r.c_gamma, gamma_cap),
        ("lambda", r.c_lambda, lambda_cap),
        ("beta", r.c_beta, bounds.beta_cap),
    ]) {
        let v = c * alpha;
        let over = if name == "gamma" { v > cap } else { v >= cap };
        if !(v > 0.0) || over {
            return Err(Error::InfeasibleSchedule {
                name,
                lower: v,
                cap,
            });
        }
        *slot = v;
    }
    Ok(StepSizes {
        alpha,
        gamma: out[0],
        lambda: out[1],
        beta: out[2],
        tau: tuning.tau,
    })
}

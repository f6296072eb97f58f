//! Multi-node round structure of the loopless trackers and the Q-loop
//! baselines, plus the run driver and step-size schedules.

mod schedule;

pub use schedule::{
    default_ratios, schedule_stepsizes, step_bounds, ScheduleKind, ScheduleTuning, StepBounds,
};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::hypergrad::{
    check_gamma, check_hv_lambda, check_neumann_lambda, hv_residual, hypergrad_sample,
    neumann_inverse_apply, shia_hv, CallCounters,
};
use crate::metrics::{derive_constants, error_breakdown, lyapunov_from, mean_of, TraceRow};
use crate::net_graph::WeightMatrix;
use crate::problem::{phi_mean, BatchSizes, BilevelOracle, RawConstants};
use crate::rng::{self, Stream};
use crate::Vector;

/// Any tracked norm above this aborts the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

// Draw indices of the per-node, per-round random streams.
const DRAW_GRAD_THETA_G: u64 = 0;
const DRAW_HESS: u64 = 1;
const DRAW_GRAD_THETA_F: u64 = 2;
const DRAW_GRAD_X_F: u64 = 3;
const DRAW_JAC: u64 = 4;
const DRAW_LOOP_BASE: u64 = 5;
const INIT_TAG: u64 = 0x7830;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl StepSizes {
    /// Range checks that need no oracle.
    pub fn check_basic(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::StepSizeOutOfRange {
                    name,
                    value: v,
                    range: "(0, inf)".into(),
                });
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::StepSizeOutOfRange {
                name: "tau",
                value: self.tau,
                range: "(0, 1]".into(),
            });
        }
        check_gamma(self.gamma)
    }

    /// Full checks against the oracle constants. The `beta` and `lambda`
    /// bounds are skipped when `allow_unsafe` is set.
    pub fn validate(&self, raw: &RawConstants, scheme: Scheme, allow_unsafe: bool) -> Result<()> {
        self.check_basic()?;
        if allow_unsafe {
            return Ok(());
        }
        if scheme.is_qloop() {
            check_neumann_lambda(self.lambda, raw.l_g_theta)?;
        } else {
            check_hv_lambda(self.lambda, raw.mu_g)?;
        }
        let cap = beta_cap(raw.mu_g, raw.l_g_theta);
        if !(self.beta < cap) {
            return Err(Error::StepSizeOutOfRange {
                name: "beta",
                value: self.beta,
                range: format!("(0, {cap})"),
            });
        }
        Ok(())
    }
}

/// `min{2/(mu+L), (mu+L)/(2 mu L)}`.
pub fn beta_cap(mu: f64, l: f64) -> f64 {
    (2.0 / (mu + l)).min((mu + l) / (2.0 * mu * l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Local gradient: `y = z`.
    Lg,
    /// Gradient tracking: `y' = W y + z' - z`.
    Gt,
    QloopLg,
    QloopGt,
}

impl Scheme {
    pub fn is_tracking(self) -> bool {
        matches!(self, Scheme::Gt | Scheme::QloopGt)
    }

    pub fn is_qloop(self) -> bool {
        matches!(self, Scheme::QloopLg | Scheme::QloopGt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Lg => "LG",
            Scheme::Gt => "GT",
            Scheme::QloopLg => "QLOOP_LG",
            Scheme::QloopGt => "QLOOP_GT",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "LG" => Ok(Scheme::Lg),
            "GT" => Ok(Scheme::Gt),
            "QLOOP_LG" => Ok(Scheme::QloopLg),
            "QLOOP_GT" => Ok(Scheme::QloopGt),
            _ => Err(format!("unknown scheme '{s}'")),
        }
    }
}

/// Hessian-inverse estimator of the Q-loop baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Estimator {
    Ns,
    Shia,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Ns => "NS",
            Estimator::Shia => "SHIA",
        })
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "NS" => Ok(Estimator::Ns),
            "SHIA" => Ok(Estimator::Shia),
            _ => Err(format!("unknown estimator '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scheme: Scheme,
    /// Number of rounds `K`.
    pub iterations: usize,
    pub steps: StepSizes,
    pub batch: BatchSizes,
    /// Neumann terms of the Q-loop baselines.
    pub q: usize,
    /// Inner SGD steps per round of the Q-loop baselines.
    pub inner_steps: usize,
    pub estimator: Estimator,
    pub seed: u64,
    /// A trace row is recorded every `cadence` rounds and after the last one.
    pub cadence: usize,
    /// Standard deviation of the shared initial `x`.
    pub init_scale: f64,
    /// Worker threads for the per-node updates.
    pub threads: usize,
    pub allow_unsafe_steps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Gt,
            iterations: 1000,
            steps: StepSizes {
                alpha: 0.01,
                beta: 0.01,
                lambda: 0.008,
                gamma: 0.4,
                tau: 0.4,
            },
            batch: BatchSizes::default(),
            q: 10,
            inner_steps: 1,
            estimator: Estimator::Ns,
            seed: 0,
            cadence: 1,
            init_scale: 1.0,
            threads: 1,
            allow_unsafe_steps: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, raw: &RawConstants) -> Result<()> {
        if self.cadence == 0 {
            return Err(Error::ConfigInvalid("cadence must be at least 1".into()));
        }
        if self.scheme.is_qloop() && (self.q == 0 || self.inner_steps == 0) {
            return Err(Error::ConfigInvalid(
                "Q-loop schemes need q >= 1 and inner_steps >= 1".into(),
            ));
        }
        if self.batch.inner == 0 || self.batch.outer == 0 {
            return Err(Error::ConfigInvalid("batch sizes must be positive".into()));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "init_scale = {} must be finite and non-negative",
                self.init_scale
            )));
        }
        self.steps
            .validate(raw, self.scheme, self.allow_unsafe_steps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub x: Vector,
    pub theta: Vector,
    pub v: Vector,
    pub d: Vector,
    pub h: Vector,
    pub s: Vector,
    pub z: Vector,
    pub y: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwarmState {
    pub nodes: Vec<NodeState>,
    /// Rounds completed.
    pub round: usize,
    /// Oracle calls made by all nodes during the rounds (initialization
    /// excluded).
    pub counters: CallCounters,
}

impl SwarmState {
    pub fn x_bar(&self) -> Vector {
        mean_of(&self.xs())
    }

    pub fn y_bar(&self) -> Vector {
        mean_of(&self.nodes.iter().map(|n| n.y.clone()).collect::<Vec<_>>())
    }

    pub fn z_bar(&self) -> Vector {
        mean_of(&self.nodes.iter().map(|n| n.z.clone()).collect::<Vec<_>>())
    }

    pub fn xs(&self) -> Vec<Vector> {
        self.nodes.iter().map(|n| n.x.clone()).collect()
    }
}

fn draw(seed: u64, node: usize, round: usize, d: u64) -> Stream {
    rng::stream(seed, node as u64, round as u64, d)
}

/// Shared `x^0`, then one sample per node at `theta = v = 0`.
pub fn init_run(
    oracle: &dyn BilevelOracle,
    weights: &WeightMatrix,
    config: &RunConfig,
) -> Result<SwarmState> {
    let m = oracle.num_nodes();
    if weights.m() != m {
        return Err(Error::ConfigInvalid(format!(
            "oracle has {m} nodes but weight matrix has {}",
            weights.m()
        )));
    }
    config.validate(oracle.constants())?;
    let n = oracle.outer_dim();
    let p = oracle.inner_dim();
    let mut r = rng::aux_stream(config.seed, INIT_TAG);
    let x0 = Vector::from_fn(n, |_, _| {
        config.init_scale * crate::problem::std_normal(&mut r)
    });
    let b = config.batch;
    let nodes = (0..m)
        .map(|i| {
            let theta = Vector::zeros(p);
            let v = Vector::zeros(p);
            let s = config.seed;
            let d = oracle.sample_grad_theta_g(
                i,
                &x0,
                &theta,
                b.inner,
                &mut draw(s, i, 0, DRAW_GRAD_THETA_G),
            );
            let gf = oracle.sample_grad_theta_f(
                i,
                &x0,
                &theta,
                b.outer,
                &mut draw(s, i, 0, DRAW_GRAD_THETA_F),
            );
            let gx =
                oracle.sample_grad_x_f(i, &x0, &theta, b.outer, &mut draw(s, i, 0, DRAW_GRAD_X_F));
            let s0 = gx;
            NodeState {
                x: x0.clone(),
                theta,
                v,
                d,
                h: -gf,
                s: s0.clone(),
                z: s0.clone(),
                y: s0,
            }
        })
        .collect();
    Ok(SwarmState {
        nodes,
        round: 0,
        counters: CallCounters::default(),
    })
}

fn check_finite(round: usize, node: usize, st: &NodeState) -> Result<()> {
    for (quantity, v) in [
        ("x", &st.x),
        ("theta", &st.theta),
        ("v", &st.v),
        ("y", &st.y),
        ("z", &st.z),
    ] {
        let norm = v.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::DivergenceDetected {
                round,
                node,
                quantity,
                norm,
            });
        }
    }
    Ok(())
}

/// Runs `f` for every node, on `threads` workers when more than one is
/// requested. Results are returned in node order.
fn per_node<F>(m: usize, threads: usize, f: F) -> Vec<Result<NodeState>>
where
    F: Fn(usize) -> Result<NodeState> + Sync,
{
    if threads <= 1 || m <= 1 {
        return (0..m).map(&f).collect();
    }
    let chunk = m.div_ceil(threads.min(m));
    let f = &f;
    std::thread::scope(|sc| {
        let handles: Vec<_> = (0..m)
            .step_by(chunk)
            .map(|start| {
                sc.spawn(move || (start..(start + chunk).min(m)).map(f).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn commit(
    swarm: &mut SwarmState,
    results: Vec<Result<NodeState>>,
    per_node: CallCounters,
) -> Result<()> {
    let round = swarm.round + 1;
    let mut nodes = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let st = r?;
        check_finite(round, i, &st)?;
        nodes.push(st);
    }
    let m = nodes.len() as u64;
    swarm.nodes = nodes;
    swarm.round = round;
    swarm.counters.hessian += per_node.hessian * m;
    swarm.counters.jacobian += per_node.jacobian * m;
    swarm.counters.grad += per_node.grad * m;
    Ok(())
}

/// `x' = (1 - tau) x + tau (sum_j w_ij x_j - alpha y)`.
fn relaxed_consensus(x: &Vector, mixed: &Vector, y: &Vector, steps: &StepSizes) -> Vector {
    x * (1.0 - steps.tau) + (mixed - y * steps.alpha) * steps.tau
}

/// Direction update: `y' = z'` or `y' = (W y)_i + z' - z`.
fn direction(scheme: Scheme, mixed_y: &Vector, z_new: &Vector, z_old: &Vector) -> Vector {
    if scheme.is_tracking() {
        mixed_y + z_new - z_old
    } else {
        z_new.clone()
    }
}

/// One round of the loopless method.
pub fn lopa_round(
    swarm: &mut SwarmState,
    oracle: &dyn BilevelOracle,
    weights: &WeightMatrix,
    config: &RunConfig,
) -> Result<()> {
    if config.scheme.is_qloop() {
        return Err(Error::ConfigInvalid(format!(
            "{} is not a loopless scheme",
            config.scheme
        )));
    }
    let steps = config.steps;
    steps.check_basic()?;
    let round = swarm.round + 1;
    let xs = swarm.xs();
    let mixed_x = weights.mix(&xs);
    let mixed_y = if config.scheme.is_tracking() {
        weights.mix(&swarm.nodes.iter().map(|n| n.y.clone()).collect::<Vec<_>>())
    } else {
        Vec::new()
    };
    let b = config.batch;
    let seed = config.seed;
    let old = &swarm.nodes;
    let results = per_node(old.len(), config.threads, |i| {
        let st = &old[i];
        let theta = &st.theta - &st.d * steps.beta;
        let v = &st.v - &st.h * steps.lambda;
        let x = relaxed_consensus(&st.x, &mixed_x[i], &st.y, &steps);

        let d = oracle.sample_grad_theta_g(
            i,
            &x,
            &theta,
            b.inner,
            &mut draw(seed, i, round, DRAW_GRAD_THETA_G),
        );
        let hess = oracle.sample_hess_theta_g(
            i,
            &x,
            &theta,
            b.inner,
            &mut draw(seed, i, round, DRAW_HESS),
        );
        let gf = oracle.sample_grad_theta_f(
            i,
            &x,
            &theta,
            b.outer,
            &mut draw(seed, i, round, DRAW_GRAD_THETA_F),
        );
        let gx = oracle.sample_grad_x_f(
            i,
            &x,
            &theta,
            b.outer,
            &mut draw(seed, i, round, DRAW_GRAD_X_F),
        );
        let jac =
            oracle.sample_jac_xtheta_g(i, &x, &theta, b.inner, &mut draw(seed, i, round, DRAW_JAC));

        let h = hv_residual(&hess, &v, &gf)?;
        let s = hypergrad_sample(&gx, &jac, &v)?;
        let z = &st.s + (&st.z - &st.s) * (1.0 - steps.gamma);
        let y = match mixed_y.get(i) {
            Some(my) => direction(config.scheme, my, &z, &st.z),
            None => z.clone(),
        };
        Ok(NodeState {
            x,
            theta,
            v,
            d,
            h,
            s,
            z,
            y,
        })
    });
    commit(
        swarm,
        results,
        CallCounters {
            hessian: 1,
            jacobian: 1,
            grad: 3,
        },
    )
}

/// One round of a Q-loop baseline: `N` inner SGD steps, a fresh truncated
/// Neumann estimate of the Hessian-inverse product from `Q+1` sampled
/// Hessian actions, and no momentum.
pub fn qloop_round(
    swarm: &mut SwarmState,
    oracle: &dyn BilevelOracle,
    weights: &WeightMatrix,
    config: &RunConfig,
) -> Result<()> {
    if !config.scheme.is_qloop() {
        return Err(Error::ConfigInvalid(format!(
            "{} is not a Q-loop scheme",
            config.scheme
        )));
    }
    if config.q == 0 || config.inner_steps == 0 {
        return Err(Error::ConfigInvalid(
            "Q-loop schemes need q >= 1 and inner_steps >= 1".into(),
        ));
    }
    let steps = config.steps;
    steps.check_basic()?;
    let l_g = oracle.constants().l_g_theta;
    let round = swarm.round + 1;
    let xs = swarm.xs();
    let mixed_x = weights.mix(&xs);
    let mixed_y = if config.scheme.is_tracking() {
        weights.mix(&swarm.nodes.iter().map(|n| n.y.clone()).collect::<Vec<_>>())
    } else {
        Vec::new()
    };
    let b = config.batch;
    let seed = config.seed;
    let n_inner = config.inner_steps as u64;
    let q = config.q;
    let old = &swarm.nodes;
    let results = per_node(old.len(), config.threads, |i| {
        let st = &old[i];
        let x = relaxed_consensus(&st.x, &mixed_x[i], &st.y, &steps);
        let mut theta = st.theta.clone();
        let mut d = st.d.clone();
        for t in 0..n_inner {
            d = oracle.sample_grad_theta_g(
                i,
                &x,
                &theta,
                b.inner,
                &mut draw(seed, i, round, DRAW_LOOP_BASE + t),
            );
            theta.axpy(-steps.beta, &d, 1.0);
        }
        let gf = oracle.sample_grad_theta_f(
            i,
            &x,
            &theta,
            b.outer,
            &mut draw(seed, i, round, DRAW_GRAD_THETA_F),
        );
        let mut action_idx = 0u64;
        let action = |u: &Vector| {
            let mut r = draw(seed, i, round, DRAW_LOOP_BASE + n_inner + action_idx);
            action_idx += 1;
            oracle.sample_hess_theta_g(i, &x, &theta, b.inner, &mut r) * u
        };
        let mut unused = CallCounters::default();
        let v = match config.estimator {
            Estimator::Ns => neumann_inverse_apply(action, steps.lambda, l_g, q, &gf, &mut unused)?,
            Estimator::Shia => shia_hv(action, steps.lambda, l_g, q, &gf, &mut unused)?.estimate,
        };
        let gx = oracle.sample_grad_x_f(
            i,
            &x,
            &theta,
            b.outer,
            &mut draw(seed, i, round, DRAW_GRAD_X_F),
        );
        let jac =
            oracle.sample_jac_xtheta_g(i, &x, &theta, b.inner, &mut draw(seed, i, round, DRAW_JAC));
        let s = hypergrad_sample(&gx, &jac, &v)?;
        let y = match mixed_y.get(i) {
            Some(my) => direction(config.scheme, my, &s, &st.z),
            None => s.clone(),
        };
        Ok(NodeState {
            x,
            theta,
            v,
            d,
            h: Vector::zeros(st.h.len()),
            s: s.clone(),
            z: s,
            y,
        })
    });
    commit(
        swarm,
        results,
        CallCounters {
            hessian: q as u64 + 1,
            jacobian: 1,
            grad: n_inner + 2,
        },
    )
}

/// Dispatches on the configured scheme.
pub fn step(
    swarm: &mut SwarmState,
    oracle: &dyn BilevelOracle,
    weights: &WeightMatrix,
    config: &RunConfig,
) -> Result<()> {
    if config.scheme.is_qloop() {
        qloop_round(swarm, oracle, weights, config)
    } else {
        lopa_round(swarm, oracle, weights, config)
    }
}

/// Observer called at every recorded snapshot.
pub trait MetricHook {
    fn observe(&mut self, swarm: &SwarmState, row: &TraceRow) -> Result<()>;
}

impl<F: FnMut(&SwarmState, &TraceRow) -> Result<()>> MetricHook for F {
    fn observe(&mut self, swarm: &SwarmState, row: &TraceRow) -> Result<()> {
        self(swarm, row)
    }
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub final_state: SwarmState,
    pub scheme: Scheme,
    pub rho: f64,
}

/// Evaluates the diagnostics of a snapshot. The Lyapunov value is filled
/// in only for oracles with closed-form inner solutions.
pub fn snapshot_row(
    swarm: &SwarmState,
    oracle: &dyn BilevelOracle,
    config: &RunConfig,
    rho: f64,
    wall_time_ms: f64,
) -> Result<TraceRow> {
    let e = error_breakdown(&swarm.nodes, oracle)?;
    let lyapunov = if oracle.is_analytic() {
        match derive_constants(oracle.constants()) {
            Ok(rec) => {
                let phi = phi_mean(oracle, &swarm.x_bar())?;
                Some(lyapunov_from(
                    &e,
                    phi,
                    &rec,
                    &config.steps,
                    rho,
                    config.scheme,
                ))
            }
            Err(_) => None,
        }
    } else {
        None
    };
    Ok(TraceRow {
        k: swarm.round,
        stationarity: e.stationarity,
        consensus_err: e.consensus_err,
        grad_err: e.grad_err,
        hv_err: e.hv_err,
        inner_err: e.inner_err,
        ave_var_err: e.ave_var_err,
        var_err: e.var_err,
        lyapunov,
        hessian_calls: swarm.counters.hessian,
        grad_calls: swarm.counters.grad,
        wall_time_ms,
    })
}

/// Runs `K` rounds from a fresh initialization, recording a row at round 0,
/// every `cadence` rounds and at round `K`.
pub fn run(
    oracle: &dyn BilevelOracle,
    weights: &WeightMatrix,
    config: &RunConfig,
    hooks: &mut [&mut dyn MetricHook],
) -> Result<Trace> {
    let start = Instant::now();
    let mut swarm = init_run(oracle, weights, config)?;
    let rho = weights.rho();
    let mut rows = Vec::new();
    let mut record = |swarm: &SwarmState, rows: &mut Vec<TraceRow>| -> Result<()> {
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let row = snapshot_row(swarm, oracle, config, rho, ms)?;
        for h in hooks.iter_mut() {
            h.observe(swarm, &row)?;
        }
        rows.push(row);
        Ok(())
    };
    record(&swarm, &mut rows)?;
    for k in 1..=config.iterations {
        step(&mut swarm, oracle, weights, config)?;
        if k % config.cadence == 0 || k == config.iterations {
            record(&swarm, &mut rows)?;
        }
    }
    Ok(Trace {
        rows,
        final_state: swarm,
        scheme: config.scheme,
        rho,
    })
}

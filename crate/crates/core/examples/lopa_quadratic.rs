//! Loopless runs with local-gradient and gradient-tracking directions on a
//! heterogeneous quadratic over a ring, reporting the final stationarity.

use dsbo::net_graph::{build_topology, metropolis_weights, TopologyKind};
use dsbo::optimizers::{run, RunConfig, Scheme, StepSizes};
use dsbo::problem::{make_quadratic, QuadraticSpec};

fn main() -> dsbo::Result<()> {
    let spec = QuadraticSpec {
        b_f_scale: 0.5,
        b_g_scale: 0.5,
        ..QuadraticSpec::default()
    };
    let prob = make_quadratic(&spec, 0)?;
    let w = metropolis_weights(&build_topology(TopologyKind::Ring, spec.m, None, 0)?);
    for scheme in [Scheme::Lg, Scheme::Gt] {
        let cfg = RunConfig {
            scheme,
            iterations: 3000,
            steps: StepSizes {
                alpha: 0.1,
                beta: 0.2,
                lambda: 0.2,
                gamma: 1.0,
                tau: 0.5,
            },
            cadence: 500,
            ..RunConfig::default()
        };
        let trace = run(&prob, &w, &cfg, &mut [])?;
        for r in &trace.rows {
            println!(
                "{scheme} k={:<5} stationarity={:.3e} consensus={:.3e} hessian_calls={}",
                r.k, r.stationarity, r.consensus_err, r.hessian_calls
            );
        }
    }
    Ok(())
}

//! Derived constants of a quadratic instance and the step sizes produced by
//! each schedule.

use dsbo::metrics::derive_constants;
use dsbo::net_graph::{build_topology, metropolis_weights, TopologyKind};
use dsbo::optimizers::{schedule_stepsizes, ScheduleKind, ScheduleTuning};
use dsbo::problem::{make_quadratic, BilevelOracle, NoiseLevels, QuadraticSpec};

fn main() -> dsbo::Result<()> {
    let spec = QuadraticSpec {
        noise: NoiseLevels::uniform(0.1),
        b_f_scale: 0.5,
        b_g_scale: 0.5,
        ..QuadraticSpec::default()
    };
    let prob = make_quadratic(&spec, 0)?;
    let rho = metropolis_weights(&build_topology(TopologyKind::Ring, spec.m, None, 0)?).rho();
    let rec = derive_constants(prob.constants())?;
    println!(
        "kappa={:.3} L={:.3} phi={:.3e} rho={rho:.4}",
        rec.kappa, rec.l, rec.phi
    );
    let tuning = ScheduleTuning::default();
    for kind in [
        ScheduleKind::Lg,
        ScheduleKind::Gt,
        ScheduleKind::LgDeterministic,
        ScheduleKind::GtDeterministic,
    ] {
        for k in [1_000, 100_000] {
            match schedule_stepsizes(kind, k, Some(&rec), rho, spec.m, None, &tuning) {
                Ok(s) => println!(
                    "{kind:<17} K={k:<6} alpha={:.3e} beta={:.3e} lambda={:.3e} gamma={:.3e}",
                    s.alpha, s.beta, s.lambda, s.gamma
                ),
                Err(e) => println!("{kind:<17} K={k:<6} {e}"),
            }
        }
    }
    Ok(())
}

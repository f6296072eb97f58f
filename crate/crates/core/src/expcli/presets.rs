//! Built-in experiment presets, stored as config text.

use super::config::{ConfigError, ExperimentConfig};

const QUAD_BASE: &str = "
problem.kind = quadratic
problem.b_f_scale = 0.5
problem.b_g_scale = 0.5
topology.kind = ring
topology.m = 8
algorithm.tau = 0.5
schedule.theorem_caps = false
";

const QUAD_GT_DETERMINISTIC: &str = "
algorithm.scheme = GT
algorithm.iterations = 5000
algorithm.schedule = gt_deterministic
schedule.u = 0.1
schedule.c_gamma = 10
schedule.c_lambda = 2
schedule.c_beta = 2
metrics.cadence = 10
output.threshold = 1e-8
";

const QUAD_LG_DETERMINISTIC: &str = "
algorithm.scheme = LG
algorithm.iterations = 8000
algorithm.schedule = lg_deterministic
schedule.u = 0.05
schedule.a2 = 1e-12
schedule.c_gamma = 20
schedule.c_lambda = 4
schedule.c_beta = 4
metrics.cadence = 20
output.threshold = 1e-8
variant.lg = algorithm.scheme=LG
variant.lg-half-alpha = schedule.u=0.025
variant.gt = algorithm.scheme=GT; algorithm.schedule=gt_deterministic
variant.lg-homogeneous = problem.b_f_scale=0; problem.b_g_scale=0
variant.gt-homogeneous = problem.b_f_scale=0; problem.b_g_scale=0; algorithm.scheme=GT; algorithm.schedule=gt_deterministic
";

const QUAD_STOCHASTIC: &str = "
problem.noise = 1.0
algorithm.scheme = GT
algorithm.iterations = 2000
algorithm.schedule = gt
schedule.u = 0.1
schedule.a0 = 1
schedule.a1 = 1
schedule.a2 = 1
schedule.c_gamma = 4
schedule.c_lambda = 2
schedule.c_beta = 2
metrics.cadence = 10
seeds = 0..9
variant.gt = algorithm.scheme=GT
variant.lg = algorithm.scheme=LG; algorithm.schedule=lg
";

const TOPOLOGY_SWEEP: &str = "
algorithm.scheme = GT
problem.noise = 0.3
topology.m = 10
topology.edge_prob = 0.4
topology.seed = 3
algorithm.iterations = 3000
algorithm.schedule = manual
algorithm.alpha = 0.05
algorithm.beta = 0.1
algorithm.lambda = 0.1
algorithm.gamma = 0.5
metrics.cadence = 10
output.threshold = 1e-3
seeds = 0..4
variant.ring-gt = topology.kind=ring; algorithm.scheme=GT
variant.star-gt = topology.kind=star; algorithm.scheme=GT
variant.er-gt = topology.kind=erdos_renyi; algorithm.scheme=GT
variant.ring-lg = topology.kind=ring; algorithm.scheme=LG
variant.star-lg = topology.kind=star; algorithm.scheme=LG
variant.er-lg = topology.kind=erdos_renyi; algorithm.scheme=LG
";

const QLOOP_COMPARISON: &str = "
algorithm.scheme = GT
problem.noise = 0.1
algorithm.iterations = 3000
algorithm.schedule = manual
algorithm.alpha = 0.05
algorithm.beta = 0.1
algorithm.lambda = 0.1
algorithm.gamma = 0.5
algorithm.q = 10
algorithm.inner_steps = 1
metrics.cadence = 5
output.threshold = 1e-2
seeds = 0..4
variant.lopa-gt = algorithm.scheme=GT
variant.qloop-gt-ns = algorithm.scheme=QLOOP_GT; algorithm.estimator=NS
variant.lopa-lg = algorithm.scheme=LG
variant.qloop-lg-shia = algorithm.scheme=QLOOP_LG; algorithm.estimator=SHIA; algorithm.inner_steps=5
";

const LOGREG_BASE: &str = "
problem.kind = logreg
problem.samples = 1600
problem.features = 20
problem.separation = 1.0
problem.val_fraction = 0.3
topology.kind = ring
topology.m = 8
algorithm.scheme = GT
algorithm.schedule = manual
algorithm.tau = 0.5
algorithm.alpha = 0.1
algorithm.beta = 0.002
algorithm.lambda = 0.002
algorithm.gamma = 0.5
algorithm.batch_inner = 32
algorithm.batch_outer = 32
metrics.cadence = 50
output.threshold = 1e-2
";

const HPO_LOGREG: &str = "
problem.partition = weak
algorithm.iterations = 2000
seeds = 0..2
variant.gt = algorithm.scheme=GT
variant.lg = algorithm.scheme=LG
";

const HETERO_SWEEP: &str = "
algorithm.iterations = 2000
seeds = 0..2
variant.iid-lg = problem.partition=iid; algorithm.scheme=LG
variant.iid-gt = problem.partition=iid; algorithm.scheme=GT
variant.weak-lg = problem.partition=weak; algorithm.scheme=LG
variant.weak-gt = problem.partition=weak; algorithm.scheme=GT
variant.strong-lg = problem.partition=strong; algorithm.scheme=LG
variant.strong-gt = problem.partition=strong; algorithm.scheme=GT
";

pub const PRESET_NAMES: [&str; 7] = [
    "quad-gt-deterministic",
    "quad-lg-deterministic",
    "quad-stochastic",
    "hetero-sweep",
    "topology-sweep",
    "hpo-logreg",
    "qloop-comparison",
];

fn preset_parts(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "quad-gt-deterministic" => &[QUAD_BASE, QUAD_GT_DETERMINISTIC],
        "quad-lg-deterministic" => &[QUAD_BASE, QUAD_LG_DETERMINISTIC],
        "quad-stochastic" | "quad-stochastic-sweep" => &[QUAD_BASE, QUAD_STOCHASTIC],
        "topology-sweep" => &[QUAD_BASE, TOPOLOGY_SWEEP],
        "qloop-comparison" => &[QUAD_BASE, QLOOP_COMPARISON],
        "hpo-logreg" => &[LOGREG_BASE, HPO_LOGREG],
        "hetero-sweep" => &[LOGREG_BASE, HETERO_SWEEP],
        _ => return None,
    })
}

/// Config text of a preset. Later lines override earlier ones.
pub fn preset_text(name: &str) -> Option<String> {
    preset_parts(name).map(|p| p.concat())
}

pub fn preset_config(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    let mut cfg = ExperimentConfig::default();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: idx + 1,
            msg: format!("preset {name}: '{line}'"),
        })?;
        cfg.set(idx + 1, k.trim(), v.trim())?;
    }
    cfg.validate()?;
    cfg.preset = Some(name.to_string());
    cfg.settings.clear();
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse() {
        for name in PRESET_NAMES {
            let c = preset_config(name).unwrap();
            c.resolve_variants().unwrap();
        }
        assert!(preset_text("nope").is_none());
    }
}

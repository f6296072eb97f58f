//! Per-node L2 strengths of logistic regression tuned on validation loss,
//! with the nodes holding skewed label distributions.

use std::sync::Arc;

use dsbo::net_graph::{build_topology, metropolis_weights, TopologyKind};
use dsbo::optimizers::{run, RunConfig, Scheme, StepSizes};
use dsbo::problem::{make_synthetic_dataset, partition_heterogeneous, BatchSizes, LogRegHpo, PartitionMode};
use dsbo::problem::logreg::DEFAULT_LAMBDA_BOX;

fn main() -> dsbo::Result<()> {
    let m = 8;
    let ds = make_synthetic_dataset(20, 1600, 1.0, 0)?;
    let part = partition_heterogeneous(&ds, m, PartitionMode::Strong, 0.3, 0)?;
    for (i, f) in part.positive_fraction.iter().enumerate() {
        println!("node {i}: positive fraction {f:.2}");
    }
    let prob = LogRegHpo::new(Arc::new(ds), part, m, DEFAULT_LAMBDA_BOX)?;
    let w = metropolis_weights(&build_topology(TopologyKind::Ring, m, None, 0)?);
    for scheme in [Scheme::Lg, Scheme::Gt] {
        let cfg = RunConfig {
            scheme,
            iterations: 1000,
            steps: StepSizes {
                alpha: 0.1,
                beta: 0.002,
                lambda: 0.002,
                gamma: 0.5,
                tau: 0.5,
            },
            batch: BatchSizes { inner: 32, outer: 32 },
            cadence: 250,
            ..RunConfig::default()
        };
        let trace = run(&prob, &w, &cfg, &mut [])?;
        for r in &trace.rows {
            println!("{scheme} k={:<5} stationarity={:.3e}", r.k, r.stationarity);
        }
    }
    Ok(())
}

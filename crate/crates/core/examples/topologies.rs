//! Metropolis weights and spectral gaps of the built-in topologies.

use dsbo::net_graph::{build_topology, metropolis_weights, validate_assumption1, TopologyKind};

fn main() -> dsbo::Result<()> {
    let m = 10;
    for kind in [
        TopologyKind::Ring,
        TopologyKind::Path,
        TopologyKind::Star,
        TopologyKind::Complete,
        TopologyKind::ErdosRenyi,
    ] {
        let g = build_topology(kind, m, Some(0.4), 3)?;
        let w = metropolis_weights(&g);
        let issues = validate_assumption1(w.w(), &g);
        println!(
            "{:<12} edges={:<3} rho={:.4} violations={}",
            kind.name(),
            g.edges().len(),
            w.rho(),
            issues.len()
        );
    }
    Ok(())
}

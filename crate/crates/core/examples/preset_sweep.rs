//! Runs the topology preset at reduced length and writes traces, summaries
//! and a manifest to a temporary directory.

use dsbo::expcli::run_preset;

fn main() -> dsbo::Result<()> {
    let dir = std::env::temp_dir().join("dsbo-preset-sweep");
    let overrides = vec![
        ("algorithm.iterations".to_string(), "1000".to_string()),
        ("output.wall_time".to_string(), "false".to_string()),
    ];
    let runs = run_preset("topology-sweep", &overrides, Some(vec![0, 1]), Some(&dir))?;
    for r in &runs {
        println!(
            "{:<10} rho={:.4} iterations_to_threshold={:?}",
            r.name,
            r.rho,
            r.first_below(r.config.output.threshold).map(|h| h.0)
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

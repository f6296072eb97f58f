//! Builds instances from a config, runs every variant and seed, and writes
//! traces, summaries and the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, OutputFormat, ProblemKind};
use super::presets;
use super::trace_io::{self, fmt_float};
use crate::error::{Error, Result};
use crate::metrics::{derive_constants, TraceRow};
use crate::net_graph::{build_topology, metropolis_weights, Graph, TopologyKind, WeightMatrix};
use crate::optimizers::{self, schedule_stepsizes, RunConfig, ScheduleKind, StepSizes, Trace};
use crate::problem::logreg::LogRegHpo;
use crate::problem::{
    load_libsvm, make_quadratic, make_synthetic_dataset, partition_heterogeneous, BilevelOracle,
};

pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    let t = &cfg.topology;
    if t.kind == TopologyKind::Custom {
        let path = t
            .edges
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("custom topology needs topology.edges".into()))?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g = Graph::from_edge_list(&text)?;
        if g.m() != t.m {
            return Err(Error::ConfigInvalid(format!(
                "edge list has {} nodes, topology.m = {}",
                g.m(),
                t.m
            )));
        }
        return Ok(g);
    }
    build_topology(t.kind, t.m, Some(t.edge_prob), t.seed)
}

pub fn build_weights(cfg: &ExperimentConfig) -> Result<WeightMatrix> {
    Ok(metropolis_weights(&build_graph(cfg)?))
}

pub fn build_oracle(cfg: &ExperimentConfig) -> Result<Arc<dyn BilevelOracle>> {
    let m = cfg.topology.m;
    match cfg.problem.kind {
        ProblemKind::Quadratic => {
            let mut spec = cfg.problem.quadratic.clone();
            spec.m = m;
            Ok(Arc::new(make_quadratic(&spec, cfg.problem.seed)?))
        }
        ProblemKind::Logreg => {
            let l = &cfg.problem.logreg;
            let ds = match &l.data {
                Some(path) => load_libsvm(path)?,
                None => make_synthetic_dataset(l.features, l.samples, l.separation, cfg.problem.seed)?,
            };
            let part =
                partition_heterogeneous(&ds, m, l.partition, l.val_fraction, cfg.problem.seed)?;
            Ok(Arc::new(LogRegHpo::new(Arc::new(ds), part, m, l.lambda_box)?))
        }
    }
}

/// Step sizes of `cfg` on `oracle`: the manual values or the configured
/// schedule evaluated at the instance constants and `rho`.
pub fn resolve_steps(cfg: &ExperimentConfig, oracle: &dyn BilevelOracle, rho: f64) -> Result<StepSizes> {
    let alg = &cfg.algorithm;
    let rec = derive_constants(oracle.constants());
    let steps = if alg.schedule == ScheduleKind::Manual {
        alg.run.steps
    } else {
        let rec = rec?;
        schedule_stepsizes(
            alg.schedule,
            alg.run.iterations,
            Some(&rec),
            rho,
            oracle.num_nodes(),
            None,
            &alg.tuning,
        )?
    };
    let mut run = alg.run.clone();
    run.steps = steps;
    run.validate(oracle.constants())?;
    Ok(steps)
}

/// All seeds of one variant.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub name: String,
    pub config: ExperimentConfig,
    pub topology: TopologyKind,
    pub rho: f64,
    pub steps: StepSizes,
    pub traces: Vec<(u64, Trace)>,
}

/// Mean and minimum over seeds of one column at each recorded round.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedAggregate {
    pub k: Vec<usize>,
    pub hessian_calls: Vec<u64>,
    pub grad_calls: Vec<u64>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub min: Vec<Vec<Option<f64>>>,
}

/// Float columns aggregated over seeds, in trace column order.
pub const AGGREGATE_COLUMNS: [&str; 8] = [
    "stationarity",
    "consensus_err",
    "grad_err",
    "hv_err",
    "inner_err",
    "ave_var_err",
    "var_err",
    "lyapunov",
];

fn float_columns(r: &TraceRow) -> [Option<f64>; 8] {
    [
        Some(r.stationarity),
        Some(r.consensus_err),
        Some(r.grad_err),
        r.hv_err,
        r.inner_err,
        Some(r.ave_var_err),
        Some(r.var_err),
        r.lyapunov,
    ]
}

impl VariantRun {
    pub fn aggregate(&self) -> SeedAggregate {
        let first = &self.traces[0].1.rows;
        let n = self.traces.len() as f64;
        let mut agg = SeedAggregate {
            k: first.iter().map(|r| r.k).collect(),
            hessian_calls: first.iter().map(|r| r.hessian_calls).collect(),
            grad_calls: first.iter().map(|r| r.grad_calls).collect(),
            mean: Vec::new(),
            min: Vec::new(),
        };
        for row in 0..first.len() {
            let mut sum = [Some(0.0); 8];
            let mut min = [Some(f64::INFINITY); 8];
            for (_, t) in &self.traces {
                for (c, v) in float_columns(&t.rows[row]).into_iter().enumerate() {
                    sum[c] = sum[c].zip(v).map(|(a, b)| a + b);
                    min[c] = min[c].zip(v).map(|(a, b)| a.min(b));
                }
            }
            agg.mean.push(sum.iter().map(|s| s.map(|s| s / n)).collect());
            agg.min.push(min.to_vec());
        }
        agg
    }

    /// Seed-mean stationarity at each recorded round.
    pub fn mean_stationarity(&self) -> Vec<(usize, f64)> {
        let agg = self.aggregate();
        agg.k
            .iter()
            .zip(&agg.mean)
            .map(|(&k, m)| (k, m[0].unwrap_or(f64::NAN)))
            .collect()
    }

    /// First recorded round where the seed-mean stationarity is at most
    /// `threshold`, with the Hessian calls spent by then.
    pub fn first_below(&self, threshold: f64) -> Option<(usize, u64)> {
        let agg = self.aggregate();
        agg.mean
            .iter()
            .position(|m| m[0].is_some_and(|s| s <= threshold))
            .map(|i| (agg.k[i], agg.hessian_calls[i]))
    }
}

/// Runs one seed.
pub fn run_seed(
    oracle: &dyn BilevelOracle,
    weights: &WeightMatrix,
    run: &RunConfig,
    seed: u64,
    wall_time: bool,
) -> Result<Trace> {
    let mut run = run.clone();
    run.seed = seed;
    let mut trace = optimizers::run(oracle, weights, &run, &mut [])?;
    if !wall_time {
        for r in &mut trace.rows {
            r.wall_time_ms = 0.0;
        }
    }
    Ok(trace)
}

/// Runs every seed of a resolved (variant-free) config. Seeds are spread
/// over the available cores.
pub fn run_variant(name: &str, cfg: &ExperimentConfig) -> Result<VariantRun> {
    let oracle = build_oracle(cfg)?;
    let weights = build_weights(cfg)?;
    let rho = weights.rho();
    let steps = resolve_steps(cfg, oracle.as_ref(), rho)?;
    let mut run = cfg.algorithm.run.clone();
    run.steps = steps;

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .clamp(1, cfg.seeds.len().max(1));
    let chunk = cfg.seeds.len().div_ceil(workers).max(1);
    let wall = cfg.output.wall_time;
    let results: Vec<Result<Vec<(u64, Trace)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .chunks(chunk)
            .map(|seeds| {
                let (oracle, weights, run) = (oracle.as_ref(), &weights, &run);
                s.spawn(move || {
                    seeds
                        .iter()
                        .map(|&seed| Ok((seed, run_seed(oracle, weights, run, seed, wall)?)))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let mut traces = Vec::with_capacity(cfg.seeds.len());
    for r in results {
        traces.extend(r?);
    }
    Ok(VariantRun {
        name: name.to_string(),
        config: cfg.clone(),
        topology: cfg.topology.kind,
        rho,
        steps,
        traces,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<VariantRun>> {
    cfg.resolve_variants()?
        .iter()
        .map(|(name, c)| run_variant(name, c))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn summary_csv(agg: &SeedAggregate) -> String {
    let mut head = vec!["k".to_string(), "hessian_calls".into(), "grad_calls".into()];
    for c in AGGREGATE_COLUMNS {
        head.push(format!("mean_{c}"));
        head.push(format!("min_{c}"));
    }
    let mut out = head.join(",");
    out.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for i in 0..agg.k.len() {
        let mut f = vec![
            agg.k[i].to_string(),
            agg.hessian_calls[i].to_string(),
            agg.grad_calls[i].to_string(),
        ];
        for c in 0..AGGREGATE_COLUMNS.len() {
            f.push(opt(agg.mean[i][c]));
            f.push(opt(agg.min[i][c]));
        }
        out.push_str(&f.join(","));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn steps_json(s: &StepSizes) -> Value {
    json!({
        "alpha": num(s.alpha),
        "beta": num(s.beta),
        "lambda": num(s.lambda),
        "gamma": num(s.gamma),
        "tau": num(s.tau),
    })
}

struct Writer {
    root: PathBuf,
    files: Vec<(String, String)>,
}

impl Writer {
    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        self.files.push((rel.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }
}

/// Writes per-seed traces, per-variant summaries, `summary.json`,
/// `config.txt` and `manifest.json` under `dir`. Returns the manifest path.
pub fn write_outputs(cfg: &ExperimentConfig, runs: &[VariantRun], dir: &Path) -> Result<PathBuf> {
    let mut w = Writer {
        root: dir.to_path_buf(),
        files: Vec::new(),
    };
    let config_text = cfg.canonical_text();
    w.write("config.txt", &config_text)?;

    let mut summary = Map::new();
    let mut variants = Map::new();
    for r in runs {
        for (seed, t) in &r.traces {
            if t.rows.is_empty() {
                return Err(Error::InvalidParams("trace is empty".into()));
            }
            if matches!(cfg.output.format, OutputFormat::Csv | OutputFormat::Both) {
                w.write(
                    &format!("{}/seed_{seed}.csv", r.name),
                    &trace_io::to_csv_string(&t.rows),
                )?;
            }
            if matches!(cfg.output.format, OutputFormat::Jsonl | OutputFormat::Both) {
                w.write(
                    &format!("{}/seed_{seed}.jsonl", r.name),
                    &trace_io::to_jsonl_string(&t.rows),
                )?;
            }
        }
        let agg = r.aggregate();
        w.write(&format!("{}/summary.csv", r.name), &summary_csv(&agg))?;

        let threshold = r.config.output.threshold;
        let hit = r.first_below(threshold);
        let last = agg.mean.last().and_then(|m| m[0]).unwrap_or(f64::NAN);
        summary.insert(
            r.name.clone(),
            json!({
                "scheme": r.config.algorithm.run.scheme.name(),
                "topology": r.topology.name(),
                "rho": num(r.rho),
                "steps": steps_json(&r.steps),
                "threshold": num(threshold),
                "iterations_to_threshold": hit.map(|h| h.0),
                "hessian_calls_to_threshold": hit.map(|h| h.1),
                "final_mean_stationarity": num(last),
                "final_hessian_calls": agg.hessian_calls.last(),
            }),
        );
        variants.insert(
            r.name.clone(),
            json!({
                "scheme": r.config.algorithm.run.scheme.name(),
                "topology": r.topology.name(),
                "rho": num(r.rho),
                "steps": steps_json(&r.steps),
            }),
        );
    }
    let summary_text = serde_json::to_string_pretty(&Value::Object(summary))
        .expect("summary serializes")
        + "\n";
    w.write("summary.json", &summary_text)?;

    let files: Vec<Value> = w
        .files
        .iter()
        .map(|(p, h)| json!({ "path": p, "sha256": h }))
        .collect();
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "preset": cfg.preset,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "seeds": cfg.seeds,
        "variants": Value::Object(variants),
        "files": files,
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Runs a preset with `overrides` applied on top and, when given, a
/// replacement seed list. Outputs go to `out` when set.
pub fn run_preset(
    name: &str,
    overrides: &[(String, String)],
    seeds: Option<Vec<u64>>,
    out: Option<&Path>,
) -> Result<Vec<VariantRun>> {
    let settings: Vec<(usize, String, String)> = overrides
        .iter()
        .map(|(k, v)| (0, k.clone(), v.clone()))
        .collect();
    let mut cfg = super::config::build_config(Some((0, name)), &settings)?;
    if let Some(s) = seeds {
        if s.is_empty() {
            return Err(Error::ConfigInvalid("seed list is empty".into()));
        }
        cfg.seeds = s;
    }
    let runs = run_experiment(&cfg)?;
    if let Some(dir) = out {
        write_outputs(&cfg, &runs, dir)?;
    }
    Ok(runs)
}

/// Preset names accepted by [`run_preset`].
pub fn preset_names() -> &'static [&'static str] {
    &presets::PRESET_NAMES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expcli::config::parse_config_str;

    const SMALL: &str = "
preset = quad-gt-deterministic
algorithm.iterations = 20
metrics.cadence = 5
topology.m = 4
output.wall_time = false
output.format = both
seeds = 0..2
";

    #[test]
    fn outputs_are_listed_and_repeatable() {
        let cfg = parse_config_str(SMALL).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let runs = run_experiment(&cfg).unwrap();
            write_outputs(&cfg, &runs, d.path()).unwrap();
        }
        let ma = fs::read_to_string(a.path().join("manifest.json")).unwrap();
        let mb = fs::read_to_string(b.path().join("manifest.json")).unwrap();
        assert_eq!(ma, mb);
        let m: Value = serde_json::from_str(&ma).unwrap();
        let files = m["files"].as_array().unwrap();
        // 3 csv + 3 jsonl + summary.csv + config.txt + summary.json
        assert_eq!(files.len(), 9);
        for f in files {
            let p = a.path().join(f["path"].as_str().unwrap());
            let bytes = fs::read(p).unwrap();
            assert_eq!(sha256_hex(&bytes), f["sha256"].as_str().unwrap());
        }
    }

    #[test]
    fn aggregate_of_identical_seeds() {
        let mut cfg = parse_config_str(SMALL).unwrap();
        cfg.seeds = vec![1, 1];
        let r = run_variant("x", &cfg).unwrap();
        let agg = r.aggregate();
        for (m, n) in agg.mean.iter().zip(&agg.min) {
            assert_eq!(m[0], n[0]);
        }
    }
}

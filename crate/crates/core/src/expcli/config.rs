//! Flat `key = value` experiment files.
//!
//! ```text
//! # comment
//! preset = quad-gt-deterministic
//! topology.kind = ring
//! algorithm.iterations = 2000
//! variant.small = algorithm.alpha=0.01; algorithm.scheme=LG
//! seeds = 0..9
//! ```
//!
//! Keys are dotted; every key may appear once. `preset` loads a preset's
//! settings first, the remaining keys override them in file order.
//! `variant.NAME` declares one member of a sweep as `;`-separated settings.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use super::presets;
use crate::net_graph::TopologyKind;
use crate::optimizers::{Estimator, RunConfig, ScheduleKind, ScheduleTuning, Scheme};
use crate::problem::{NoiseLevels, PartitionMode, QuadraticSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key '{0}'")]
    MissingKey(String),
    #[error("line {line}: invalid value '{value}' for '{key}'")]
    UnknownValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("key '{key}' set on line {first} and again on line {second}")]
    DuplicateKey {
        key: String,
        first: usize,
        second: usize,
    },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    Logreg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub m: usize,
    pub edge_prob: f64,
    pub seed: u64,
    /// Edge-list file, used when `kind = custom`.
    pub edges: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogregConfig {
    /// LIBSVM file; a synthetic set is generated when absent.
    pub data: Option<PathBuf>,
    pub samples: usize,
    pub features: usize,
    pub separation: f64,
    pub partition: PartitionMode,
    pub val_fraction: f64,
    pub lambda_box: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub seed: u64,
    /// `m` is taken from the topology.
    pub quadratic: QuadraticSpec,
    pub logreg: LogregConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmConfig {
    /// `seed` is overwritten per run from the seed list.
    pub run: RunConfig,
    pub schedule: ScheduleKind,
    pub tuning: ScheduleTuning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
    /// Write measured wall time; when off the column is written as 0.
    pub wall_time: bool,
    /// Stationarity level for the iterations/Hessian-calls-to-threshold report.
    pub threshold: f64,
}

/// One member of a sweep: a name and the settings applied on top of the
/// base configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub settings: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub topology: TopologyConfig,
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
    pub output: OutputConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Every applied setting in order, used for the config hash.
    pub settings: Vec<(String, String)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: None,
            topology: TopologyConfig {
                kind: TopologyKind::Ring,
                m: 8,
                edge_prob: 0.4,
                seed: 0,
                edges: None,
            },
            problem: ProblemConfig {
                kind: ProblemKind::Quadratic,
                seed: 0,
                quadratic: QuadraticSpec::default(),
                logreg: LogregConfig {
                    data: None,
                    samples: 2000,
                    features: 20,
                    separation: 1.0,
                    partition: PartitionMode::Weak,
                    val_fraction: 0.3,
                    lambda_box: crate::problem::logreg::DEFAULT_LAMBDA_BOX,
                },
            },
            algorithm: AlgorithmConfig {
                run: RunConfig {
                    steps: crate::optimizers::StepSizes {
                        tau: 0.5,
                        ..RunConfig::default().steps
                    },
                    ..RunConfig::default()
                },
                schedule: ScheduleKind::Manual,
                tuning: ScheduleTuning::default(),
            },
            output: OutputConfig {
                dir: None,
                format: OutputFormat::Csv,
                wall_time: true,
                threshold: 1e-3,
            },
            seeds: vec![0],
            variants: Vec::new(),
            settings: Vec::new(),
        }
    }
}

/// Parses `a..b` (inclusive) or a comma list.
pub fn parse_seeds(s: &str) -> Option<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().ok()?;
        let b: u64 = b.trim().trim_start_matches('=').parse().ok()?;
        if b < a {
            return None;
        }
        return Some((a..=b).collect());
    }
    let seeds: Option<Vec<u64>> = s.split(',').map(|t| t.trim().parse().ok()).collect();
    seeds.filter(|v| !v.is_empty())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn parse_variant(line: usize, value: &str) -> Result<Vec<(String, String)>, ConfigError> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| ConfigError::Parse {
                    line,
                    msg: format!("variant setting '{item}' is not key=value"),
                })
        })
        .collect()
}

impl ExperimentConfig {
    /// Applies one setting. `line` is only used for error messages.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::UnknownValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        fn num<T: FromStr>(v: &str, bad: impl Fn() -> ConfigError) -> Result<T, ConfigError> {
            v.parse().map_err(|_| bad())
        }
        let q = &mut self.problem.quadratic;
        let lr = &mut self.problem.logreg;
        let alg = &mut self.algorithm;
        let t = &mut alg.tuning;
        match key {
            "preset" => {
                return Err(ConfigError::Invalid(
                    "preset can only be selected at the top of a config".into(),
                ))
            }
            "seeds" => self.seeds = parse_seeds(value).ok_or_else(bad)?,

            "topology.kind" => self.topology.kind = value.parse().map_err(|_| bad())?,
            "topology.m" => self.topology.m = num(value, bad)?,
            "topology.edge_prob" => self.topology.edge_prob = num(value, bad)?,
            "topology.seed" => self.topology.seed = num(value, bad)?,
            "topology.edges" => self.topology.edges = Some(PathBuf::from(value)),

            "problem.kind" => {
                self.problem.kind = match value {
                    "quadratic" => ProblemKind::Quadratic,
                    "logreg" => ProblemKind::Logreg,
                    _ => return Err(bad()),
                }
            }
            "problem.seed" => self.problem.seed = num(value, bad)?,
            "problem.n" => q.n = num(value, bad)?,
            "problem.p" => q.p = num(value, bad)?,
            "problem.mu_g" => q.mu_g = num(value, bad)?,
            "problem.l_g_theta" => q.l_g_theta = num(value, bad)?,
            "problem.coupling" => q.coupling = num(value, bad)?,
            "problem.t_eig_min" => q.t_eig_min = num(value, bad)?,
            "problem.t_eig_max" => q.t_eig_max = num(value, bad)?,
            "problem.outer_reg" => q.outer_reg = num(value, bad)?,
            "problem.b_f_scale" => q.b_f_scale = num(value, bad)?,
            "problem.b_g_scale" => q.b_g_scale = num(value, bad)?,
            "problem.domain_radius" => q.domain_radius = num(value, bad)?,
            "problem.noise" => q.noise = NoiseLevels::uniform(num(value, bad)?),
            "problem.noise.g_theta" => q.noise.g_theta = num(value, bad)?,
            "problem.noise.g_thetatheta" => q.noise.g_thetatheta = num(value, bad)?,
            "problem.noise.g_xtheta" => q.noise.g_xtheta = num(value, bad)?,
            "problem.noise.f_theta" => q.noise.f_theta = num(value, bad)?,
            "problem.noise.f_x" => q.noise.f_x = num(value, bad)?,
            "problem.data" => lr.data = Some(PathBuf::from(value)),
            "problem.samples" => lr.samples = num(value, bad)?,
            "problem.features" => lr.features = num(value, bad)?,
            "problem.separation" => lr.separation = num(value, bad)?,
            "problem.partition" => lr.partition = value.parse().map_err(|_| bad())?,
            "problem.val_fraction" => lr.val_fraction = num(value, bad)?,
            "problem.lambda_box" => lr.lambda_box = num(value, bad)?,

            "algorithm.scheme" => alg.run.scheme = value.parse::<Scheme>().map_err(|_| bad())?,
            "algorithm.iterations" => alg.run.iterations = num(value, bad)?,
            "algorithm.schedule" => alg.schedule = value.parse().map_err(|_| bad())?,
            "algorithm.alpha" => alg.run.steps.alpha = num(value, bad)?,
            "algorithm.beta" => alg.run.steps.beta = num(value, bad)?,
            "algorithm.lambda" => alg.run.steps.lambda = num(value, bad)?,
            "algorithm.gamma" => alg.run.steps.gamma = num(value, bad)?,
            "algorithm.tau" => {
                alg.run.steps.tau = num(value, bad)?;
                t.tau = alg.run.steps.tau;
            }
            "algorithm.batch_inner" => alg.run.batch.inner = num(value, bad)?,
            "algorithm.batch_outer" => alg.run.batch.outer = num(value, bad)?,
            "algorithm.q" => alg.run.q = num(value, bad)?,
            "algorithm.inner_steps" => alg.run.inner_steps = num(value, bad)?,
            "algorithm.estimator" => {
                alg.run.estimator = value.parse::<Estimator>().map_err(|_| bad())?
            }
            "algorithm.init_scale" => alg.run.init_scale = num(value, bad)?,
            "algorithm.threads" => alg.run.threads = num(value, bad)?,
            "algorithm.unsafe_steps" => {
                alg.run.allow_unsafe_steps = parse_bool(value).ok_or_else(bad)?
            }

            "schedule.u" => t.u = Some(num(value, bad)?),
            "schedule.v0" => t.v0 = num(value, bad)?,
            "schedule.a0" => t.a0 = Some(num(value, bad)?),
            "schedule.a1" => t.a1 = Some(num(value, bad)?),
            "schedule.a2" => t.a2 = Some(num(value, bad)?),
            "schedule.c_gamma" => t.c_gamma = Some(num(value, bad)?),
            "schedule.c_lambda" => t.c_lambda = Some(num(value, bad)?),
            "schedule.c_beta" => t.c_beta = Some(num(value, bad)?),
            "schedule.b_sq" => t.b_sq = Some(num(value, bad)?),
            "schedule.theorem_caps" => t.theorem_caps = parse_bool(value).ok_or_else(bad)?,

            "metrics.cadence" => alg.run.cadence = num(value, bad)?,

            "output.dir" => self.output.dir = Some(PathBuf::from(value)),
            "output.format" => {
                self.output.format = match value {
                    "csv" => OutputFormat::Csv,
                    "jsonl" => OutputFormat::Jsonl,
                    "both" => OutputFormat::Both,
                    _ => return Err(bad()),
                }
            }
            "output.wall_time" => self.output.wall_time = parse_bool(value).ok_or_else(bad)?,
            "output.threshold" => self.output.threshold = num(value, bad)?,

            _ => {
                if let Some(name) = key.strip_prefix("variant.") {
                    if name.is_empty() {
                        return Err(ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                        });
                    }
                    let settings = parse_variant(line, value)?;
                    let mut probe = self.clone();
                    for (k, v) in &settings {
                        probe.set(line, k, v)?;
                    }
                    self.variants.retain(|v| v.name != name);
                    self.variants.push(Variant {
                        name: name.to_string(),
                        settings,
                    });
                } else {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    });
                }
            }
        }
        self.settings.push((key.to_string(), value.to_string()));
        Ok(())
    }

    /// Checks that do not depend on the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seed list is empty".into()));
        }
        if self.topology.m < 2 {
            return Err(ConfigError::Invalid(format!(
                "topology.m = {} must be at least 2",
                self.topology.m
            )));
        }
        if self.topology.kind == TopologyKind::Custom && self.topology.edges.is_none() {
            return Err(ConfigError::MissingKey("topology.edges".into()));
        }
        let run = &self.algorithm.run;
        if run.cadence == 0 {
            return Err(ConfigError::Invalid("metrics.cadence must be at least 1".into()));
        }
        if run.scheme.is_qloop() && (run.q == 0 || run.inner_steps == 0) {
            return Err(ConfigError::Invalid(
                "Q-loop schemes need algorithm.q >= 1 and algorithm.inner_steps >= 1".into(),
            ));
        }
        if !(self.output.threshold > 0.0) {
            return Err(ConfigError::Invalid("output.threshold must be positive".into()));
        }
        let mut names = std::collections::HashSet::new();
        for v in &self.variants {
            if !names.insert(&v.name) {
                return Err(ConfigError::Invalid(format!("variant '{}' defined twice", v.name)));
            }
            if v.name.contains(['/', '\\']) || v.name == "." || v.name == ".." {
                return Err(ConfigError::Invalid(format!("bad variant name '{}'", v.name)));
            }
        }
        Ok(())
    }

    /// The configuration of one variant, or the base when there are none.
    pub fn resolve_variants(&self) -> Result<Vec<(String, ExperimentConfig)>, ConfigError> {
        if self.variants.is_empty() {
            return Ok(vec![("main".to_string(), self.clone())]);
        }
        self.variants
            .iter()
            .map(|v| {
                let mut c = self.clone();
                c.variants.clear();
                for (k, val) in &v.settings {
                    c.set(0, k, val)?;
                }
                c.validate()?;
                Ok((v.name.clone(), c))
            })
            .collect()
    }

    /// Canonical text of every applied setting.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.preset {
            out.push_str(&format!("preset = {p}\n"));
        }
        for (k, v) in &self.settings {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Starts from a preset when `preset` is given, then applies `settings`
/// (`(line, key, value)`) in order.
pub fn build_config(
    preset: Option<(usize, &str)>,
    settings: &[(usize, String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match preset {
        Some((_, name)) => presets::preset_config(name)?,
        None => ExperimentConfig::default(),
    };
    if preset.is_none() {
        for required in ["problem.kind", "algorithm.scheme", "algorithm.iterations"] {
            if !settings.iter().any(|(_, k, _)| k == required) {
                return Err(ConfigError::MissingKey(required.into()));
            }
        }
    }
    for (line, k, v) in settings {
        cfg.set(*line, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses the text of a config file.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut preset = None;
    let mut settings = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            msg: format!("expected 'key = value', got '{body}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Parse {
                line,
                msg: format!("invalid key '{key}'"),
            });
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(ConfigError::DuplicateKey {
                key: key.to_string(),
                first,
                second: line,
            });
        }
        if key == "preset" {
            preset = Some((line, value.to_string()));
        } else {
            settings.push((line, key.to_string(), value.to_string()));
        }
    }
    let preset_ref = preset.as_ref().map(|(l, n)| (*l, n.as_str()));
    build_config(preset_ref, &settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_forms() {
        assert_eq!(parse_seeds("0..3"), Some(vec![0, 1, 2, 3]));
        assert_eq!(parse_seeds("0..=1"), Some(vec![0, 1]));
        assert_eq!(parse_seeds("4, 7"), Some(vec![4, 7]));
        assert_eq!(parse_seeds("3..1"), None);
        assert_eq!(parse_seeds("x"), None);
    }

    #[test]
    fn minimal_preset_file() {
        let c = parse_config_str("preset = quad-gt-deterministic\n").unwrap();
        assert_eq!(c.preset.as_deref(), Some("quad-gt-deterministic"));
        assert_eq!(c.algorithm.run.scheme, Scheme::Gt);
    }

    #[test]
    fn bad_scheme_names_field() {
        let e = parse_config_str("preset = quad-gt-deterministic\nalgorithm.scheme = XT\n")
            .unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownValue {
                line: 2,
                key: "algorithm.scheme".into(),
                value: "XT".into()
            }
        );
    }

    #[test]
    fn duplicate_cites_both_lines() {
        let e = parse_config_str("preset = quad-gt-deterministic\nseeds = 1\n\nseeds = 2\n")
            .unwrap_err();
        assert_eq!(
            e,
            ConfigError::DuplicateKey {
                key: "seeds".into(),
                first: 2,
                second: 4
            }
        );
        assert!(e.to_string().contains("line 2") && e.to_string().contains("line 4"));
    }

    #[test]
    fn unknown_and_missing() {
        let e = parse_config_str("preset = quad-gt-deterministic\nfoo.bar = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { line: 2, .. }));
        let e = parse_config_str("problem.kind = quadratic\nalgorithm.scheme = GT\n").unwrap_err();
        assert_eq!(e, ConfigError::MissingKey("algorithm.iterations".into()));
        let e = parse_config_str("preset = nope\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownPreset("nope".into()));
        let e = parse_config_str("just text\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn variants_apply_on_top() {
        let c = parse_config_str(
            "problem.kind = quadratic\nalgorithm.scheme = GT\nalgorithm.iterations = 10\n\
             variant.a = algorithm.scheme=LG; algorithm.alpha=0.02\nvariant.b = topology.kind=star\n",
        )
        .unwrap();
        let v = c.resolve_variants().unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].1.algorithm.run.scheme, Scheme::Lg);
        assert_eq!(v[0].1.algorithm.run.steps.alpha, 0.02);
        assert_eq!(v[1].1.topology.kind, TopologyKind::Star);
        let e = parse_config_str(
            "problem.kind = quadratic\nalgorithm.scheme = GT\nalgorithm.iterations = 10\n\
             variant.a = algorithm.scheme=ZZ\n",
        )
        .unwrap_err();
        assert!(matches!(e, ConfigError::UnknownValue { .. }));
    }
}

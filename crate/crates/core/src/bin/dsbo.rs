use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsbo::error::{Error, Result};
use dsbo::expcli::config::{build_config, parse_seeds, ExperimentConfig};
use dsbo::expcli::{emit_svg_plot, parse_config, run_experiment, write_outputs, PlotOptions};

#[derive(Parser)]
#[command(name = "dsbo", version, about = "Decentralized stochastic bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a config file or a preset and write traces.
    Run {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// `a..b` (inclusive) or a comma list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot one column of trace CSV files as SVG.
    Plot {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        y: String,
        #[arg(long, default_value = "k")]
        x: String,
        #[arg(long)]
        logx: bool,
        #[arg(long)]
        logy: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_run_config(
    config: Option<PathBuf>,
    preset: Option<String>,
    set: &[String],
    seeds: Option<String>,
) -> Result<ExperimentConfig> {
    let mut overrides = Vec::new();
    for (i, s) in set.iter().enumerate() {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("--set expects key=value, got '{s}'")))?;
        overrides.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    let mut cfg = match (config, preset) {
        (Some(path), None) => {
            let mut cfg = parse_config(&path)?;
            for (line, k, v) in &overrides {
                cfg.set(*line, k, v)?;
            }
            cfg.validate()?;
            cfg
        }
        (None, Some(name)) => build_config(Some((0, &name)), &overrides)?,
        _ => {
            return Err(Error::ConfigInvalid(
                "give exactly one of --config or --preset".into(),
            ))
        }
    };
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(&s)
            .ok_or_else(|| Error::ConfigInvalid(format!("bad seed list '{s}'")))?;
    }
    Ok(cfg)
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run {
            config,
            preset,
            set,
            seeds,
            out,
        } => {
            let cfg = load_run_config(config, preset, &set, seeds)?;
            let dir = out
                .or_else(|| cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let runs = run_experiment(&cfg)?;
            let manifest = write_outputs(&cfg, &runs, &dir)?;
            for r in &runs {
                let last = r.mean_stationarity().last().map(|p| p.1).unwrap_or(f64::NAN);
                let hit = r.first_below(r.config.output.threshold);
                println!(
                    "{:<20} rho={:.4} final_stationarity={:.3e} threshold_hit={}",
                    r.name,
                    r.rho,
                    last,
                    hit.map(|(k, h)| format!("k={k} hessian_calls={h}"))
                        .unwrap_or_else(|| "never".into())
                );
            }
            println!("wrote {}", manifest.display());
        }
        Cmd::Plot {
            inputs,
            y,
            x,
            logx,
            logy,
            out,
        } => {
            let opts = PlotOptions {
                x_column: x,
                y_column: y,
                log_x: logx,
                log_y: logy,
            };
            emit_svg_plot(&inputs, &opts, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Validate { config } => {
            let cfg = parse_config(&config)?;
            for (name, _) in cfg.resolve_variants()? {
                println!("variant {name}: ok");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

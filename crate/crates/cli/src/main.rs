use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hlora_core::harness::{self, ExperimentConfig, StrategySpec};
use hlora_core::metrics::cost_report;

/// Federated LoRA fine-tuning simulator with heterogeneous layer allocation.
#[derive(Parser)]
#[command(name = "hlora", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured strategy once per configured seed.
    Simulate {
        config: PathBuf,
        /// Config overrides: `--section.key value` or `section.key=value`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run every (strategy, seed) pair and write a summary CSV.
    Gridrun {
        config: PathBuf,
        /// Comma-separated, e.g. `CoDesign,Random,GD:Bottleneck`. Defaults to the config's strategy.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// Comma-separated seeds. Defaults to the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Parse and validate a config, then print it with defaults filled in.
    Validate {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Print the analytic compute and communication estimates without training.
    Costs {
        config: PathBuf,
        /// Mean trainable layers per client; defaults to the profile's expectation.
        #[arg(long)]
        c_bar: Option<f64>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

/// Accepts `--a.b value`, `--a.b=value` and `a.b=value`.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        if arg.contains('=') {
            out.push(harness::split_override(arg)?);
        } else if let Some(key) = arg.strip_prefix("--") {
            let value = it
                .next()
                .with_context(|| format!("override --{key} has no value"))?;
            out.push((key.to_string(), value.clone()));
        } else {
            bail!("cannot read override {arg:?}; use --section.key value");
        }
    }
    Ok(out)
}

fn load(config: &PathBuf, overrides: &[String]) -> Result<ExperimentConfig> {
    let overrides = parse_overrides(overrides)?;
    harness::parse_config(config, &overrides)
        .with_context(|| format!("loading {}", config.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            print!("{}", cfg.to_toml()?);
            Ok(true)
        }
        Command::Costs {
            config,
            c_bar,
            overrides,
        } => {
            let cfg = load(&config, &overrides)?;
            let x = cfg.cost_inputs(c_bar);
            let r = cost_report(&x)?;
            let map_term = x.l * x.s * x.T_FIM / x.T;
            for (k, v) in [
                ("tau", x.tau),
                ("l", x.l),
                ("d", x.d),
                ("R", x.R),
                ("N", x.N),
                ("s", x.s),
                ("c_bar", x.c_bar),
                ("N_FIM", x.N_FIM),
                ("T_FIM", x.T_FIM),
                ("T", x.T),
                ("backward_full", r.backward_full),
                ("backward_ours", r.backward_ours),
                ("backward_ratio", r.backward_ratio),
                ("comm_full", r.comm_full),
                ("comm_ours", r.comm_ours),
                ("comm_map_term", map_term),
                ("comm_ratio", r.comm_ratio),
                ("fim_overhead", r.fim_overhead),
            ] {
                println!("{k} = {v:?}");
            }
            Ok(true)
        }
        Command::Simulate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let mut ok = true;
            for &seed in &cfg.seeds {
                match harness::run_experiment(&cfg, seed) {
                    Ok(out) => println!(
                        "{} seed {}: final accuracy {:.4} ({})",
                        out.label,
                        seed,
                        out.final_accuracy,
                        out.dir.join("rounds.csv").display()
                    ),
                    Err(e) => {
                        eprintln!("seed {seed} failed: {e}");
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::Gridrun {
            config,
            strategies,
            seeds,
            overrides,
        } => {
            let cfg = load(&config, &overrides)?;
            let specs: Vec<StrategySpec> = if strategies.is_empty() {
                vec![StrategySpec {
                    strategy: cfg.schedule.strategy,
                    pattern: None,
                }]
            } else {
                strategies
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_, _>>()?
            };
            let seeds = if seeds.is_empty() {
                cfg.seeds.clone()
            } else {
                seeds
            };
            let summary = harness::run_grid(&cfg, &specs, &seeds)?;
            for row in &summary.rows {
                println!(
                    "{:<24} mean {} std {} ({} runs, {} failed)",
                    row.strategy, row.mean_accuracy, row.std_accuracy, row.runs, row.failed
                );
            }
            println!("summary: {}", summary.path.display());
            Ok(summary.all_ok())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

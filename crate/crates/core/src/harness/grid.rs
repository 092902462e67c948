use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use crate::allocation::{Pattern, Strategy};
use crate::data::{extract_proxy, generate_synthetic, partition};
use crate::error::{Error, Result};
use crate::federation::{RoundRecord, Simulation, SimulationData};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

use super::config::ExperimentConfig;
use super::csv_out::{emit_csv, fmt_float, write_summary, SummaryRow};

/// A strategy with an optional base pattern, written `GD:Bottleneck` or `Random`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub pattern: Option<Pattern>,
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, pattern) = match s.split_once([':', '-']) {
            Some((n, p)) => (n, Some(p.parse()?)),
            None => (s, None),
        };
        Ok(StrategySpec {
            strategy: name.parse()?,
            pattern,
        })
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pattern {
            Some(p) => write!(f, "{}:{}", self.strategy, p),
            None => write!(f, "{}", self.strategy),
        }
    }
}

impl StrategySpec {
    /// `cfg` with this strategy (and pattern, if given) swapped in.
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        out.schedule.strategy = self.strategy;
        if let Some(p) = self.pattern {
            out.schedule.base_pattern = p;
        }
        out
    }
}

/// Generates the seed's dataset, client shards and proxy split.
pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> Result<SimulationData> {
    let rng = RngStream::new(seed, "data");
    let (train, test) = generate_synthetic(&cfg.synthetic(), &mut rng.derive("synthetic"))?;
    let clients = partition(&train, &cfg.partition_spec(), &mut rng.derive("partition"))?;
    let (proxy, test) = extract_proxy(&test, &cfg.proxy, &mut rng.derive("proxy"))?;
    Ok(SimulationData {
        clients,
        test,
        proxy,
    })
}

pub fn build_simulation<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<Simulation<T>> {
    cfg.validate()?;
    Simulation::new(
        cfg.model.clone(),
        cfg.federation.clone(),
        cfg.schedule.clone(),
        cfg.profile(),
        build_data(cfg, seed)?,
        seed,
    )
}

/// Outcome of one completed run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub label: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<RoundRecord>,
    pub final_accuracy: f64,
}

/// Runs one experiment and writes `<root>/<label>_<seed>/` with `rounds.csv`,
/// the resolved `config.toml`, and optional adapter checkpoints.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let mut sim = build_simulation::<f64>(cfg, seed)?;
    let label = sim.label();
    let dir = cfg.output_root().join(format!("{label}_{seed}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut resolved = cfg.clone();
    resolved.seeds = vec![seed];
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, resolved.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;

    let every = cfg.federation.checkpoint_every;
    let records = sim.run(|state, _| {
        if let Some(k) = every {
            if state.round % k == 0 {
                state
                    .params
                    .save(&dir.join(format!("adapters_round{:04}.bin", state.round)))?;
            }
        }
        Ok(())
    })?;
    emit_csv(&records, &dir.join("rounds.csv"))?;
    let final_accuracy = match records.last().and_then(|r| r.eval) {
        Some(e) => e.accuracy,
        None => sim.evaluate()?.accuracy,
    };
    log::info!("{label} seed {seed}: final accuracy {final_accuracy:.4}");
    Ok(RunOutput {
        label,
        seed,
        dir,
        records,
        final_accuracy,
    })
}

#[derive(Debug)]
pub struct GridCell {
    pub spec: StrategySpec,
    pub seed: u64,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Debug)]
pub struct GridSummary {
    pub cells: Vec<GridCell>,
    pub rows: Vec<SummaryRow>,
    pub path: PathBuf,
}

impl GridSummary {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.outcome.is_ok())
    }

    /// Final accuracies of the completed runs of `spec`, in seed order.
    pub fn accuracies(&self, spec: &StrategySpec) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| &c.spec == spec)
            .filter_map(|c| c.outcome.as_ref().ok().map(|o| o.final_accuracy))
            .collect()
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One run per (strategy, seed). A failing cell is recorded and the grid
/// moves on. Writes `<root>/summary.csv`.
pub fn run_grid(
    cfg: &ExperimentConfig,
    strategies: &[StrategySpec],
    seeds: &[u64],
) -> Result<GridSummary> {
    let mut cells = Vec::new();
    for spec in strategies {
        let cell_cfg = spec.apply(cfg);
        for &seed in seeds {
            let outcome = run_experiment(&cell_cfg, seed).map_err(|e| {
                log::error!("{spec} seed {seed} failed: {e}");
                e.to_string()
            });
            cells.push(GridCell {
                spec: *spec,
                seed,
                outcome,
            });
        }
    }
    let rows = strategies
        .iter()
        .map(|spec| {
            let mine: Vec<&GridCell> = cells.iter().filter(|c| &c.spec == spec).collect();
            let done: Vec<(u64, f64)> = mine
                .iter()
                .filter_map(|c| c.outcome.as_ref().ok().map(|o| (c.seed, o.final_accuracy)))
                .collect();
            let accs: Vec<f64> = done.iter().map(|&(_, a)| a).collect();
            let (mean, std) = mean_std(&accs);
            let label = mine
                .iter()
                .find_map(|c| c.outcome.as_ref().ok().map(|o| o.label.clone()))
                .unwrap_or_else(|| spec.to_string());
            SummaryRow {
                strategy: label,
                runs: mine.len(),
                failed: mine.len() - done.len(),
                mean_accuracy: fmt_float(mean),
                std_accuracy: fmt_float(std),
                per_seed: done
                    .iter()
                    .map(|(s, a)| format!("{s}:{}", fmt_float(*a)))
                    .collect::<Vec<_>>()
                    .join(";"),
            }
        })
        .collect::<Vec<_>>();
    let path = cfg.output_root().join("summary.csv");
    write_summary(&rows, &path)?;
    Ok(GridSummary { cells, rows, path })
}

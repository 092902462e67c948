use std::fs;
use std::path::Path;

use hlora_core::harness::{parse_config_str, read_round_csv, read_summary, run_grid, StrategySpec};

const TINY: &str = r#"
seeds = [0, 1, 2]

[model]
layers = 3
d_model = 8
n_heads = 2
d_ff = 16
rank = 1
alpha = 2.0
n_classes = 3
seq_len = 4
vocab = 12

[federation]
n = 6
s = 3
T = 3
batch_size = 4

[schedule]
T_RGD = 1
T_FIM = 1

[proxy]
size = 5

[data]
n_train = 60
n_test = 30
signature_tokens = 3
"#;

fn config(dir: &Path) -> hlora_core::harness::ExperimentConfig {
    let out = format!("output_dir={:?}", dir.display().to_string());
    parse_config_str(TINY, &[hlora_core::harness::split_override(&out).unwrap()]).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn grid_layout_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let specs: Vec<StrategySpec> = vec![
        "CoDesign".parse().unwrap(),
        "GD:Bottleneck".parse().unwrap(),
    ];
    let summary = run_grid(&config(a.path()), &specs, &[0, 1, 2]).unwrap();
    assert!(summary.all_ok());
    run_grid(&config(b.path()), &specs, &[0, 1, 2]).unwrap();

    let runs: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(runs.len(), 6);
    assert!(a.path().join("GD-Bottleneck_2/rounds.csv").exists());
    let rows = read_summary(&a.path().join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].runs, rows[0].failed), (3, 0));
    assert_eq!(
        read_round_csv(&a.path().join("CoDesign-Uniform_0/rounds.csv"))
            .unwrap()
            .len(),
        3
    );

    // Same config and seeds: byte-identical outputs, apart from the output_dir line.
    let strip = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        files
            .into_iter()
            .map(|(name, bytes)| {
                let text = String::from_utf8(bytes).unwrap_or_default();
                let kept: String = text
                    .lines()
                    .filter(|l| !l.starts_with("output_dir"))
                    .collect();
                (name, kept.into_bytes())
            })
            .collect()
    };
    assert_eq!(strip(read_all(a.path())), strip(read_all(b.path())));
}

#[test]
fn single_cell_grid() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_grid(&config(dir.path()), &["Straggler".parse().unwrap()], &[7]).unwrap();
    assert_eq!(summary.cells.len(), 1);
    let dirs: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "summary.csv")
        .collect();
    assert_eq!(dirs, vec!["Straggler_7".to_string()]);
}

#[test]
fn failing_cell_does_not_stop_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    // Disagrees with federation.n, so every cell fails validation.
    cfg.partition.n_clients = 99;
    let summary = run_grid(&cfg, &["Random".parse().unwrap()], &[0, 1]).unwrap();
    assert!(!summary.all_ok());
    assert_eq!(summary.rows[0].failed, 2);
}

#[test]
fn checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.federation.checkpoint_every = Some(1);
    hlora_core::harness::run_experiment(&cfg, 0).unwrap();
    let run = dir.path().join("CoDesign-Uniform_0");
    for t in 1..=3 {
        assert!(run.join(format!("adapters_round{t:04}.bin")).exists());
    }
    let back = hlora_core::model::TrainableParams::<f64>::load(
        &run.join("adapters_round0003.bin"),
        &cfg.model,
    )
    .unwrap();
    assert!(back.is_finite());
}

//! Round and summary CSV files.
//!
//! Floats are written in scientific notation with six significant digits,
//! lists are `;`-separated, allocation maps are `0`/`1` strings with `-` for a
//! client that sat the round out, and fields with no value are left empty.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::RoundRecord;

/// Version of the round CSV column layout.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.5e}")
}

fn join<I: IntoIterator<Item = String>>(items: I) -> String {
    items.into_iter().collect::<Vec<_>>().join(";")
}

/// One row of the round CSV, already formatted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub strategy: String,
    pub selected: String,
    pub maps: String,
    pub skipped: String,
    pub trained: usize,
    pub layer_probs: String,
    pub fim_refreshed: u8,
    pub delta_norms: String,
    pub train_loss: String,
    pub test_accuracy: String,
    pub test_loss: String,
    pub c_bar: String,
    pub backward_full: String,
    pub backward_ours: String,
    pub comm_full: String,
    pub comm_ours: String,
    pub memory_proxy: String,
}

impl From<&RoundRecord> for RoundRow {
    fn from(r: &RoundRecord) -> Self {
        let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        RoundRow {
            round: r.round,
            strategy: r.strategy.clone(),
            selected: join(r.selected.iter().map(usize::to_string)),
            maps: join(r.maps.iter().map(|m| {
                m.as_ref()
                    .map_or_else(|| "-".to_string(), |m| m.bitstring())
            })),
            skipped: join(r.skipped.iter().map(usize::to_string)),
            trained: r.trained,
            layer_probs: join(r.probs.iter().map(|&p| fmt_float(p))),
            fim_refreshed: r.fim_refreshed as u8,
            delta_norms: join(r.delta_norms.iter().map(|&p| fmt_float(p))),
            train_loss: opt(r.train_loss),
            test_accuracy: opt(r.eval.map(|e| e.accuracy)),
            test_loss: opt(r.eval.map(|e| e.mean_loss)),
            c_bar: fmt_float(r.costs.c_bar),
            backward_full: fmt_float(r.costs.backward_full),
            backward_ours: fmt_float(r.costs.backward_ours),
            comm_full: fmt_float(r.costs.comm_full),
            comm_ours: fmt_float(r.costs.comm_ours),
            memory_proxy: fmt_float(r.costs.memory),
        }
    }
}

const ROUND_HEADER: [&str; 18] = [
    "round",
    "strategy",
    "selected",
    "maps",
    "skipped",
    "trained",
    "layer_probs",
    "fim_refreshed",
    "delta_norms",
    "train_loss",
    "test_accuracy",
    "test_loss",
    "c_bar",
    "backward_full",
    "backward_ours",
    "comm_full",
    "comm_ours",
    "memory_proxy",
];

/// Writes a header plus one row per record.
pub fn emit_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| wrap(path, e))?;
    w.write_record(ROUND_HEADER).map_err(|e| wrap(path, e))?;
    for r in records {
        w.serialize(RoundRow::from(r)).map_err(|e| wrap(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_round_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| wrap(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<RoundRow>, _>>()
        .map_err(|e| wrap(path, e))
}

fn wrap(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

/// One line of the grid summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_accuracy: String,
    pub std_accuracy: String,
    /// Final accuracy per completed seed, `seed:accuracy` pairs.
    pub per_seed: String,
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| wrap(path, e))?;
    if rows.is_empty() {
        w.write_record([
            "strategy",
            "runs",
            "failed",
            "mean_accuracy",
            "std_accuracy",
            "per_seed",
        ])
        .map_err(|e| wrap(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| wrap(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| wrap(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(|e| wrap(path, e))
}

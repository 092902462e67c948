//! Plain-text dataset dumps.
//!
//! First line `# kind=<tokens|features> n_classes=<K>`, then one sample per
//! line: the label followed by whitespace-separated tokens or values. Values
//! are written in shortest round-trip form, so a dump reloads bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};

use super::{Dataset, Input, Sample};

pub fn dataset_to_text(ds: &Dataset) -> String {
    let kind = match ds.samples.first().map(|s| &s.input) {
        Some(Input::Features(_)) => "features",
        _ => "tokens",
    };
    let mut out = format!("# kind={kind} n_classes={}\n", ds.n_classes);
    for s in &ds.samples {
        write!(out, "{}", s.label).unwrap();
        match &s.input {
            Input::Tokens(t) => t.iter().for_each(|x| write!(out, " {x}").unwrap()),
            Input::Features(f) => f.iter().for_each(|x| write!(out, " {x:?}").unwrap()),
        }
        out.push('\n');
    }
    out
}

pub fn dataset_from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let mut kind = None;
    let mut n_classes = None;
    for field in header.trim_start_matches('#').split_whitespace() {
        match field.split_once('=') {
            Some(("kind", k)) => kind = Some(k.to_string()),
            Some(("n_classes", n)) => {
                n_classes = Some(
                    n.parse::<usize>()
                        .map_err(|e| Error::Format(e.to_string()))?,
                )
            }
            _ => {}
        }
    }
    let n_classes = n_classes.ok_or_else(|| Error::Format("header lacks n_classes".into()))?;
    let features = match kind.as_deref() {
        Some("tokens") => false,
        Some("features") => true,
        other => return Err(Error::Format(format!("unknown dataset kind {other:?}"))),
    };
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: {what}", lineno + 2));
        let mut parts = line.split_whitespace();
        let label: usize = parts
            .next()
            .ok_or_else(|| bad("missing label"))?
            .parse()
            .map_err(|_| bad("bad label"))?;
        let input = if features {
            Input::Features(
                parts
                    .map(|p| p.parse::<f64>().map_err(|_| bad("bad value")))
                    .collect::<Result<_>>()?,
            )
        } else {
            Input::Tokens(
                parts
                    .map(|p| p.parse::<u32>().map_err(|_| bad("bad token")))
                    .collect::<Result<_>>()?,
            )
        };
        samples.push(Sample {
            id: samples.len(),
            input,
            label,
        });
    }
    ensure!(!samples.is_empty(), Format, "dataset file has no samples");
    Dataset::new(samples, n_classes)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_text(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_text(&text)
}

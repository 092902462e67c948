use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::{CapabilityProfile, ScheduleConfig};
use crate::data::{PartitionSpec, ProxySpec, SyntheticSpec, TaskKind};
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::metrics::CostModelInputs;
use crate::model::ModelConfig;

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "HLORA_OUTPUT_ROOT";

/// Capability section; levels default to `l/2, 3l/4, l` and ratios to 0.6/0.3/0.1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapabilitySpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
}

impl CapabilitySpec {
    pub fn resolve(&self, l: usize) -> CapabilityProfile {
        let default = CapabilityProfile::<f64>::default_for(l);
        let levels = self.levels.clone().unwrap_or(default.levels);
        let ratios = match &self.ratios {
            Some(r) => r.clone(),
            None if levels.len() == default.ratios.len() => default.ratios,
            None => vec![1.0 / levels.len().max(1) as f64; levels.len()],
        };
        CapabilityProfile::new(levels, ratios)
    }
}

/// Synthetic data section. Class count, vocabulary and sequence length come
/// from the model section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_test: usize,
    pub separation: f64,
    pub signature_tokens: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        DataSpec {
            kind: s.kind,
            n_train: s.n_train,
            n_test: s.n_test,
            separation: s.separation,
            signature_tokens: s.signature_tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub schedule: ScheduleConfig,
    pub capability: CapabilitySpec,
    pub partition: PartitionSpec,
    pub proxy: ProxySpec,
    pub data: DataSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            federation: FederationConfig::default(),
            schedule: ScheduleConfig::default(),
            capability: CapabilitySpec::default(),
            partition: PartitionSpec::default(),
            proxy: ProxySpec::default(),
            data: DataSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn profile(&self) -> CapabilityProfile {
        self.capability.resolve(self.model.layers)
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            kind: self.data.kind,
            n_classes: self.model.n_classes,
            vocab: self.model.vocab,
            seq_len: self.model.seq_len,
            n_train: self.data.n_train,
            n_test: self.data.n_test,
            separation: self.data.separation,
            signature_tokens: self.data.signature_tokens,
        }
    }

    /// Partition spec with `n_clients` filled in from `federation.n`.
    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            n_clients: self.federation.n,
            ..self.partition.clone()
        }
    }

    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        errs.extend(self.model.validation_errors());
        if self.federation.T == 0 {
            errs.push("federation.T must be >= 1".into());
        }
        errs.extend(self.federation.validation_errors());
        errs.extend(self.schedule.validation_errors());
        if self.model.layers >= 1 {
            errs.extend(self.profile().validation_errors(self.model.layers));
        }
        if self.partition.n_clients != 0 && self.partition.n_clients != self.federation.n {
            errs.push(format!(
                "partition.n_clients ({}) disagrees with federation.n ({}); leave it at 0",
                self.partition.n_clients, self.federation.n
            ));
        }
        errs.extend(
            self.partition_spec()
                .validation_errors(self.model.n_classes),
        );
        errs.extend(self.synthetic().validation_errors());
        if self.proxy.size == 0 || self.proxy.size >= self.data.n_test {
            errs.push(format!(
                "proxy.size must lie in [1, data.n_test={}), got {}",
                self.data.n_test, self.proxy.size
            ));
        }
        if self.data.n_train < self.federation.n {
            errs.push(format!(
                "data.n_train ({}) must be at least federation.n ({})",
                self.data.n_train, self.federation.n
            ));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// `output_dir`, or the value of [`OUTPUT_ROOT_ENV`] when set.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Inputs of the analytic cost model. `c_bar` defaults to the expected
    /// capability `sum_h c_h r_h`.
    pub fn cost_inputs(&self, c_bar: Option<f64>) -> CostModelInputs {
        let profile = self.profile();
        let expected: f64 = profile
            .levels
            .iter()
            .zip(&profile.ratios)
            .map(|(&c, r)| c as f64 * r)
            .sum();
        CostModelInputs {
            tau: self.federation.tau as f64,
            l: self.model.layers as f64,
            d: self.model.frozen_params_per_layer() as f64,
            R: self.model.lora_params_per_layer() as f64,
            N: self.data.n_train as f64 / self.federation.n.max(1) as f64,
            s: self.federation.s as f64,
            c_bar: c_bar.unwrap_or(expected),
            N_FIM: self.proxy.size as f64,
            T_FIM: self.schedule.t_fim() as f64,
            T: self.federation.T as f64,
        }
    }
}

/// Parses TOML text, applies `key.path=value` overrides, validates.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut value: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
    for (key, raw) in overrides {
        set_path(&mut value, key, parse_override(raw))?;
    }
    let mut errs = Vec::new();
    negative_integers(&toml::Value::Table(value.clone()), "", &mut errs);
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let cfg: ExperimentConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Validation(vec![e.message().to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, overrides)
}

/// Splits `key=value`, or pairs `--key value` style arguments already split by the caller.
pub fn split_override(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::Parameter(format!("override {arg:?} is not key=value")))?;
    Ok((
        k.trim().trim_start_matches("--").to_string(),
        v.trim().to_string(),
    ))
}

fn parse_override(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parameter(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn negative_integers(v: &toml::Value, path: &str, errs: &mut Vec<String>) {
    match v {
        toml::Value::Integer(i) if *i < 0 => errs.push(format!("{path} must be >= 0, got {i}")),
        toml::Value::Table(t) => {
            for (k, child) in t {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                negative_integers(child, &p, errs);
            }
        }
        toml::Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                negative_integers(child, &format!("{path}[{i}]"), errs);
            }
        }
        _ => {}
    }
}

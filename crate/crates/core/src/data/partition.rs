use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::RngStream;

use super::{Dataset, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    #[serde(rename = "IID")]
    Iid,
    /// "C/alpha": `C` classes per client, Dirichlet(alpha) quantities across them.
    LabelSkew,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub classes_per_client: usize,
    pub dirichlet_alpha: f64,
    /// Filled from `federation.n` when left at 0 in a config file.
    pub n_clients: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            mode: PartitionMode::Iid,
            classes_per_client: 2,
            dirichlet_alpha: 1.0,
            n_clients: 0,
        }
    }
}

impl PartitionSpec {
    pub fn validation_errors(&self, n_classes: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_clients == 0 {
            errs.push("partition.n_clients must be >= 1".into());
        }
        if self.mode == PartitionMode::LabelSkew {
            if self.classes_per_client == 0 || self.classes_per_client > n_classes {
                errs.push(format!(
                    "partition.classes_per_client must lie in [1, {n_classes}], got {}",
                    self.classes_per_client
                ));
            }
            if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
                errs.push(format!(
                    "partition.dirichlet_alpha must be > 0, got {}",
                    self.dirichlet_alpha
                ));
            }
            if self.n_clients * self.classes_per_client < n_classes {
                errs.push(format!(
                    "{} clients x {} classes cannot cover {n_classes} classes",
                    self.n_clients, self.classes_per_client
                ));
            }
        }
        errs
    }
}

/// Integer shares of `total` proportional to `weights` (largest remainder, ties to the lower index).
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![total / weights.len(); weights.len()];
        for slot in out.iter_mut().take(total % weights.len()) {
            *slot += 1;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Classes held by client `i` under label skew: `C` consecutive classes, round-robin.
pub fn client_classes(client: usize, classes_per_client: usize, n_classes: usize) -> Vec<usize> {
    (0..classes_per_client)
        .map(|k| (client * classes_per_client + k) % n_classes)
        .collect()
}

const MAX_ATTEMPTS: usize = 100;

/// Splits `train` into one shard per client. Every sample lands in exactly one shard.
pub fn partition(
    train: &Dataset,
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Vec<Dataset>> {
    let errs = spec.validation_errors(train.n_classes);
    ensure!(errs.is_empty(), Parameter, "{}", errs.join("; "));
    let n = spec.n_clients;
    ensure!(
        train.len() >= n,
        Parameter,
        "{} samples cannot give {n} clients a non-empty shard",
        train.len()
    );
    match spec.mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            rng.shuffle(&mut idx);
            let sizes = apportion(train.len(), &vec![1.0; n]);
            let mut shards = Vec::with_capacity(n);
            let mut offset = 0;
            for size in sizes {
                let samples = idx[offset..offset + size]
                    .iter()
                    .map(|&i| train.samples[i].clone())
                    .collect();
                shards.push(Dataset::shard(samples, train.n_classes));
                offset += size;
            }
            Ok(shards)
        }
        PartitionMode::LabelSkew => label_skew(train, spec, rng),
    }
}

fn label_skew(train: &Dataset, spec: &PartitionSpec, rng: &mut RngStream) -> Result<Vec<Dataset>> {
    let (n, k, c) = (spec.n_clients, train.n_classes, spec.classes_per_client);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, s) in train.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let held: Vec<Vec<usize>> = (0..n).map(|i| client_classes(i, c, k)).collect();
    let mut holders: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for (client, classes) in held.iter().enumerate() {
        for (slot, &class) in classes.iter().enumerate() {
            holders[class].push((client, slot));
        }
    }

    for _ in 0..MAX_ATTEMPTS {
        let props = (0..n)
            .map(|_| rng.dirichlet(spec.dirichlet_alpha, c))
            .collect::<Result<Vec<_>>>()?;
        let mut shards: Vec<Vec<Sample>> = vec![Vec::new(); n];
        for class in 0..k {
            let mut members = by_class[class].clone();
            rng.shuffle(&mut members);
            let weights: Vec<f64> = holders[class]
                .iter()
                .map(|&(client, slot)| props[client][slot])
                .collect();
            let counts = apportion(members.len(), &weights);
            let mut offset = 0;
            for (&(client, _), count) in holders[class].iter().zip(counts) {
                shards[client].extend(
                    members[offset..offset + count]
                        .iter()
                        .map(|&i| train.samples[i].clone()),
                );
                offset += count;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(shards
                .into_iter()
                .map(|mut s| {
                    s.sort_by_key(|x| x.id);
                    Dataset::shard(s, k)
                })
                .collect());
        }
    }
    Err(Error::Parameter(format!(
        "label-skew partition left a client empty after {MAX_ATTEMPTS} attempts"
    )))
}

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Tokens(Vec<u32>),
    Features(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Index of the sample in the split it was generated in.
    pub id: usize,
    pub input: Input,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, n_classes: usize) -> Result<Self> {
        ensure!(!samples.is_empty(), Parameter, "dataset must not be empty");
        ensure!(
            samples.iter().all(|s| s.label < n_classes),
            Parameter,
            "labels must lie in [0, {n_classes})"
        );
        Ok(Dataset { samples, n_classes })
    }

    /// A possibly empty shard; client shards and partitions use this.
    pub fn shard(samples: Vec<Sample>, n_classes: usize) -> Self {
        Dataset { samples, n_classes }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }
}

//! Synthetic datasets, client partitioning and the server proxy split.

mod io;
mod partition;
mod proxy;
mod synthetic;
mod types;

pub use io::{dataset_from_text, dataset_to_text, read_dataset, write_dataset};
pub(crate) use partition::apportion;
pub use partition::{client_classes, partition, PartitionMode, PartitionSpec};
pub use proxy::{assert_disjoint, extract_proxy, ProxySpec};
pub use synthetic::{generate_synthetic, SyntheticSpec, TaskKind};
pub use types::{Dataset, Input, Sample};

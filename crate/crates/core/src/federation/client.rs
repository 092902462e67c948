use crate::allocation::AllocationMap;
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::model::{
    flatten_delta, train_local, FrozenBase, LayerDeltas, LocalTrainConfig, TrainStats,
    TrainableParams,
};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

/// What a client sends back after local training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub map: AllocationMap,
    /// `theta_after - theta_global`; exactly zero on layers the map leaves out.
    pub deltas: LayerDeltas<T>,
    pub sample_count: usize,
    pub stats: TrainStats,
}

/// Uniform subset of `s` distinct client ids out of `n`, ascending.
pub fn sample_clients(n: usize, s: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    ensure!(s <= n, Parameter, "cannot sample {s} of {n} clients");
    let mut ids = rng.sample_indices(n, s)?;
    ids.sort_unstable();
    Ok(ids)
}

/// Trains a copy of the global adapters on `data` with the layers outside
/// `map` frozen, from a fresh optimizer state, and returns the difference.
pub fn local_update<T: Scalar>(
    client_id: usize,
    global: &TrainableParams<T>,
    base: &FrozenBase<T>,
    map: &AllocationMap,
    data: &Dataset,
    cfg: &LocalTrainConfig,
    rng: &mut RngStream,
) -> Result<ClientUpdate<T>> {
    ensure!(
        map.len() == global.num_layers(),
        Shape,
        "map covers {} layers, model has {}",
        map.len(),
        global.num_layers()
    );
    ensure!(
        !data.is_empty(),
        Parameter,
        "client {client_id} has no local data"
    );
    let mut local = global.clone();
    let stats = train_local(base, &mut local, map.bits(), &data.samples, cfg, rng)?;
    Ok(ClientUpdate {
        client_id,
        map: map.clone(),
        deltas: flatten_delta(global, &local)?,
        sample_count: data.len(),
        stats,
    })
}

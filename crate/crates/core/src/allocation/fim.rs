use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{ensure, Result};
use crate::model::{backward, forward, FrozenBase, TrainableParams};
use crate::scalar::Scalar;

/// Per-layer FIM score: mean over proxy samples of the squared L2 norm of the
/// single-sample loss gradient with respect to that layer's adapters.
///
/// Every layer is unfrozen for scoring. Samples are scored in parallel and
/// summed in proxy order.
pub fn fim_scores<T: Scalar>(
    base: &FrozenBase<T>,
    params: &TrainableParams<T>,
    proxy: &[Sample],
) -> Result<Vec<T>> {
    ensure!(
        !proxy.is_empty(),
        Parameter,
        "FIM scoring needs a non-empty proxy set"
    );
    let l = base.cfg.layers;
    let mask = vec![true; l];
    let per_sample = proxy
        .par_iter()
        .map(|s| {
            let pass = forward(base, params, &mask, &[s], None)?;
            Ok(backward(base, params, &pass.cache)?.layer_squared_norms())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gamma = vec![T::zero(); l];
    for norms in per_sample {
        for (g, n) in gamma.iter_mut().zip(norms) {
            *g += n;
        }
    }
    let inv = T::one() / T::of_usize(proxy.len());
    Ok(gamma.into_iter().map(|g| g * inv).collect())
}

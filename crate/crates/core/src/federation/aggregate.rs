use crate::error::{ensure, Result};
use crate::model::LayerDeltas;
use crate::scalar::Scalar;

use super::ClientUpdate;

/// Masked mean of client deltas.
///
/// Layer `j` averages over the clients whose map includes `j`; a layer nobody
/// trained gets an exact zero. The head averages over every update. Sums run
/// in ascending client id and are scaled by the reciprocal of the count.
/// Returns `None` for an empty update set.
pub fn aggregate<T: Scalar>(
    updates: &[ClientUpdate<T>],
    l: usize,
) -> Result<Option<LayerDeltas<T>>> {
    let Some(first) = updates.first() else {
        return Ok(None);
    };
    let shape = |d: &LayerDeltas<T>| -> (Vec<usize>, usize) {
        (d.layers.iter().map(Vec::len).collect(), d.head.len())
    };
    let want = shape(&first.deltas);
    ensure!(
        want.0.len() == l,
        Shape,
        "updates carry {} layers, expected {l}",
        want.0.len()
    );
    ensure!(
        updates
            .iter()
            .all(|u| shape(&u.deltas) == want && u.map.len() == l),
        Shape,
        "client updates have inconsistent shapes"
    );
    let mut order: Vec<&ClientUpdate<T>> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);

    let mut out = LayerDeltas {
        layers: want.0.iter().map(|&n| vec![T::zero(); n]).collect(),
        head: vec![T::zero(); want.1],
    };
    for (j, acc) in out.layers.iter_mut().enumerate() {
        let mut count = 0usize;
        for u in order.iter().filter(|u| u.map.get(j)) {
            for (a, &d) in acc.iter_mut().zip(&u.deltas.layers[j]) {
                *a += d;
            }
            count += 1;
        }
        if count > 0 {
            let inv = T::one() / T::of_usize(count);
            acc.iter_mut().for_each(|a| *a *= inv);
        }
    }
    for u in &order {
        for (a, &d) in out.head.iter_mut().zip(&u.deltas.head) {
            *a += d;
        }
    }
    let inv = T::one() / T::of_usize(order.len());
    out.head.iter_mut().for_each(|a| *a *= inv);
    Ok(Some(out))
}

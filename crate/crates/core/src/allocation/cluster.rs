use crate::error::{ensure, Result};

const MAX_ITERS: usize = 100;

/// Groups layer scores into `k` clusters with 1-D k-means.
///
/// Returns a group label per layer, `0` for the highest-scoring group. Lloyd
/// iterations start from quantiles of the distinct values and stop once the
/// assignment is stable. A point equidistant from two centroids joins the
/// higher one. When there are fewer than `k` distinct scores, or a cluster
/// empties out, layers are grouped by rank instead.
pub fn cluster_scores(gamma: &[f64], k: usize) -> Result<Vec<usize>> {
    let l = gamma.len();
    ensure!(
        k >= 1 && k <= l,
        Parameter,
        "cannot form {k} groups from {l} scores"
    );
    ensure!(
        gamma.iter().all(|g| g.is_finite() && *g >= 0.0),
        Parameter,
        "scores must be finite and non-negative: {gamma:?}"
    );
    let mut distinct: Vec<f64> = gamma.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    if distinct.len() < k {
        return Ok(rank_groups(gamma, k));
    }
    // Descending centroids, so the centroid index is the group label.
    let mut centroids: Vec<f64> = (0..k)
        .map(|g| distinct[(2 * g + 1) * distinct.len() / (2 * k)])
        .collect();
    let mut labels = vec![usize::MAX; l];
    for _ in 0..MAX_ITERS {
        let next: Vec<usize> = gamma.iter().map(|&x| nearest(&centroids, x)).collect();
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &g) in gamma.iter().zip(&labels) {
            sums[g] += x;
            counts[g] += 1;
        }
        if counts.contains(&0) {
            return Ok(rank_groups(gamma, k));
        }
        for g in 0..k {
            centroids[g] = sums[g] / counts[g] as f64;
        }
    }
    // Centroid means of nested 1-D clusters stay ordered, but sort defensively.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[b].total_cmp(&centroids[a]).then(a.cmp(&b)));
    let mut relabel = vec![0; k];
    for (rank, &g) in order.iter().enumerate() {
        relabel[g] = rank;
    }
    Ok(labels.into_iter().map(|g| relabel[g]).collect())
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (g, &c) in centroids.iter().enumerate().skip(1) {
        // Strict comparison keeps ties with the earlier (higher) centroid.
        if (x - c).abs() < (x - centroids[best]).abs() {
            best = g;
        }
    }
    best
}

/// Fallback: equal-size groups by descending score. Equal scores share the group
/// of their first occurrence in rank order.
fn rank_groups(gamma: &[f64], k: usize) -> Vec<usize> {
    let l = gamma.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]));
    let mut labels = vec![0; l];
    let mut prev: Option<(f64, usize)> = None;
    for (rank, &j) in order.iter().enumerate() {
        let group = match prev {
            Some((v, g)) if v == gamma[j] => g,
            _ => rank * k / l,
        };
        labels[j] = group;
        prev = Some((gamma[j], group));
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum within-group sum of squares over every split of the sorted scores
    /// into `k` contiguous non-empty runs.
    fn brute_force(gamma: &[f64], k: usize) -> f64 {
        let mut sorted = gamma.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        fn sse(xs: &[f64]) -> f64 {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum()
        }
        fn go(xs: &[f64], k: usize) -> f64 {
            if k == 1 {
                return sse(xs);
            }
            (1..=xs.len() - (k - 1))
                .map(|cut| sse(&xs[..cut]) + go(&xs[cut..], k - 1))
                .fold(f64::INFINITY, f64::min)
        }
        go(&sorted, k)
    }

    fn labelled_sse(gamma: &[f64], labels: &[usize], k: usize) -> f64 {
        (0..k)
            .map(|g| {
                let xs: Vec<f64> = gamma
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == g)
                    .map(|(&x, _)| x)
                    .collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn worked_example() {
        let gamma = [9.0, 8.0, 1.0, 0.5];
        let labels = cluster_scores(&gamma, 2).unwrap();
        assert_eq!(labels, vec![0, 0, 1, 1]);
        assert!((labelled_sse(&gamma, &labels, 2) - brute_force(&gamma, 2)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(cluster_scores(&[3.0; 5], 1).unwrap(), vec![0; 5]);
        // Two distinct values, three groups: rank fallback keeps ties together.
        let labels = cluster_scores(&[1.0, 1.0, 2.0, 2.0], 3).unwrap();
        assert_eq!(labels[2], labels[3]);
        assert_eq!(labels[0], labels[1]);
        assert!(labels[2] < labels[0]);
        assert!(cluster_scores(&[1.0, 2.0], 3).is_err());
        assert!(cluster_scores(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn separated_groups_match_brute_force() {
        let gamma = [0.1, 5.0, 5.2, 0.3, 2.0, 2.1, 0.2, 5.1];
        let labels = cluster_scores(&gamma, 3).unwrap();
        assert_eq!(labels, vec![2, 0, 0, 2, 1, 1, 2, 0]);
        assert!((labelled_sse(&gamma, &labels, 3) - brute_force(&gamma, 3)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn groups_are_ordered_and_nonempty(gamma in prop::collection::vec(0.0f64..10.0, 1..9), k in 1usize..4) {
            prop_assume!(k <= gamma.len());
            let labels = cluster_scores(&gamma, k).unwrap();
            for g in 0..k {
                let distinct = {
                    let mut d = gamma.clone();
                    d.sort_by(f64::total_cmp);
                    d.dedup();
                    d.len()
                };
                if distinct >= k {
                    prop_assert!(labels.contains(&g));
                }
            }
            for a in 0..gamma.len() {
                for b in 0..gamma.len() {
                    if gamma[a] > gamma[b] {
                        prop_assert!(labels[a] <= labels[b]);
                    }
                }
            }
        }

        #[test]
        fn permutation_equivariant(gamma in prop::collection::vec(0.0f64..10.0, 2..9), k in 1usize..4, seed in any::<u64>()) {
            prop_assume!(k <= gamma.len());
            let mut perm: Vec<usize> = (0..gamma.len()).collect();
            crate::numerics::RngStream::new(seed, "perm").shuffle(&mut perm);
            let permuted: Vec<f64> = perm.iter().map(|&i| gamma[i]).collect();
            let base = cluster_scores(&gamma, k).unwrap();
            let moved = cluster_scores(&permuted, k).unwrap();
            for (pos, &i) in perm.iter().enumerate() {
                prop_assert_eq!(moved[pos], base[i]);
            }
        }
    }
}

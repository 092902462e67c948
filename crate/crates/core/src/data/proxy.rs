use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::RngStream;

use super::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySpec {
    /// Number of test samples held out for layer-importance scoring.
    pub size: usize,
}

impl Default for ProxySpec {
    fn default() -> Self {
        ProxySpec { size: 100 }
    }
}

/// Draws `spec.size` samples uniformly from `test`; returns `(proxy, test \ proxy)`.
pub fn extract_proxy(
    test: &Dataset,
    spec: &ProxySpec,
    rng: &mut RngStream,
) -> Result<(Dataset, Dataset)> {
    ensure!(spec.size >= 1, Parameter, "proxy size must be >= 1");
    ensure!(
        spec.size < test.len(),
        Parameter,
        "proxy size {} must be smaller than the test split ({})",
        spec.size,
        test.len()
    );
    let mut picked = rng.sample_indices(test.len(), spec.size)?;
    picked.sort_unstable();
    let mut in_proxy = vec![false; test.len()];
    for &i in &picked {
        in_proxy[i] = true;
    }
    let proxy = picked.iter().map(|&i| test.samples[i].clone()).collect();
    let rest = test
        .samples
        .iter()
        .zip(&in_proxy)
        .filter(|(_, &p)| !p)
        .map(|(s, _)| s.clone())
        .collect();
    Ok((
        Dataset::new(proxy, test.n_classes)?,
        Dataset::new(rest, test.n_classes)?,
    ))
}

/// Fails when an evaluation set shares a sample id with the proxy set.
pub fn assert_disjoint(eval: &Dataset, proxy: &Dataset) -> Result<()> {
    let mut ids = proxy.ids();
    ids.sort_unstable();
    let clash = eval
        .samples
        .iter()
        .find(|s| ids.binary_search(&s.id).is_ok());
    ensure!(
        clash.is_none(),
        State,
        "evaluation set contains proxy sample {}",
        clash.map_or(0, |s| s.id)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn test_split(n: usize, seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            n_train: 10,
            n_test: n,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, &mut RngStream::new(seed, "data"))
            .unwrap()
            .1
    }

    #[test]
    fn sizes_and_disjointness() {
        let test = test_split(500, 1);
        let (proxy, rest) = extract_proxy(
            &test,
            &ProxySpec { size: 50 },
            &mut RngStream::new(2, "proxy"),
        )
        .unwrap();
        assert_eq!(proxy.len(), 50);
        assert_eq!(rest.len(), 450);
        assert_disjoint(&rest, &proxy).unwrap();
        assert!(assert_disjoint(&test, &proxy).is_err());
    }

    #[test]
    fn reproducible_and_bounded() {
        let test = test_split(100, 1);
        let a = extract_proxy(
            &test,
            &ProxySpec { size: 10 },
            &mut RngStream::new(2, "proxy"),
        )
        .unwrap();
        let b = extract_proxy(
            &test,
            &ProxySpec { size: 10 },
            &mut RngStream::new(2, "proxy"),
        )
        .unwrap();
        assert_eq!(a.0.ids(), b.0.ids());
        assert!(extract_proxy(
            &test,
            &ProxySpec { size: 100 },
            &mut RngStream::new(2, "proxy")
        )
        .is_err());
    }

    #[test]
    fn proxy_class_histogram_tracks_test_split() {
        let test = test_split(1000, 3);
        let mut totals = vec![0usize; test.n_classes];
        let seeds = 200;
        for seed in 0..seeds {
            let (proxy, _) = extract_proxy(
                &test,
                &ProxySpec { size: 50 },
                &mut RngStream::new(seed, "proxy"),
            )
            .unwrap();
            for (t, c) in totals.iter_mut().zip(proxy.class_counts()) {
                *t += c;
            }
        }
        let expected: Vec<f64> = test
            .class_counts()
            .iter()
            .map(|&c| c as f64 / test.len() as f64)
            .collect();
        for (t, e) in totals.iter().zip(expected) {
            let observed = *t as f64 / (50 * seeds) as f64;
            assert!((observed - e).abs() < 0.03, "{observed} vs {e}");
        }
    }
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{ensure, Result};

/// Named, seeded random stream.
///
/// Backed by ChaCha8 (`rand_chacha` pinned to 0.9.0). The key is derived from
/// the experiment seed and the stream id selects a ChaCha stream through a
/// FNV-1a hash of the label, so `("partition", 7)` and `("init", 7)` never
/// share a keystream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl RngStream {
    pub fn new(seed: u64, stream_id: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(stream_id));
        RngStream {
            seed,
            label: stream_id.to_owned(),
            rng,
        }
    }

    /// Independent stream sharing this stream's seed, e.g. one per client and round.
    pub fn derive(&self, suffix: &str) -> RngStream {
        RngStream::new(self.seed, &format!("{}/{}", self.label, suffix))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.label
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        ensure!(
            lo < hi && lo.is_finite() && hi.is_finite(),
            Parameter,
            "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
        );
        Ok(lo + (hi - lo) * self.next_f64())
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> Result<f64> {
        ensure!(
            std >= 0.0 && std.is_finite() && mean.is_finite(),
            Parameter,
            "gaussian needs finite mean and std >= 0, got ({mean}, {std})"
        );
        let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut self.rng);
        Ok(mean + std * z)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let dist = Gamma::new(shape, 1.0)
            .map_err(|e| crate::Error::Parameter(format!("gamma shape {shape}: {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    /// Symmetric Dirichlet draw via normalized Gamma variates.
    pub fn dirichlet(&mut self, alpha: f64, k: usize) -> Result<Vec<f64>> {
        ensure!(
            alpha > 0.0,
            Parameter,
            "dirichlet alpha must be > 0, got {alpha}"
        );
        ensure!(k >= 1, Parameter, "dirichlet needs at least one component");
        let draws = (0..k)
            .map(|_| self.gamma(alpha))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            Ok(draws.into_iter().map(|x| x / total).collect())
        } else {
            // every gamma underflowed (tiny alpha): put all mass on one component
            let mut p = vec![0.0; k];
            p[self.index(k)] = 1.0;
            Ok(p)
        }
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, seq: &mut [T]) {
        seq.shuffle(&mut self.rng);
    }

    /// `amount` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Result<Vec<usize>> {
        ensure!(
            amount <= n,
            Parameter,
            "cannot draw {amount} distinct items from {n}"
        );
        Ok(rand::seq::index::sample(&mut self.rng, n, amount).into_vec())
    }
}

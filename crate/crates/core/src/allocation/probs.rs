use crate::error::{ensure, Error, Result};
use crate::numerics::RngStream;
use crate::scalar::ProbScalar;

use super::cluster::cluster_scores;
use super::map::{AllocationMap, CapabilityProfile, Pattern};

fn from_count<P: ProbScalar>(x: usize) -> P {
    P::from_usize(x).expect("count representable")
}

/// Per-layer base probability of each capability level.
///
/// `a_h = #{h' : c_h' >= c_h} / sum_h' c_h' r_h'`, strictly decreasing in `h`.
pub fn base_capability_probs<P: ProbScalar>(profile: &CapabilityProfile<P>) -> Result<Vec<P>> {
    profile.validate(profile.levels.last().copied().unwrap_or(0))?;
    let denom = profile
        .levels
        .iter()
        .zip(&profile.ratios)
        .fold(P::zero(), |acc, (&c, r)| {
            acc + from_count::<P>(c) * r.clone()
        });
    Ok(profile
        .levels
        .iter()
        .map(|&c| {
            let at_least = profile.levels.iter().filter(|&&o| o >= c).count();
            from_count::<P>(at_least) / denom.clone()
        })
        .collect())
}

/// Column sums of `masks` normalised to a distribution over layers.
pub fn rgd_prior_from_masks<P: ProbScalar>(masks: &[AllocationMap]) -> Result<Vec<P>> {
    let l = masks.first().map_or(0, AllocationMap::len);
    ensure!(
        masks.iter().all(|m| m.len() == l),
        Shape,
        "masks of differing lengths"
    );
    let cols: Vec<usize> = (0..l)
        .map(|j| masks.iter().filter(|m| m.get(j)).count())
        .collect();
    let total: usize = cols.iter().sum();
    ensure!(total > 0, Parameter, "masks carry no mass");
    Ok(cols
        .into_iter()
        .map(|c| from_count::<P>(c) / from_count::<P>(total))
        .collect())
}

/// Prior layer distribution of the GD population: `n` clients split across
/// capability levels, each holding the `pattern` mask for its level.
///
/// For [`Pattern::Uniform`] each client contributes its expected mask `c/l` on
/// every layer, which makes the prior exactly uniform.
pub fn rgd_prior<P: ProbScalar>(
    profile: &CapabilityProfile<P>,
    pattern: Pattern,
    l: usize,
    n: usize,
) -> Result<Vec<P>> {
    profile.validate(l)?;
    ensure!(n >= 1, Parameter, "population must be non-empty");
    let counts = profile.level_counts(n);
    let mut cols = vec![P::zero(); l];
    for (&c, &count) in profile.levels.iter().zip(&counts) {
        if count == 0 {
            continue;
        }
        let weight = from_count::<P>(count);
        match pattern.deterministic(l, c) {
            Some(m) => {
                for j in m.layers() {
                    cols[j] = cols[j].clone() + weight.clone();
                }
            }
            None => {
                let share = weight * from_count::<P>(c) / from_count::<P>(l);
                for col in cols.iter_mut() {
                    *col = col.clone() + share.clone();
                }
            }
        }
    }
    let total = cols.iter().fold(P::zero(), |acc, c| acc + c.clone());
    if total == P::zero() {
        return Err(Error::Parameter("RGD prior has zero total mass".into()));
    }
    Ok(cols.into_iter().map(|c| c / total.clone()).collect())
}

/// Layer probabilities from FIM scores: cluster into `k` groups (highest first),
/// weight each layer by its group's base probability, normalise.
pub fn fim_allocation_probs<P: ProbScalar>(
    gamma: &[f64],
    profile: &CapabilityProfile<P>,
) -> Result<Vec<P>> {
    let a = base_capability_probs(profile)?;
    let labels = cluster_scores(gamma, profile.k())?;
    let weights: Vec<P> = labels.iter().map(|&g| a[g].clone()).collect();
    let total = weights.iter().fold(P::zero(), |acc, w| acc + w.clone());
    Ok(weights.into_iter().map(|w| w / total.clone()).collect())
}

/// `c` distinct layers drawn sequentially in proportion to `probs`, renormalising
/// after each draw. When fewer than `c` layers have positive weight the rest are
/// drawn uniformly from the zero-weight layers.
pub fn sample_allocation(probs: &[f64], c: usize, rng: &mut RngStream) -> Result<AllocationMap> {
    let l = probs.len();
    ensure!(c <= l, Parameter, "cannot pick {c} of {l} layers");
    ensure!(
        probs.iter().all(|p| p.is_finite() && *p >= 0.0),
        Parameter,
        "probabilities must be finite and non-negative: {probs:?}"
    );
    let mut weights = probs.to_vec();
    let mut taken = vec![false; l];
    for _ in 0..c {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (j, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(j);
                    if u < acc {
                        break;
                    }
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            let free: Vec<usize> = (0..l).filter(|&j| !taken[j]).collect();
            free[rng.index(free.len())]
        };
        taken[pick] = true;
        weights[pick] = 0.0;
    }
    Ok(AllocationMap::from_bits(taken))
}

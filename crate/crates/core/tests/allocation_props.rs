use std::collections::HashMap;

use hlora_core::allocation::{
    base_capability_probs, fim_allocation_probs, gd_mask, rgd_prior, rgd_prior_from_masks,
    sample_allocation, AllocationMap, Allocator, CapabilityProfile, Pattern, ScheduleConfig,
    Strategy as Strat,
};
use hlora_core::numerics::RngStream;
use num_rational::Ratio;
use proptest::prelude::*;

type Q = Ratio<i64>;

/// Marginal inclusion probability of each layer under sequential
/// draw-and-renormalise sampling, by enumerating every ordered draw sequence.
fn enumerate_marginals(probs: &[f64], c: usize) -> Vec<f64> {
    fn go(probs: &[f64], taken: &mut Vec<usize>, c: usize, weight: f64, out: &mut [f64]) {
        if taken.len() == c {
            for &j in taken.iter() {
                out[j] += weight;
            }
            return;
        }
        let left: f64 = (0..probs.len())
            .filter(|j| !taken.contains(j))
            .map(|j| probs[j])
            .sum();
        for j in 0..probs.len() {
            if taken.contains(&j) || probs[j] == 0.0 {
                continue;
            }
            taken.push(j);
            go(probs, taken, c, weight * probs[j] / left, out);
            taken.pop();
        }
    }
    let mut out = vec![0.0; probs.len()];
    go(probs, &mut Vec::new(), c, 1.0, &mut out);
    out
}

fn empirical_marginals(probs: &[f64], c: usize, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, "marginals");
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..draws {
        for j in sample_allocation(probs, c, &mut rng).unwrap().layers() {
            counts[j] += 1;
        }
    }
    counts.iter().map(|&k| k as f64 / draws as f64).collect()
}

#[test]
fn monte_carlo_matches_prior_for_single_draw() {
    let probs = [0.5, 0.25, 0.0, 0.25];
    let freq = empirical_marginals(&probs, 1, 100_000, 1);
    for (f, p) in freq.iter().zip(probs) {
        assert!((f - p).abs() <= 0.02, "{freq:?}");
    }
    assert_eq!(freq[2], 0.0);
}

#[test]
fn without_replacement_matches_enumeration() {
    let probs = [0.35, 0.05, 0.3, 0.2, 0.1];
    let oracle = enumerate_marginals(&probs, 2);
    assert!((oracle.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    let freq = empirical_marginals(&probs, 2, 100_000, 2);
    // Total variation between the normalised inclusion vectors.
    let tv: f64 = oracle
        .iter()
        .zip(&freq)
        .map(|(o, f)| (o - f).abs() / 2.0)
        .sum::<f64>()
        / 2.0;
    assert!(tv <= 0.01, "tv {tv}, oracle {oracle:?}, empirical {freq:?}");
}

#[test]
fn enumeration_agrees_on_six_layers() {
    let probs = [0.1, 0.2, 0.0, 0.3, 0.15, 0.25];
    for c in 1..=4 {
        let oracle = enumerate_marginals(&probs, c);
        let freq = empirical_marginals(&probs, c, 40_000, 3 + c as u64);
        let tv: f64 = oracle
            .iter()
            .zip(&freq)
            .map(|(o, f)| (o - f).abs())
            .sum::<f64>()
            / (2.0 * c as f64);
        assert!(tv <= 0.01, "c={c} tv {tv}");
    }
}

#[test]
fn random_and_uniform_gd_share_marginals() {
    let profile = CapabilityProfile::new(vec![4, 6, 8], vec![0.6, 0.3, 0.1]);
    let caps: Vec<usize> = [vec![4; 6], vec![6; 3], vec![8]].concat();
    let ids: Vec<usize> = (0..10).collect();
    let mut freq = HashMap::new();
    for (strategy, pattern) in [
        (Strat::Random, Pattern::Uniform),
        (Strat::Gd, Pattern::Uniform),
    ] {
        let schedule = ScheduleConfig {
            strategy,
            base_pattern: pattern,
            ..ScheduleConfig::default()
        };
        let mut alloc = Allocator::new(schedule, profile.clone(), 8, caps.clone()).unwrap();
        let mut rng = RngStream::new(11, strategy.name());
        let mut counts = vec![0usize; 8];
        let mut total = 0usize;
        for t in 0..1000 {
            let r = alloc
                .allocate_round::<f64>(t, &ids, None, &mut rng)
                .unwrap();
            for (_, a) in &r.assignments {
                let m = a.map().unwrap();
                total += m.count();
                for j in m.layers() {
                    counts[j] += 1;
                }
            }
        }
        freq.insert(
            strategy,
            counts
                .iter()
                .map(|&k| k as f64 / total as f64)
                .collect::<Vec<_>>(),
        );
    }
    for (a, b) in freq[&Strat::Random].iter().zip(&freq[&Strat::Gd]) {
        assert!((a - b).abs() <= 0.02);
    }
}

fn profile_strategy() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..9).prop_flat_map(|l| {
        (
            Just(l),
            prop::sample::subsequence((1..=l).collect::<Vec<_>>(), 1..=l.min(4)),
        )
            .prop_flat_map(|(l, levels)| {
                let k = levels.len();
                (Just(l), Just(levels), prop::collection::vec(1usize..5, k))
            })
    })
}

proptest! {
    #[test]
    fn rgd_prior_is_population_column_mean((l, levels, counts) in profile_strategy()) {
        let n: usize = counts.iter().sum();
        let ratios: Vec<Q> = counts.iter().map(|&c| Ratio::new(c as i64, n as i64)).collect();
        let profile = CapabilityProfile::new(levels.clone(), ratios);
        let mut rng = RngStream::new(0, "unused");
        for pattern in [Pattern::Triangle, Pattern::InvertedTriangle, Pattern::Bottleneck] {
            let masks: Vec<AllocationMap> = levels
                .iter()
                .zip(&counts)
                .flat_map(|(&c, &k)| std::iter::repeat(c).take(k))
                .map(|c| gd_mask(pattern, l, c, &mut rng).unwrap())
                .collect();
            prop_assert_eq!(
                rgd_prior(&profile, pattern, l, n).unwrap(),
                rgd_prior_from_masks::<Q>(&masks).unwrap()
            );
        }
        let uniform = rgd_prior(&profile, Pattern::Uniform, l, n).unwrap();
        prop_assert!(uniform.iter().all(|p| *p == Ratio::new(1, l as i64)));
    }

    #[test]
    fn base_probs_strictly_decrease((l, levels, counts) in profile_strategy()) {
        let n: usize = counts.iter().sum();
        let ratios: Vec<Q> = counts.iter().map(|&c| Ratio::new(c as i64, n as i64)).collect();
        let _ = l;
        let a = base_capability_probs(&CapabilityProfile::new(levels, ratios)).unwrap();
        prop_assert!(a.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn fim_probs_are_monotone_distributions(
        gamma in prop::collection::vec(0.0f64..5.0, 3..9),
        k in 1usize..4,
    ) {
        let l = gamma.len();
        prop_assume!(k <= l);
        let levels: Vec<usize> = (0..k).map(|h| (h + 1) * l / k).collect();
        prop_assume!(levels.windows(2).all(|w| w[0] < w[1]) && levels[0] >= 1);
        let profile = CapabilityProfile::new(levels, vec![1.0 / k as f64; k]);
        let probs = fim_allocation_probs(&gamma, &profile).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(probs.iter().all(|&p| p >= 0.0));
        for a in 0..l {
            for b in 0..l {
                if gamma[a] > gamma[b] {
                    prop_assert!(probs[a] >= probs[b]);
                }
            }
        }
    }

    #[test]
    fn sampled_maps_have_exact_popcount(
        probs in prop::collection::vec(0.0f64..1.0, 1..10),
        seed in any::<u64>(),
        frac in 0.0f64..1.0,
    ) {
        let l = probs.len();
        let c = ((l as f64 * frac) as usize).min(l);
        let a = sample_allocation(&probs, c, &mut RngStream::new(seed, "s")).unwrap();
        let b = sample_allocation(&probs, c, &mut RngStream::new(seed, "s")).unwrap();
        prop_assert_eq!(a.count(), c);
        prop_assert_eq!(a, b);
    }
}

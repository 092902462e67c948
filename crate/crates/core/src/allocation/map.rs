use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::RngStream;
use crate::scalar::ProbScalar;

/// Which LoRA layers (q/v adapter pairs) one client trains in a round.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct AllocationMap {
    bits: Vec<bool>,
}

impl AllocationMap {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        AllocationMap { bits }
    }

    pub fn full(l: usize) -> Self {
        AllocationMap {
            bits: vec![true; l],
        }
    }

    pub fn empty(l: usize) -> Self {
        AllocationMap {
            bits: vec![false; l],
        }
    }

    /// Map with ones at `layers`.
    pub fn from_layers(l: usize, layers: &[usize]) -> Result<Self> {
        let mut bits = vec![false; l];
        for &j in layers {
            ensure!(j < l, Parameter, "layer {j} outside 0..{l}");
            bits[j] = true;
        }
        Ok(AllocationMap { bits })
    }

    /// Parses a `0`/`1` string such as `"110001"`.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format(format!(
                    "bad map character {other:?} in {s:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(AllocationMap::from_bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn layers(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&j| self.bits[j]).collect()
    }

    pub fn bitstring(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Display for AllocationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

impl fmt::Debug for AllocationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AllocationMap({})", self.bitstring())
    }
}

/// Deterministic mask shapes for gradient-free allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pattern {
    /// Shallowest `c` layers.
    Triangle,
    /// Deepest `c` layers.
    InvertedTriangle,
    /// `ceil(c/2)` shallow plus `floor(c/2)` deep layers.
    Bottleneck,
    /// `c` layers spread at random.
    Uniform,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::Triangle,
        Pattern::InvertedTriangle,
        Pattern::Bottleneck,
        Pattern::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Triangle => "Triangle",
            Pattern::InvertedTriangle => "InvertedTriangle",
            Pattern::Bottleneck => "Bottleneck",
            Pattern::Uniform => "Uniform",
        }
    }

    /// Mask for the fixed patterns; `None` for [`Pattern::Uniform`].
    pub fn deterministic(self, l: usize, c: usize) -> Option<AllocationMap> {
        let bits = match self {
            Pattern::Triangle => (0..l).map(|j| j < c).collect(),
            Pattern::InvertedTriangle => (0..l).map(|j| j >= l - c).collect(),
            Pattern::Bottleneck => {
                let head = c.div_ceil(2);
                let tail = c / 2;
                (0..l).map(|j| j < head || j >= l - tail).collect()
            }
            Pattern::Uniform => return None,
        };
        Some(AllocationMap { bits })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown pattern {s:?}; expected Triangle, InvertedTriangle, Bottleneck or Uniform"
                ))
            })
    }
}

/// GD mask of `c` out of `l` layers. Uniform draws exactly `c` distinct layers.
pub fn gd_mask(pattern: Pattern, l: usize, c: usize, rng: &mut RngStream) -> Result<AllocationMap> {
    ensure!(
        (1..=l).contains(&c),
        Parameter,
        "capability {c} must lie in [1, {l}]"
    );
    match pattern.deterministic(l, c) {
        Some(m) => Ok(m),
        None => AllocationMap::from_layers(l, &rng.sample_indices(l, c)?),
    }
}

/// The Uniform pattern read literally: independent Bernoulli(c/l) bits.
/// The popcount is only `c` in expectation.
pub fn gd_mask_bernoulli(l: usize, c: usize, rng: &mut RngStream) -> Result<AllocationMap> {
    ensure!(
        (1..=l).contains(&c),
        Parameter,
        "capability {c} must lie in [1, {l}]"
    );
    let p = c as f64 / l as f64;
    Ok(AllocationMap {
        bits: (0..l).map(|_| rng.bernoulli(p)).collect(),
    })
}

/// Capability levels (trainable layer counts) and the client fraction at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityProfile<P = f64> {
    pub levels: Vec<usize>,
    pub ratios: Vec<P>,
}

impl<P: ProbScalar> CapabilityProfile<P> {
    pub fn new(levels: Vec<usize>, ratios: Vec<P>) -> Self {
        CapabilityProfile { levels, ratios }
    }

    /// Levels `l/2, 3l/4, l` (rounded up, deduplicated) with fractions 0.6/0.3/0.1.
    pub fn default_for(l: usize) -> CapabilityProfile<f64> {
        let mut levels: Vec<usize> = [l.div_ceil(2), (3 * l).div_ceil(4), l]
            .into_iter()
            .map(|c| c.max(1))
            .collect();
        levels.dedup();
        let ratios = match levels.len() {
            3 => vec![0.6, 0.3, 0.1],
            2 => vec![0.6, 0.4],
            _ => vec![1.0],
        };
        CapabilityProfile { levels, ratios }
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn min_level(&self) -> usize {
        self.levels.first().copied().unwrap_or(0)
    }

    pub fn validation_errors(&self, l: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.levels.is_empty() {
            errs.push("capability.levels must not be empty".into());
        }
        if self.levels.len() != self.ratios.len() {
            errs.push(format!(
                "capability has {} levels but {} ratios",
                self.levels.len(),
                self.ratios.len()
            ));
        }
        if self.levels.iter().any(|&c| c == 0 || c > l) {
            errs.push(format!(
                "capability.levels must lie in [1, {l}], got {:?}",
                self.levels
            ));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            errs.push(format!(
                "capability.levels must be strictly ascending, got {:?}",
                self.levels
            ));
        }
        let zero = P::zero();
        if self.ratios.iter().any(|r| *r <= zero) {
            errs.push(format!(
                "capability.ratios must be positive, got {:?}",
                self.ratios
            ));
        }
        let sum: f64 = self
            .ratios
            .iter()
            .map(|r| r.to_f64().unwrap_or(f64::NAN))
            .sum();
        if !((sum - 1.0).abs() <= 1e-9) {
            errs.push(format!("capability.ratios must sum to 1, got {sum}"));
        }
        errs
    }

    pub fn validate(&self, l: usize) -> Result<()> {
        let errs = self.validation_errors(l);
        ensure!(errs.is_empty(), Parameter, "{}", errs.join("; "));
        Ok(())
    }

    /// Client counts per level for a fleet of `n` (largest remainder).
    pub fn level_counts(&self, n: usize) -> Vec<usize> {
        let weights: Vec<f64> = self
            .ratios
            .iter()
            .map(|r| r.to_f64().unwrap_or(0.0))
            .collect();
        crate::data::apportion(n, &weights)
    }
}

/// Capability of each of `n` clients: level counts per [`CapabilityProfile::level_counts`],
/// assigned to client ids in shuffled order.
pub fn assign_capabilities<P: ProbScalar>(
    profile: &CapabilityProfile<P>,
    n: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    let mut caps: Vec<usize> = profile
        .level_counts(n)
        .into_iter()
        .zip(&profile.levels)
        .flat_map(|(count, &c)| std::iter::repeat(c).take(count))
        .collect();
    rng.shuffle(&mut caps);
    caps
}

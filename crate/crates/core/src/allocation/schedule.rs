use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{ensure, Error, Result};
use crate::model::{FrozenBase, TrainableParams};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

use super::fim::fim_scores;
use super::map::{gd_mask, gd_mask_bernoulli, AllocationMap, CapabilityProfile, Pattern};
use super::probs::{fim_allocation_probs, rgd_prior, rgd_prior_from_masks, sample_allocation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Layer probabilities from FIM scores, refreshed every `T_FIM` rounds.
    #[serde(rename = "FIM")]
    Fim,
    /// Fixed pattern mask per client.
    #[serde(rename = "GD")]
    Gd,
    /// Masks sampled from the pattern population prior.
    #[serde(rename = "RGD")]
    Rgd,
    /// RGD warm start for `T_RGD` rounds, then FIM.
    CoDesign,
    /// Uniformly random `c_i` layers.
    Random,
    /// Everyone trains the smallest capability's layer count.
    Straggler,
    /// Only full-capability clients train.
    Exclusive,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Fim,
        Strategy::Gd,
        Strategy::Rgd,
        Strategy::CoDesign,
        Strategy::Random,
        Strategy::Straggler,
        Strategy::Exclusive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Fim => "FIM",
            Strategy::Gd => "GD",
            Strategy::Rgd => "RGD",
            Strategy::CoDesign => "CoDesign",
            Strategy::Random => "Random",
            Strategy::Straggler => "Straggler",
            Strategy::Exclusive => "Exclusive",
        }
    }

    /// Whether the base pattern changes what this strategy does.
    pub fn uses_pattern(self) -> bool {
        matches!(self, Strategy::Gd | Strategy::Rgd | Strategy::CoDesign)
    }

    pub fn uses_fim(self) -> bool {
        matches!(self, Strategy::Fim | Strategy::CoDesign)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ScheduleConfig {
    pub strategy: Strategy,
    pub base_pattern: Pattern,
    pub T_RGD: usize,
    /// Defaults to 50, or 1 under the plain FIM strategy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub T_FIM: Option<usize>,
    /// Uniform GD masks as independent Bernoulli(c/l) bits instead of exactly `c` layers.
    pub literal_bernoulli: bool,
    pub straggler_pattern: Pattern,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            strategy: Strategy::CoDesign,
            base_pattern: Pattern::Uniform,
            T_RGD: 50,
            T_FIM: None,
            literal_bernoulli: false,
            straggler_pattern: Pattern::InvertedTriangle,
        }
    }
}

impl ScheduleConfig {
    #[allow(non_snake_case)]
    pub fn t_fim(&self) -> usize {
        self.T_FIM.unwrap_or(match self.strategy {
            Strategy::Fim => 1,
            _ => 50,
        })
    }

    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.T_FIM == Some(0) {
            errs.push("schedule.T_FIM must be >= 1".into());
        }
        if self.straggler_pattern == Pattern::Uniform {
            errs.push("schedule.straggler_pattern must be a fixed pattern, not Uniform".into());
        }
        errs
    }
}

/// What one selected client does this round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Assignment {
    Train(AllocationMap),
    /// Sits the round out (Exclusive strategy, insufficient capability).
    Excluded,
}

impl Assignment {
    pub fn map(&self) -> Option<&AllocationMap> {
        match self {
            Assignment::Train(m) => Some(m),
            Assignment::Excluded => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundAllocation {
    /// `(client id, assignment)` in the order of the selected ids.
    pub assignments: Vec<(usize, Assignment)>,
    /// Layer distribution used this round: the sampling distribution for
    /// randomised strategies, otherwise the normalised column sums of the issued masks.
    pub probs: Vec<f64>,
    /// Fresh FIM scores, when this round recomputed them.
    pub gamma: Option<Vec<f64>>,
}

/// Read-only model and proxy data used for FIM scoring.
pub struct FimContext<'a, T> {
    pub base: &'a FrozenBase<T>,
    pub params: &'a TrainableParams<T>,
    pub proxy: &'a [Sample],
}

/// Stateful per-run allocator. Holds every client's static capability.
#[derive(Clone, Debug)]
pub struct Allocator {
    schedule: ScheduleConfig,
    profile: CapabilityProfile,
    layers: usize,
    capabilities: Vec<usize>,
    prior: Vec<f64>,
    fim_probs: Option<Vec<f64>>,
}

impl Allocator {
    pub fn new(
        schedule: ScheduleConfig,
        profile: CapabilityProfile,
        layers: usize,
        capabilities: Vec<usize>,
    ) -> Result<Self> {
        let errs = schedule.validation_errors();
        ensure!(errs.is_empty(), Config, "{}", errs.join("; "));
        profile.validate(layers)?;
        ensure!(!capabilities.is_empty(), Parameter, "no clients");
        ensure!(
            capabilities.iter().all(|&c| (1..=layers).contains(&c)),
            Parameter,
            "client capabilities must lie in [1, {layers}]"
        );
        let prior = rgd_prior(&profile, schedule.base_pattern, layers, capabilities.len())?;
        Ok(Allocator {
            schedule,
            profile,
            layers,
            capabilities,
            prior,
            fim_probs: None,
        })
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        &self.schedule
    }

    pub fn capabilities(&self) -> &[usize] {
        &self.capabilities
    }

    pub fn rgd_prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn fim_probs(&self) -> Option<&[f64]> {
        self.fim_probs.as_deref()
    }

    /// Whether round `t` recomputes FIM probabilities.
    pub fn needs_fim(&self, t: usize) -> bool {
        let warm = match self.schedule.strategy {
            Strategy::Fim => 0,
            Strategy::CoDesign => self.schedule.T_RGD,
            _ => return false,
        };
        t >= warm && (t % self.schedule.t_fim() == 0 || self.fim_probs.is_none())
    }

    /// Issues this round's assignments for the `selected` client ids.
    pub fn allocate_round<T: Scalar>(
        &mut self,
        t: usize,
        selected: &[usize],
        fim: Option<FimContext<'_, T>>,
        rng: &mut RngStream,
    ) -> Result<RoundAllocation> {
        ensure!(
            selected.iter().all(|&i| i < self.capabilities.len()),
            Parameter,
            "selected client outside the fleet of {}",
            self.capabilities.len()
        );
        let l = self.layers;
        let mut gamma = None;
        if self.needs_fim(t) {
            let ctx = fim.ok_or_else(|| {
                Error::Config(format!(
                    "{} allocation needs a proxy set",
                    self.schedule.strategy
                ))
            })?;
            let g: Vec<f64> = fim_scores(ctx.base, ctx.params, ctx.proxy)?
                .into_iter()
                .map(Scalar::as_f64)
                .collect();
            self.fim_probs = Some(fim_allocation_probs(&g, &self.profile)?);
            log::debug!("round {t}: FIM scores {g:?}");
            gamma = Some(g);
        }

        let sampling: Option<Vec<f64>> = match self.schedule.strategy {
            Strategy::Rgd => Some(self.prior.clone()),
            Strategy::CoDesign if t < self.schedule.T_RGD => Some(self.prior.clone()),
            Strategy::CoDesign | Strategy::Fim => self.fim_probs.clone(),
            _ => None,
        };
        let straggler_c = self.capabilities.iter().copied().min().unwrap_or(l);

        let mut assignments = Vec::with_capacity(selected.len());
        for &i in selected {
            let c = self.capabilities[i];
            let a = match self.schedule.strategy {
                Strategy::Fim | Strategy::Rgd | Strategy::CoDesign => {
                    let probs = sampling.as_deref().expect("sampling distribution present");
                    Assignment::Train(sample_allocation(probs, c, rng)?)
                }
                Strategy::Gd => Assignment::Train(
                    if self.schedule.base_pattern == Pattern::Uniform
                        && self.schedule.literal_bernoulli
                    {
                        gd_mask_bernoulli(l, c, rng)?
                    } else {
                        gd_mask(self.schedule.base_pattern, l, c, rng)?
                    },
                ),
                Strategy::Random => Assignment::Train(gd_mask(Pattern::Uniform, l, c, rng)?),
                Strategy::Straggler => Assignment::Train(gd_mask(
                    self.schedule.straggler_pattern,
                    l,
                    straggler_c,
                    rng,
                )?),
                Strategy::Exclusive => {
                    if c == l {
                        Assignment::Train(AllocationMap::full(l))
                    } else {
                        Assignment::Excluded
                    }
                }
            };
            assignments.push((i, a));
        }

        let probs = match sampling {
            Some(p) => p,
            None => {
                let issued: Vec<AllocationMap> = assignments
                    .iter()
                    .filter_map(|(_, a)| a.map().cloned())
                    .collect();
                rgd_prior_from_masks::<f64>(&issued).unwrap_or_else(|_| vec![0.0; l])
            }
        };
        Ok(RoundAllocation {
            assignments,
            probs,
            gamma,
        })
    }
}

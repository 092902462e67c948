use rayon::prelude::*;

use crate::allocation::{
    assign_capabilities, AllocationMap, Allocator, Assignment, CapabilityProfile, FimContext,
    ScheduleConfig,
};
use crate::data::{assert_disjoint, Dataset};
use crate::error::{ensure, Result};
use crate::metrics::{backward_cost_per_client, evaluate, memory_proxy, EvalReport};
use crate::model::{init_model, FrozenBase, ModelConfig, TrainableParams};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

use super::{aggregate, local_update, sample_clients, ClientUpdate, FederationConfig};

/// Server-side state between rounds.
#[derive(Clone, Debug)]
pub struct GlobalState<T> {
    /// Number of completed rounds.
    pub round: usize,
    pub params: TrainableParams<T>,
    /// Layer distribution used in the latest round.
    pub layer_probs: Vec<f64>,
}

/// Data a run needs: one shard per client, the evaluation split and the
/// server proxy (disjoint from evaluation).
#[derive(Clone, Debug)]
pub struct SimulationData {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
    pub proxy: Dataset,
}

/// Per-round analytic costs, in the units of [`crate::metrics`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundCosts {
    /// Mean trainable layers over the clients that trained.
    pub c_bar: f64,
    pub backward_full: f64,
    /// Sum over trained clients of `c_i N_i`, scaled like `backward_full`.
    pub backward_ours: f64,
    pub comm_full: f64,
    pub comm_ours: f64,
    /// Mean memory proxy over the clients that trained.
    pub memory: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub strategy: String,
    pub selected: Vec<usize>,
    /// Per selected client; `None` when it sat the round out.
    pub maps: Vec<Option<AllocationMap>>,
    /// Clients that had a map but no local data.
    pub skipped: Vec<usize>,
    pub probs: Vec<f64>,
    pub fim_refreshed: bool,
    /// L2 norm of the aggregated delta per layer.
    pub delta_norms: Vec<f64>,
    pub trained: usize,
    /// Mean final local mini-batch loss over trained clients.
    pub train_loss: Option<f64>,
    pub eval: Option<EvalReport>,
    pub costs: RoundCosts,
}

pub struct Simulation<T> {
    model: ModelConfig,
    fed: FederationConfig,
    base: FrozenBase<T>,
    state: GlobalState<T>,
    allocator: Allocator,
    data: SimulationData,
    root: RngStream,
}

impl<T: Scalar> Simulation<T> {
    /// Builds the frozen model, initial adapters and client capabilities from `seed`.
    ///
    /// The model and capabilities depend only on the seed, so runs of
    /// different strategies with the same seed start from the same place and
    /// see the same client samples.
    pub fn new(
        model: ModelConfig,
        fed: FederationConfig,
        schedule: ScheduleConfig,
        profile: CapabilityProfile,
        data: SimulationData,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        let errs = fed.validation_errors();
        ensure!(errs.is_empty(), Config, "{}", errs.join("; "));
        ensure!(
            data.clients.len() == fed.n,
            Config,
            "{} client shards for n = {}",
            data.clients.len(),
            fed.n
        );
        assert_disjoint(&data.test, &data.proxy)?;
        let root = RngStream::new(seed, "hlora");
        let (base, params) = init_model::<T>(&model, &mut root.derive("model"))?;
        let caps = assign_capabilities(&profile, fed.n, &mut root.derive("capabilities"));
        let allocator = Allocator::new(schedule, profile, model.layers, caps)?;
        let state = GlobalState {
            round: 0,
            layer_probs: allocator.rgd_prior().to_vec(),
            params,
        };
        Ok(Simulation {
            model,
            fed,
            base,
            state,
            allocator,
            data,
            root,
        })
    }

    pub fn state(&self) -> &GlobalState<T> {
        &self.state
    }

    pub fn base(&self) -> &FrozenBase<T> {
        &self.base
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    pub fn data(&self) -> &SimulationData {
        &self.data
    }

    pub fn config(&self) -> &FederationConfig {
        &self.fed
    }

    /// `Strategy` or `Strategy-Pattern` when the base pattern matters.
    pub fn label(&self) -> String {
        let s = self.allocator.schedule();
        if s.strategy.uses_pattern() {
            format!("{}-{}", s.strategy, s.base_pattern)
        } else {
            s.strategy.to_string()
        }
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(
            &self.base,
            &self.state.params,
            &self.data.test,
            self.state.round,
        )
    }

    /// Random stream of round `t`. Client selection draws from its `select`
    /// child, allocation from `alloc`, and client `i` trains with `client{i}`.
    pub fn round_stream(&self, t: usize) -> RngStream {
        self.root.derive(&format!("round{t}"))
    }

    /// One round: sample, allocate, train locally, aggregate, apply, evaluate.
    /// Also returns the client updates of the round.
    pub fn run_round(&mut self) -> Result<(RoundRecord, Vec<ClientUpdate<T>>)> {
        let t = self.state.round;
        let rng = self.round_stream(t);
        let selected = sample_clients(self.fed.n, self.fed.s, &mut rng.derive("select"))?;
        let fim = FimContext {
            base: &self.base,
            params: &self.state.params,
            proxy: &self.data.proxy.samples,
        };
        let alloc =
            self.allocator
                .allocate_round(t, &selected, Some(fim), &mut rng.derive("alloc"))?;

        let mut skipped = Vec::new();
        let mut tasks = Vec::new();
        for (id, a) in &alloc.assignments {
            if let Assignment::Train(map) = a {
                if self.data.clients[*id].is_empty() {
                    log::warn!("round {t}: client {id} has no data, skipped");
                    skipped.push(*id);
                } else {
                    tasks.push((*id, map.clone()));
                }
            }
        }
        let train_cfg = self.fed.local_train();
        let (global, base, clients) = (&self.state.params, &self.base, &self.data.clients);
        let updates = tasks
            .par_iter()
            .map(|(id, map)| {
                let mut crng = rng.derive(&format!("client{id}"));
                local_update(*id, global, base, map, &clients[*id], &train_cfg, &mut crng)
            })
            .collect::<Result<Vec<_>>>()?;

        let l = self.model.layers;
        let delta = aggregate(&updates, l)?;
        let delta_norms = match &delta {
            Some(d) => {
                self.state.params.apply_delta(d)?;
                d.layer_norms().into_iter().map(Scalar::as_f64).collect()
            }
            None => {
                log::warn!("round {t}: no client trained, global model unchanged");
                vec![0.0; l]
            }
        };
        ensure!(
            self.state.params.is_finite(),
            Numeric,
            "global parameters became non-finite in round {t}"
        );
        self.state.round += 1;
        self.state.layer_probs = alloc.probs.clone();

        let done = self.state.round;
        let eval = if done % self.fed.eval_every == 0 || done == self.fed.T {
            Some(self.evaluate()?)
        } else {
            None
        };
        let train_loss = (!updates.is_empty())
            .then(|| updates.iter().map(|u| u.stats.last_loss).sum::<f64>() / updates.len() as f64);
        let record = RoundRecord {
            round: t,
            strategy: self.label(),
            maps: alloc
                .assignments
                .iter()
                .map(|(_, a)| a.map().cloned())
                .collect(),
            selected,
            skipped,
            probs: alloc.probs,
            fim_refreshed: alloc.gamma.is_some(),
            delta_norms,
            trained: updates.len(),
            train_loss,
            eval,
            costs: self.round_costs(&updates),
        };
        Ok((record, updates))
    }

    fn round_costs(&self, updates: &[ClientUpdate<T>]) -> RoundCosts {
        if updates.is_empty() {
            return RoundCosts::default();
        }
        let cfg = &self.model;
        let d = cfg.frozen_params_per_layer() as f64;
        let r = cfg.lora_params_per_layer() as f64;
        let l = cfg.layers;
        let s = updates.len() as f64;
        let work: Vec<(usize, usize)> = updates
            .iter()
            .map(|u| (u.map.count(), u.sample_count))
            .collect();
        let full: Vec<(usize, usize)> = updates.iter().map(|u| (l, u.sample_count)).collect();
        let tau = self.fed.tau as f64;
        let c_bar = work.iter().map(|&(c, _)| c as f64).sum::<f64>() / s;
        let t_fim = self.allocator.schedule().t_fim() as f64;
        let map_term = if self.allocator.schedule().strategy.uses_fim() {
            l as f64 * s * t_fim / self.fed.T as f64
        } else {
            0.0
        };
        RoundCosts {
            c_bar,
            backward_full: backward_cost_per_client(tau, d, r, &full),
            backward_ours: backward_cost_per_client(tau, d, r, &work),
            comm_full: 2.0 * l as f64 * r * s,
            comm_ours: 2.0 * c_bar * r * s + map_term,
            memory: updates
                .iter()
                .map(|u| memory_proxy(cfg, &u.map) as f64)
                .sum::<f64>()
                / s,
        }
    }

    /// Runs `self.config().T` rounds, calling `on_round` after each.
    pub fn run(
        &mut self,
        mut on_round: impl FnMut(&GlobalState<T>, &RoundRecord) -> Result<()>,
    ) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.fed.T);
        while self.state.round < self.fed.T {
            let (record, _) = self.run_round()?;
            on_round(&self.state, &record)?;
            records.push(record);
        }
        Ok(records)
    }

    pub fn into_state(self) -> GlobalState<T> {
        self.state
    }
}

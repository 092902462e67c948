mod common;

use common::{random_tokens, toy_config};
use hlora_core::allocation::{AllocationMap, CapabilityProfile, ScheduleConfig, Strategy};
use hlora_core::data::{Dataset, Sample};
use hlora_core::federation::{
    aggregate, local_update, sample_clients, ClientUpdate, FederationConfig, Simulation,
    SimulationData,
};
use hlora_core::model::{
    adamw_step, backward, forward, init_model, AdamWConfig, LayerDeltas, LocalTrainConfig,
    ModelConfig, OptimizerState, TrainStats,
};
use hlora_core::numerics::RngStream;

fn dataset(cfg: &ModelConfig, n: usize, seed: u64) -> Dataset {
    let mut samples = random_tokens(cfg, n, &mut RngStream::new(seed, "fed-data"));
    for (i, s) in samples.iter_mut().enumerate() {
        s.id = i;
    }
    Dataset::new(samples, cfg.n_classes).unwrap()
}

fn with_offset(mut d: Dataset, offset: usize) -> Dataset {
    for s in &mut d.samples {
        s.id += offset;
    }
    d
}

fn sim_data(cfg: &ModelConfig, n: usize, per_client: usize) -> SimulationData {
    SimulationData {
        clients: (0..n)
            .map(|i| dataset(cfg, per_client, 100 + i as u64))
            .collect(),
        test: dataset(cfg, 30, 1),
        proxy: with_offset(dataset(cfg, 6, 2), 1000),
    }
}

fn fed(n: usize, s: usize, t: usize) -> FederationConfig {
    FederationConfig {
        n,
        s,
        T: t,
        tau: 1,
        batch_size: 4,
        max_steps: None,
        eval_every: 1,
        checkpoint_every: None,
        optimizer: AdamWConfig {
            lr: 0.01,
            ..AdamWConfig::default()
        },
    }
}

fn full_profile(l: usize) -> CapabilityProfile {
    CapabilityProfile::new(vec![l], vec![1.0])
}

fn schedule(strategy: Strategy) -> ScheduleConfig {
    ScheduleConfig {
        strategy,
        T_RGD: 1,
        T_FIM: Some(2),
        ..ScheduleConfig::default()
    }
}

#[test]
fn client_sampling_is_uniform() {
    let mut rng = RngStream::new(7, "select");
    let mut counts = vec![0usize; 100];
    let draws = 100_000;
    for _ in 0..draws {
        let ids = sample_clients(100, 10, &mut rng).unwrap();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for i in ids {
            counts[i] += 1;
        }
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.10).abs() <= 0.01);
    }
    assert_eq!(sample_clients(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
    let a = sample_clients(9, 1, &mut RngStream::new(3, "x")).unwrap();
    assert_eq!(
        a,
        sample_clients(9, 1, &mut RngStream::new(3, "x")).unwrap()
    );
    assert!(sample_clients(3, 4, &mut rng).is_err());
}

#[test]
fn zero_steps_give_zero_deltas() {
    let cfg = toy_config(3, 8, 2);
    let (base, params) = init_model::<f64>(&cfg, &mut RngStream::new(1, "m")).unwrap();
    let train = LocalTrainConfig {
        epochs: 0,
        batch_size: 4,
        max_steps: None,
        optimizer: AdamWConfig::default(),
    };
    let u = local_update(
        0,
        &params,
        &base,
        &AllocationMap::full(3),
        &dataset(&cfg, 8, 1),
        &train,
        &mut RngStream::new(0, "c"),
    )
    .unwrap();
    assert_eq!(u.deltas, LayerDeltas::zeros_like(&params));
}

#[test]
fn single_step_matches_optimizer_oracle() {
    let cfg = toy_config(2, 8, 1);
    let (base, params) = init_model::<f64>(&cfg, &mut RngStream::new(4, "m")).unwrap();
    let data = dataset(&cfg, 3, 9);
    let train = LocalTrainConfig {
        epochs: 1,
        batch_size: 3,
        max_steps: None,
        optimizer: AdamWConfig::default(),
    };
    let map = AllocationMap::full(2);
    let u = local_update(
        0,
        &params,
        &base,
        &map,
        &data,
        &train,
        &mut RngStream::new(1, "c"),
    )
    .unwrap();

    let batch: Vec<&Sample> = data.samples.iter().collect();
    let pass = forward(&base, &params, map.bits(), &batch, None).unwrap();
    let grads = backward(&base, &params, &pass.cache).unwrap();
    let mut expected = params.clone();
    let mut state = OptimizerState::new(&cfg);
    adamw_step(&mut expected, &grads, &mut state, &train.optimizer).unwrap();
    let want = hlora_core::model::flatten_delta(&params, &expected).unwrap();
    for (a, b) in u
        .deltas
        .layers
        .iter()
        .flatten()
        .chain(&u.deltas.head)
        .zip(want.layers.iter().flatten().chain(&want.head))
    {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn frozen_layers_report_exact_zeros() {
    let cfg = toy_config(4, 8, 2);
    let (base, params) = init_model::<f64>(&cfg, &mut RngStream::new(2, "m")).unwrap();
    let train = LocalTrainConfig {
        epochs: 3,
        batch_size: 2,
        max_steps: None,
        optimizer: AdamWConfig::default(),
    };
    let map = AllocationMap::parse("0101").unwrap();
    let u = local_update(
        0,
        &params,
        &base,
        &map,
        &dataset(&cfg, 6, 3),
        &train,
        &mut RngStream::new(2, "c"),
    )
    .unwrap();
    for j in [0, 2] {
        assert!(u.deltas.layers[j].iter().all(|&x| x == 0.0));
    }
    for j in [1, 3] {
        assert!(u.deltas.layers[j].iter().any(|&x| x != 0.0));
    }
    assert!(u.deltas.head.iter().any(|&x| x != 0.0));
}

fn brute_force(updates: &[ClientUpdate<f64>], l: usize) -> LayerDeltas<f64> {
    let mut sorted: Vec<&ClientUpdate<f64>> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let layers = (0..l)
        .map(|j| {
            let width = sorted[0].deltas.layers[j].len();
            (0..width)
                .map(|k| {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for u in &sorted {
                        if u.map.get(j) {
                            sum += u.deltas.layers[j][k];
                            count += 1;
                        }
                    }
                    if count == 0 {
                        0.0
                    } else {
                        sum * (1.0 / count as f64)
                    }
                })
                .collect()
        })
        .collect();
    let head = (0..sorted[0].deltas.head.len())
        .map(|k| {
            let sum: f64 = sorted.iter().fold(0.0, |acc, u| acc + u.deltas.head[k]);
            sum * (1.0 / sorted.len() as f64)
        })
        .collect();
    LayerDeltas { layers, head }
}

#[test]
fn aggregate_equals_brute_force() {
    let mut rng = RngStream::new(99, "agg");
    for _ in 0..1000 {
        let l = 1 + rng.index(6);
        let s = 1 + rng.index(5);
        let width = 1 + rng.index(4);
        let mut ids: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut ids);
        let updates: Vec<ClientUpdate<f64>> = ids[..s]
            .iter()
            .map(|&id| {
                let map = AllocationMap::from_bits((0..l).map(|_| rng.bernoulli(0.5)).collect());
                let layers = (0..l)
                    .map(|j| {
                        (0..width)
                            .map(|_| {
                                if map.get(j) {
                                    rng.gaussian(0.0, 1.0).unwrap()
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                ClientUpdate {
                    client_id: id,
                    map,
                    deltas: LayerDeltas {
                        layers,
                        head: vec![rng.gaussian(0.0, 1.0).unwrap(); 2],
                    },
                    sample_count: 1,
                    stats: TrainStats {
                        steps: 1,
                        first_loss: 0.0,
                        last_loss: 0.0,
                    },
                }
            })
            .collect();
        let got = aggregate(&updates, l).unwrap().unwrap();
        let want = brute_force(&updates, l);
        assert_eq!(got, want);
        for (j, layer) in got.layers.iter().enumerate() {
            if !updates.iter().any(|u| u.map.get(j)) {
                assert!(layer.iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn single_client_global_equals_client_model() {
    let cfg = toy_config(3, 8, 2);
    let (base, global) = init_model::<f64>(&cfg, &mut RngStream::new(6, "m")).unwrap();
    let data = dataset(&cfg, 8, 4);
    let train = fed(1, 1, 1).local_train();
    let map = AllocationMap::full(3);
    let mut after = global.clone();
    hlora_core::model::train_local(
        &base,
        &mut after,
        map.bits(),
        &data.samples,
        &train,
        &mut RngStream::new(8, "c"),
    )
    .unwrap();
    let u = local_update(
        0,
        &global,
        &base,
        &map,
        &data,
        &train,
        &mut RngStream::new(8, "c"),
    )
    .unwrap();
    let delta = aggregate(&[u], 3).unwrap().unwrap();
    let mut updated = global.clone();
    updated.apply_delta(&delta).unwrap();
    // theta + (after - theta) can differ from `after` by one rounding step.
    for (a, b) in updated.to_flat().iter().zip(after.to_flat()) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = toy_config(3, 8, 2);
    let profile = CapabilityProfile::new(vec![1, 2, 3], vec![0.5, 0.3, 0.2]);
    let run = || {
        let mut sim = Simulation::<f64>::new(
            cfg.clone(),
            fed(6, 3, 3),
            schedule(Strategy::CoDesign),
            profile.clone(),
            sim_data(&cfg, 6, 5),
            17,
        )
        .unwrap();
        let records = sim.run(|_, _| Ok(())).unwrap();
        (records, sim.into_state().params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(a.len(), 3);
    assert!(a.iter().any(|r| r.fim_refreshed));
}

#[test]
fn exclusive_without_full_clients_never_trains() {
    let cfg = toy_config(3, 8, 2);
    let mut sim = Simulation::<f64>::new(
        cfg.clone(),
        fed(4, 2, 3),
        schedule(Strategy::Exclusive),
        CapabilityProfile::new(vec![1, 2], vec![0.5, 0.5]),
        sim_data(&cfg, 4, 5),
        3,
    )
    .unwrap();
    let before = sim.state().params.clone();
    let records = sim.run(|_, _| Ok(())).unwrap();
    assert!(records
        .iter()
        .all(|r| r.trained == 0 && r.maps.iter().all(Option::is_none)));
    assert_eq!(sim.state().params, before);
}

#[test]
fn zero_rounds_return_initial_model() {
    let cfg = toy_config(2, 8, 1);
    let mut sim = Simulation::<f64>::new(
        cfg.clone(),
        fed(2, 1, 0),
        schedule(Strategy::Random),
        full_profile(2),
        sim_data(&cfg, 2, 4),
        1,
    )
    .unwrap();
    let before = sim.state().params.clone();
    assert!(sim.run(|_, _| Ok(())).unwrap().is_empty());
    assert_eq!(sim.state().params, before);
}

#[test]
fn empty_shards_are_skipped() {
    let cfg = toy_config(2, 8, 1);
    let mut data = sim_data(&cfg, 2, 4);
    data.clients[1] = Dataset::shard(Vec::new(), cfg.n_classes);
    let mut sim = Simulation::<f64>::new(
        cfg,
        fed(2, 2, 1),
        schedule(Strategy::Random),
        full_profile(2),
        data,
        1,
    )
    .unwrap();
    let (record, updates) = sim.run_round().unwrap();
    assert_eq!(record.skipped, vec![1]);
    assert_eq!(updates.len(), 1);
}

#[test]
fn proxy_must_not_overlap_test() {
    let cfg = toy_config(2, 8, 1);
    let mut data = sim_data(&cfg, 2, 4);
    data.proxy = data.test.clone();
    assert!(Simulation::<f64>::new(
        cfg,
        fed(2, 1, 1),
        schedule(Strategy::Random),
        full_profile(2),
        data,
        1
    )
    .is_err());
}

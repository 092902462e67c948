#![allow(dead_code)]

use hlora_core::data::{Input, Sample};
use hlora_core::model::{init_model, FrozenBase, ModelConfig, TrainableParams};
use hlora_core::numerics::{Matrix, RngStream};

pub fn toy_config(layers: usize, d_model: usize, rank: usize) -> ModelConfig {
    ModelConfig {
        layers,
        d_model,
        n_heads: 2,
        d_ff: 2 * d_model,
        rank,
        alpha: 2.0 * rank as f64,
        dropout_p: 0.0,
        n_classes: 3,
        seq_len: 4,
        vocab: 9,
    }
}

pub fn random_tokens(cfg: &ModelConfig, n: usize, rng: &mut RngStream) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            id: i,
            input: Input::Tokens(
                (0..cfg.seq_len)
                    .map(|_| rng.index(cfg.vocab) as u32)
                    .collect(),
            ),
            label: rng.index(cfg.n_classes),
        })
        .collect()
}

/// Fresh model whose adapters and head are pushed away from initialization so
/// every gradient coordinate is exercised (at init `B = 0` zeroes `dA`).
pub fn perturbed_model(
    cfg: &ModelConfig,
    seed: u64,
) -> (FrozenBase<f64>, TrainableParams<f64>, RngStream) {
    let mut rng = RngStream::new(seed, "gradcheck");
    let (base, mut params) = init_model::<f64>(cfg, &mut rng).unwrap();
    let mut g = |m: &Matrix<f64>, std: f64| {
        Matrix::from_fn(m.rows(), m.cols(), |_, _| rng.gaussian(0.0, std).unwrap())
    };
    for j in 0..cfg.layers {
        let old = params.layer(j).clone();
        let (aq, bq, av, bv) = (
            g(&old.a_q, 0.4),
            g(&old.b_q, 0.4),
            g(&old.a_v, 0.4),
            g(&old.b_v, 0.4),
        );
        let layer = params.layer_mut(j);
        layer.a_q = aq;
        layer.b_q = bq;
        layer.a_v = av;
        layer.b_v = bv;
    }
    let (hw0, hb0) = (params.head_w().clone(), params.head_b().clone());
    let (hw, hb) = (g(&hw0, 0.5), g(&hb0, 0.5));
    let (w, b) = params.head_mut();
    *w = hw;
    *b = hb;
    (base, params, RngStream::new(seed, "gradcheck-data"))
}

mod common;

use common::{perturbed_model, random_tokens, toy_config};
use hlora_core::allocation::fim_scores;
use hlora_core::model::{forward, init_model, LoraGroup};
use hlora_core::numerics::{finite_diff_grad, RngStream};

#[test]
fn matches_finite_difference_norms() {
    let cfg = toy_config(2, 8, 1);
    let (base, params, mut rng) = perturbed_model(&cfg, 21);
    let proxy = random_tokens(&cfg, 1, &mut rng);
    let gamma = fim_scores(&base, &params, &proxy).unwrap();
    let mask = vec![true; cfg.layers];
    for j in 0..cfg.layers {
        let x0 = params.layer(j).flatten();
        let grad = finite_diff_grad(
            |x: &[f64]| {
                let mut p = params.clone();
                set_group(p.layer_mut(j), x);
                forward(&base, &p, &mask, &[&proxy[0]], None).unwrap().loss
            },
            &x0,
            1e-5,
        )
        .unwrap();
        let norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        let rel = (gamma[j] - norm_sq).abs() / norm_sq.max(1e-12);
        assert!(
            rel <= 1e-3,
            "layer {j}: {} vs {norm_sq} (rel {rel})",
            gamma[j]
        );
    }
}

fn set_group(g: &mut LoraGroup<f64>, x: &[f64]) {
    let mut off = 0;
    for t in g.tensors_mut() {
        let n = t.data().len();
        t.data_mut().copy_from_slice(&x[off..off + n]);
        off += n;
    }
}

#[test]
fn duplicated_proxy_gives_same_scores() {
    let cfg = toy_config(3, 8, 2);
    let (base, params, mut rng) = perturbed_model(&cfg, 5);
    let proxy = random_tokens(&cfg, 4, &mut rng);
    let doubled: Vec<_> = proxy.iter().chain(&proxy).cloned().collect();
    let a = fim_scores(&base, &params, &proxy).unwrap();
    let b = fim_scores(&base, &params, &doubled).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
    }
}

#[test]
fn zero_adapters_score_zero() {
    let cfg = toy_config(3, 8, 2);
    let (base, mut params) = init_model::<f64>(&cfg, &mut RngStream::new(1, "m")).unwrap();
    for j in 0..cfg.layers {
        for t in params.layer_mut(j).tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let proxy = random_tokens(&cfg, 3, &mut RngStream::new(2, "d"));
    assert_eq!(fim_scores(&base, &params, &proxy).unwrap(), vec![0.0; 3]);
    assert!(fim_scores(&base, &params, &[]).is_err());
}

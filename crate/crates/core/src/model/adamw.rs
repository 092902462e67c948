use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

use super::forward::Gradients;
use super::params::{LoraGroup, TrainableParams};
use super::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validation_errors(&self, prefix: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("{prefix}.lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("{prefix}.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            errs.push(format!("{prefix}.eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errs.push(format!(
                "{prefix}.weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        errs
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Matrix<T>,
    v: Matrix<T>,
}

impl<T: Scalar> Moments<T> {
    fn like(p: &Matrix<T>) -> Self {
        Moments {
            m: Matrix::zeros(p.rows(), p.cols()),
            v: Matrix::zeros(p.rows(), p.cols()),
        }
    }
}

/// First/second moments, allocated only for tensors that have received a gradient.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub step: u64,
    layers: Vec<Option<[Moments<T>; 4]>>,
    head: Option<[Moments<T>; 2]>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        OptimizerState {
            step: 0,
            layers: (0..cfg.layers).map(|_| None).collect(),
            head: None,
        }
    }

    /// Number of scalars held in moment buffers.
    pub fn state_size(&self) -> usize {
        let layer: usize = self
            .layers
            .iter()
            .flatten()
            .flat_map(|ms| ms.iter())
            .map(|m| 2 * m.m.data().len())
            .sum();
        let head: usize = self
            .head
            .iter()
            .flat_map(|ms| ms.iter())
            .map(|m| 2 * m.m.data().len())
            .sum();
        layer + head
    }
}

fn update_tensor<T: Scalar>(
    p: &mut Matrix<T>,
    g: &Matrix<T>,
    mom: &mut Moments<T>,
    cfg: &AdamWConfig,
    bias1: T,
    bias2: T,
) {
    let lr = T::of(cfg.lr);
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let eps = T::of(cfg.eps);
    let decay = T::one() - lr * T::of(cfg.weight_decay);
    let data = p.data_mut();
    for i in 0..data.len() {
        let gi = g.data()[i];
        let m = &mut mom.m.data_mut()[i];
        *m = b1 * *m + (T::one() - b1) * gi;
        let mi = *m;
        let v = &mut mom.v.data_mut()[i];
        *v = b2 * *v + (T::one() - b2) * gi * gi;
        let vi = *v;
        let m_hat = mi / bias1;
        let v_hat = vi / bias2;
        data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One AdamW step with bias correction and decoupled weight decay.
///
/// Only tensors present in `grads` (trainable layers and the head) are touched.
pub fn adamw_step<T: Scalar>(
    params: &mut TrainableParams<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    ensure!(
        grads.layers.len() == params.num_layers() && state.layers.len() == params.num_layers(),
        Shape,
        "gradient/optimizer layout does not match parameters"
    );
    ensure!(
        grads.head_w.shape() == params.head_w().shape()
            && grads.head_b.shape() == params.head_b().shape(),
        Shape,
        "head gradient shape mismatch"
    );
    state.step += 1;
    let t = state.step as i32;
    let bias1 = T::one() - T::of(cfg.beta1).powi(t);
    let bias2 = T::one() - T::of(cfg.beta2).powi(t);

    for (j, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        ensure!(
            g.a_q.shape() == params.layer(j).a_q.shape()
                && g.b_q.shape() == params.layer(j).b_q.shape(),
            Shape,
            "layer {j} gradient shape mismatch"
        );
        let group: &mut LoraGroup<T> = params.layer_mut(j);
        let moms = state.layers[j].get_or_insert_with(|| {
            [
                Moments::like(&group.a_q),
                Moments::like(&group.b_q),
                Moments::like(&group.a_v),
                Moments::like(&group.b_v),
            ]
        });
        for ((p, gt), mom) in group
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(moms.iter_mut())
        {
            update_tensor(p, gt, mom, cfg, bias1, bias2);
        }
    }

    let (hw, hb) = params.head_mut();
    let moms = state
        .head
        .get_or_insert_with(|| [Moments::like(hw), Moments::like(hb)]);
    let [mw, mb] = moms;
    update_tensor(hw, &grads.head_w, mw, cfg, bias1, bias2);
    update_tensor(hb, &grads.head_b, mb, cfg, bias1, bias2);
    Ok(())
}

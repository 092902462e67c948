use crate::error::{ensure, Result};
use crate::numerics::{Matrix, RngStream};
use crate::scalar::Scalar;

use super::ModelConfig;

/// Frozen weights of one encoder layer. Projections are stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenLayer<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub ln1_gain: Vec<T>,
    pub ln1_bias: Vec<T>,
    pub ln2_gain: Vec<T>,
    pub ln2_bias: Vec<T>,
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

/// The pre-trained part of the model. Shared read-only by every client.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBase<T> {
    pub cfg: ModelConfig,
    pub embedding: Matrix<T>,
    pub positional: Matrix<T>,
    pub layers: Vec<FrozenLayer<T>>,
    pub lnf_gain: Vec<T>,
    pub lnf_bias: Vec<T>,
}

/// LoRA adapters on the query and value projections of one layer.
///
/// `a_*` is `rank x d_model`, `b_*` is `d_model x rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraGroup<T> {
    pub a_q: Matrix<T>,
    pub b_q: Matrix<T>,
    pub a_v: Matrix<T>,
    pub b_v: Matrix<T>,
}

impl<T: Scalar> LoraGroup<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (r, d) = (cfg.rank, cfg.d_model);
        LoraGroup {
            a_q: Matrix::zeros(r, d),
            b_q: Matrix::zeros(d, r),
            a_v: Matrix::zeros(r, d),
            b_v: Matrix::zeros(d, r),
        }
    }

    pub fn tensors(&self) -> [&Matrix<T>; 4] {
        [&self.a_q, &self.b_q, &self.a_v, &self.b_v]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 4] {
        [&mut self.a_q, &mut self.b_q, &mut self.a_v, &mut self.b_v]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn squared_norm(&self) -> T {
        self.tensors().iter().map(|t| t.frobenius_sq()).sum()
    }

    fn add_flat(&mut self, delta: &[T]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            for (p, &d) in t.data_mut().iter_mut().zip(&delta[offset..offset + n]) {
                *p += d;
            }
            offset += n;
        }
    }

    fn assign_flat(&mut self, values: &[T]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }
}

/// Everything a client may train: per-layer LoRA groups plus the classifier head.
#[derive(Clone, Debug)]
pub struct TrainableParams<T> {
    layers: Vec<LoraGroup<T>>,
    head_w: Matrix<T>,
    head_b: Matrix<T>,
    version: u64,
}

impl<T: Scalar> PartialEq for TrainableParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.head_w == other.head_w && self.head_b == other.head_b
    }
}

impl<T: Scalar> TrainableParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        TrainableParams {
            layers: (0..cfg.layers).map(|_| LoraGroup::zeros(cfg)).collect(),
            head_w: Matrix::zeros(cfg.n_classes, cfg.d_model),
            head_b: Matrix::zeros(1, cfg.n_classes),
            version: 0,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LoraGroup<T>] {
        &self.layers
    }

    pub fn layer(&self, j: usize) -> &LoraGroup<T> {
        &self.layers[j]
    }

    pub fn layer_mut(&mut self, j: usize) -> &mut LoraGroup<T> {
        self.version += 1;
        &mut self.layers[j]
    }

    pub fn head_w(&self) -> &Matrix<T> {
        &self.head_w
    }

    pub fn head_b(&self) -> &Matrix<T> {
        &self.head_b
    }

    pub fn head_mut(&mut self) -> (&mut Matrix<T>, &mut Matrix<T>) {
        self.version += 1;
        (&mut self.head_w, &mut self.head_b)
    }

    /// Bumped by every mutable access; forward caches remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn head_flat(&self) -> Vec<T> {
        self.head_w
            .data()
            .iter()
            .chain(self.head_b.data())
            .copied()
            .collect()
    }

    /// All trainable coordinates: layer groups in order, then the head.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v: Vec<T> = self.layers.iter().flat_map(|g| g.flatten()).collect();
        v.extend(self.head_flat());
        v
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        ensure!(
            values.len() == self.num_coordinates(),
            Shape,
            "expected {} coordinates, got {}",
            self.num_coordinates(),
            values.len()
        );
        self.version += 1;
        let mut offset = 0;
        for g in &mut self.layers {
            let n = g.len();
            g.assign_flat(&values[offset..offset + n]);
            offset += n;
        }
        let nw = self.head_w.data().len();
        self.head_w
            .data_mut()
            .copy_from_slice(&values[offset..offset + nw]);
        offset += nw;
        self.head_b.data_mut().copy_from_slice(&values[offset..]);
        Ok(())
    }

    pub fn num_coordinates(&self) -> usize {
        self.layers.iter().map(LoraGroup::len).sum::<usize>()
            + self.head_w.data().len()
            + self.head_b.data().len()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.tensors().iter().all(|t| t.is_finite()))
            && self.head_w.is_finite()
            && self.head_b.is_finite()
    }

    /// `self += delta`, layer by layer.
    pub fn apply_delta(&mut self, delta: &LayerDeltas<T>) -> Result<()> {
        ensure!(
            delta.layers.len() == self.layers.len()
                && delta
                    .layers
                    .iter()
                    .zip(&self.layers)
                    .all(|(d, g)| d.len() == g.len())
                && delta.head.len() == self.head_w.data().len() + self.head_b.data().len(),
            Shape,
            "delta does not match parameter layout"
        );
        self.version += 1;
        for (g, d) in self.layers.iter_mut().zip(&delta.layers) {
            g.add_flat(d);
        }
        let nw = self.head_w.data().len();
        for (p, &d) in self.head_w.data_mut().iter_mut().zip(&delta.head[..nw]) {
            *p += d;
        }
        for (p, &d) in self.head_b.data_mut().iter_mut().zip(&delta.head[nw..]) {
            *p += d;
        }
        Ok(())
    }
}

/// Per-layer parameter differences `after - before`, flattened per LoRA group.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDeltas<T> {
    pub layers: Vec<Vec<T>>,
    pub head: Vec<T>,
}

impl<T: Scalar> LayerDeltas<T> {
    pub fn zeros_like(params: &TrainableParams<T>) -> Self {
        LayerDeltas {
            layers: params
                .layers()
                .iter()
                .map(|g| vec![T::zero(); g.len()])
                .collect(),
            head: vec![T::zero(); params.head_w().data().len() + params.head_b().data().len()],
        }
    }

    pub fn layer_norms(&self) -> Vec<T> {
        self.layers
            .iter()
            .map(|d| d.iter().map(|&x| x * x).sum::<T>().sqrt())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .chain(&self.head)
            .all(|x| x.is_finite())
    }
}

/// `after - before` per layer group and for the head.
pub fn flatten_delta<T: Scalar>(
    before: &TrainableParams<T>,
    after: &TrainableParams<T>,
) -> Result<LayerDeltas<T>> {
    ensure!(
        before.num_layers() == after.num_layers()
            && before.num_coordinates() == after.num_coordinates()
            && before.head_w().shape() == after.head_w().shape(),
        Shape,
        "snapshots come from different model configurations"
    );
    let layers = before
        .layers()
        .iter()
        .zip(after.layers())
        .map(|(b, a)| {
            a.flatten()
                .into_iter()
                .zip(b.flatten())
                .map(|(x, y)| x - y)
                .collect()
        })
        .collect();
    let head = after
        .head_flat()
        .into_iter()
        .zip(before.head_flat())
        .map(|(x, y)| x - y)
        .collect();
    Ok(LayerDeltas { layers, head })
}

/// `W0 + (alpha / r) B A`.
pub fn effective_weight<T: Scalar>(
    w0: &Matrix<T>,
    a: &Matrix<T>,
    b: &Matrix<T>,
    alpha: T,
    r: usize,
) -> Result<Matrix<T>> {
    ensure!(
        b.cols() == r && a.rows() == r,
        Shape,
        "rank {r} does not match B {:?} / A {:?}",
        b.shape(),
        a.shape()
    );
    let ba = b.matmul(a)?;
    ensure!(
        ba.shape() == w0.shape(),
        Shape,
        "BA is {:?} but W0 is {:?}",
        ba.shape(),
        w0.shape()
    );
    let mut w = w0.clone();
    w.axpy(alpha / T::of_usize(r), &ba)?;
    Ok(w)
}

fn gaussian_matrix<T: Scalar>(
    rng: &mut RngStream,
    rows: usize,
    cols: usize,
    std: f64,
) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.gaussian(0.0, std).unwrap()))
}

fn gaussian_vec<T: Scalar>(rng: &mut RngStream, n: usize, mean: f64, std: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::of(rng.gaussian(mean, std).unwrap()))
        .collect()
}

/// Random frozen base plus fresh adapters: every `B` zero, every `A` ~ N(0, 0.02²).
pub fn init_model<T: Scalar>(
    cfg: &ModelConfig,
    rng: &mut RngStream,
) -> Result<(FrozenBase<T>, TrainableParams<T>)> {
    cfg.validate()?;
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let proj_std = 1.0 / (d as f64).sqrt();
    let embedding = gaussian_matrix(rng, cfg.vocab, d, 1.0);
    let positional = gaussian_matrix(rng, cfg.seq_len, d, 0.1);
    let layers = (0..cfg.layers)
        .map(|_| FrozenLayer {
            wq: gaussian_matrix(rng, d, d, proj_std),
            wk: gaussian_matrix(rng, d, d, proj_std),
            wv: gaussian_matrix(rng, d, d, proj_std),
            wo: gaussian_matrix(rng, d, d, proj_std),
            ln1_gain: gaussian_vec(rng, d, 1.0, 0.1),
            ln1_bias: gaussian_vec(rng, d, 0.0, 0.1),
            ln2_gain: gaussian_vec(rng, d, 1.0, 0.1),
            ln2_bias: gaussian_vec(rng, d, 0.0, 0.1),
            w1: gaussian_matrix(rng, f, d, proj_std),
            b1: gaussian_vec(rng, f, 0.0, 0.1),
            w2: gaussian_matrix(rng, d, f, 1.0 / (f as f64).sqrt()),
            b2: gaussian_vec(rng, d, 0.0, 0.1),
        })
        .collect();
    let base = FrozenBase {
        cfg: cfg.clone(),
        embedding,
        positional,
        layers,
        lnf_gain: vec![T::one(); d],
        lnf_bias: vec![T::zero(); d],
    };

    let mut params = TrainableParams::zeros(cfg);
    for g in &mut params.layers {
        g.a_q = gaussian_matrix(rng, cfg.rank, d, 0.02);
        g.a_v = gaussian_matrix(rng, cfg.rank, d, 0.02);
    }
    params.head_w = gaussian_matrix(rng, cfg.n_classes, d, 0.02);
    Ok((base, params))
}

//! Hand-derived forward and backward passes of the pre-LN encoder classifier.
//!
//! Per layer: `h = x + Attn(LN1(x))`, `out = h + FFN(LN2(h))`, with LoRA on the
//! query and value projections. The classifier mean-pools `LNf(x_L)` and applies
//! the trainable head. Backward only walks down to the lowest trainable layer;
//! layers below it keep no activations.

use crate::data::{Input, Sample};
use crate::error::{ensure, Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::scalar::Scalar;

use super::params::{FrozenBase, FrozenLayer, LoraGroup, TrainableParams};

const LN_EPS: f64 = 1e-5;

struct LnCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, gain: &[T], bias: &[T]) -> (Matrix<T>, LnCache<T>) {
    let (rows, d) = x.shape();
    let inv_d = T::one() / T::of_usize(d);
    let eps = T::of(LN_EPS);
    let mut xhat = Matrix::zeros(rows, d);
    let mut y = Matrix::zeros(rows, d);
    let mut rstd = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (c, &v) in row.iter().enumerate() {
            xh[c] = (v - mean) * r;
        }
        let yr = y.row_mut(i);
        for c in 0..d {
            yr[c] = xhat.get(i, c) * gain[c] + bias[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(dy: &Matrix<T>, gain: &[T], cache: &LnCache<T>) -> Matrix<T> {
    let (rows, d) = dy.shape();
    let inv_d = T::one() / T::of_usize(d);
    let mut dx = Matrix::zeros(rows, d);
    for i in 0..rows {
        let xh = cache.xhat.row(i);
        let dxhat: Vec<T> = dy.row(i).iter().zip(gain).map(|(&g, &w)| g * w).collect();
        let sum = dxhat.iter().copied().sum::<T>();
        let dot = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        let r = cache.rstd[i];
        let out = dx.row_mut(i);
        for c in 0..d {
            out[c] = r * (dxhat[c] - inv_d * sum - xh[c] * inv_d * dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(z: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * z * (T::one() + (c * (z + k * z * z * z)).tanh())
}

fn gelu_grad<T: Scalar>(z: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let t = (c * (z + k * z * z * z)).tanh();
    half * (T::one() + t) + half * z * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * z * z)
}

/// Activations kept for a trainable adapter.
struct AdapterCache<T> {
    /// Adapter input after dropout.
    input: Matrix<T>,
    /// Dropout keep-mask already scaled by `1 / (1 - p)`.
    keep: Option<Matrix<T>>,
    /// `input · Aᵀ`
    u: Matrix<T>,
}

struct Dropout<'a> {
    rng: &'a mut RngStream,
    p: f64,
}

/// `a · Wᵀ + s (drop(a) · Aᵀ) · Bᵀ`. Frozen adapters run without dropout and cache nothing.
fn adapted_projection<T: Scalar>(
    a: &Matrix<T>,
    w: &Matrix<T>,
    lora_a: &Matrix<T>,
    lora_b: &Matrix<T>,
    scale: T,
    trainable: bool,
    dropout: Option<&mut Dropout<'_>>,
) -> (Matrix<T>, Option<AdapterCache<T>>) {
    let mut out = a.mm_nt(w);
    if !trainable {
        let u = a.mm_nt(lora_a);
        out.axpy_unchecked(scale, &u.mm_nt(lora_b));
        return (out, None);
    }
    let (input, keep) = match dropout {
        Some(drop) if drop.p > 0.0 => {
            let inv = T::of(1.0 / (1.0 - drop.p));
            let keep = Matrix::from_fn(a.rows(), a.cols(), |_, _| {
                if drop.rng.bernoulli(drop.p) {
                    T::zero()
                } else {
                    inv
                }
            });
            let input = a.hadamard(&keep).expect("same shape");
            (input, Some(keep))
        }
        _ => (a.clone(), None),
    };
    let u = input.mm_nt(lora_a);
    out.axpy_unchecked(scale, &u.mm_nt(lora_b));
    (out, Some(AdapterCache { input, keep, u }))
}

/// Returns the gradient w.r.t. the projection input; accumulates `dA`, `dB` for trainable adapters.
fn adapted_projection_backward<T: Scalar>(
    dout: &Matrix<T>,
    w: &Matrix<T>,
    lora_a: &Matrix<T>,
    lora_b: &Matrix<T>,
    scale: T,
    cache: Option<&AdapterCache<T>>,
    grads: Option<(&mut Matrix<T>, &mut Matrix<T>)>,
) -> Matrix<T> {
    let mut da = dout.mm(w);
    let du = dout.mm(lora_b).scale(scale);
    match (cache, grads) {
        (Some(c), Some((ga, gb))) => {
            gb.axpy_unchecked(scale, &dout.mm_tn(&c.u));
            ga.add_assign_unchecked(&du.mm_tn(&c.input));
            let mut dinput = du.mm(lora_a);
            if let Some(keep) = &c.keep {
                dinput = dinput.hadamard(keep).expect("same shape");
            }
            da.add_assign_unchecked(&dinput);
        }
        _ => da.add_assign_unchecked(&du.mm(lora_a)),
    }
    da
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    q_adapter: Option<AdapterCache<T>>,
    v_adapter: Option<AdapterCache<T>>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    attn: Vec<Matrix<T>>,
    ln2: LnCache<T>,
    z: Matrix<T>,
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn layer_forward<T: Scalar>(
    layer: &FrozenLayer<T>,
    lora: &LoraGroup<T>,
    n_heads: usize,
    scale: T,
    x: &Matrix<T>,
    trainable: bool,
    mut dropout: Option<&mut Dropout<'_>>,
) -> (Matrix<T>, LayerCache<T>) {
    let (s, d) = x.shape();
    let dh = d / n_heads;
    let inv_sqrt = T::one() / T::of_usize(dh).sqrt();

    let (a, ln1) = layer_norm(x, &layer.ln1_gain, &layer.ln1_bias);
    let (q, q_adapter) = adapted_projection(
        &a,
        &layer.wq,
        &lora.a_q,
        &lora.b_q,
        scale,
        trainable,
        dropout.as_deref_mut(),
    );
    let k = a.mm_nt(&layer.wk);
    let (v, v_adapter) = adapted_projection(
        &a,
        &layer.wv,
        &lora.a_v,
        &lora.b_v,
        scale,
        trainable,
        dropout.as_deref_mut(),
    );

    let mut o = Matrix::zeros(s, d);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let c0 = h * dh;
        let mut p = Matrix::zeros(s, s);
        for i in 0..s {
            let qi = &q.row(i)[c0..c0 + dh];
            let prow = p.row_mut(i);
            for (j, pj) in prow.iter_mut().enumerate() {
                let kj = &k.row(j)[c0..c0 + dh];
                *pj = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * inv_sqrt;
            }
            softmax_in_place(prow);
        }
        for i in 0..s {
            let orow = &mut o.row_mut(i)[c0..c0 + dh];
            for j in 0..s {
                let pij = p.get(i, j);
                for (oc, &vc) in orow.iter_mut().zip(&v.row(j)[c0..c0 + dh]) {
                    *oc += pij * vc;
                }
            }
        }
        attn.push(p);
    }

    let mut h1 = o.mm_nt(&layer.wo);
    h1.add_assign_unchecked(x);

    let (b, ln2) = layer_norm(&h1, &layer.ln2_gain, &layer.ln2_bias);
    let mut z = b.mm_nt(&layer.w1);
    for i in 0..s {
        for (zc, &bc) in z.row_mut(i).iter_mut().zip(&layer.b1) {
            *zc += bc;
        }
    }
    let g = z.map(gelu);
    let mut out = g.mm_nt(&layer.w2);
    for i in 0..s {
        for (oc, &bc) in out.row_mut(i).iter_mut().zip(&layer.b2) {
            *oc += bc;
        }
    }
    out.add_assign_unchecked(&h1);

    (
        out,
        LayerCache {
            ln1,
            q_adapter,
            v_adapter,
            q,
            k,
            v,
            attn,
            ln2,
            z,
        },
    )
}

fn layer_backward<T: Scalar>(
    layer: &FrozenLayer<T>,
    lora: &LoraGroup<T>,
    n_heads: usize,
    scale: T,
    cache: &LayerCache<T>,
    dout: Matrix<T>,
    grads: Option<&mut LoraGroup<T>>,
) -> Matrix<T> {
    let (s, d) = dout.shape();
    let dh = d / n_heads;
    let inv_sqrt = T::one() / T::of_usize(dh).sqrt();

    // feed-forward branch
    let dg = dout.mm(&layer.w2);
    let dz = Matrix::from_fn(dg.rows(), dg.cols(), |i, c| {
        dg.get(i, c) * gelu_grad(cache.z.get(i, c))
    });
    let db = dz.mm(&layer.w1);
    let mut dh1 = layer_norm_backward(&db, &layer.ln2_gain, &cache.ln2);
    dh1.add_assign_unchecked(&dout);

    // attention branch
    let d_o = dh1.mm(&layer.wo);
    let mut dq = Matrix::zeros(s, d);
    let mut dk = Matrix::zeros(s, d);
    let mut dv = Matrix::zeros(s, d);
    for (h, p) in cache.attn.iter().enumerate() {
        let c0 = h * dh;
        for i in 0..s {
            let doi = &d_o.row(i)[c0..c0 + dh];
            let mut dp = vec![T::zero(); s];
            for j in 0..s {
                let vj = &cache.v.row(j)[c0..c0 + dh];
                dp[j] = doi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                let pij = p.get(i, j);
                for (dvc, &doc) in dv.row_mut(j)[c0..c0 + dh].iter_mut().zip(doi) {
                    *dvc += pij * doc;
                }
            }
            let dot: T = (0..s).map(|j| p.get(i, j) * dp[j]).sum();
            for j in 0..s {
                let ds = p.get(i, j) * (dp[j] - dot) * inv_sqrt;
                if ds == T::zero() {
                    continue;
                }
                let kj: Vec<T> = cache.k.row(j)[c0..c0 + dh].to_vec();
                for (dqc, &kc) in dq.row_mut(i)[c0..c0 + dh].iter_mut().zip(&kj) {
                    *dqc += ds * kc;
                }
                let qi: Vec<T> = cache.q.row(i)[c0..c0 + dh].to_vec();
                for (dkc, &qc) in dk.row_mut(j)[c0..c0 + dh].iter_mut().zip(&qi) {
                    *dkc += ds * qc;
                }
            }
        }
    }

    let (gq, gv) = match grads {
        Some(g) => {
            let LoraGroup { a_q, b_q, a_v, b_v } = g;
            (Some((a_q, b_q)), Some((a_v, b_v)))
        }
        None => (None, None),
    };
    let mut da = adapted_projection_backward(
        &dq,
        &layer.wq,
        &lora.a_q,
        &lora.b_q,
        scale,
        cache.q_adapter.as_ref(),
        gq,
    );
    da.add_assign_unchecked(&dk.mm(&layer.wk));
    da.add_assign_unchecked(&adapted_projection_backward(
        &dv,
        &layer.wv,
        &lora.a_v,
        &lora.b_v,
        scale,
        cache.v_adapter.as_ref(),
        gv,
    ));

    let mut dx = layer_norm_backward(&da, &layer.ln1_gain, &cache.ln1);
    dx.add_assign_unchecked(&dh1);
    dx
}

fn embed<T: Scalar>(base: &FrozenBase<T>, sample: &Sample) -> Result<Matrix<T>> {
    let cfg = &base.cfg;
    let (s, d) = (cfg.seq_len, cfg.d_model);
    let mut x = base.positional.clone();
    match &sample.input {
        Input::Tokens(tokens) => {
            ensure!(
                tokens.len() == s,
                Shape,
                "sample {} has {} tokens, model expects {s}",
                sample.id,
                tokens.len()
            );
            for (i, &t) in tokens.iter().enumerate() {
                ensure!(
                    (t as usize) < cfg.vocab,
                    Parameter,
                    "token {t} of sample {} outside vocabulary {}",
                    sample.id,
                    cfg.vocab
                );
                for (xc, &ec) in x.row_mut(i).iter_mut().zip(base.embedding.row(t as usize)) {
                    *xc += ec;
                }
            }
        }
        Input::Features(f) => {
            ensure!(
                f.len() == cfg.vocab,
                Shape,
                "sample {} has {} features, model expects {}",
                sample.id,
                f.len(),
                cfg.vocab
            );
            let fm = Matrix::from_vec(1, f.len(), f.iter().map(|&v| T::of(v)).collect())?;
            let e = fm.mm(&base.embedding);
            for i in 0..s {
                for c in 0..d {
                    let v = x.get(i, c) + e.get(0, c);
                    x.set(i, c, v);
                }
            }
        }
    }
    Ok(x)
}

struct SampleCache<T> {
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    pooled: Vec<T>,
    probs: Vec<T>,
    label: usize,
}

/// Activations of one forward pass, consumed by [`backward`].
pub struct ForwardCache<T> {
    version: u64,
    mask: Vec<bool>,
    start: usize,
    samples: Vec<SampleCache<T>>,
}

impl<T> ForwardCache<T> {
    /// Index of the lowest layer that keeps activations; equal to the layer count when none do.
    pub fn first_cached_layer(&self) -> usize {
        self.start
    }

    /// Number of layers holding activation caches.
    pub fn cached_layers(&self) -> usize {
        self.samples.first().map_or(0, |s| s.layers.len())
    }

    /// Number of layers holding adapter activation caches (trainable layers).
    pub fn adapter_slots(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub struct ForwardPass<T> {
    pub logits: Vec<Vec<T>>,
    pub loss: T,
    pub cache: ForwardCache<T>,
}

/// Mean cross-entropy forward pass over `batch`.
///
/// `dropout_rng` switches on training-mode dropout for trainable adapters when
/// the configured probability is positive.
pub fn forward<T: Scalar>(
    base: &FrozenBase<T>,
    params: &TrainableParams<T>,
    mask: &[bool],
    batch: &[&Sample],
    mut dropout_rng: Option<&mut RngStream>,
) -> Result<ForwardPass<T>> {
    let cfg = &base.cfg;
    ensure!(
        mask.len() == cfg.layers && params.num_layers() == cfg.layers,
        Shape,
        "mask/params have {}/{} layers, model has {}",
        mask.len(),
        params.num_layers(),
        cfg.layers
    );
    ensure!(!batch.is_empty(), Parameter, "empty batch");
    let start = mask.iter().position(|&m| m).unwrap_or(cfg.layers);
    let scale = T::of(cfg.lora_scale());
    let inv_s = T::one() / T::of_usize(cfg.seq_len);

    let mut logits_out = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    let mut total = T::zero();
    for sample in batch {
        ensure!(
            sample.label < cfg.n_classes,
            Parameter,
            "label {} of sample {} outside {} classes",
            sample.label,
            sample.id,
            cfg.n_classes
        );
        let mut x = embed(base, sample)?;
        let mut layer_caches = Vec::with_capacity(cfg.layers - start);
        for (j, (layer, lora)) in base.layers.iter().zip(params.layers()).enumerate() {
            let mut drop = dropout_rng.as_deref_mut().map(|rng| Dropout {
                rng,
                p: cfg.dropout_p,
            });
            let (out, cache) =
                layer_forward(layer, lora, cfg.n_heads, scale, &x, mask[j], drop.as_mut());
            if j >= start {
                layer_caches.push(cache);
            }
            x = out;
        }
        let (zf, lnf) = layer_norm(&x, &base.lnf_gain, &base.lnf_bias);
        let pooled: Vec<T> = (0..cfg.d_model)
            .map(|c| (0..cfg.seq_len).map(|i| zf.get(i, c)).sum::<T>() * inv_s)
            .collect();
        let hw = params.head_w();
        let hb = params.head_b();
        let logits: Vec<T> = (0..cfg.n_classes)
            .map(|k| {
                hw.row(k)
                    .iter()
                    .zip(&pooled)
                    .map(|(&w, &p)| w * p)
                    .sum::<T>()
                    + hb.get(0, k)
            })
            .collect();
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        let nll = lse - logits[sample.label];
        if !nll.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss on sample {} (logits {:?})",
                sample.id, logits
            )));
        }
        total += nll;
        let probs = logits.iter().map(|&z| (z - lse).exp()).collect();
        samples.push(SampleCache {
            layers: layer_caches,
            lnf,
            pooled,
            probs,
            label: sample.label,
        });
        logits_out.push(logits);
    }
    Ok(ForwardPass {
        logits: logits_out,
        loss: total / T::of_usize(batch.len()),
        cache: ForwardCache {
            version: params.version(),
            mask: mask.to_vec(),
            start,
            samples,
        },
    })
}

/// Gradients of the mean loss. Layers with mask 0 are `None`: never computed.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<LoraGroup<T>>>,
    pub head_w: Matrix<T>,
    pub head_b: Matrix<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn layer_squared_norms(&self) -> Vec<T> {
        self.layers
            .iter()
            .map(|g| g.as_ref().map_or(T::zero(), LoraGroup::squared_norm))
            .collect()
    }

    /// Same layout as [`TrainableParams::to_flat`], zeros for frozen layers.
    pub fn to_flat(&self, params: &TrainableParams<T>) -> Vec<T> {
        let mut v = Vec::with_capacity(params.num_coordinates());
        for (g, p) in self.layers.iter().zip(params.layers()) {
            match g {
                Some(g) => v.extend(g.flatten()),
                None => v.extend(std::iter::repeat(T::zero()).take(p.len())),
            }
        }
        v.extend(self.head_w.data().iter().chain(self.head_b.data()).copied());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.tensors().iter().all(|t| t.is_finite()))
            && self.head_w.is_finite()
            && self.head_b.is_finite()
    }
}

pub fn backward<T: Scalar>(
    base: &FrozenBase<T>,
    params: &TrainableParams<T>,
    cache: &ForwardCache<T>,
) -> Result<Gradients<T>> {
    let cfg = &base.cfg;
    ensure!(
        cache.version == params.version() && cache.mask.len() == params.num_layers(),
        State,
        "forward cache is stale: parameters changed since the forward pass"
    );
    let scale = T::of(cfg.lora_scale());
    let n = T::of_usize(cache.samples.len());
    let inv_s = T::one() / T::of_usize(cfg.seq_len);

    let mut grads = Gradients {
        layers: cache
            .mask
            .iter()
            .map(|&m| m.then(|| LoraGroup::zeros(cfg)))
            .collect(),
        head_w: Matrix::zeros(cfg.n_classes, cfg.d_model),
        head_b: Matrix::zeros(1, cfg.n_classes),
    };

    for sc in &cache.samples {
        let dlogits: Vec<T> = sc
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| (if k == sc.label { p - T::one() } else { p }) / n)
            .collect();
        for (k, &dl) in dlogits.iter().enumerate() {
            for (g, &p) in grads.head_w.row_mut(k).iter_mut().zip(&sc.pooled) {
                *g += dl * p;
            }
            let b = grads.head_b.get(0, k) + dl;
            grads.head_b.set(0, k, b);
        }
        if cache.start == cfg.layers {
            continue;
        }
        let hw = params.head_w();
        let dpooled: Vec<T> = (0..cfg.d_model)
            .map(|c| {
                (0..cfg.n_classes)
                    .map(|k| dlogits[k] * hw.get(k, c))
                    .sum::<T>()
                    * inv_s
            })
            .collect();
        let dzf = Matrix::from_fn(cfg.seq_len, cfg.d_model, |_, c| dpooled[c]);
        let mut dx = layer_norm_backward(&dzf, &base.lnf_gain, &sc.lnf);
        for j in (cache.start..cfg.layers).rev() {
            let lc = &sc.layers[j - cache.start];
            dx = layer_backward(
                &base.layers[j],
                params.layer(j),
                cfg.n_heads,
                scale,
                lc,
                dx,
                grads.layers[j].as_mut(),
            );
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(grads)
}

/// Logits for `samples` with dropout off and no caches.
pub fn predict_logits<T: Scalar>(
    base: &FrozenBase<T>,
    params: &TrainableParams<T>,
    samples: &[Sample],
) -> Result<Vec<Vec<T>>> {
    let mask = vec![false; base.cfg.layers];
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        out.extend(forward(base, params, &mask, &refs, None)?.logits);
    }
    Ok(out)
}

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::model::{predict_logits, FrozenBase, TrainableParams};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub round: usize,
    /// Top-1 accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub mean_loss: f64,
    pub samples: usize,
}

/// Top-1 accuracy and mean cross-entropy of precomputed logits.
/// Ties in the arg-max go to the lowest class index.
pub fn evaluate_logits<T: Scalar>(logits: &[Vec<T>], labels: &[usize]) -> Result<(f64, f64)> {
    ensure!(!logits.is_empty(), Parameter, "nothing to evaluate");
    ensure!(
        logits.len() == labels.len(),
        Shape,
        "{} logit rows for {} labels",
        logits.len(),
        labels.len()
    );
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        ensure!(
            y < z.len(),
            Parameter,
            "label {y} outside {} classes",
            z.len()
        );
        let z: Vec<f64> = z.iter().map(|v| v.as_f64()).collect();
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        if best == y {
            correct += 1;
        }
        let max = z[best];
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
    }
    let n = logits.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Evaluates the adapted model on `test` with dropout off.
pub fn evaluate<T: Scalar>(
    base: &FrozenBase<T>,
    params: &TrainableParams<T>,
    test: &Dataset,
    round: usize,
) -> Result<EvalReport> {
    ensure!(!test.is_empty(), Parameter, "empty evaluation set");
    let logits = predict_logits(base, params, &test.samples)?;
    let labels: Vec<usize> = test.samples.iter().map(|s| s.label).collect();
    let (accuracy, mean_loss) = evaluate_logits(&logits, &labels)?;
    Ok(EvalReport {
        round,
        accuracy,
        mean_loss,
        samples: test.len(),
    })
}

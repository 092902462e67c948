use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::RngStream;

use super::{Dataset, Input, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Class-conditional token sequences.
    Tokens,
    /// Gaussian clusters in feature space.
    Gaussian,
}

/// Synthetic classification task.
///
/// For `Tokens`, every class owns a token-frequency profile
/// `(1 - separation) * uniform + separation * q_c`, where `q_c` puts random
/// weights on `signature_tokens` class-specific tokens; positions are drawn
/// i.i.d. from the profile. For `Gaussian`, class `c` is `N(separation * e_c, I)`
/// in `vocab` dimensions (random unit directions when `vocab < n_classes`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: TaskKind,
    pub n_classes: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub separation: f64,
    pub signature_tokens: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: TaskKind::Tokens,
            n_classes: 10,
            vocab: 64,
            seq_len: 16,
            n_train: 3000,
            n_test: 600,
            separation: 0.5,
            signature_tokens: 6,
        }
    }
}

impl SyntheticSpec {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_classes < 2 {
            errs.push(format!(
                "data.n_classes must be >= 2, got {}",
                self.n_classes
            ));
        }
        if self.kind == TaskKind::Tokens && self.n_classes > self.vocab {
            errs.push(format!(
                "data.n_classes ({}) cannot exceed data.vocab ({}) for token tasks",
                self.n_classes, self.vocab
            ));
        }
        if self.vocab == 0 || self.seq_len == 0 {
            errs.push("data.vocab and data.seq_len must be >= 1".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            errs.push("data.n_train and data.n_test must be >= 1".into());
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            errs.push(format!(
                "data.separation must be >= 0, got {}",
                self.separation
            ));
        }
        if self.kind == TaskKind::Tokens && self.separation > 1.0 {
            errs.push(format!(
                "data.separation is a mixing weight for token tasks and must be <= 1, got {}",
                self.separation
            ));
        }
        if self.kind == TaskKind::Tokens
            && (self.signature_tokens == 0 || self.signature_tokens > self.vocab)
        {
            errs.push(format!(
                "data.signature_tokens must lie in [1, vocab], got {}",
                self.signature_tokens
            ));
        }
        errs
    }
}

enum ClassModel {
    Tokens(Vec<Vec<f64>>),
    Gaussian(Vec<Vec<f64>>),
}

impl ClassModel {
    fn draw(&self, class: usize, seq_len: usize, rng: &mut RngStream) -> Input {
        match self {
            ClassModel::Tokens(cdfs) => {
                let cdf = &cdfs[class];
                Input::Tokens(
                    (0..seq_len)
                        .map(|_| {
                            let u = rng.next_f64();
                            cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u32
                        })
                        .collect(),
                )
            }
            ClassModel::Gaussian(centroids) => Input::Features(
                centroids[class]
                    .iter()
                    .map(|&m| m + rng.gaussian(0.0, 1.0).unwrap())
                    .collect(),
            ),
        }
    }
}

fn balanced_split(
    model: &ClassModel,
    n: usize,
    n_classes: usize,
    seq_len: usize,
    rng: &mut RngStream,
) -> Result<Dataset> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    rng.shuffle(&mut labels);
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(id, label)| Sample {
            id,
            input: model.draw(label, seq_len, rng),
            label,
        })
        .collect();
    Dataset::new(samples, n_classes)
}

pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
    let errs = spec.validation_errors();
    ensure!(errs.is_empty(), Parameter, "{}", errs.join("; "));
    let model = match spec.kind {
        TaskKind::Tokens => {
            let uniform = 1.0 / spec.vocab as f64;
            let cdfs = (0..spec.n_classes)
                .map(|_| {
                    let mut p = vec![(1.0 - spec.separation) * uniform; spec.vocab];
                    let picks = rng.sample_indices(spec.vocab, spec.signature_tokens)?;
                    let weights = rng.dirichlet(1.0, picks.len())?;
                    for (&t, w) in picks.iter().zip(weights) {
                        p[t] += spec.separation * w;
                    }
                    let mut acc = 0.0;
                    Ok(p.into_iter()
                        .map(|x| {
                            acc += x;
                            acc
                        })
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            ClassModel::Tokens(cdfs)
        }
        TaskKind::Gaussian => {
            let dim = spec.vocab;
            let centroids = (0..spec.n_classes)
                .map(|c| {
                    if dim >= spec.n_classes {
                        (0..dim)
                            .map(|i| if i == c { spec.separation } else { 0.0 })
                            .collect()
                    } else {
                        let v: Vec<f64> =
                            (0..dim).map(|_| rng.gaussian(0.0, 1.0).unwrap()).collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                        v.into_iter().map(|x| spec.separation * x / norm).collect()
                    }
                })
                .collect();
            ClassModel::Gaussian(centroids)
        }
    };
    let train = balanced_split(&model, spec.n_train, spec.n_classes, spec.seq_len, rng)?;
    let test = balanced_split(&model, spec.n_test, spec.n_classes, spec.seq_len, rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_are_balanced() {
        let spec = SyntheticSpec {
            n_train: 1000,
            n_test: 200,
            ..SyntheticSpec::default()
        };
        let (train, test) = generate_synthetic(&spec, &mut RngStream::new(1, "data")).unwrap();
        assert_eq!(train.class_counts(), vec![100; 10]);
        assert_eq!(test.class_counts(), vec![20; 10]);
        for s in &train.samples {
            let Input::Tokens(t) = &s.input else { panic!() };
            assert_eq!(t.len(), spec.seq_len);
            assert!(t.iter().all(|&x| (x as usize) < spec.vocab));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec, &mut RngStream::new(5, "data")).unwrap();
        let b = generate_synthetic(&spec, &mut RngStream::new(5, "data")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_classes_for_vocab() {
        let spec = SyntheticSpec {
            n_classes: 20,
            vocab: 10,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec, &mut RngStream::new(5, "data")).is_err());
    }

    fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
        let dim = match &train.samples[0].input {
            Input::Features(f) => f.len(),
            _ => unreachable!(),
        };
        let mut centroids = vec![vec![0.0; dim]; train.n_classes];
        for s in &train.samples {
            let Input::Features(f) = &s.input else {
                unreachable!()
            };
            for (c, x) in centroids[s.label].iter_mut().zip(f) {
                *c += x;
            }
        }
        let counts = train.class_counts();
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|x| *x /= n as f64);
        }
        let correct = test
            .samples
            .iter()
            .filter(|s| {
                let Input::Features(f) = &s.input else {
                    unreachable!()
                };
                let dist =
                    |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..centroids.len())
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                    .unwrap();
                best == s.label
            })
            .count();
        correct as f64 / test.len() as f64
    }

    /// P(correct) = E_z[Phi(z + s)^(K-1)] for centroids s*e_c with unit noise:
    /// the correct class wins iff every competitor's noise coordinate is below z + s.
    fn closed_form_accuracy(separation: f64, n_classes: usize) -> f64 {
        fn phi(x: f64) -> f64 {
            // Abramowitz-Stegun 7.1.26 on erf
            let t = 1.0 / (1.0 + 0.327_591_1 * x.abs() / std::f64::consts::SQRT_2);
            let poly = t
                * (0.254_829_592
                    + t * (-0.284_496_736
                        + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
            let erf = 1.0 - poly * (-(x * x) / 2.0).exp();
            0.5 * (1.0 + erf.copysign(x))
        }
        let (lo, hi, n) = (-8.0, 8.0, 4000);
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let z = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let pdf = (-(z * z) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                w * h * pdf * phi(z + separation).powi(n_classes as i32 - 1)
            })
            .sum()
    }

    #[test]
    fn gaussian_task_is_separable_at_three_sigma() {
        let spec = SyntheticSpec {
            kind: TaskKind::Gaussian,
            n_classes: 10,
            vocab: 10,
            n_train: 5000,
            n_test: 5000,
            separation: 3.0,
            ..SyntheticSpec::default()
        };
        let (train, test) = generate_synthetic(&spec, &mut RngStream::new(2, "data")).unwrap();
        let acc = nearest_centroid_accuracy(&train, &test);
        let bound = closed_form_accuracy(3.0, 10);
        assert!(bound > 0.9, "closed form {bound}");
        assert!(acc > 0.9, "nearest-centroid accuracy {acc}");
        assert!(
            (acc - bound).abs() < 0.02,
            "empirical {acc} vs closed form {bound}"
        );
    }
}

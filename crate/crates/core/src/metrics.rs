//! Sample-quality metrics: mode coverage on mixtures and a classifier-based
//! score `exp(E_x[KL(p(y|x) || p(y))])`.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{Activation, Adamax, AdamaxConfig, Mlp, MlpSpec, NnError};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, TensorError};

pub const DEFAULT_RADIUS_MULTIPLE: f64 = 3.0;
pub const DEFAULT_MIN_FRACTION: f64 = 0.02;
/// Floor applied inside every logarithm of the score.
pub const KL_FLOOR: f64 = 1e-12;
pub const SCORE_BATCHES: usize = 10;
pub const SCORE_BATCH_SIZE: usize = 1000;
/// Held-out accuracy a reference classifier must reach.
pub const ACCURACY_BAR: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("need at least one mode center")]
    NoCenters,
    #[error("radius multiple must be positive, got {0}")]
    Radius(f64),
    #[error("sample width {got} does not match center width {want}")]
    Width { got: usize, want: usize },
    #[error("need at least {need} {what}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("dataset has no labels")]
    Unlabeled,
    #[error("reference classifier reached {accuracy:.4} held-out accuracy, below {bar}")]
    Accuracy { accuracy: f64, bar: f64 },
    #[error("probability row {row} has {got} entries, expected {want}")]
    RowWidth { row: usize, got: usize, want: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeHistogram {
    pub centers: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    /// Samples farther than the radius from every center.
    pub unassigned: usize,
    pub covered: usize,
    /// Assignment radius, `radius_multiple * sigma`.
    pub radius: f64,
}

impl ModeHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.unassigned
    }

    pub fn modes(&self) -> usize {
        self.centers.len()
    }

    /// Fraction of samples within the radius of some center.
    pub fn assigned_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            (total - self.unassigned) as f64 / total as f64
        }
    }
}

/// Assigns each row of `samples` to its nearest center when within
/// `radius_multiple * sigma`; a mode is covered when it holds at least
/// `min_fraction` of the assigned samples.
pub fn mode_coverage(
    samples: &Tensor,
    centers: &[Vec<f64>],
    sigma: f64,
    radius_multiple: f64,
    min_fraction: f64,
) -> Result<ModeHistogram, MetricsError> {
    if centers.is_empty() {
        return Err(MetricsError::NoCenters);
    }
    if !(radius_multiple > 0.0) {
        return Err(MetricsError::Radius(radius_multiple));
    }
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let dim = centers[0].len();
    let width = samples.shape().last().copied().unwrap_or(0);
    if width != dim {
        return Err(MetricsError::Width { got: width, want: dim });
    }
    let radius = radius_multiple * sigma;
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0;
    for row in samples.rows() {
        let (best, d2) = centers
            .iter()
            .map(|c| c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty centers");
        if d2.sqrt() <= radius {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    let assigned: usize = counts.iter().sum();
    let covered = if assigned == 0 {
        0
    } else {
        counts
            .iter()
            .filter(|&&c| c as f64 >= min_fraction * assigned as f64)
            .count()
    };
    Ok(ModeHistogram {
        centers: centers.to_vec(),
        counts,
        unassigned,
        covered,
        radius,
    })
}

/// Anything that maps samples to class probabilities.
pub trait Classify {
    fn num_classes(&self) -> usize;

    /// One probability row per sample row.
    fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>, MetricsError>;
}

/// Softmax MLP trained on mode labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceClassifier {
    pub mlp: Mlp,
    pub heldout_accuracy: f64,
}

impl ReferenceClassifier {
    pub fn param_bits(&self) -> Vec<u64> {
        self.mlp
            .params()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>, MetricsError> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax(p)).collect())
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Classify for ReferenceClassifier {
    fn num_classes(&self) -> usize {
        self.mlp.spec().output_width()
    }

    fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>, MetricsError> {
        let logits = self.mlp.predict(x)?;
        Ok(logits.rows().map(softmax).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout: f64,
    pub adamax: AdamaxConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            epochs: 40,
            batch_size: 64,
            holdout: 0.2,
            adamax: AdamaxConfig {
                alpha: 0.01,
                beta1: 0.9,
                beta2: 0.999,
            },
        }
    }
}

pub fn train_reference_classifier(data: &Dataset, seed: u64) -> Result<ReferenceClassifier, MetricsError> {
    train_classifier(data, seed, &ClassifierConfig::default())
}

/// Cross-entropy training on a seeded split; errors if held-out accuracy
/// stays below [`ACCURACY_BAR`].
pub fn train_classifier(
    data: &Dataset,
    seed: u64,
    config: &ClassifierConfig,
) -> Result<ReferenceClassifier, MetricsError> {
    let labels = data.labels().ok_or(MetricsError::Unlabeled)?;
    let classes = data.num_classes().unwrap_or(0);
    if classes < 2 {
        return Err(MetricsError::TooFew {
            what: "classes",
            need: 2,
            got: classes,
        });
    }
    let mut rng = Rng::new(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((data.len() as f64 * config.holdout).round() as usize).max(1);
    if n_test >= data.len() {
        return Err(MetricsError::TooFew {
            what: "samples",
            need: 2,
            got: data.len(),
        });
    }
    let (test, train) = order.split_at(n_test);
    let mut train = train.to_vec();

    let spec = MlpSpec::new(
        vec![data.dim(), config.hidden, classes],
        Activation::Relu,
        Activation::Identity,
    );
    let mut mlp = Mlp::init(&spec, &mut rng)?;
    let mut opt = Adamax::new(config.adamax, &mlp.param_lens());
    let b = config.batch_size.min(train.len());
    for _ in 0..config.epochs {
        train.shuffle(&mut rng);
        for idx in train.chunks(b) {
            let x = data.batch(idx)?;
            let mut neg_onehot = vec![0.0; idx.len() * classes];
            for (r, &i) in idx.iter().enumerate() {
                neg_onehot[r * classes + labels[i]] = -1.0;
            }
            let mut g = Graph::new();
            let net = mlp.bind(&mut g, true);
            let xv = g.constant(&x);
            let logits = net.forward(&mut g, xv)?;
            let logp = g.log_softmax_rows(logits)?;
            let target = g.constant(&Tensor::matrix(idx.len(), classes, neg_onehot)?);
            let picked = g.mul(target, logp)?;
            let per_row = g.sum(picked, Some(1))?;
            let loss = g.mean(per_row, None)?;
            g.backward(loss)?;
            let grads = net.grads(&g);
            opt.step(&mut mlp.params_mut(), &grads)?;
        }
    }
    let mut clf = ReferenceClassifier {
        mlp,
        heldout_accuracy: 0.0,
    };
    let predicted = clf.predict(&data.batch(test)?)?;
    let correct = predicted
        .iter()
        .zip(test)
        .filter(|(p, &i)| **p == labels[i])
        .count();
    clf.heldout_accuracy = correct as f64 / test.len() as f64;
    if clf.heldout_accuracy < ACCURACY_BAR {
        return Err(MetricsError::Accuracy {
            accuracy: clf.heldout_accuracy,
            bar: ACCURACY_BAR,
        });
    }
    Ok(clf)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub mean: f64,
    /// Population standard deviation across batches.
    pub std: f64,
    pub batches: usize,
    pub batch_size: usize,
    pub per_batch: Vec<f64>,
}

/// Score of one batch of probability rows. The mean KL is clamped to
/// `[0, ln C]`, its exact range, to absorb rounding.
pub fn batch_score(probs: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if probs.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let c = probs[0].len();
    if let Some((row, p)) = probs.iter().enumerate().find(|(_, p)| p.len() != c) {
        return Err(MetricsError::RowWidth {
            row,
            got: p.len(),
            want: c,
        });
    }
    let n = probs.len() as f64;
    let marginal: Vec<f64> = (0..c).map(|j| probs.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let kl_sum: f64 = probs
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(&pj, _)| pj > 0.0)
                .map(|(&pj, &qj)| pj * (pj.max(KL_FLOOR).ln() - qj.max(KL_FLOOR).ln()))
                .sum::<f64>()
        })
        .sum();
    let mean_kl = (kl_sum / n).clamp(0.0, (c as f64).ln());
    Ok(mean_kl.exp())
}

/// Mean and spread of [`batch_score`] over at least two batches.
pub fn score_from_probs(batches: &[Vec<Vec<f64>>]) -> Result<ScoreReport, MetricsError> {
    if batches.len() < 2 {
        return Err(MetricsError::TooFew {
            what: "batches",
            need: 2,
            got: batches.len(),
        });
    }
    let per_batch = batches.iter().map(|b| batch_score(b)).collect::<Result<Vec<_>, _>>()?;
    let k = per_batch.len() as f64;
    let mean = per_batch.iter().sum::<f64>() / k;
    let std = (per_batch.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k).sqrt();
    Ok(ScoreReport {
        mean,
        std,
        batches: batches.len(),
        batch_size: batches[0].len(),
        per_batch,
    })
}

pub fn inception_style_score(classifier: &dyn Classify, batches: &[Tensor]) -> Result<ScoreReport, MetricsError> {
    let probs = batches
        .iter()
        .map(|b| classifier.predict_proba(b))
        .collect::<Result<Vec<_>, _>>()?;
    score_from_probs(&probs)
}

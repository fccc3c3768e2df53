//! In-memory datasets and the synthetic mixture generators.

use std::f64::consts::PI;

use thiserror::Error;

use crate::registry::{Registry, RegistryError};
use crate::rng::{Rng, Stream};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("dataset needs at least one sample")]
    Empty,
    #[error("sample {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("{len} values do not form rows of width {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("label {label} at sample {index} is not a valid mode index (< {modes})")]
    BadLabel {
        index: usize,
        label: usize,
        modes: usize,
    },
    #[error("label count {labels} does not match sample count {samples}")]
    LabelCount { labels: usize, samples: usize },
    #[error("sigma must be finite and non-negative, got {0}")]
    Sigma(f64),
}

/// Row-major samples of width `dim`, optionally labeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    dim: usize,
    points: Vec<f64>,
    labels: Option<Vec<usize>>,
    /// Per-mode standard deviation for synthetic mixtures.
    pub sigma: Option<f64>,
    /// Mode centers for synthetic mixtures.
    pub centers: Option<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, dim: usize, points: Vec<f64>) -> Result<Self, DataError> {
        if dim == 0 || points.is_empty() {
            return Err(DataError::Empty);
        }
        if points.len() % dim != 0 {
            return Err(DataError::Ragged {
                len: points.len(),
                dim,
            });
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { index: i / dim });
        }
        Ok(Dataset {
            id: id.into(),
            dim,
            points,
            labels: None,
            sigma: None,
            centers: None,
        })
    }

    /// Attaches labels; when centers are known each label must index one.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::LabelCount {
                labels: labels.len(),
                samples: self.len(),
            });
        }
        if let Some(centers) = &self.centers {
            if let Some(index) = labels.iter().position(|&l| l >= centers.len()) {
                return Err(DataError::BadLabel {
                    index,
                    label: labels[index],
                    modes: centers.len(),
                });
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Rows `indices` as a `[len × dim]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Tensor::matrix(indices.len(), self.dim, data)
    }

    pub fn to_tensor(&self) -> Result<Tensor, TensorError> {
        Tensor::matrix(self.len(), self.dim, self.points.clone())
    }

    pub fn num_classes(&self) -> Option<usize> {
        match (&self.centers, &self.labels) {
            (Some(c), _) => Some(c.len()),
            (None, Some(l)) => l.iter().max().map(|m| m + 1),
            _ => None,
        }
    }
}

/// A synthetic data source selectable by name.
pub trait DatasetGenerator: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize {
        2
    }

    /// Number of labeled components.
    fn num_modes(&self) -> usize;

    /// Mode centers, when the source is a Gaussian mixture.
    fn centers(&self) -> Option<Vec<Vec<f64>>>;

    /// Draws one labeled sample.
    fn sample_one(&self, sigma: f64, rng: &mut Rng) -> (Vec<f64>, usize);

    fn sample(&self, n: usize, sigma: f64, rng: &mut Rng) -> Result<Dataset, DataError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DataError::Sigma(sigma));
        }
        if n == 0 {
            return Err(DataError::Empty);
        }
        let mut points = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (p, l) = self.sample_one(sigma, rng);
            points.extend(p);
            labels.push(l);
        }
        let mut ds = Dataset::new(self.name(), self.dim(), points)?;
        ds.sigma = Some(sigma);
        ds.centers = self.centers();
        ds.with_labels(labels)
    }
}

fn mixture_sample(centers: &[Vec<f64>], sigma: f64, rng: &mut Rng) -> (Vec<f64>, usize) {
    let k = rng.below(centers.len());
    let p = centers[k].iter().map(|c| c + sigma * rng.normal()).collect();
    (p, k)
}

/// Eight Gaussians evenly spaced on a circle of radius 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ring8;

impl DatasetGenerator for Ring8 {
    fn name(&self) -> &'static str {
        "ring8"
    }

    fn num_modes(&self) -> usize {
        8
    }

    fn centers(&self) -> Option<Vec<Vec<f64>>> {
        Some(
            (0..8)
                .map(|k| {
                    let a = k as f64 * PI / 4.0;
                    vec![2.0 * a.cos(), 2.0 * a.sin()]
                })
                .collect(),
        )
    }

    fn sample_one(&self, sigma: f64, rng: &mut Rng) -> (Vec<f64>, usize) {
        mixture_sample(&self.centers().expect("mixture"), sigma, rng)
    }
}

/// 25 Gaussians on a 5×5 grid with spacing 2, centered at the origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct Grid25;

impl DatasetGenerator for Grid25 {
    fn name(&self) -> &'static str {
        "grid25"
    }

    fn num_modes(&self) -> usize {
        25
    }

    fn centers(&self) -> Option<Vec<Vec<f64>>> {
        let coords = [-4.0, -2.0, 0.0, 2.0, 4.0];
        Some(
            coords
                .iter()
                .flat_map(|&x| coords.iter().map(move |&y| vec![x, y]))
                .collect(),
        )
    }

    fn sample_one(&self, sigma: f64, rng: &mut Rng) -> (Vec<f64>, usize) {
        mixture_sample(&self.centers().expect("mixture"), sigma, rng)
    }
}

/// Two interleaved half circles; label 0 is the upper moon.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoMoons;

impl DatasetGenerator for TwoMoons {
    fn name(&self) -> &'static str {
        "two-moons"
    }

    fn num_modes(&self) -> usize {
        2
    }

    fn centers(&self) -> Option<Vec<Vec<f64>>> {
        None
    }

    fn sample_one(&self, sigma: f64, rng: &mut Rng) -> (Vec<f64>, usize) {
        let label = rng.below(2);
        let t = PI * rng.uniform();
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        (vec![x + sigma * rng.normal(), y + sigma * rng.normal()], label)
    }
}

pub type DatasetRegistry = Registry<dyn DatasetGenerator, ()>;

pub fn dataset_registry() -> DatasetRegistry {
    let mut r = Registry::new("dataset");
    r.register("ring8", |_| Ok(Box::new(Ring8) as Box<dyn DatasetGenerator>))
        .register("grid25", |_| Ok(Box::new(Grid25) as Box<dyn DatasetGenerator>))
        .register("two-moons", |_| Ok(Box::new(TwoMoons) as Box<dyn DatasetGenerator>));
    r
}

pub fn generator(id: &str) -> Result<Box<dyn DatasetGenerator>, DataError> {
    Ok(dataset_registry().create(id, &())?)
}

/// `n` samples from the named generator on the seed's data stream.
pub fn make_dataset(id: &str, n: usize, sigma: f64, seed: u64) -> Result<Dataset, DataError> {
    let gen = generator(id)?;
    gen.sample(n, sigma, &mut Rng::for_stream(seed, Stream::Data))
}

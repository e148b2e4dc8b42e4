//! Samples, datasets and the generated-data augmentation pipeline: scoring,
//! bottom-score filtering and ratio-controlled batch mixing.

mod generator;
mod io;
mod synthetic;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use generator::GaussianMixtureGenerator;
pub use io::{load_dataset_dir, read_lcds, save_dataset_dir, write_lcds, SplitSet};
pub use synthetic::{min_interclass_distance, synthetic_images, two_moons};

pub use crate::error::Origin;
use crate::error::{Error, Result};
use crate::layers::InputShape;
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
    pub origin: Origin,
    /// Scorer probability of the pseudo-label; generated samples only.
    pub score: Option<f64>,
}

impl Sample {
    pub fn real(input: Vec<f64>, label: usize) -> Self {
        Self { input, label, origin: Origin::Real, score: None }
    }

    pub fn generated(input: Vec<f64>, label: usize) -> Self {
        Self { input, label, origin: Origin::Generated, score: None }
    }
}

/// Labeled samples sharing one input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: InputShape,
    pub classes: usize,
    /// Box the inputs live in; attacks clamp to it. `None` is unbounded.
    pub range: Option<(f64, f64)>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(shape: InputShape, classes: usize, range: Option<(f64, f64)>, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self { shape, classes, range, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("a dataset needs at least 2 classes"));
        }
        let n = self.shape.len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.len() != n {
                return Err(Error::shape(format!("sample {i} has {} features, expected {n}", s.input.len())));
            }
            if s.label >= self.classes {
                return Err(Error::invalid(format!("sample {i} has label {} but there are {} classes", s.label, self.classes)));
            }
            if s.score.is_some() != (s.origin == Origin::Generated) {
                return Err(Error::invalid(format!("sample {i}: only generated samples carry scores")));
            }
            if s.score.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("sample {i}: score outside [0, 1]")));
            }
            if s.input.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Inputs as a matrix, one sample per row.
    pub fn inputs(&self) -> Matrix {
        stack(self.samples.iter().map(|s| s.input.as_slice()), self.shape.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self { shape: self.shape, classes: self.classes, range: self.range, samples }
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Matrix {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r);
        n += 1;
    }
    Matrix::new(n, width, data).expect("validated samples are finite and uniform")
}

/// Real-to-generated ratio within every batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub real_parts: usize,
    pub generated_parts: usize,
    pub batch_size: usize,
}

impl MixSpec {
    pub fn new(real_parts: usize, generated_parts: usize, batch_size: usize) -> Result<Self> {
        let spec = Self { real_parts, generated_parts, batch_size };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.real_parts + self.generated_parts;
        if parts == 0 {
            return Err(Error::invalid("mix ratio cannot be 0:0"));
        }
        if self.batch_size == 0 || self.batch_size % parts != 0 {
            return Err(Error::invalid(format!(
                "batch size {} is not divisible by the ratio total {parts}",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn real_count(&self) -> usize {
        self.batch_size / (self.real_parts + self.generated_parts) * self.real_parts
    }

    pub fn generated_count(&self) -> usize {
        self.batch_size - self.real_count()
    }
}

/// A training batch: real samples first, then generated ones.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub origins: Vec<Origin>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.origins.iter().filter(|&&o| o == origin).count()
    }
}

/// Drops the `⌊fraction·N⌋` lowest-scoring samples. Equal scores are
/// dropped in index order; survivors keep their order.
pub fn filter_bottom_scores(samples: &[Sample], fraction: f64) -> Result<Vec<Sample>> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("filter fraction must be in [0, 1), got {fraction}")));
    }
    let mut scored = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let score = s.score.ok_or_else(|| Error::invalid(format!("sample {i} has no score")))?;
        scored.push((score, i));
    }
    let drop = (fraction * samples.len() as f64).floor() as usize;
    // Stable sort keeps index order among equal scores.
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut keep = vec![true; samples.len()];
    for &(_, i) in &scored[..drop] {
        keep[i] = false;
    }
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

/// Draws a batch with exact per-origin counts, uniformly with replacement
/// inside each pool.
pub fn mix_batch<R: Rng + ?Sized>(real: &[Sample], generated: &[Sample], spec: MixSpec, rng: &mut R) -> Result<SampleBatch> {
    spec.validate()?;
    let (nr, ng) = (spec.real_count(), spec.generated_count());
    if nr > 0 && real.is_empty() {
        return Err(Error::EmptyPool(Origin::Real));
    }
    if ng > 0 && generated.is_empty() {
        return Err(Error::EmptyPool(Origin::Generated));
    }
    let width = real.first().or(generated.first()).map(|s| s.input.len()).unwrap_or(0);
    let mut picked: Vec<&Sample> = Vec::with_capacity(spec.batch_size);
    picked.extend((0..nr).map(|_| &real[rng.random_range(0..real.len())]));
    picked.extend((0..ng).map(|_| &generated[rng.random_range(0..generated.len())]));
    if picked.iter().any(|s| s.input.len() != width) {
        return Err(Error::shape("pools have different input widths"));
    }
    Ok(SampleBatch {
        inputs: stack(picked.iter().map(|s| s.input.as_slice()), width),
        labels: picked.iter().map(|s| s.label).collect(),
        origins: [Origin::Real].repeat(nr).into_iter().chain([Origin::Generated].repeat(ng)).collect(),
    })
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Scores every sample with the scorer's softmax probability of its
/// pseudo-label. `scorer` maps an input batch to logits.
pub fn score_samples<F>(scorer: F, samples: &[Sample]) -> Result<Vec<Sample>>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let width = samples[0].input.len();
    let probs = softmax_rows(&scorer(&stack(samples.iter().map(|s| s.input.as_slice()), width))?);
    if probs.rows() != samples.len() {
        return Err(Error::shape("scorer returned the wrong number of rows"));
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = *probs
                .row(i)
                .get(s.label)
                .ok_or_else(|| Error::shape(format!("scorer has no output for class {}", s.label)))?;
            Ok(Sample { score: Some(p.clamp(0.0, 1.0)), origin: Origin::Generated, ..s.clone() })
        })
        .collect()
}

/// A scorer that needs no trained model: logits `−½‖x − μ_c‖²` against the
/// class means of `reference`.
pub fn class_mean_scorer(reference: &Dataset) -> Result<impl Fn(&Matrix) -> Result<Matrix>> {
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = reference.shape.len();
    let mut means = Matrix::zeros(reference.classes, d);
    let mut counts = vec![0usize; reference.classes];
    for s in &reference.samples {
        counts[s.label] += 1;
        means.row_mut(s.label).iter_mut().zip(&s.input).for_each(|(m, x)| *m += x);
    }
    for (c, &n) in counts.iter().enumerate() {
        means.row_mut(c).iter_mut().for_each(|m| *m /= n.max(1) as f64);
    }
    Ok(move |x: &Matrix| {
        if x.cols() != d {
            return Err(Error::shape(format!("scorer expects {d} features, got {}", x.cols())));
        }
        Ok(Matrix::from_fn(x.rows(), means.rows(), |i, c| {
            -0.5 * x.row(i).iter().zip(means.row(c)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }))
    })
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, Matrix};

/// Covariance shrinkage toward `(trace/d)·I`, keeping the fitted covariance
/// positive definite when a class has fewer samples than dimensions.
const SHRINKAGE: f64 = 0.05;

/// Stand-in for a conditional generative model: one Gaussian per class,
/// fitted to the real data, sampled with the class as pseudo-label.
#[derive(Clone, Debug)]
pub struct GaussianMixtureGenerator {
    means: Vec<Vec<f64>>,
    factors: Vec<Matrix>,
    priors: Vec<f64>,
    range: Option<(f64, f64)>,
    rng: ChaCha8Rng,
}

impl GaussianMixtureGenerator {
    pub fn fit(data: &Dataset, seed: u64) -> Result<Self> {
        if data.classes < 2 {
            return Err(Error::invalid("the generator needs at least 2 classes"));
        }
        let d = data.shape.len();
        let mut means = Vec::with_capacity(data.classes);
        let mut factors = Vec::with_capacity(data.classes);
        let mut priors = Vec::with_capacity(data.classes);
        for c in 0..data.classes {
            let rows: Vec<&[f64]> = data.samples.iter().filter(|s| s.label == c).map(|s| s.input.as_slice()).collect();
            if rows.is_empty() {
                return Err(Error::invalid(format!("class {c} has no samples to fit")));
            }
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let mut cov = Matrix::zeros(d, d);
            for r in &rows {
                for i in 0..d {
                    let di = r[i] - mean[i];
                    for j in 0..=i {
                        cov[(i, j)] += di * (r[j] - mean[j]) / n;
                    }
                }
            }
            let avg = (0..d).map(|i| cov[(i, i)]).sum::<f64>() / d as f64;
            let shrunk = Matrix::from_fn(d, d, |i, j| {
                let c = if i >= j { cov[(i, j)] } else { cov[(j, i)] };
                (1.0 - SHRINKAGE) * c + if i == j { SHRINKAGE * avg + 1e-12 } else { 0.0 }
            });
            factors.push(cholesky(&shrunk)?);
            means.push(mean);
            priors.push(n);
        }
        let total: f64 = priors.iter().sum();
        priors.iter_mut().for_each(|p| *p /= total);
        Ok(Self { means, factors, priors, range: data.range, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class]
    }

    /// One draw from `class`, clipped to the data range.
    pub fn sample_class(&mut self, class: usize) -> Sample {
        let d = self.means[class].len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let mut x = self.factors[class].matvec(&z);
        for (v, m) in x.iter_mut().zip(&self.means[class]) {
            *v += m;
            if let Some((lo, hi)) = self.range {
                *v = v.clamp(lo, hi);
            }
        }
        Sample::generated(x, class)
    }

    /// `n` draws with classes chosen by their share of the real data.
    pub fn generate(&mut self, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let u: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut class = self.priors.len() - 1;
                for (c, p) in self.priors.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        class = c;
                        break;
                    }
                }
                self.sample_class(class)
            })
            .collect()
    }
}

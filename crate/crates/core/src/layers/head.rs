use rand::Rng;

use super::dense::{record_dense_bound, refresh_estimate};
use super::{init_bound, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SpectralEstimate};

/// Final linear classifier; row `j` of `w` is the class-`j` direction.
#[derive(Clone, Debug)]
pub struct Head {
    pub w: Matrix,
    pub b: Matrix,
    pub estimate: SpectralEstimate,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!("a classifier needs at least 2 classes, got {classes}")));
        }
        if in_dim == 0 {
            return Err(Error::invalid("head input width must be positive"));
        }
        Ok(Self::from_weight(Matrix::random_uniform(classes, in_dim, init_bound(in_dim), rng), rng))
    }

    pub fn from_weight<R: Rng + ?Sized>(w: Matrix, rng: &mut R) -> Self {
        let estimate = SpectralEstimate::new(w.cols(), w.rows(), rng);
        Self { b: Matrix::zeros(1, w.rows()), w, estimate }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.estimate.converged = false;
        vec![&mut self.w, &mut self.b]
    }

    pub fn refresh(&mut self, mode: Refresh) {
        refresh_estimate(&self.w, &mut self.estimate, mode, false);
    }

    /// Estimate of `‖W‖₂`.
    pub fn lip_bound(&self) -> f64 {
        self.estimate.sigma
    }

    /// Records `x·Wᵀ + b` given tape nodes for `W` and `b`.
    pub fn record(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul_t(x, w)?;
        tape.add_row(y, b)
    }

    /// `‖W·v‖` on the tape for a node holding `W`, with the current
    /// iterate as a constant.
    pub fn record_bound(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        record_dense_bound(tape, w, &self.estimate, false)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul_t(&self.w)?;
        for i in 0..y.rows() {
            y.row_mut(i).iter_mut().zip(self.b.as_slice()).for_each(|(a, b)| *a += b);
        }
        Ok(y)
    }
}

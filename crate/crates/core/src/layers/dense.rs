use rand::Rng;

use super::{check_width, expect_params, init_bound, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::power::{converge, power_iteration, CERT_TOL, CONV_CERT_MAX_ITERS};
use crate::numerics::{Matrix, SpectralEstimate};

/// `‖y‖₂` over all entries.
pub(crate) fn record_norm(tape: &mut Tape, y: Var) -> Result<Var> {
    let sq = tape.mul(y, y)?;
    let s = tape.sum(sq)?;
    tape.sqrt(s)
}

/// Records `‖A·v‖₂` with the right iterate held constant, `A = W` or
/// `W + I`. Never negative and never above `‖A‖₂`, whatever the state of
/// the iterates.
pub(crate) fn record_dense_bound(tape: &mut Tape, w: Var, est: &SpectralEstimate, residual: bool) -> Result<Var> {
    let v = tape.constant(Matrix::column(est.v.clone()));
    let mut av = tape.matmul(w, v)?;
    if residual {
        av = tape.add(av, v)?;
    }
    record_norm(tape, av)
}

pub(crate) fn refresh_estimate(w: &Matrix, est: &mut SpectralEstimate, mode: Refresh, residual: bool) {
    let apply = |x: &[f64]| {
        let mut y = w.matvec(x);
        if residual {
            y.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
        y
    };
    let apply_t = |y: &[f64]| {
        let mut x = w.t_matvec(y);
        if residual {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        }
        x
    };
    match mode {
        Refresh::Step => {
            power_iteration(apply, apply_t, est, 1, CERT_TOL);
        }
        Refresh::Full => {
            converge(apply, apply_t, est, CONV_CERT_MAX_ITERS, CERT_TOL);
        }
    }
}

/// Unconstrained dense layer `Wx + b`, regularized through its
/// power-iteration bound.
#[derive(Clone, Debug)]
pub struct DenseGloro {
    pub w: Matrix,
    pub b: Matrix,
    pub estimate: SpectralEstimate,
}

impl DenseGloro {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("dense layer dimensions must be positive"));
        }
        Ok(Self::from_weight(Matrix::random_uniform(out_dim, in_dim, init_bound(in_dim), rng), rng))
    }

    pub fn from_weight<R: Rng + ?Sized>(w: Matrix, rng: &mut R) -> Self {
        let estimate = SpectralEstimate::new(w.cols(), w.rows(), rng);
        let b = Matrix::zeros(1, w.rows());
        Self { w, b, estimate }
    }
}

impl Layer for DenseGloro {
    fn spec(&self) -> LayerSpec {
        LayerSpec::DenseGloro { in_dim: self.w.cols(), out_dim: self.w.rows() }
    }

    fn in_dim(&self) -> usize {
        self.w.cols()
    }

    fn out_dim(&self) -> usize {
        self.w.rows()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.estimate.converged = false;
        vec![&mut self.w, &mut self.b]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        refresh_estimate(&self.w, &mut self.estimate, mode, false);
        Ok(())
    }

    fn lip_bound(&self) -> f64 {
        self.estimate.sigma
    }

    fn bound_converged(&self) -> bool {
        self.estimate.converged
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "dense_gloro")?;
        let (w, b, bound) = match expect_params(binding, 2, "dense_gloro")? {
            Some(p) => (p[0], p[1], record_dense_bound(tape, p[0], &self.estimate, false)?),
            None => (
                tape.constant(self.w.clone()),
                tape.constant(self.b.clone()),
                tape.constant(Matrix::scalar(self.estimate.sigma)),
            ),
        };
        let y = tape.matmul_t(x, w)?;
        let out = tape.add_row(y, b)?;
        Ok(Recorded { out, bound: Some(bound) })
    }
}

/// Residual dense layer `(W + I)x + b`; the bound is estimated on `W + I`
/// directly.
#[derive(Clone, Debug)]
pub struct ResidualDenseGloro {
    pub w: Matrix,
    pub b: Matrix,
    pub estimate: SpectralEstimate,
}

impl ResidualDenseGloro {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dense layer dimensions must be positive"));
        }
        Ok(Self::from_weight(Matrix::random_uniform(dim, dim, init_bound(dim), rng), rng))
    }

    pub fn from_weight<R: Rng + ?Sized>(w: Matrix, rng: &mut R) -> Self {
        let estimate = SpectralEstimate::new(w.cols(), w.rows(), rng);
        let b = Matrix::zeros(1, w.rows());
        Self { w, b, estimate }
    }
}

impl Layer for ResidualDenseGloro {
    fn spec(&self) -> LayerSpec {
        LayerSpec::ResidualDenseGloro { dim: self.w.rows() }
    }

    fn in_dim(&self) -> usize {
        self.w.cols()
    }

    fn out_dim(&self) -> usize {
        self.w.rows()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.estimate.converged = false;
        vec![&mut self.w, &mut self.b]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        refresh_estimate(&self.w, &mut self.estimate, mode, true);
        Ok(())
    }

    fn lip_bound(&self) -> f64 {
        self.estimate.sigma
    }

    fn bound_converged(&self) -> bool {
        self.estimate.converged
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "residual_dense_gloro")?;
        let (w, b, bound) = match expect_params(binding, 2, "residual_dense_gloro")? {
            Some(p) => (p[0], p[1], record_dense_bound(tape, p[0], &self.estimate, true)?),
            None => (
                tape.constant(self.w.clone()),
                tape.constant(self.b.clone()),
                tape.constant(Matrix::scalar(self.estimate.sigma)),
            ),
        };
        let y = tape.matmul_t(x, w)?;
        let y = tape.add(y, x)?;
        let out = tape.add_row(y, b)?;
        Ok(Recorded { out, bound: Some(bound) })
    }
}

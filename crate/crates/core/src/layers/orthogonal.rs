use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ortho::{crop, orthogonalize_cayley, orthogonalize_cholesky, orthogonalize_lot, orthogonalize_matexp, LOT_FAIL_RESIDUAL};
use super::{check_width, expect_params, init_bound, stale_error, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::expm::{expm_squarings, EXPM_ORDER};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OrthMethod {
    Cayley,
    Matexp,
    Cholesky,
    /// Cholesky orthogonalization of `I + V`.
    CholeskyResidual,
    Lot { newton_iters: usize },
}

/// Dense layer `Wx + b` with `W` orthogonalized from a raw parameter.
///
/// Non-square layers keep `‖W‖₂ = 1` through semi-orthogonality: Cayley and
/// matrix-exponential weights are cropped from a square orthogonal matrix of
/// size `max(in, out)`, Cholesky and LOT orthogonalize the rectangular raw
/// matrix directly.
#[derive(Clone, Debug)]
pub struct Orthogonal {
    method: OrthMethod,
    in_dim: usize,
    out_dim: usize,
    pub raw: Matrix,
    pub bias: Matrix,
    w_eff: Matrix,
    stale: bool,
}

impl Orthogonal {
    pub fn new<R: Rng + ?Sized>(method: OrthMethod, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("dense layer dimensions must be positive"));
        }
        let raw = match method {
            OrthMethod::Cayley | OrthMethod::Matexp => {
                let m = in_dim.max(out_dim);
                Matrix::random_uniform(m, m, init_bound(m), rng)
            }
            OrthMethod::CholeskyResidual => {
                if in_dim != out_dim {
                    return Err(Error::invalid("residual orthogonal layers must be square"));
                }
                Matrix::random_uniform(in_dim, in_dim, init_bound(in_dim), rng)
            }
            OrthMethod::Cholesky | OrthMethod::Lot { .. } => {
                Matrix::eye(out_dim, in_dim).add(&Matrix::random_uniform(out_dim, in_dim, init_bound(in_dim), rng))?
            }
        };
        Self::from_raw(method, in_dim, out_dim, raw)
    }

    /// Layer with a given raw parameter and zero bias; effective weights are
    /// computed immediately.
    pub fn from_raw(method: OrthMethod, in_dim: usize, out_dim: usize, raw: Matrix) -> Result<Self> {
        let expected = Self::raw_shape(method, in_dim, out_dim);
        if raw.shape() != expected {
            return Err(Error::shape(format!(
                "raw parameter should be {}x{}, got {}x{}",
                expected.0,
                expected.1,
                raw.rows(),
                raw.cols()
            )));
        }
        let mut layer = Self {
            method,
            in_dim,
            out_dim,
            raw,
            bias: Matrix::zeros(1, out_dim),
            w_eff: Matrix::zeros(out_dim, in_dim),
            stale: true,
        };
        layer.refresh(Refresh::Full)?;
        Ok(layer)
    }

    pub fn raw_shape(method: OrthMethod, in_dim: usize, out_dim: usize) -> (usize, usize) {
        match method {
            OrthMethod::Cayley | OrthMethod::Matexp => {
                let m = in_dim.max(out_dim);
                (m, m)
            }
            _ => (out_dim, in_dim),
        }
    }

    pub fn method(&self) -> OrthMethod {
        self.method
    }

    /// Cached effective weight (`out × in`).
    pub fn weight(&self) -> Result<&Matrix> {
        if self.stale {
            return Err(stale_error("orthogonal layer"));
        }
        Ok(&self.w_eff)
    }

    fn compute_weight(&self) -> Result<Matrix> {
        let (o, i) = (self.out_dim, self.in_dim);
        match self.method {
            OrthMethod::Cayley => Ok(crop(&orthogonalize_cayley(&self.raw)?, o, i)),
            OrthMethod::Matexp => Ok(crop(&orthogonalize_matexp(&self.raw)?, o, i)),
            OrthMethod::Cholesky => orthogonalize_cholesky(&self.raw),
            OrthMethod::CholeskyResidual => orthogonalize_cholesky(&self.raw.add_identity(1.0)?),
            OrthMethod::Lot { newton_iters } => orthogonalize_lot(&self.raw, newton_iters),
        }
    }

    /// Effective weight built on the tape from the raw parameter leaf.
    fn record_weight(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        let (o, i) = (self.out_dim, self.in_dim);
        match self.method {
            OrthMethod::Cayley => {
                let s = record_skew(tape, raw)?;
                let plus = tape.add_identity(s, 1.0)?;
                let neg = tape.scale(s, -1.0)?;
                let minus = tape.add_identity(neg, 1.0)?;
                let w = tape.solve_general(plus, minus)?;
                crop_on_tape(tape, w, o, i)
            }
            OrthMethod::Matexp => {
                let s = record_skew(tape, raw)?;
                let w = record_matexp(tape, s)?;
                crop_on_tape(tape, w, o, i)
            }
            OrthMethod::Cholesky => record_cholesky_orth(tape, raw),
            OrthMethod::CholeskyResidual => {
                let a = tape.add_identity(raw, 1.0)?;
                record_cholesky_orth(tape, a)
            }
            OrthMethod::Lot { newton_iters } => record_lot(tape, raw, newton_iters),
        }
    }
}

fn crop_on_tape(tape: &mut Tape, w: Var, out_dim: usize, in_dim: usize) -> Result<Var> {
    if tape.value(w).shape() == (out_dim, in_dim) {
        Ok(w)
    } else {
        tape.slice(w, 0, 0, out_dim, in_dim)
    }
}

pub(crate) fn record_skew(tape: &mut Tape, raw: Var) -> Result<Var> {
    let t = tape.transpose(raw)?;
    let d = tape.sub(raw, t)?;
    tape.scale(d, 0.5)
}

/// Scaling and squaring with a Horner-form Taylor series, recorded op by op.
/// The number of squarings is fixed by the value at record time.
pub(crate) fn record_matexp(tape: &mut Tape, s: Var) -> Result<Var> {
    let squarings = expm_squarings(tape.value(s).frobenius_norm());
    let a = tape.scale(s, 0.5f64.powi(squarings as i32))?;
    let mut acc = tape.scale(a, 1.0 / EXPM_ORDER as f64)?;
    acc = tape.add_identity(acc, 1.0)?;
    for k in (1..EXPM_ORDER).rev() {
        let prod = tape.matmul(a, acc)?;
        let scaled = tape.scale(prod, 1.0 / k as f64)?;
        acc = tape.add_identity(scaled, 1.0)?;
    }
    for _ in 0..squarings {
        acc = tape.matmul(acc, acc)?;
    }
    Ok(acc)
}

fn rank_deficient(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { .. } | Error::SingularTriangular { .. } => Error::RankDeficient,
        other => other,
    }
}

pub(crate) fn record_cholesky_orth(tape: &mut Tape, a: Var) -> Result<Var> {
    let (r, c) = tape.value(a).shape();
    if r > c {
        let at = tape.transpose(a)?;
        let w = record_cholesky_orth(tape, at)?;
        return tape.transpose(w);
    }
    let gram = tape.matmul_t(a, a)?;
    let l = tape.cholesky(gram).map_err(rank_deficient)?;
    tape.solve_triangular(l, a).map_err(rank_deficient)
}

fn record_lot(tape: &mut Tape, v: Var, newton_iters: usize) -> Result<Var> {
    let (r, c) = tape.value(v).shape();
    if r > c {
        let vt = tape.transpose(v)?;
        let w = record_lot(tape, vt, newton_iters)?;
        return tape.transpose(w);
    }
    let a = tape.matmul_t(v, v)?;
    let sq = tape.mul(a, a)?;
    let fro2 = tape.sum(sq)?;
    if !(tape.scalar(fro2) > 0.0) {
        return Err(Error::RankDeficient);
    }
    let inv_c = tape.pow_positive(fro2, -0.5)?;
    let mut y = tape.scale_by(a, inv_c)?;
    let mut z = tape.constant(Matrix::identity(r));
    for _ in 0..newton_iters {
        let zy = tape.matmul(z, y)?;
        let half = tape.scale(zy, -0.5)?;
        let t = tape.add_identity(half, 1.5)?;
        y = tape.matmul(y, t)?;
        z = tape.matmul(t, z)?;
    }
    let zv = tape.matmul(z, v)?;
    let inv_sqrt_c = tape.pow_positive(fro2, -0.25)?;
    let w = tape.scale_by(zv, inv_sqrt_c)?;
    let residual = tape.value(w).orthogonality_residual();
    if !(residual <= LOT_FAIL_RESIDUAL) {
        return Err(Error::NonConvergence { residual });
    }
    Ok(w)
}

impl Layer for Orthogonal {
    fn spec(&self) -> LayerSpec {
        let (in_dim, out_dim) = (self.in_dim, self.out_dim);
        match self.method {
            OrthMethod::Cayley => LayerSpec::DenseCayley { in_dim, out_dim },
            OrthMethod::Matexp => LayerSpec::DenseMatexp { in_dim, out_dim },
            OrthMethod::Cholesky => LayerSpec::DenseCholesky { in_dim, out_dim },
            OrthMethod::CholeskyResidual => LayerSpec::DenseCholeskyResidual { dim: in_dim },
            OrthMethod::Lot { newton_iters } => LayerSpec::DenseLot { in_dim, out_dim, newton_iters },
        }
    }

    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.raw, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.stale = true;
        vec![&mut self.raw, &mut self.bias]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        if mode == Refresh::Full && self.stale {
            self.w_eff = self.compute_weight()?;
            self.stale = false;
        }
        Ok(())
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim, self.spec().kind())?;
        let (w, b) = match expect_params(binding, 2, self.spec().kind())? {
            Some(p) => (self.record_weight(tape, p[0])?, p[1]),
            None => (tape.constant(self.weight()?.clone()), tape.constant(self.bias.clone())),
        };
        let y = tape.matmul_t(x, w)?;
        Ok(Recorded { out: tape.add_row(y, b)?, bound: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ortho::LOT_DEFAULT_ITERS;
    use crate::layers::testutil::{layer_gradient_error, max_displacement_ratio, rng};

    const METHODS: [OrthMethod; 5] = [
        OrthMethod::Cayley,
        OrthMethod::Matexp,
        OrthMethod::Cholesky,
        OrthMethod::CholeskyResidual,
        OrthMethod::Lot { newton_iters: LOT_DEFAULT_ITERS },
    ];

    #[test]
    fn residual_with_zero_raw_is_identity() {
        let layer = Orthogonal::from_raw(OrthMethod::CholeskyResidual, 5, 5, Matrix::zeros(5, 5)).unwrap();
        let x = Matrix::random_uniform(3, 5, 1.0, &mut rng(0));
        assert!(layer.forward(&x).unwrap().max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn residual_layer_is_an_isometry() {
        let mut r = rng(1);
        let layer = Orthogonal::new(OrthMethod::CholeskyResidual, 12, 12, &mut r).unwrap();
        let x = Matrix::random_uniform(50, 12, 1.0, &mut r);
        let xp = Matrix::random_uniform(50, 12, 1.0, &mut r);
        let (y, yp) = (layer.forward(&x).unwrap(), layer.forward(&xp).unwrap());
        for i in 0..50 {
            let dx = x.block(i, 0, 1, 12).sub(&xp.block(i, 0, 1, 12)).unwrap().frobenius_norm();
            let dy = y.block(i, 0, 1, 12).sub(&yp.block(i, 0, 1, 12)).unwrap().frobenius_norm();
            assert!((dx - dy).abs() < 1e-9);
        }
    }

    #[test]
    fn every_shape_is_one_lipschitz_and_orthogonal() {
        let mut r = rng(2);
        for method in METHODS {
            let shapes: &[(usize, usize)] = match method {
                OrthMethod::CholeskyResidual => &[(6, 6)],
                _ => &[(6, 6), (3, 8), (8, 3)],
            };
            for &(i, o) in shapes {
                let layer = Orthogonal::new(method, i, o, &mut r).unwrap();
                let w = layer.weight().unwrap();
                assert_eq!(w.shape(), (o, i));
                assert!(w.orthogonality_residual() < 1e-9, "{method:?} {i}->{o}");
                assert!(max_displacement_ratio(&layer, 1000, &mut r) <= 1.0 + 1e-9, "{method:?}");
            }
        }
    }

    #[test]
    fn tape_weight_matches_cached_weight() {
        let mut r = rng(3);
        for method in METHODS {
            let layer = Orthogonal::new(method, 7, 5, &mut r).unwrap_or_else(|_| Orthogonal::new(method, 5, 5, &mut r).unwrap());
            let mut tape = Tape::new();
            let raw = tape.leaf(layer.raw.clone());
            let w = layer.record_weight(&mut tape, raw).unwrap();
            assert!(tape.value(w).max_abs_diff(layer.weight().unwrap()) < 1e-10, "{method:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(4);
        for method in METHODS {
            for &(i, o) in &[(6, 6), (4, 6), (6, 4)] {
                let Ok(layer) = Orthogonal::new(method, i, o, &mut r) else { continue };
                let err = layer_gradient_error(&layer, 3, &mut r);
                assert!(err <= 1e-5, "{method:?} {i}->{o}: {err}");
            }
        }
    }

    #[test]
    fn stale_weights_are_refused() {
        let mut layer = Orthogonal::new(OrthMethod::Cayley, 4, 4, &mut rng(5)).unwrap();
        layer.params_mut()[0].as_mut_slice()[1] += 0.1;
        assert!(layer.forward(&Matrix::zeros(1, 4)).is_err());
        layer.refresh(Refresh::Full).unwrap();
        assert!(layer.forward(&Matrix::zeros(1, 4)).is_ok());
    }
}

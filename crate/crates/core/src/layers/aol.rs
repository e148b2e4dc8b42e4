use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, expect_params, init_bound, stale_error, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Power applied to the row sums of `|VᵀV|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AolExponent {
    /// `r^{-1/2}`.
    #[default]
    InvSqrt,
    /// `min(r^{-1}, r^{-1/2})`. The plain `r^{-1}` scaling is not 1-Lipschitz
    /// when a row sum is below 1, and taking the smaller factor keeps it so.
    Inv,
}

/// Per-input-column scaling `d` with `V·diag(d)` 1-Lipschitz. Columns whose
/// row sum vanishes are entirely zero and get scale 0.
pub fn aol_scaling(v: &Matrix, exponent: AolExponent) -> Vec<f64> {
    let g = v.t_matmul(v).expect("gram shape");
    (0..g.rows())
        .map(|i| {
            let r: f64 = g.row(i).iter().map(|x| x.abs()).sum();
            if r > 0.0 {
                match exponent {
                    AolExponent::InvSqrt => r.powf(-0.5),
                    AolExponent::Inv => r.powf(-1.0).min(r.powf(-0.5)),
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// Almost-orthogonal dense layer `V·diag(d)·x + b`.
#[derive(Clone, Debug)]
pub struct Aol {
    exponent: AolExponent,
    pub v: Matrix,
    pub bias: Matrix,
    w_eff: Matrix,
    stale: bool,
}

impl Aol {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, exponent: AolExponent, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("dense layer dimensions must be positive"));
        }
        let v = Matrix::eye(out_dim, in_dim).add(&Matrix::random_uniform(out_dim, in_dim, init_bound(in_dim), rng))?;
        Ok(Self::from_weight(v, exponent))
    }

    pub fn from_weight(v: Matrix, exponent: AolExponent) -> Self {
        let mut layer = Self { exponent, bias: Matrix::zeros(1, v.rows()), w_eff: Matrix::zeros(0, 0), v, stale: true };
        layer.rebuild();
        layer
    }

    fn rebuild(&mut self) {
        let d = aol_scaling(&self.v, self.exponent);
        self.w_eff = Matrix::from_fn(self.v.rows(), self.v.cols(), |i, j| self.v[(i, j)] * d[j]);
        self.stale = false;
    }

    /// Cached `V·diag(d)`.
    pub fn weight(&self) -> Result<&Matrix> {
        if self.stale {
            return Err(stale_error("aol"));
        }
        Ok(&self.w_eff)
    }

    fn record_scaling(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        let g = tape.t_matmul(v, v)?;
        let g = tape.abs(g)?;
        let r = tape.row_sum(g)?;
        let r = tape.transpose(r)?;
        let rv = tape.value(r).clone();
        let zero = tape.constant(rv.map(|x| if x > 0.0 { 0.0 } else { 1.0 }));
        let keep = tape.constant(rv.map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
        let safe = tape.add(r, zero)?;
        let mut d = tape.pow_positive(safe, -0.5)?;
        if self.exponent == AolExponent::Inv {
            let inv = tape.pow_positive(safe, -1.0)?;
            d = tape.minimum(inv, d)?;
        }
        tape.mul(d, keep)
    }
}

impl Layer for Aol {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Aol { in_dim: self.v.cols(), out_dim: self.v.rows(), exponent: self.exponent }
    }

    fn in_dim(&self) -> usize {
        self.v.cols()
    }

    fn out_dim(&self) -> usize {
        self.v.rows()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.v, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.stale = true;
        vec![&mut self.v, &mut self.bias]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        if mode == Refresh::Full && self.stale {
            self.rebuild();
        }
        Ok(())
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "aol")?;
        let y = match expect_params(binding, 2, "aol")? {
            Some(p) => {
                let d = self.record_scaling(tape, p[0])?;
                let xd = tape.mul_row(x, d)?;
                let y = tape.matmul_t(xd, p[0])?;
                tape.add_row(y, p[1])?
            }
            None => {
                let w = tape.constant(self.weight()?.clone());
                let b = tape.constant(self.bias.clone());
                let y = tape.matmul_t(x, w)?;
                tape.add_row(y, b)?
            }
        };
        Ok(Recorded { out: y, bound: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{layer_gradient_error, max_displacement_ratio, rng};
    use crate::numerics::spectral_norm_oracle;

    #[test]
    fn identity_weight_is_unscaled() {
        let layer = Aol::from_weight(Matrix::identity(3), AolExponent::InvSqrt);
        assert_eq!(layer.weight().unwrap(), &Matrix::identity(3));
        let x = Matrix::row_vector(vec![0.5, -1.0, 2.0]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn doubled_identity_with_inverse_exponent() {
        let layer = Aol::from_weight(Matrix::identity(2).scale(2.0), AolExponent::Inv);
        assert_eq!(aol_scaling(&layer.v, AolExponent::Inv), vec![0.25, 0.25]);
        let x = Matrix::row_vector(vec![1.0, -4.0]);
        assert_eq!(layer.forward(&x).unwrap().as_slice(), &[0.5, -2.0]);
    }

    #[test]
    fn zero_column_gets_zero_scale() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(aol_scaling(&v, AolExponent::InvSqrt)[1], 0.0);
        let layer = Aol::from_weight(v, AolExponent::InvSqrt);
        assert!(layer_gradient_error(&layer, 2, &mut rng(9)) <= 1e-5);
    }

    #[test]
    fn effective_spectral_norm_at_most_one() {
        let mut r = rng(0);
        for exponent in [AolExponent::InvSqrt, AolExponent::Inv] {
            for scale in [0.1, 1.0, 3.0] {
                let v = Matrix::random_uniform(16, 8, scale, &mut r);
                let layer = Aol::from_weight(v, exponent);
                assert!(spectral_norm_oracle(layer.weight().unwrap()) <= 1.0 + 1e-9);
                assert!(max_displacement_ratio(&layer, 1000, &mut r) <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(1);
        for exponent in [AolExponent::InvSqrt, AolExponent::Inv] {
            let layer = Aol::new(6, 5, exponent, &mut r).unwrap();
            assert!(layer_gradient_error(&layer, 3, &mut r) <= 1e-5);
        }
    }
}

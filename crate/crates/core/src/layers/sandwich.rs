use rand::Rng;

use super::{check_width, expect_params, init_bound, stale_error, Activation, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Column-orthonormal `2n × n` matrix from a stacked raw parameter
/// `[U; V]` by the rectangular Cayley transform, returned as its top and
/// bottom `n × n` halves:
/// `Z = U − Uᵀ + VᵀV`, top `(I + Z)⁻¹(I − Z)`, bottom `−2V(I + Z)⁻¹`.
pub fn sandwich_q(raw: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let r = tape.constant(raw.clone());
    let (top, bottom) = record_q(&mut tape, r)?;
    Ok((tape.value(top).clone(), tape.value(bottom).clone()))
}

fn record_q(tape: &mut Tape, raw: Var) -> Result<(Var, Var)> {
    let (rows, n) = tape.value(raw).shape();
    if rows != 2 * n {
        return Err(Error::shape(format!("sandwich parameter should be {}x{n}, got {rows}x{n}", 2 * n)));
    }
    let u = tape.slice(raw, 0, 0, n, n)?;
    let v = tape.slice(raw, n, 0, n, n)?;
    let ut = tape.transpose(u)?;
    let s = tape.sub(u, ut)?;
    let vtv = tape.t_matmul(v, v)?;
    let z = tape.add(s, vtv)?;
    let plus = tape.add_identity(z, 1.0)?;
    let eye = tape.constant(Matrix::identity(n));
    let inv = tape.solve_general(plus, eye)?;
    let neg = tape.scale(z, -1.0)?;
    let minus = tape.add_identity(neg, 1.0)?;
    let top = tape.matmul(inv, minus)?;
    let vb = tape.matmul(v, inv)?;
    let bottom = tape.scale(vb, -2.0)?;
    Ok((top, bottom))
}

/// Sandwich block `√2·Aᵀ·Ψ·σ(Ψ⁻¹·B·x + b)` with `A = Q_topᵀ`,
/// `B = Q_botᵀ` and `Ψ = diag(exp(ψ))`.
#[derive(Clone, Debug)]
pub struct Sandwich {
    activation: Activation,
    pub raw: Matrix,
    pub psi: Matrix,
    pub bias: Matrix,
    q: (Matrix, Matrix),
    stale: bool,
}

impl Sandwich {
    pub fn new<R: Rng + ?Sized>(dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("sandwich width must be positive"));
        }
        let raw = Matrix::random_uniform(2 * dim, dim, init_bound(dim), rng);
        Self::from_parts(raw, Matrix::zeros(1, dim), activation)
    }

    pub fn from_parts(raw: Matrix, psi: Matrix, activation: Activation) -> Result<Self> {
        let n = raw.cols();
        if psi.shape() != (1, n) {
            return Err(Error::shape("psi must be a row of the layer width"));
        }
        let q = sandwich_q(&raw)?;
        Ok(Self { activation, raw, psi, bias: Matrix::zeros(1, n), q, stale: false })
    }

    /// Cached `(Q_top, Q_bot)`.
    pub fn q(&self) -> Result<(&Matrix, &Matrix)> {
        if self.stale {
            return Err(stale_error("sandwich"));
        }
        Ok((&self.q.0, &self.q.1))
    }
}

impl Layer for Sandwich {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Sandwich { dim: self.raw.cols(), activation: self.activation }
    }

    fn in_dim(&self) -> usize {
        self.raw.cols()
    }

    fn out_dim(&self) -> usize {
        self.raw.cols()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.raw, &self.psi, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.stale = true;
        vec![&mut self.raw, &mut self.psi, &mut self.bias]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        if mode == Refresh::Full && self.stale {
            self.q = sandwich_q(&self.raw)?;
            self.stale = false;
        }
        Ok(())
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "sandwich")?;
        let (top, bottom, psi, b) = match expect_params(binding, 3, "sandwich")? {
            Some(p) => {
                let (top, bottom) = record_q(tape, p[0])?;
                (top, bottom, p[1], p[2])
            }
            None => {
                let (top, bottom) = self.q()?;
                (
                    tape.constant(top.clone()),
                    tape.constant(bottom.clone()),
                    tape.constant(self.psi.clone()),
                    tape.constant(self.bias.clone()),
                )
            }
        };
        let neg = tape.scale(psi, -1.0)?;
        let shrink = tape.exp(neg)?;
        let grow = tape.exp(psi)?;
        let h = tape.matmul(x, bottom)?;
        let h = tape.mul_row(h, shrink)?;
        let h = tape.add_row(h, b)?;
        let h = self.activation.record(tape, h)?;
        let h = tape.mul_row(h, grow)?;
        let h = tape.matmul_t(h, top)?;
        Ok(Recorded { out: tape.scale(h, std::f64::consts::SQRT_2)?, bound: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{layer_gradient_error, max_displacement_ratio, rng};
    use crate::numerics::spectral_norm_oracle;

    #[test]
    fn stacked_q_has_orthonormal_columns() {
        let mut r = rng(0);
        for n in [1, 4, 16] {
            let raw = Matrix::random_uniform(2 * n, n, 1.0, &mut r);
            let (top, bottom) = sandwich_q(&raw).unwrap();
            let gram = top.t_matmul(&top).unwrap().add(&bottom.t_matmul(&bottom).unwrap()).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(n)) < 1e-10);
            // A = topᵀ, B = bottomᵀ, so 2AᵀB = 2·top·bottomᵀ.
            let cross = top.matmul_t(&bottom).unwrap().scale(2.0);
            assert!(spectral_norm_oracle(&cross) <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let layer = Sandwich::new(6, Activation::Relu, &mut rng(1)).unwrap();
        assert_eq!(layer.forward(&Matrix::zeros(1, 6)).unwrap(), Matrix::zeros(1, 6));
    }

    #[test]
    fn unit_psi_reduces_to_plain_form() {
        let mut r = rng(2);
        let layer = Sandwich::new(5, Activation::Relu, &mut r).unwrap();
        let x = Matrix::random_uniform(3, 5, 1.0, &mut r);
        let (top, bottom) = layer.q().unwrap();
        let expected = x.matmul(bottom).unwrap().map(|v| v.max(0.0)).matmul_t(top).unwrap().scale(std::f64::consts::SQRT_2);
        assert!(layer.forward(&x).unwrap().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn one_lipschitz() {
        let mut r = rng(3);
        for activation in [Activation::Relu, Activation::Tanh] {
            let mut layer = Sandwich::new(16, activation, &mut r).unwrap();
            *layer.params_mut()[1] = Matrix::random_uniform(1, 16, 1.0, &mut r);
            *layer.params_mut()[2] = Matrix::random_uniform(1, 16, 0.5, &mut r);
            layer.refresh(Refresh::Full).unwrap();
            assert!(max_displacement_ratio(&layer, 1000, &mut r) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(4);
        let mut layer = Sandwich::new(4, Activation::Tanh, &mut r).unwrap();
        layer.psi = Matrix::random_uniform(1, 4, 0.5, &mut r);
        assert!(layer_gradient_error(&layer, 3, &mut r) <= 1e-5);
    }
}

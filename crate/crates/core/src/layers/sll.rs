use rand::Rng;

use super::{check_width, expect_params, init_bound, stale_error, Activation, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// SDP-based residual block `x − 2·W·T⁻¹·σ(Wᵀx + b)` with
/// `T_ii = Σ_j |WᵀW|_ij q_j / q_i` and `q = exp(q_log)`.
#[derive(Clone, Debug)]
pub struct Sll {
    activation: Activation,
    pub w: Matrix,
    pub bias: Matrix,
    pub q_log: Matrix,
    t_inv: Matrix,
    stale: bool,
}

impl Sll {
    pub fn new<R: Rng + ?Sized>(dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("SLL width must be positive"));
        }
        let w = Matrix::random_uniform(dim, dim, init_bound(dim), rng);
        Ok(Self::from_parts(w, Matrix::zeros(1, dim), activation))
    }

    pub fn from_parts(w: Matrix, q_log: Matrix, activation: Activation) -> Self {
        let n = w.rows();
        let mut layer = Self { activation, bias: Matrix::zeros(1, w.cols()), q_log, w, t_inv: Matrix::zeros(1, n), stale: true };
        layer.rebuild().expect("consistent SLL shapes");
        layer
    }

    fn rebuild(&mut self) -> Result<()> {
        let mut tape = Tape::new();
        let w = tape.constant(self.w.clone());
        let q = tape.constant(self.q_log.clone());
        let t = record_t_inv(&mut tape, w, q)?;
        self.t_inv = tape.value(t).clone();
        self.stale = false;
        Ok(())
    }
}

/// `1/T_ii` as a row; hidden units with a zero column of `W` get 0.
fn record_t_inv(tape: &mut Tape, w: Var, q_log: Var) -> Result<Var> {
    let g = tape.t_matmul(w, w)?;
    let m = tape.abs(g)?;
    let q = tape.exp(q_log)?;
    let qm = tape.matmul_t(q, m)?;
    let neg = tape.scale(q_log, -1.0)?;
    let inv_q = tape.exp(neg)?;
    let t = tape.mul(qm, inv_q)?;
    let tv = tape.value(t).clone();
    let zero = tape.constant(tv.map(|x| if x > 0.0 { 0.0 } else { 1.0 }));
    let keep = tape.constant(tv.map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
    let safe = tape.add(t, zero)?;
    let inv = tape.pow_positive(safe, -1.0)?;
    tape.mul(inv, keep)
}

impl Layer for Sll {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Sll { dim: self.w.rows(), activation: self.activation }
    }

    fn in_dim(&self) -> usize {
        self.w.rows()
    }

    fn out_dim(&self) -> usize {
        self.w.rows()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.bias, &self.q_log]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.stale = true;
        vec![&mut self.w, &mut self.bias, &mut self.q_log]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        if mode == Refresh::Full && self.stale {
            self.rebuild()?;
        }
        Ok(())
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "sll")?;
        let (w, b, t_inv) = match expect_params(binding, 3, "sll")? {
            Some(p) => (p[0], p[1], record_t_inv(tape, p[0], p[2])?),
            None => {
                if self.stale {
                    return Err(stale_error("sll"));
                }
                (tape.constant(self.w.clone()), tape.constant(self.bias.clone()), tape.constant(self.t_inv.clone()))
            }
        };
        let h = tape.matmul(x, w)?;
        let h = tape.add_row(h, b)?;
        let h = self.activation.record(tape, h)?;
        let h = tape.mul_row(h, t_inv)?;
        let h = tape.matmul_t(h, w)?;
        let h = tape.scale(h, -2.0)?;
        Ok(Recorded { out: tape.add(x, h)?, bound: None })
    }
}

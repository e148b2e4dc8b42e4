//! Eager reverse-mode differentiation over matrix-valued primitives.
//!
//! Every operation is recorded with its value as soon as it is called. The
//! tape is append-only, so node order is a topological order. Backward walks
//! it in reverse and applies matrix-level adjoints; [`Tape::evaluate`]
//! replays the recorded graph with new leaf values.

mod check;
mod ops;

pub use check::{finite_diff_check, GradientReport};
pub use ops::argmax;

use crate::error::{Error, Result};
use crate::numerics::{ConvShape, LuFactors, Matrix, SpatialShape};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// `A·Bᵀ`
    MatMulT(Var, Var),
    /// `Aᵀ·B`
    TMatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `A + 1·r` for a row vector `r`.
    AddRow(Var, Var),
    /// `A ∘ (1·r)`: scales column `j` by `r_j`.
    MulRow(Var, Var),
    /// `A ∘ (c·1ᵀ)`: scales row `i` by `c_i`.
    MulCol(Var, Var),
    /// `A · s` for a 1×1 `s`.
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddIdentity(Var, f64),
    Abs(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    /// `x^p` for `x > 0`, zero elsewhere.
    PowPositive(Var, f64),
    Minimum(Var, Var),
    Maximum(Var, Var),
    RowSum(Var),
    ColSum(Var),
    Sum(Var),
    Detach(Var),
    MinMax(Var),
    Conv2d(Var, Var, ConvShape),
    /// Adds `b_c` to every position of channel plane `c`.
    AddChannelBias(Var, Var, usize),
    SpatialMix(Var, Vec<Var>, SpatialShape),
    Cholesky(Var),
    SolveTriangular(Var, Var),
    SolveGeneral(Var, Var),
    Slice { a: Var, r0: usize, c0: usize, rows: usize, cols: usize },
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    PairwiseRowDistance(Var),
    GloroBottom(Var, Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Clone, Debug, Default)]
pub(crate) enum Aux {
    #[default]
    None,
    Lu(Box<LuFactors>),
    /// Per row: (argmax class, selected competitor).
    Selected(Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    aux: Aux,
}

/// Recorded computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one output with respect to every node on the tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the
    /// output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, Aux::None)
    }

    /// Input that gradients are not reported for. It can still be replaced
    /// during [`Tape::evaluate`].
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, Aux::None)
    }

    fn push(&mut self, op: Op, value: Matrix, aux: Aux) -> Var {
        self.nodes.push(Node { op, value, aux });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let (value, aux) = ops::forward(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push(op, value, aux))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulT(a, b))
    }

    pub fn t_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::TMatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.record(Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.record(Op::MulRow(a, row))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.record(Op::MulCol(a, col))
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        self.record(Op::ScaleBy(a, s))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::Scale(a, s))
    }

    pub fn add_identity(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::AddIdentity(a, s))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sqrt(a))
    }

    pub fn pow_positive(&mut self, a: Var, p: f64) -> Result<Var> {
        self.record(Op::PowPositive(a, p))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Minimum(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Maximum(a, b))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::RowSum(a))
    }

    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::ColSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    /// Same value, but no gradient flows back through it.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Detach(a))
    }

    pub fn minmax(&mut self, a: Var) -> Result<Var> {
        self.record(Op::MinMax(a))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, shape: ConvShape) -> Result<Var> {
        self.record(Op::Conv2d(x, kernel, shape))
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var, plane: usize) -> Result<Var> {
        self.record(Op::AddChannelBias(x, bias, plane))
    }

    pub fn spatial_mix(&mut self, x: Var, weights: &[Var], shape: SpatialShape) -> Result<Var> {
        self.record(Op::SpatialMix(x, weights.to_vec(), shape))
    }

    /// Lower Cholesky factor of a symmetric positive definite input. Only the
    /// lower triangle is read; the adjoint is the symmetric one.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Cholesky(a))
    }

    pub fn solve_triangular(&mut self, l: Var, b: Var) -> Result<Var> {
        self.record(Op::SolveTriangular(l, b))
    }

    pub fn solve_general(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::SolveGeneral(a, b))
    }

    pub fn slice(&mut self, a: Var, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Var> {
        self.record(Op::Slice { a, r0, c0, rows, cols })
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::ConcatCols(a, b))
    }

    /// `D_ij = ‖w_i − w_j‖₂` over the rows of `w`.
    pub fn pairwise_row_distance(&mut self, w: Var) -> Result<Var> {
        self.record(Op::PairwiseRowDistance(w))
    }

    /// The ⊥ logit: per row `b`, `max_{i≠j} (y_bi + K_ji)` with `j` the
    /// row's argmax (first on ties).
    pub fn gloro_bottom(&mut self, logits: Var, k: Var) -> Result<Var> {
        self.record(Op::GloroBottom(logits, k))
    }

    /// Mean cross-entropy of `logits` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.record(Op::CrossEntropy(logits, labels.to_vec()))
    }

    /// Product of 1×1 nodes (1 for an empty list).
    pub fn product(&mut self, factors: &[Var]) -> Result<Var> {
        match factors.split_first() {
            None => Ok(self.constant(Matrix::scalar(1.0))),
            Some((&first, rest)) => {
                let mut acc = first;
                for &f in rest {
                    acc = self.mul(acc, f)?;
                }
                Ok(acc)
            }
        }
    }

    /// Reverse pass from `output` seeded with `seed` (same shape).
    pub fn backward(&self, output: Var, seed: &Matrix) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::shape(format!(
                "seed is {}x{}, output is {}x{}",
                seed.rows(),
                seed.cols(),
                out_shape.0,
                out_shape.1
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        grads[output.0] = Some(seed.clone());
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let contributions = ops::backward(&node.op, &node.value, &node.aux, &g, |v| &self.nodes[v.0].value)?;
            grads[i] = Some(g);
            for (v, gv) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gv),
                    slot @ None => *slot = Some(gv),
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    /// Backward from a 1×1 output with seed 1.
    pub fn grad(&self, output: Var) -> Result<Gradients> {
        self.backward(output, &Matrix::scalar(1.0))
    }

    /// Replays the tape with replaced input values and returns the value of
    /// the last node. Inputs must be leaves or constants and keep their
    /// shapes.
    pub fn evaluate(&mut self, inputs: &[(Var, Matrix)]) -> Result<Matrix> {
        for (v, m) in inputs {
            let node = self.nodes.get_mut(v.0).ok_or_else(|| Error::invalid("unknown variable"))?;
            if !matches!(node.op, Op::Leaf | Op::Constant) {
                return Err(Error::invalid("only leaves and constants can be replaced"));
            }
            if node.value.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "replacement is {}x{}, input is {}x{}",
                    m.rows(),
                    m.cols(),
                    node.value.rows(),
                    node.value.cols()
                )));
            }
            node.value = m.clone();
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf | Op::Constant) {
                continue;
            }
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let (value, aux) = ops::forward(&node.op, |v| &done[v.0].value)?;
            node.value = value;
            node.aux = aux;
        }
        self.nodes.last().map(|n| n.value.clone()).ok_or_else(|| Error::invalid("empty tape"))
    }
}

use super::{Aux, Op, Var};
use crate::error::{Error, Result};
use crate::numerics::cholesky::cholesky_lower;
use crate::numerics::conv::{conv2d, conv2d_adjoint, conv2d_kernel_grad, spatial_mix, spatial_mix_adjoint, spatial_mix_weight_grads};
use crate::numerics::triangular::solve_upper_in_place;
use crate::numerics::{solve_triangular, LuFactors, Matrix};

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec_unchecked(a.rows(), a.cols(), data)
}

fn row_vector_of(r: &Matrix, cols: usize, what: &str) -> Result<()> {
    if r.shape() != (1, cols) {
        return Err(Error::shape(format!("{what}: expected 1x{cols} row, got {}x{}", r.rows(), r.cols())));
    }
    Ok(())
}

fn broadcast_row(a: &Matrix, r: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let rv = r.as_slice();
    let mut out = a.clone();
    for i in 0..a.rows() {
        for (x, &y) in out.row_mut(i).iter_mut().zip(rv) {
            *x = f(*x, y);
        }
    }
    out
}

fn col_sums(a: &Matrix) -> Matrix {
    let mut s = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for (acc, &x) in s.iter_mut().zip(a.row(i)) {
            *acc += x;
        }
    }
    Matrix::row_vector(s)
}

fn row_sums(a: &Matrix) -> Matrix {
    Matrix::column((0..a.rows()).map(|i| a.row(i).iter().sum()).collect())
}

fn scalar_of(m: &Matrix, what: &str) -> Result<f64> {
    if m.shape() != (1, 1) {
        return Err(Error::shape(format!("{what}: expected a 1x1 scalar, got {}x{}", m.rows(), m.cols())));
    }
    Ok(m.as_slice()[0])
}

/// Row argmax, first index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `(j, i*, ⊥)` for one row: argmax `j`, maximizing competitor `i*` and
/// `⊥ = y_{i*} + K_{j i*}`.
pub(crate) fn bottom_for_row(y: &[f64], k: &Matrix) -> (usize, usize, f64) {
    let j = argmax(y);
    let mut best = None::<(usize, f64)>;
    for (i, &yi) in y.iter().enumerate() {
        if i == j {
            continue;
        }
        let v = yi + k[(j, i)];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (i, v) = best.expect("at least two classes");
    (j, i, v)
}

pub(crate) fn log_softmax_row(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    (lse, z.iter().map(|v| (v - lse).exp()).collect())
}

fn cholesky_for_tape(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    cholesky_lower(a)
}

pub(super) fn forward<'a>(op: &Op, val: impl Fn(Var) -> &'a Matrix) -> Result<(Matrix, Aux)> {
    let plain = |m: Matrix| Ok((m, Aux::None));
    match op {
        Op::Leaf | Op::Constant => unreachable!("inputs are not recomputed"),
        Op::MatMul(a, b) => plain(val(*a).matmul(val(*b))?),
        Op::MatMulT(a, b) => plain(val(*a).matmul_t(val(*b))?),
        Op::TMatMul(a, b) => plain(val(*a).t_matmul(val(*b))?),
        Op::Transpose(a) => plain(val(*a).transpose()),
        Op::Add(a, b) => plain(val(*a).add(val(*b))?),
        Op::Sub(a, b) => plain(val(*a).sub(val(*b))?),
        Op::Mul(a, b) => plain(val(*a).hadamard(val(*b))?),
        Op::AddRow(a, r) => {
            let (a, r) = (val(*a), val(*r));
            row_vector_of(r, a.cols(), "add_row")?;
            plain(broadcast_row(a, r, |x, y| x + y))
        }
        Op::MulRow(a, r) => {
            let (a, r) = (val(*a), val(*r));
            row_vector_of(r, a.cols(), "mul_row")?;
            plain(broadcast_row(a, r, |x, y| x * y))
        }
        Op::MulCol(a, c) => {
            let (a, c) = (val(*a), val(*c));
            if c.shape() != (a.rows(), 1) {
                return Err(Error::shape(format!("mul_col: expected {}x1 column", a.rows())));
            }
            let mut out = a.clone();
            for i in 0..a.rows() {
                let s = c.as_slice()[i];
                out.row_mut(i).iter_mut().for_each(|x| *x *= s);
            }
            plain(out)
        }
        Op::ScaleBy(a, s) => {
            let s = scalar_of(val(*s), "scale_by")?;
            plain(val(*a).scale(s))
        }
        Op::Scale(a, s) => plain(val(*a).scale(*s)),
        Op::AddIdentity(a, s) => plain(val(*a).add_identity(*s)?),
        Op::Abs(a) => plain(val(*a).map(f64::abs)),
        Op::Relu(a) => plain(val(*a).map(|x| x.max(0.0))),
        Op::Tanh(a) => plain(val(*a).map(f64::tanh)),
        Op::Exp(a) => plain(val(*a).map(f64::exp)),
        Op::Sqrt(a) => plain(val(*a).map(|x| x.max(0.0).sqrt())),
        Op::PowPositive(a, p) => {
            let p = *p;
            plain(val(*a).map(|x| if x > 0.0 { x.powf(p) } else { 0.0 }))
        }
        Op::Minimum(a, b) => {
            same_shape(val(*a), val(*b), "minimum")?;
            plain(zip(val(*a), val(*b), |x, y| if x <= y { x } else { y }))
        }
        Op::Maximum(a, b) => {
            same_shape(val(*a), val(*b), "maximum")?;
            plain(zip(val(*a), val(*b), |x, y| if x >= y { x } else { y }))
        }
        Op::RowSum(a) => plain(row_sums(val(*a))),
        Op::ColSum(a) => plain(col_sums(val(*a))),
        Op::Sum(a) => plain(Matrix::scalar(val(*a).sum())),
        Op::Detach(a) => plain(val(*a).clone()),
        Op::MinMax(a) => {
            let a = val(*a);
            if a.cols() % 2 != 0 {
                return Err(Error::OddWidth(a.cols()));
            }
            let mut out = a.clone();
            for i in 0..a.rows() {
                for pair in out.row_mut(i).chunks_exact_mut(2) {
                    if pair[0] > pair[1] {
                        pair.swap(0, 1);
                    }
                }
            }
            plain(out)
        }
        Op::Conv2d(x, k, s) => plain(conv2d(val(*x), val(*k), s)?),
        Op::AddChannelBias(x, b, plane) => {
            let (x, b) = (val(*x), val(*b));
            if b.rows() != 1 || b.cols() * plane != x.cols() {
                return Err(Error::shape("channel bias does not match the feature map"));
            }
            let mut out = x.clone();
            for i in 0..x.rows() {
                for (c, chunk) in out.row_mut(i).chunks_exact_mut(*plane).enumerate() {
                    let bc = b.as_slice()[c];
                    chunk.iter_mut().for_each(|v| *v += bc);
                }
            }
            plain(out)
        }
        Op::SpatialMix(x, ws, s) => {
            let weights: Vec<Matrix> = ws.iter().map(|w| val(*w).clone()).collect();
            plain(spatial_mix(val(*x), &weights, s)?)
        }
        Op::Cholesky(a) => plain(cholesky_for_tape(val(*a))?),
        Op::SolveTriangular(l, b) => plain(solve_triangular(val(*l), val(*b))?),
        Op::SolveGeneral(a, b) => {
            let lu = LuFactors::factor(val(*a))?;
            let x = lu.solve(val(*b))?;
            Ok((x, Aux::Lu(Box::new(lu))))
        }
        Op::Slice { a, r0, c0, rows, cols } => {
            let a = val(*a);
            if r0 + rows > a.rows() || c0 + cols > a.cols() {
                return Err(Error::shape("slice out of range"));
            }
            plain(a.block(*r0, *c0, *rows, *cols))
        }
        Op::ConcatRows(a, b) => {
            let (a, b) = (val(*a), val(*b));
            if a.cols() != b.cols() {
                return Err(Error::shape("concat_rows: column counts differ"));
            }
            let mut data = a.as_slice().to_vec();
            data.extend_from_slice(b.as_slice());
            plain(Matrix::from_vec_unchecked(a.rows() + b.rows(), a.cols(), data))
        }
        Op::ConcatCols(a, b) => {
            let (a, b) = (val(*a), val(*b));
            if a.rows() != b.rows() {
                return Err(Error::shape("concat_cols: row counts differ"));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..a.rows() {
                data.extend_from_slice(a.row(i));
                data.extend_from_slice(b.row(i));
            }
            plain(Matrix::from_vec_unchecked(a.rows(), a.cols() + b.cols(), data))
        }
        Op::PairwiseRowDistance(w) => {
            let w = val(*w);
            let n = w.rows();
            plain(Matrix::from_fn(n, n, |i, j| {
                w.row(i).iter().zip(w.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }))
        }
        Op::GloroBottom(y, k) => {
            let (y, k) = (val(*y), val(*k));
            let c = y.cols();
            if c < 2 || k.shape() != (c, c) {
                return Err(Error::shape("⊥ logit needs at least two classes and a CxC bound matrix"));
            }
            let mut out = Vec::with_capacity(y.rows());
            let mut sel = Vec::with_capacity(y.rows());
            for b in 0..y.rows() {
                let (j, i, v) = bottom_for_row(y.row(b), k);
                out.push(v);
                sel.push((j, i));
            }
            Ok((Matrix::column(out), Aux::Selected(sel)))
        }
        Op::CrossEntropy(z, labels) => {
            let z = val(*z);
            if labels.len() != z.rows() || labels.iter().any(|&l| l >= z.cols()) {
                return Err(Error::shape("cross-entropy labels do not match the logits"));
            }
            let total: f64 = (0..z.rows())
                .map(|b| {
                    let (lse, _) = log_softmax_row(z.row(b));
                    lse - z.row(b)[labels[b]]
                })
                .sum();
            plain(Matrix::scalar(total / z.rows().max(1) as f64))
        }
    }
}

/// `Φ`: lower triangle with the diagonal halved.
fn phi(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if i > j {
            m[(i, j)]
        } else if i == j {
            0.5 * m[(i, j)]
        } else {
            0.0
        }
    })
}

fn tril(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| if i >= j { m[(i, j)] } else { 0.0 })
}

/// `L⁻ᵀ·B` by back substitution on the explicit transpose.
fn solve_lower_transposed(l: &Matrix, b: &Matrix) -> Matrix {
    let lt = l.transpose();
    let mut x = b.clone();
    solve_upper_in_place(&lt, &mut x, false);
    x
}

type Contributions = Vec<(Var, Matrix)>;

pub(super) fn backward<'a>(
    op: &Op,
    y: &Matrix,
    aux: &Aux,
    g: &Matrix,
    val: impl Fn(Var) -> &'a Matrix,
) -> Result<Contributions> {
    let one = |v: Var, m: Matrix| Ok(vec![(v, m)]);
    match op {
        Op::Leaf | Op::Constant | Op::Detach(_) => Ok(vec![]),
        Op::MatMul(a, b) => Ok(vec![(*a, g.matmul_t(val(*b))?), (*b, val(*a).t_matmul(g)?)]),
        Op::MatMulT(a, b) => Ok(vec![(*a, g.matmul(val(*b))?), (*b, g.t_matmul(val(*a))?)]),
        Op::TMatMul(a, b) => Ok(vec![(*a, val(*b).matmul_t(g)?), (*b, val(*a).matmul(g)?)]),
        Op::Transpose(a) => one(*a, g.transpose()),
        Op::Add(a, b) => Ok(vec![(*a, g.clone()), (*b, g.clone())]),
        Op::Sub(a, b) => Ok(vec![(*a, g.clone()), (*b, g.scale(-1.0))]),
        Op::Mul(a, b) => Ok(vec![(*a, g.hadamard(val(*b))?), (*b, g.hadamard(val(*a))?)]),
        Op::AddRow(a, r) => Ok(vec![(*a, g.clone()), (*r, col_sums(g))]),
        Op::MulRow(a, r) => {
            let ga = broadcast_row(g, val(*r), |x, y| x * y);
            let gr = col_sums(&g.hadamard(val(*a))?);
            Ok(vec![(*a, ga), (*r, gr)])
        }
        Op::MulCol(a, c) => {
            let cv = val(*c).as_slice();
            let mut ga = g.clone();
            for i in 0..g.rows() {
                ga.row_mut(i).iter_mut().for_each(|x| *x *= cv[i]);
            }
            let gc = row_sums(&g.hadamard(val(*a))?);
            Ok(vec![(*a, ga), (*c, gc)])
        }
        Op::ScaleBy(a, s) => {
            let sv = val(*s).as_slice()[0];
            let gs = Matrix::scalar(g.hadamard(val(*a))?.sum());
            Ok(vec![(*a, g.scale(sv)), (*s, gs)])
        }
        Op::Scale(a, s) => one(*a, g.scale(*s)),
        Op::AddIdentity(a, _) => one(*a, g.clone()),
        Op::Abs(a) => one(*a, zip(g, val(*a), |gi, x| if x > 0.0 { gi } else if x < 0.0 { -gi } else { 0.0 })),
        Op::Relu(a) => one(*a, zip(g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
        Op::Tanh(a) => one(*a, zip(g, y, |gi, t| gi * (1.0 - t * t))),
        Op::Exp(a) => one(*a, zip(g, y, |gi, e| gi * e)),
        Op::Sqrt(a) => one(*a, zip(g, y, |gi, s| if s > 0.0 { 0.5 * gi / s } else { 0.0 })),
        Op::PowPositive(a, p) => {
            let p = *p;
            one(*a, zip(g, val(*a), |gi, x| if x > 0.0 { gi * p * x.powf(p - 1.0) } else { 0.0 }))
        }
        Op::Minimum(a, b) => {
            let take_a = zip(val(*a), val(*b), |x, y| if x <= y { 1.0 } else { 0.0 });
            let ga = g.hadamard(&take_a)?;
            let gb = g.sub(&ga)?;
            Ok(vec![(*a, ga), (*b, gb)])
        }
        Op::Maximum(a, b) => {
            let take_a = zip(val(*a), val(*b), |x, y| if x >= y { 1.0 } else { 0.0 });
            let ga = g.hadamard(&take_a)?;
            let gb = g.sub(&ga)?;
            Ok(vec![(*a, ga), (*b, gb)])
        }
        Op::RowSum(a) => {
            let av = val(*a);
            one(*a, Matrix::from_fn(av.rows(), av.cols(), |i, _| g.as_slice()[i]))
        }
        Op::ColSum(a) => {
            let av = val(*a);
            one(*a, Matrix::from_fn(av.rows(), av.cols(), |_, j| g.as_slice()[j]))
        }
        Op::Sum(a) => {
            let av = val(*a);
            let s = g.as_slice()[0];
            one(*a, Matrix::from_fn(av.rows(), av.cols(), |_, _| s))
        }
        Op::MinMax(a) => {
            let av = val(*a);
            let mut ga = g.clone();
            for i in 0..av.rows() {
                let x = av.row(i);
                let row = ga.row_mut(i);
                for (k, pair) in row.chunks_exact_mut(2).enumerate() {
                    if x[2 * k] > x[2 * k + 1] {
                        pair.swap(0, 1);
                    }
                }
            }
            one(*a, ga)
        }
        Op::Conv2d(x, k, s) => {
            let gx = conv2d_adjoint(g, val(*k), s)?;
            let gk = conv2d_kernel_grad(val(*x), g, s)?;
            Ok(vec![(*x, gx), (*k, gk)])
        }
        Op::AddChannelBias(x, b, plane) => {
            let channels = val(*b).cols();
            let mut gb = vec![0.0; channels];
            for i in 0..g.rows() {
                for (c, chunk) in g.row(i).chunks_exact(*plane).enumerate() {
                    gb[c] += chunk.iter().sum::<f64>();
                }
            }
            Ok(vec![(*x, g.clone()), (*b, Matrix::row_vector(gb))])
        }
        Op::SpatialMix(x, ws, s) => {
            let weights: Vec<Matrix> = ws.iter().map(|w| val(*w).clone()).collect();
            let mut out = vec![(*x, spatial_mix_adjoint(g, &weights, s)?)];
            let gws = spatial_mix_weight_grads(val(*x), g, s)?;
            out.extend(ws.iter().copied().zip(gws));
            Ok(out)
        }
        Op::Cholesky(a) => {
            // Σ̄ = sym(L⁻ᵀ·Φ(Lᵀ·L̄)·L⁻¹)
            let l = y;
            let p = phi(&l.t_matmul(&tril(g))?);
            let x1 = solve_lower_transposed(l, &p);
            let s = solve_lower_transposed(l, &x1.transpose()).transpose();
            let sym = s.add(&s.transpose())?.scale(0.5);
            one(*a, sym)
        }
        Op::SolveTriangular(l, b) => {
            let gb = solve_lower_transposed(val(*l), g);
            let gl = tril(&gb.matmul_t(y)?).scale(-1.0);
            Ok(vec![(*l, gl), (*b, gb)])
        }
        Op::SolveGeneral(a, b) => {
            let gb = match aux {
                Aux::Lu(lu) => lu.solve_transpose(g)?,
                _ => LuFactors::factor(val(*a))?.solve_transpose(g)?,
            };
            let ga = gb.matmul_t(y)?.scale(-1.0);
            Ok(vec![(*a, ga), (*b, gb)])
        }
        Op::Slice { a, r0, c0, rows, cols } => {
            let av = val(*a);
            let mut ga = Matrix::zeros(av.rows(), av.cols());
            for i in 0..*rows {
                ga.row_mut(r0 + i)[*c0..c0 + cols].copy_from_slice(g.row(i));
            }
            one(*a, ga)
        }
        Op::ConcatRows(a, b) => {
            let ra = val(*a).rows();
            let rb = val(*b).rows();
            Ok(vec![(*a, g.block(0, 0, ra, g.cols())), (*b, g.block(ra, 0, rb, g.cols()))])
        }
        Op::ConcatCols(a, b) => {
            let ca = val(*a).cols();
            let cb = val(*b).cols();
            Ok(vec![(*a, g.block(0, 0, g.rows(), ca)), (*b, g.block(0, ca, g.rows(), cb))])
        }
        Op::PairwiseRowDistance(w) => {
            let wv = val(*w);
            let n = wv.rows();
            let mut gw = Matrix::zeros(n, wv.cols());
            for i in 0..n {
                for j in 0..n {
                    let d = y[(i, j)];
                    if i == j || d <= 0.0 {
                        continue;
                    }
                    let c = (g[(i, j)] + g[(j, i)]) / d;
                    if c == 0.0 {
                        continue;
                    }
                    let diff: Vec<f64> = wv.row(i).iter().zip(wv.row(j)).map(|(a, b)| a - b).collect();
                    for (o, dv) in gw.row_mut(i).iter_mut().zip(&diff) {
                        *o += c * dv;
                    }
                }
            }
            one(*w, gw)
        }
        Op::GloroBottom(yv, k) => {
            let Aux::Selected(sel) = aux else { unreachable!("⊥ nodes always record their selection") };
            let (rows, c) = val(*yv).shape();
            let mut gy = Matrix::zeros(rows, c);
            let mut gk = Matrix::zeros(c, c);
            for (b, &(j, i)) in sel.iter().enumerate() {
                let gb = g.as_slice()[b];
                gy[(b, i)] += gb;
                gk[(j, i)] += gb;
            }
            Ok(vec![(*yv, gy), (*k, gk)])
        }
        Op::CrossEntropy(z, labels) => {
            let zv = val(*z);
            let scale = g.as_slice()[0] / zv.rows().max(1) as f64;
            let mut gz = Matrix::zeros(zv.rows(), zv.cols());
            for b in 0..zv.rows() {
                let (_, p) = log_softmax_row(zv.row(b));
                let row = gz.row_mut(b);
                for (o, pi) in row.iter_mut().zip(p) {
                    *o = scale * pi;
                }
                row[labels[b]] -= scale;
            }
            one(*z, gz)
        }
    }
}

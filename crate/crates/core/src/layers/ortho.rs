//! Orthogonalization maps on plain matrices, used for frozen evaluation and
//! benchmarking. The differentiable versions live next to each layer.

use crate::error::{Error, Result};
use crate::numerics::cholesky::cholesky_lower;
use crate::numerics::gemm::syrk_lower;
use crate::numerics::{mat_exp, solve_general, solve_triangular, Matrix};

/// Default coupled Newton–Schulz iteration count for LOT.
pub const LOT_DEFAULT_ITERS: usize = 12;
/// LOT gives up when the orthogonality residual is still above this.
pub const LOT_FAIL_RESIDUAL: f64 = 1e-4;

/// `(V − Vᵀ)/2`.
pub fn skew(v: &Matrix) -> Result<Matrix> {
    if !v.is_square() {
        return Err(Error::NotSquare { rows: v.rows(), cols: v.cols() });
    }
    let n = v.rows();
    Ok(Matrix::from_fn(n, n, |i, j| 0.5 * (v[(i, j)] - v[(j, i)])))
}

/// Cayley transform `(I + V)⁻¹(I − V)` of `V = skew(v_raw)`.
pub fn orthogonalize_cayley(v_raw: &Matrix) -> Result<Matrix> {
    let v = skew(v_raw)?;
    let plus = v.add_identity(1.0)?;
    let minus = v.scale(-1.0).add_identity(1.0)?;
    solve_general(&plus, &minus)
}

/// `exp(skew(v_raw))`.
pub fn orthogonalize_matexp(v_raw: &Matrix) -> Result<Matrix> {
    mat_exp(&skew(v_raw)?)
}

/// `L⁻¹·A` with `L = cholesky(A·Aᵀ)`: the rows of `A` orthonormalized in
/// order, exactly what row-wise Gram–Schmidt produces.
///
/// Wide and square inputs get orthonormal rows. Tall inputs are handled
/// through their transpose and get orthonormal columns.
pub fn orthogonalize_cholesky(a: &Matrix) -> Result<Matrix> {
    if a.rows() > a.cols() {
        return orthogonalize_cholesky(&a.transpose()).map(|w| w.transpose());
    }
    let gram = syrk_lower(a);
    let l = cholesky_lower(&gram).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::RankDeficient,
        other => other,
    })?;
    solve_triangular(&l, a).map_err(|e| match e {
        Error::SingularTriangular { .. } => Error::RankDeficient,
        other => other,
    })
}

/// `(V·Vᵀ)^{-1/2}·V` by coupled Newton–Schulz on the Frobenius-scaled Gram
/// matrix. Tall inputs go through their transpose.
pub fn orthogonalize_lot(v: &Matrix, newton_iters: usize) -> Result<Matrix> {
    if v.rows() > v.cols() {
        return orthogonalize_lot(&v.transpose(), newton_iters).map(|w| w.transpose());
    }
    let a = v.matmul_t(v)?;
    let c = a.frobenius_norm();
    if !(c > 0.0) {
        return Err(Error::RankDeficient);
    }
    let n = a.rows();
    let mut y = a.scale(1.0 / c);
    let mut z = Matrix::identity(n);
    for _ in 0..newton_iters {
        let t = z.matmul(&y)?.scale(-0.5).add_identity(1.5)?;
        y = y.matmul(&t)?;
        z = t.matmul(&z)?;
    }
    let w = z.matmul(v)?.scale(1.0 / c.sqrt());
    let residual = w.orthogonality_residual();
    if !(residual <= LOT_FAIL_RESIDUAL) {
        return Err(Error::NonConvergence { residual });
    }
    Ok(w)
}

/// Square orthogonal `m × m` matrix cropped to its top-left `out × in`
/// block; rows (or columns) of the crop stay orthonormal.
pub fn crop(w: &Matrix, out_dim: usize, in_dim: usize) -> Matrix {
    if w.shape() == (out_dim, in_dim) {
        w.clone()
    } else {
        w.block(0, 0, out_dim, in_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::modified_gram_schmidt_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skew_examples() {
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let s = skew(&v).unwrap();
        assert_eq!(s, Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap());
        let sym = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(skew(&sym).unwrap(), Matrix::zeros(2, 2));
        assert_eq!(skew(&s).unwrap(), s);
    }

    #[test]
    fn cayley_two_by_two() {
        // skew(raw) = [[0,1],[-1,0]]
        let raw = Matrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let w = orthogonalize_cayley(&raw).unwrap();
        let expected = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(w.max_abs_diff(&expected) < 1e-15);
        assert_eq!(orthogonalize_cayley(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn cholesky_examples() {
        let w = orthogonalize_cholesky(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert!(w.max_abs_diff(&Matrix::identity(2)) < 1e-15);
        let t: f64 = 0.3;
        let r = Matrix::from_rows(&[vec![t.cos(), -t.sin()], vec![t.sin(), t.cos()]]).unwrap();
        assert!(orthogonalize_cholesky(&r).unwrap().max_abs_diff(&r) < 1e-14);
    }

    #[test]
    fn cholesky_matches_gram_schmidt() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Matrix::random_uniform(16, 16, 1.0, &mut rng).add_identity(2.0).unwrap();
        let w = orthogonalize_cholesky(&a).unwrap();
        assert!(w.max_abs_diff(&modified_gram_schmidt_rows(&a)) < 1e-10);
    }

    #[test]
    fn rectangular_cholesky_is_semi_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (r, c) in [(3, 7), (7, 3)] {
            let a = Matrix::random_uniform(r, c, 1.0, &mut rng);
            assert!(orthogonalize_cholesky(&a).unwrap().orthogonality_residual() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        // One jittered retry makes the Gram matrix factorizable, but the
        // result is then far from orthogonal or the solve hits a tiny pivot.
        match orthogonalize_cholesky(&a) {
            Err(Error::RankDeficient) => {}
            Ok(w) => assert!(w.orthogonality_residual() > 1e-3),
            Err(e) => panic!("unexpected error {e}"),
        }
        assert!(matches!(orthogonalize_cholesky(&Matrix::zeros(2, 2)), Err(Error::RankDeficient)));
    }

    #[test]
    fn lot_examples() {
        let w = orthogonalize_lot(&Matrix::diag(&[2.0, 0.5]), LOT_DEFAULT_ITERS).unwrap();
        assert!(w.max_abs_diff(&Matrix::identity(2)) < 1e-9, "{w:?}");
        let t: f64 = 1.1;
        let r = Matrix::from_rows(&[vec![t.cos(), -t.sin()], vec![t.sin(), t.cos()]]).unwrap();
        assert!(orthogonalize_lot(&r, LOT_DEFAULT_ITERS).unwrap().max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn lot_gives_up_on_near_singular_input() {
        let v = Matrix::diag(&[1.0, 1e-9]);
        assert!(matches!(orthogonalize_lot(&v, 3), Err(Error::NonConvergence { .. })));
    }
}

//! Slow reference computations used to check the fast paths.
//!
//! These deliberately take a different route from the production code:
//! the spectral norm iterates on an explicitly formed `AᵀA` from several
//! seeded restarts, and orthonormalization is textbook modified
//! Gram–Schmidt.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{dot, norm2};
use super::power::random_unit;
use super::Matrix;

pub const ORACLE_RESTARTS: usize = 10;
pub const ORACLE_ITERS: usize = 10_000;

/// Spectral norm via power iteration on `AᵀA`: 10 seeded restarts of 10 000
/// iterations each, maximum taken. Accurate to about `1e-9` relative when
/// the top two singular values are separated by at least `1e-3`.
pub fn spectral_norm_oracle(a: &Matrix) -> f64 {
    spectral_norm_oracle_with(a, ORACLE_RESTARTS, ORACLE_ITERS)
}

pub fn spectral_norm_oracle_with(a: &Matrix, restarts: usize, iters: usize) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.t_matmul(a).expect("gram shape");
    let n = gram.rows();
    let mut best: f64 = 0.0;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0A11_CE00 + r as u64);
        let mut x = random_unit(n, &mut rng);
        let mut lambda = 0.0;
        for _ in 0..iters {
            let y = gram.matvec(&x);
            let ny = norm2(&y);
            if ny == 0.0 {
                lambda = 0.0;
                break;
            }
            x = y.into_iter().map(|v| v / ny).collect();
            lambda = dot(&x, &gram.matvec(&x));
        }
        best = best.max(lambda.max(0.0).sqrt());
    }
    best
}

/// Row-wise modified Gram–Schmidt: returns `W` with orthonormal rows such
/// that `A = L·W` for some lower-triangular `L` with positive diagonal.
pub fn modified_gram_schmidt_rows(a: &Matrix) -> Matrix {
    let mut w = a.clone();
    let n = w.rows();
    for i in 0..n {
        for j in 0..i {
            let (done, rest) = w.as_mut_slice().split_at_mut(i * a.cols());
            let qj = &done[j * a.cols()..(j + 1) * a.cols()];
            let row = &mut rest[..a.cols()];
            let r = dot(qj, row);
            for (x, q) in row.iter_mut().zip(qj) {
                *x -= r * q;
            }
        }
        let row = w.row_mut(i);
        let nr = norm2(row);
        row.iter_mut().for_each(|x| *x /= nr);
    }
    w
}

/// Materializes a linear operator as a dense matrix by applying it to the
/// standard basis.
pub fn materialize(apply: impl Fn(&[f64]) -> Vec<f64>, in_dim: usize) -> Matrix {
    let mut cols = Vec::with_capacity(in_dim);
    let mut e = vec![0.0; in_dim];
    for j in 0..in_dim {
        e[j] = 1.0;
        cols.push(apply(&e));
        e[j] = 0.0;
    }
    let out_dim = cols.first().map_or(0, Vec::len);
    Matrix::from_fn(out_dim, in_dim, |i, j| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_nilpotent() {
        assert!((spectral_norm_oracle(&Matrix::identity(5)) - 1.0).abs() < 1e-12);
        let n = Matrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert!((spectral_norm_oracle(&n) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_unit_norm() {
        let t: f64 = 0.7;
        let r = Matrix::from_rows(&[vec![t.cos(), -t.sin()], vec![t.sin(), t.cos()]]).unwrap();
        assert!((spectral_norm_oracle(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mgs_rows_are_orthonormal() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert!(modified_gram_schmidt_rows(&a).orthogonality_residual() < 1e-14);
    }
}

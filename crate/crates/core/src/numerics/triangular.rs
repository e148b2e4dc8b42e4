use super::gemm::gemm_raw;
use super::matrix::axpy;
use super::Matrix;
use crate::error::{Error, Result};

const NB: usize = 64;

/// Solves `L·X = B` for lower-triangular `L`. Only the lower triangle of `l`
/// is read.
pub fn solve_triangular(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !l.is_square() {
        return Err(Error::NotSquare { rows: l.rows(), cols: l.cols() });
    }
    if b.rows() != l.rows() {
        return Err(Error::shape(format!(
            "triangular solve: L is {}x{}, B has {} rows",
            l.rows(),
            l.cols(),
            b.rows()
        )));
    }
    check_diagonal(l)?;
    let mut x = b.clone();
    solve_lower_in_place(l, &mut x, false);
    Ok(x)
}

/// Solves `U·X = B` for upper-triangular `U`. Only the upper triangle is read.
pub fn solve_upper_triangular(u: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !u.is_square() {
        return Err(Error::NotSquare { rows: u.rows(), cols: u.cols() });
    }
    if b.rows() != u.rows() {
        return Err(Error::shape("triangular solve: row count of B"));
    }
    check_diagonal(u)?;
    let mut x = b.clone();
    solve_upper_in_place(u, &mut x, false);
    Ok(x)
}

fn check_diagonal(t: &Matrix) -> Result<()> {
    let tol = 1e-14 * t.frobenius_norm();
    for i in 0..t.rows() {
        let d = t[(i, i)];
        if !(d.abs() > tol) {
            return Err(Error::SingularTriangular { index: i });
        }
    }
    Ok(())
}

/// Blocked forward substitution; `x` holds `B` on entry and `X` on exit.
pub(crate) fn solve_lower_in_place(l: &Matrix, x: &mut Matrix, unit: bool) {
    let n = l.rows();
    let m = x.cols();
    let lp = l.as_slice().as_ptr();
    let mut k0 = 0;
    while k0 < n {
        let kb = NB.min(n - k0);
        if k0 > 0 {
            let xp = x.as_mut_slice().as_mut_ptr();
            // SAFETY: reads rows 0..k0 of `x`, writes rows k0..k0+kb; the
            // regions are disjoint. `l` is a separate buffer.
            unsafe {
                gemm_raw(kb, k0, m, -1.0, lp.add(k0 * n), n, 1, xp, m, 1, 1.0, xp.add(k0 * m), m, 1);
            }
        }
        for i in k0..k0 + kb {
            let (done, rest) = x.as_mut_slice().split_at_mut(i * m);
            let row_i = &mut rest[..m];
            for p in k0..i {
                let lip = l[(i, p)];
                if lip != 0.0 {
                    axpy(-lip, &done[p * m..(p + 1) * m], row_i);
                }
            }
            if !unit {
                let inv = 1.0 / l[(i, i)];
                row_i.iter_mut().for_each(|v| *v *= inv);
            }
        }
        k0 += kb;
    }
}

/// Blocked back substitution with an upper-triangular matrix.
pub(crate) fn solve_upper_in_place(u: &Matrix, x: &mut Matrix, unit: bool) {
    let n = u.rows();
    let m = x.cols();
    let up = u.as_slice().as_ptr();
    let mut k1 = n;
    while k1 > 0 {
        let kb = NB.min(k1);
        let k0 = k1 - kb;
        if k1 < n {
            let xp = x.as_mut_slice().as_mut_ptr();
            // SAFETY: reads rows k1..n of `x`, writes rows k0..k1.
            unsafe {
                gemm_raw(kb, n - k1, m, -1.0, up.add(k0 * n + k1), n, 1, xp.add(k1 * m), m, 1, 1.0, xp.add(k0 * m), m, 1);
            }
        }
        for i in (k0..k1).rev() {
            let (head, tail) = x.as_mut_slice().split_at_mut((i + 1) * m);
            let row_i = &mut head[i * m..];
            for p in i + 1..k1 {
                let uip = u[(i, p)];
                if uip != 0.0 {
                    axpy(-uip, &tail[(p - i - 1) * m..(p - i) * m], row_i);
                }
            }
            if !unit {
                let inv = 1.0 / u[(i, i)];
                row_i.iter_mut().for_each(|v| *v *= inv);
            }
        }
        k1 = k0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let b = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.5, 4.0], vec![0.0, 7.0]]).unwrap();
        let x = solve_triangular(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two_substitution() {
        let l = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let b = Matrix::column(vec![2.0, 2.0]);
        let x = solve_triangular(&l, &b).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_pivot_is_singular() {
        let l = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let err = solve_triangular(&l, &Matrix::column(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::SingularTriangular { index: 0 }));
    }

    #[test]
    fn blocked_upper_matches_residual() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 150;
        let mut u = Matrix::random_uniform(n, n, 1.0, &mut rng);
        for i in 0..n {
            for j in 0..i {
                u[(i, j)] = 0.0;
            }
            u[(i, i)] += 4.0 * (n as f64).sqrt();
        }
        let b = Matrix::random_uniform(n, 70, 1.0, &mut rng);
        let x = solve_upper_triangular(&u, &b).unwrap();
        let r = u.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
        assert!(r <= 1e-10 * b.frobenius_norm(), "residual {r}");
    }
}

use super::gemm::gemm_raw;
use super::matrix::axpy;
use super::triangular::{solve_lower_in_place, solve_upper_in_place};
use super::Matrix;
use crate::error::{Error, Result};

const NB: usize = 64;

/// `P·A = L·U` with unit-lower `L` and upper `U` packed in one matrix.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: Matrix,
    /// `perm[i]` is the row of `A` that ended up in row `i`.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Partial-pivot factorization. Fails with `SingularMatrix` when a pivot
    /// magnitude drops below `1e-12·‖A‖_F`.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        let n = a.rows();
        let tol = 1e-12 * a.frobenius_norm();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut k0 = 0;
        while k0 < n {
            let kb = NB.min(n - k0);
            let k1 = k0 + kb;
            let data = lu.as_mut_slice();
            for j in k0..k1 {
                let mut p = j;
                let mut best = data[j * n + j].abs();
                for i in j + 1..n {
                    let v = data[i * n + j].abs();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                if !(best >= tol) || best == 0.0 {
                    return Err(Error::SingularMatrix { index: j });
                }
                if p != j {
                    for c in 0..n {
                        data.swap(j * n + c, p * n + c);
                    }
                    perm.swap(j, p);
                }
                let inv = 1.0 / data[j * n + j];
                for i in j + 1..n {
                    data[i * n + j] *= inv;
                    let lij = data[i * n + j];
                    if lij != 0.0 {
                        for c in j + 1..k1 {
                            data[i * n + c] -= lij * data[j * n + c];
                        }
                    }
                }
            }
            if k1 < n {
                // U12 ← L11⁻¹ A12
                for i in k0..k1 {
                    for p in k0..i {
                        let l = data[i * n + p];
                        if l != 0.0 {
                            let (head, tail) = data.split_at_mut(i * n);
                            axpy(-l, &head[p * n + k1..p * n + n], &mut tail[k1..n]);
                        }
                    }
                }
                let ptr = data.as_mut_ptr();
                // SAFETY: reads the L21 block (rows k1.., cols k0..k1) and the
                // U12 block (rows k0..k1, cols k1..), writes A22 (rows k1..,
                // cols k1..); the three blocks are pairwise disjoint.
                unsafe {
                    gemm_raw(
                        n - k1,
                        kb,
                        n - k1,
                        -1.0,
                        ptr.add(k1 * n + k0),
                        n,
                        1,
                        ptr.add(k0 * n + k1),
                        n,
                        1,
                        1.0,
                        ptr.add(k1 * n + k1),
                        n,
                        1,
                    );
                }
            }
            k0 = k1;
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A·X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::shape(format!("LU solve: A is {n}x{n}, B has {} rows", b.rows())));
        }
        let m = b.cols();
        let mut x = Matrix::zeros(n, m);
        for (i, &src) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(b.row(src));
        }
        solve_lower_in_place(&self.lu, &mut x, true);
        solve_upper_in_place(&self.lu, &mut x, false);
        Ok(x)
    }

    /// Solves `Aᵀ·X = B` with the same factors: `Aᵀ = Uᵀ·Lᵀ·P`.
    pub fn solve_transpose(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::shape(format!("LU solve: A is {n}x{n}, B has {} rows", b.rows())));
        }
        let lut = self.lu.transpose();
        let mut w = b.clone();
        solve_lower_in_place(&lut, &mut w, false);
        solve_upper_in_place(&lut, &mut w, true);
        let mut x = Matrix::zeros(n, b.cols());
        for (i, &dst) in self.perm.iter().enumerate() {
            x.row_mut(dst).copy_from_slice(w.row(i));
        }
        Ok(x)
    }
}

/// Solves `A·X = B` by partial-pivot LU.
pub fn solve_general(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    LuFactors::factor(a)?.solve(b)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    solve_general(a, &Matrix::identity(a.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_system() {
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(solve_general(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn diagonal_inverse() {
        let a = Matrix::diag(&[2.0, 4.0]);
        let x = solve_general(&a, &Matrix::identity(2)).unwrap();
        assert_eq!(x, Matrix::diag(&[0.5, 0.25]));
    }

    #[test]
    fn rank_one_is_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(solve_general(&a, &Matrix::identity(2)), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn pivoting_is_required_and_handled() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = Matrix::column(vec![3.0, 5.0]);
        assert_eq!(solve_general(&a, &b).unwrap().as_slice(), &[5.0, 3.0]);
    }

    #[test]
    fn blocked_residual_on_random_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in [5, 64, 65, 200] {
            let a = Matrix::random_uniform(n, n, 1.0, &mut rng);
            let b = Matrix::random_uniform(n, 7, 1.0, &mut rng);
            let x = solve_general(&a, &b).unwrap();
            let r = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
            assert!(r <= 1e-9 * b.frobenius_norm(), "n={n} residual {r}");
            let xt = LuFactors::factor(&a).unwrap().solve_transpose(&b).unwrap();
            let rt = a.t_matmul(&xt).unwrap().sub(&b).unwrap().frobenius_norm();
            assert!(rt <= 1e-9 * b.frobenius_norm(), "n={n} transposed residual {rt}");
        }
    }
}

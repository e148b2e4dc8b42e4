use super::gemm::gemm_raw;
use super::Matrix;
use crate::error::{Error, Result};

const NB: usize = 64;

/// Relative diagonal jitter applied once before giving up on a factorization.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = sigma`.
///
/// `sigma` must be symmetric to within `1e-10` relative to its Frobenius
/// norm. A failed factorization is retried once with `1e-10·trace/n` added
/// to the diagonal.
pub fn cholesky(sigma: &Matrix) -> Result<Matrix> {
    if !sigma.is_square() {
        return Err(Error::NotSquare { rows: sigma.rows(), cols: sigma.cols() });
    }
    let n = sigma.rows();
    let scale = sigma.frobenius_norm();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((sigma[(i, j)] - sigma[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    cholesky_lower(sigma)
}

/// Cholesky factorization reading only the lower triangle of `sigma`.
pub(crate) fn cholesky_lower(sigma: &Matrix) -> Result<Matrix> {
    let n = sigma.rows();
    let mut work = sigma.clone();
    match factor_in_place(&mut work) {
        Ok(()) => Ok(work),
        Err(_) => {
            let jitter = CHOLESKY_JITTER * sigma.trace().abs() / n.max(1) as f64;
            let mut work = sigma.clone();
            for i in 0..n {
                work[(i, i)] += jitter;
            }
            factor_in_place(&mut work).map(|()| work)
        }
    }
}

/// Left-looking blocked factorization. On success the lower triangle holds
/// `L` and the strict upper triangle is zeroed.
fn factor_in_place(a: &mut Matrix) -> Result<()> {
    let n = a.rows();
    let mut k0 = 0;
    while k0 < n {
        let kb = NB.min(n - k0);
        if k0 > 0 {
            let p = a.as_mut_slice().as_mut_ptr();
            // SAFETY: reads columns 0..k0 of rows k0..n, writes columns
            // k0..k0+kb of the same rows; the column ranges are disjoint.
            unsafe {
                gemm_raw(
                    n - k0,
                    k0,
                    kb,
                    -1.0,
                    p.add(k0 * n),
                    n,
                    1,
                    p.add(k0 * n),
                    1,
                    n,
                    1.0,
                    p.add(k0 * n + k0),
                    n,
                    1,
                );
            }
        }
        let data = a.as_mut_slice();
        for j in k0..k0 + kb {
            let mut d = data[j * n + j];
            for p in k0..j {
                d -= data[j * n + p] * data[j * n + p];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            data[j * n + j] = ljj;
            for i in j + 1..k0 + kb {
                let mut s = data[i * n + j];
                for p in k0..j {
                    s -= data[i * n + p] * data[j * n + p];
                }
                data[i * n + j] = s / ljj;
            }
        }
        // Panel below the diagonal block: X · L_kkᵀ = A.
        for i in k0 + kb..n {
            for j in k0..k0 + kb {
                let mut s = data[i * n + j];
                for p in k0..j {
                    s -= data[i * n + p] * data[j * n + p];
                }
                data[i * n + j] = s / data[j * n + j];
            }
        }
        k0 += kb;
    }
    let data = a.as_mut_slice();
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = 0.0;
        }
    }
    Ok(())
}

//! Thin wrappers over `matrixmultiply::dgemm`.
//!
//! The blocked factorizations update one region of a buffer from other
//! regions of the same buffer, so the raw entry point takes pointers; callers
//! guarantee the written block is disjoint from the blocks that are read.

use super::Matrix;

/// `C ← α·op(A)·op(B) + β·C` on strided row-major blocks.
///
/// # Safety
///
/// All pointers must be valid for the extents implied by the dimensions and
/// strides, and the `c` block must not overlap the `a` or `b` blocks.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) unsafe fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    rsa: usize,
    csa: usize,
    b: *const f64,
    rsb: usize,
    csb: usize,
    beta: f64,
    c: *mut f64,
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    matrixmultiply::dgemm(
        m,
        k,
        n,
        alpha,
        a,
        rsa as isize,
        csa as isize,
        b,
        rsb as isize,
        csb as isize,
        beta,
        c,
        rsc as isize,
        csc as isize,
    );
}

/// `op(A)·op(B)` where `op` optionally transposes.
pub(crate) fn matmul(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let (k2, n) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
    assert_eq!(k, k2, "inner dimensions");
    let mut out = Matrix::zeros(m, n);
    gemm_into(1.0, a, ta, b, tb, 0.0, &mut out);
    out
}

/// `C ← α·op(A)·op(B) + β·C`.
pub(crate) fn gemm_into(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let n = if tb { b.rows() } else { b.cols() };
    assert_eq!(c.shape(), (m, n), "gemm output shape");
    let (rsa, csa) = if ta { (1, a.cols()) } else { (a.cols(), 1) };
    let (rsb, csb) = if tb { (1, b.cols()) } else { (b.cols(), 1) };
    let ldc = c.cols();
    // SAFETY: `c` is exclusively borrowed, so it cannot overlap `a` or `b`;
    // extents follow from the asserted shapes.
    unsafe {
        gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_slice().as_ptr(),
            rsa,
            csa,
            b.as_slice().as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_slice().as_mut_ptr(),
            ldc,
            1,
        );
    }
}

/// Lower triangle of `A·Aᵀ` (upper triangle left at zero), computed block by
/// block so only about half the products of a full multiply are formed.
pub(crate) fn syrk_lower(a: &Matrix) -> Matrix {
    const NB: usize = 128;
    let n = a.rows();
    let k = a.cols();
    let mut c = Matrix::zeros(n, n);
    let ap = a.as_slice().as_ptr();
    let cp = c.as_mut_slice().as_mut_ptr();
    let mut i0 = 0;
    while i0 < n {
        let ib = NB.min(n - i0);
        let mut j0 = 0;
        while j0 <= i0 {
            let jb = NB.min(n - j0);
            // SAFETY: reads rows of `a`, writes the (i0, j0) block of the
            // separate buffer `c`; offsets stay inside both buffers.
            unsafe {
                gemm_raw(
                    ib,
                    k,
                    jb,
                    1.0,
                    ap.add(i0 * k),
                    k,
                    1,
                    ap.add(j0 * k),
                    1,
                    k,
                    0.0,
                    cp.add(i0 * n + j0),
                    n,
                    1,
                );
            }
            j0 += NB;
        }
        i0 += NB;
    }
    for i in 0..n {
        for j in i + 1..n {
            c[(i, j)] = 0.0;
        }
    }
    c
}

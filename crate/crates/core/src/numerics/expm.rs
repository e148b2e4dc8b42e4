use super::Matrix;
use crate::error::{Error, Result};

/// Taylor terms kept after scaling.
pub const EXPM_ORDER: usize = 18;
/// Frobenius norm the scaled argument is brought under.
pub const EXPM_SCALE_THRESHOLD: f64 = 0.5;

/// Number of squarings so that `‖V‖_F / 2^s ≤ 0.5`.
pub fn expm_squarings(frobenius_norm: f64) -> u32 {
    if frobenius_norm <= EXPM_SCALE_THRESHOLD {
        0
    } else {
        (frobenius_norm / EXPM_SCALE_THRESHOLD).log2().ceil().max(0.0) as u32
    }
}

/// Matrix exponential by scaling and squaring with a degree-18 Taylor
/// polynomial evaluated in Horner form.
pub fn mat_exp(v: &Matrix) -> Result<Matrix> {
    if !v.is_square() {
        return Err(Error::NotSquare { rows: v.rows(), cols: v.cols() });
    }
    let n = v.rows();
    let s = expm_squarings(v.frobenius_norm());
    let x = v.scale(0.5f64.powi(s as i32));
    let mut p = Matrix::identity(n);
    for k in (1..=EXPM_ORDER).rev() {
        p = x.matmul(&p)?.scale(1.0 / k as f64).add_identity(1.0)?;
    }
    for _ in 0..s {
        p = p.matmul(&p)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exp_of_zero_is_identity_exactly() {
        assert_eq!(mat_exp(&Matrix::zeros(5, 5)).unwrap(), Matrix::identity(5));
    }

    #[test]
    fn planar_rotation() {
        let t = FRAC_PI_2;
        let v = Matrix::from_rows(&[vec![0.0, -t], vec![t, 0.0]]).unwrap();
        let w = mat_exp(&v).unwrap();
        let expected = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(w.max_abs_diff(&expected) < 1e-10, "{w:?}");
    }

    #[test]
    fn squarings_count() {
        assert_eq!(expm_squarings(0.0), 0);
        assert_eq!(expm_squarings(0.5), 0);
        assert_eq!(expm_squarings(0.51), 1);
        assert_eq!(expm_squarings(4.0), 3);
    }
}

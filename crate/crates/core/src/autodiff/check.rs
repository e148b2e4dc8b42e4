use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Analytic gradients plus their worst disagreement with central
/// differences.
#[derive(Clone, Debug)]
pub struct GradientReport {
    pub gradients: Vec<Matrix>,
    pub max_rel_error: f64,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `build` records the function on a fresh tape given one leaf per entry of
/// `params` and returns the 1×1 output. Perturbed values are obtained by
/// replaying that tape. The per-coordinate error is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`; coordinates
/// where both are below `1e-10` are skipped.
pub fn finite_diff_check<F>(build: F, params: &[Matrix], h: f64) -> Result<GradientReport>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &leaves)?;
    if tape.value(out).shape() != (1, 1) {
        return Err(Error::shape("finite-difference check needs a scalar output"));
    }
    let grads = tape.grad(out)?;
    let gradients: Vec<Matrix> = leaves.iter().map(|&v| grads.wrt(v)).collect();

    let mut worst: f64 = 0.0;
    let eval_at = |tape: &mut Tape, which: usize, m: Matrix| -> Result<f64> {
        tape.evaluate(&[(leaves[which], m)])?;
        Ok(tape.scalar(out))
    };
    for (which, p) in params.iter().enumerate() {
        for idx in 0..p.len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[idx] -= h;
            let fp = eval_at(&mut tape, which, plus)?;
            let fm = eval_at(&mut tape, which, minus)?;
            tape.evaluate(&[(leaves[which], p.clone())])?;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = gradients[which].as_slice()[idx];
            if analytic.abs() < 1e-10 && numeric.abs() < 1e-10 {
                continue;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(GradientReport { gradients, max_rel_error: worst })
}

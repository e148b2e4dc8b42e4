use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Binding, Layer};
use crate::autodiff::finite_diff_check;
use crate::numerics::matrix::norm2;
use crate::numerics::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest `‖f(x) − f(x′)‖ / ‖x − x′‖` over `pairs` random pairs. Half the
/// pairs are far apart, half are small perturbations.
pub fn max_displacement_ratio<L: Layer + ?Sized, R: Rng + ?Sized>(layer: &L, pairs: usize, rng: &mut R) -> f64 {
    let n = layer.in_dim();
    let x = Matrix::random_uniform(pairs, n, 1.0, rng);
    let mut xp = x.clone();
    for i in 0..pairs {
        let scale = if i % 2 == 0 { 1.0 } else { 1e-3 };
        for v in xp.row_mut(i) {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
    let y = layer.forward(&x).unwrap();
    let yp = layer.forward(&xp).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let dx: Vec<f64> = x.row(i).iter().zip(xp.row(i)).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = y.row(i).iter().zip(yp.row(i)).map(|(a, b)| a - b).collect();
        worst = worst.max(norm2(&dy) / norm2(&dx));
    }
    worst
}

/// Finite-difference error of `sum(out ∘ R) + c·bound` with respect to the
/// input batch and every raw parameter.
pub fn layer_gradient_error<L: Layer + ?Sized, R: Rng + ?Sized>(layer: &L, batch: usize, rng: &mut R) -> f64 {
    let x = Matrix::random_uniform(batch, layer.in_dim(), 1.0, rng);
    let weights = Matrix::random_uniform(batch, layer.out_dim(), 1.0, rng);
    let c: f64 = rng.random_range(0.5..1.5);
    let mut params = vec![x];
    params.extend(layer.params().into_iter().cloned());
    let report = finite_diff_check(
        |tape, vars| {
            let rec = layer.record(tape, vars[0], Binding::Params(&vars[1..]))?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(rec.out, w)?;
            let mut total = tape.sum(prod)?;
            if let Some(b) = rec.bound {
                let b = tape.scale(b, c)?;
                total = tape.add(total, b)?;
            }
            Ok(total)
        },
        &params,
        1e-5,
    )
    .unwrap();
    report.max_rel_error
}

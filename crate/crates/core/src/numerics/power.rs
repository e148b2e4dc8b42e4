use rand::Rng;

use super::matrix::{dot, norm2};
use super::Matrix;

/// Relative tolerance used when bounds must be converged (certification).
pub const CERT_TOL: f64 = 1e-6;
/// Iteration cap for converged dense-layer bounds.
pub const CERT_MAX_ITERS: usize = 100;
/// Iteration cap for converged convolution bounds.
pub const CONV_CERT_MAX_ITERS: usize = 500;

/// Running estimate of an operator's largest singular value.
///
/// `u` lives in the output space and `v` in the input space; after an
/// iteration `sigma = uᵀ·A·v`. The state persists between calls so that a
/// single iteration per training step keeps refining the estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl SpectralEstimate {
    /// Fresh state with random unit vectors.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            sigma: 0.0,
            u: random_unit(out_dim, rng),
            v: random_unit(in_dim, rng),
            iterations_run: 0,
            converged: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.v.len()
    }

    pub fn out_dim(&self) -> usize {
        self.u.len()
    }
}

pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nv = norm2(&v);
        if nv > 0.0 || n == 0 {
            return v.into_iter().map(|x| x / nv.max(f64::MIN_POSITIVE)).collect();
        }
    }
}

fn normalize(mut x: Vec<f64>) -> Option<(Vec<f64>, f64)> {
    let n = norm2(&x);
    if n > 0.0 && n.is_finite() {
        x.iter_mut().for_each(|v| *v /= n);
        Some((x, n))
    } else {
        None
    }
}

/// Advances `state` by up to `max_iters` power iterations on the operator
/// given by `apply` (input → output) and its adjoint `apply_transpose`.
///
/// Each iteration sets `v ← Aᵀu/‖Aᵀu‖`, then `u ← Av/‖Av‖` with
/// `sigma = ‖Av‖`, so the estimate never exceeds the true norm. Stops early
/// once `|σ_t − σ_{t−1}| ≤ tol·σ_t`. A zero operator yields `sigma = 0`.
pub fn power_iteration<F, G>(
    apply: F,
    apply_transpose: G,
    state: &mut SpectralEstimate,
    max_iters: usize,
    tol: f64,
) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut prev = (state.iterations_run > 0).then_some(state.sigma);
    for _ in 0..max_iters {
        state.iterations_run += 1;
        match normalize(apply_transpose(&state.u)) {
            Some((v, _)) => state.v = v,
            None => {
                // `u` is orthogonal to the range of A; restart it from A·v.
                match normalize(apply(&state.v)) {
                    Some((u, _)) => {
                        state.u = u;
                        continue;
                    }
                    None => {
                        state.sigma = 0.0;
                        state.converged = true;
                        break;
                    }
                }
            }
        }
        match normalize(apply(&state.v)) {
            Some((u, s)) => {
                state.u = u;
                state.sigma = s;
            }
            None => {
                state.sigma = 0.0;
                state.converged = true;
                break;
            }
        }
        let s = state.sigma;
        state.converged = prev.is_some_and(|p| (s - p).abs() <= tol * s);
        if state.converged {
            break;
        }
        prev = Some(s);
    }
    state.sigma
}

/// Runs to convergence from a warm state. The first iteration only adapts
/// the state to the current operator, so convergence is judged on later
/// iterations alone.
pub fn converge<F, G>(apply: F, apply_transpose: G, state: &mut SpectralEstimate, max_iters: usize, tol: f64) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if max_iters == 0 {
        return state.sigma;
    }
    power_iteration(&apply, &apply_transpose, state, 1, tol);
    if state.sigma == 0.0 && state.converged {
        return 0.0;
    }
    state.converged = false;
    power_iteration(apply, apply_transpose, state, max_iters - 1, tol)
}

/// Power iteration on an explicit matrix.
pub fn matrix_power_iteration(a: &Matrix, state: &mut SpectralEstimate, max_iters: usize, tol: f64) -> f64 {
    power_iteration(|x| a.matvec(x), |y| a.t_matvec(y), state, max_iters, tol)
}

/// `uᵀ·A·v` for an explicit matrix; the quantity a regularized layer
/// exposes to the loss.
pub fn rayleigh(a: &Matrix, u: &[f64], v: &[f64]) -> f64 {
    dot(u, &a.matvec(v))
}

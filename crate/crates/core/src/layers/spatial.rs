use rand::Rng;

use super::dense::{record_dense_bound, refresh_estimate};
use super::{check_width, init_bound, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SpatialShape, SpectralEstimate};

/// Residual spatial mixing `x_c ↦ (I + W_k) x_c + b_c`, with channel `c`
/// using the weight of its group `k`. The bound is `max_k ‖I + W_k‖₂`.
#[derive(Clone, Debug)]
pub struct SpatialMlp {
    shape: SpatialShape,
    pub weights: Vec<Matrix>,
    pub bias: Matrix,
    pub estimates: Vec<SpectralEstimate>,
}

impl SpatialMlp {
    pub fn new<R: Rng + ?Sized>(channels: usize, side: usize, groups: usize, rng: &mut R) -> Result<Self> {
        let shape = SpatialShape::new(channels, side, groups)?;
        let p = shape.positions();
        let weights = (0..groups).map(|_| Matrix::random_uniform(p, p, 0.5 * init_bound(p), rng)).collect();
        Self::from_weights(shape, weights, rng)
    }

    pub fn from_weights<R: Rng + ?Sized>(shape: SpatialShape, weights: Vec<Matrix>, rng: &mut R) -> Result<Self> {
        let p = shape.positions();
        if weights.len() != shape.groups || weights.iter().any(|w| w.shape() != (p, p)) {
            return Err(Error::shape(format!("spatial MLP needs {} weights of {p}x{p}", shape.groups)));
        }
        let estimates = (0..shape.groups).map(|_| SpectralEstimate::new(p, p, rng)).collect();
        Ok(Self { shape, weights, bias: Matrix::zeros(1, shape.channels), estimates })
    }

    pub fn shape(&self) -> SpatialShape {
        self.shape
    }
}

impl Layer for SpatialMlp {
    fn spec(&self) -> LayerSpec {
        LayerSpec::SpatialMlp { channels: self.shape.channels, side: self.shape.side, groups: self.shape.groups }
    }

    fn in_dim(&self) -> usize {
        self.shape.len()
    }

    fn out_dim(&self) -> usize {
        self.shape.len()
    }

    fn params(&self) -> Vec<&Matrix> {
        self.weights.iter().chain(std::iter::once(&self.bias)).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.estimates.iter_mut().for_each(|e| e.converged = false);
        self.weights.iter_mut().chain(std::iter::once(&mut self.bias)).collect()
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        for (w, est) in self.weights.iter().zip(&mut self.estimates) {
            refresh_estimate(w, est, mode, true);
        }
        Ok(())
    }

    fn lip_bound(&self) -> f64 {
        self.estimates.iter().map(|e| e.sigma).fold(0.0, f64::max)
    }

    fn bound_converged(&self) -> bool {
        self.estimates.iter().all(|e| e.converged)
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "spatial_mlp")?;
        let g = self.shape.groups;
        let (ws, b, bound) = match binding {
            Binding::Params(p) if p.len() == g + 1 => {
                let mut bound: Option<Var> = None;
                for (&w, est) in p[..g].iter().zip(&self.estimates) {
                    let s = record_dense_bound(tape, w, est, true)?;
                    bound = Some(match bound {
                        Some(prev) => tape.maximum(prev, s)?,
                        None => s,
                    });
                }
                (p[..g].to_vec(), p[g], bound.expect("at least one group"))
            }
            Binding::Params(p) => {
                return Err(Error::shape(format!("spatial_mlp takes {} parameters, got {}", g + 1, p.len())))
            }
            Binding::Frozen => (
                self.weights.iter().map(|w| tape.constant(w.clone())).collect(),
                tape.constant(self.bias.clone()),
                tape.constant(Matrix::scalar(self.lip_bound())),
            ),
        };
        let mixed = tape.spatial_mix(x, &ws, self.shape)?;
        let y = tape.add(mixed, x)?;
        let out = tape.add_channel_bias(y, b, self.shape.positions())?;
        Ok(Recorded { out, bound: Some(bound) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{layer_gradient_error, max_displacement_ratio, rng};

    #[test]
    fn zero_weights_are_identity() {
        let mut r = rng(0);
        let s = SpatialShape::new(4, 3, 2).unwrap();
        let mut layer = SpatialMlp::from_weights(s, vec![Matrix::zeros(9, 9); 2], &mut r).unwrap();
        layer.refresh(Refresh::Full).unwrap();
        assert!((layer.lip_bound() - 1.0).abs() < 1e-12);
        let x = Matrix::random_uniform(2, 36, 1.0, &mut r);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn grouped_example() {
        let mut r = rng(1);
        let s = SpatialShape::new(2, 2, 2).unwrap();
        let mut layer = SpatialMlp::from_weights(s, vec![Matrix::zeros(4, 4), Matrix::identity(4)], &mut r).unwrap();
        layer.refresh(Refresh::Full).unwrap();
        let x = Matrix::row_vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 4.0, 10.0, 12.0, 14.0, 16.0]);
        assert!((layer.lip_bound() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn single_group_bound_is_norm_of_identity_plus_weight() {
        let mut r = rng(2);
        let mut layer = SpatialMlp::new(3, 3, 1, &mut r).unwrap();
        layer.refresh(Refresh::Full).unwrap();
        let expected = crate::numerics::spectral_norm_oracle(&layer.weights[0].add_identity(1.0).unwrap());
        assert!((layer.lip_bound() - expected).abs() < 1e-4 * expected, "{} vs {expected} after {}", layer.lip_bound(), layer.estimates[0].iterations_run);
    }

    #[test]
    fn bound_is_sound() {
        let mut r = rng(3);
        let mut layer = SpatialMlp::new(4, 3, 2, &mut r).unwrap();
        layer.refresh(Refresh::Full).unwrap();
        assert!(max_displacement_ratio(&layer, 1000, &mut r) <= layer.lip_bound() + 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(4);
        let mut layer = SpatialMlp::new(4, 2, 2, &mut r).unwrap();
        layer.refresh(Refresh::Step).unwrap();
        assert!(layer_gradient_error(&layer, 2, &mut r) <= 1e-5);
    }
}

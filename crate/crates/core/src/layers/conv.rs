use rand::Rng;

use super::dense::record_norm;
use super::{check_width, expect_params, init_bound, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::conv::{conv2d, conv2d_adjoint};
use crate::numerics::power::{converge, power_iteration, CERT_TOL, CONV_CERT_MAX_ITERS};
use crate::numerics::{ConvShape, Matrix, SpectralEstimate};

fn refresh_conv(kernel: &Matrix, s: &ConvShape, est: &mut SpectralEstimate, mode: Refresh, residual: bool) {
    let apply = |x: &[f64]| {
        let xm = Matrix::row_vector(x.to_vec());
        let mut y = conv2d(&xm, kernel, s).expect("conv shape").into_vec();
        if residual {
            y.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
        y
    };
    let apply_t = |y: &[f64]| {
        let ym = Matrix::row_vector(y.to_vec());
        let mut x = conv2d_adjoint(&ym, kernel, s).expect("conv shape").into_vec();
        if residual {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        }
        x
    };
    match mode {
        Refresh::Step => {
            power_iteration(apply, apply_t, est, 1, CERT_TOL);
        }
        Refresh::Full => {
            converge(apply, apply_t, est, CONV_CERT_MAX_ITERS, CERT_TOL);
        }
    }
}

/// `uᵀ·conv(v)` with the iterates held constant.
/// `‖conv(v)‖₂`, or `‖v + conv(v)‖₂` for the residual block.
fn record_conv_bound(tape: &mut Tape, kernel: Var, s: ConvShape, est: &SpectralEstimate, residual: bool) -> Result<Var> {
    let v = tape.constant(Matrix::row_vector(est.v.clone()));
    let mut kv = tape.conv2d(v, kernel, s)?;
    if residual {
        kv = tape.add(kv, v)?;
    }
    record_norm(tape, kv)
}

fn conv_kernel<R: Rng + ?Sized>(s: &ConvShape, rng: &mut R) -> Matrix {
    Matrix::random_uniform(s.out_channels, s.kernel_cols(), init_bound(s.kernel_cols()), rng)
}

/// Unconstrained stride-1 "same" convolution with a power-iteration bound on
/// the exact operator at the configured input size.
#[derive(Clone, Debug)]
pub struct ConvGloro {
    shape: ConvShape,
    pub kernel: Matrix,
    pub bias: Matrix,
    pub estimate: SpectralEstimate,
}

impl ConvGloro {
    pub fn new<R: Rng + ?Sized>(shape: ConvShape, rng: &mut R) -> Result<Self> {
        let kernel = conv_kernel(&shape, rng);
        Self::from_kernel(shape, kernel, rng)
    }

    pub fn from_kernel<R: Rng + ?Sized>(shape: ConvShape, kernel: Matrix, rng: &mut R) -> Result<Self> {
        if kernel.shape() != (shape.out_channels, shape.kernel_cols()) {
            return Err(Error::shape("kernel does not match the convolution shape"));
        }
        Ok(Self {
            shape,
            kernel,
            bias: Matrix::zeros(1, shape.out_channels),
            estimate: SpectralEstimate::new(shape.in_len(), shape.out_len(), rng),
        })
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }
}

impl Layer for ConvGloro {
    fn spec(&self) -> LayerSpec {
        LayerSpec::ConvGloro { shape: self.shape }
    }

    fn in_dim(&self) -> usize {
        self.shape.in_len()
    }

    fn out_dim(&self) -> usize {
        self.shape.out_len()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.estimate.converged = false;
        vec![&mut self.kernel, &mut self.bias]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        refresh_conv(&self.kernel, &self.shape, &mut self.estimate, mode, false);
        Ok(())
    }

    fn lip_bound(&self) -> f64 {
        self.estimate.sigma
    }

    fn bound_converged(&self) -> bool {
        self.estimate.converged
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "conv_gloro")?;
        let (k, b, bound) = match expect_params(binding, 2, "conv_gloro")? {
            Some(p) => (p[0], p[1], record_conv_bound(tape, p[0], self.shape, &self.estimate, false)?),
            None => (
                tape.constant(self.kernel.clone()),
                tape.constant(self.bias.clone()),
                tape.constant(Matrix::scalar(self.estimate.sigma)),
            ),
        };
        let y = tape.conv2d(x, k, self.shape)?;
        let out = tape.add_channel_bias(y, b, self.shape.plane())?;
        Ok(Recorded { out, bound: Some(bound) })
    }
}

/// Residual convolution block `x + conv(x) + b`; the bound is estimated on
/// the whole residual operator.
#[derive(Clone, Debug)]
pub struct LiresnetBlock {
    shape: ConvShape,
    pub kernel: Matrix,
    pub bias: Matrix,
    pub estimate: SpectralEstimate,
}

impl LiresnetBlock {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, height: usize, width: usize, rng: &mut R) -> Result<Self> {
        let shape = ConvShape::new(channels, channels, kernel, height, width)?;
        let k = conv_kernel(&shape, rng).scale(0.5);
        Self::from_kernel(shape, k, rng)
    }

    pub fn from_kernel<R: Rng + ?Sized>(shape: ConvShape, kernel: Matrix, rng: &mut R) -> Result<Self> {
        if shape.in_channels != shape.out_channels {
            return Err(Error::shape("residual convolution needs equal input and output channels"));
        }
        let inner = ConvGloro::from_kernel(shape, kernel, rng)?;
        Ok(Self { shape, kernel: inner.kernel, bias: inner.bias, estimate: inner.estimate })
    }
}

impl Layer for LiresnetBlock {
    fn spec(&self) -> LayerSpec {
        LayerSpec::LiresnetBlock {
            channels: self.shape.in_channels,
            kernel: self.shape.kernel,
            height: self.shape.height,
            width: self.shape.width,
        }
    }

    fn in_dim(&self) -> usize {
        self.shape.in_len()
    }

    fn out_dim(&self) -> usize {
        self.shape.out_len()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.estimate.converged = false;
        vec![&mut self.kernel, &mut self.bias]
    }

    fn refresh(&mut self, mode: Refresh) -> Result<()> {
        refresh_conv(&self.kernel, &self.shape, &mut self.estimate, mode, true);
        Ok(())
    }

    fn lip_bound(&self) -> f64 {
        self.estimate.sigma
    }

    fn bound_converged(&self) -> bool {
        self.estimate.converged
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.in_dim(), "liresnet_block")?;
        let (k, b, bound) = match expect_params(binding, 2, "liresnet_block")? {
            Some(p) => (p[0], p[1], record_conv_bound(tape, p[0], self.shape, &self.estimate, true)?),
            None => (
                tape.constant(self.kernel.clone()),
                tape.constant(self.bias.clone()),
                tape.constant(Matrix::scalar(self.estimate.sigma)),
            ),
        };
        let y = tape.conv2d(x, k, self.shape)?;
        let y = tape.add(y, x)?;
        let out = tape.add_channel_bias(y, b, self.shape.plane())?;
        Ok(Recorded { out, bound: Some(bound) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{layer_gradient_error, max_displacement_ratio, rng};
    use crate::numerics::oracle::materialize;
    use crate::numerics::spectral_norm_oracle;

    #[test]
    fn zero_kernel_block_is_identity() {
        let mut r = rng(0);
        let s = ConvShape::new(2, 2, 3, 4, 4).unwrap();
        let mut block = LiresnetBlock::from_kernel(s, Matrix::zeros(2, 18), &mut r).unwrap();
        block.refresh(Refresh::Full).unwrap();
        assert!((block.lip_bound() - 1.0).abs() < 1e-12);
        let x = Matrix::random_uniform(2, 32, 1.0, &mut r);
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn scalar_kernel_bounds() {
        let mut r = rng(1);
        let s = ConvShape::new(1, 1, 1, 3, 3).unwrap();
        let a = -0.7;
        let mut conv = ConvGloro::from_kernel(s, Matrix::scalar(a), &mut r).unwrap();
        conv.refresh(Refresh::Full).unwrap();
        assert!((conv.lip_bound() - 0.7).abs() < 1e-9);
        let mut block = LiresnetBlock::from_kernel(s, Matrix::scalar(a), &mut r).unwrap();
        block.refresh(Refresh::Full).unwrap();
        assert!((block.lip_bound() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn bound_matches_materialized_operator() {
        let mut r = rng(2);
        let s = ConvShape::new(4, 4, 3, 8, 8).unwrap();
        let mut conv = ConvGloro::new(s, &mut r).unwrap();
        conv.refresh(Refresh::Full).unwrap();
        let op = materialize(|x| conv2d(&Matrix::row_vector(x.to_vec()), &conv.kernel, &s).unwrap().into_vec(), 256);
        let oracle = spectral_norm_oracle(&op);
        assert!(((conv.lip_bound() - oracle) / oracle).abs() < 1e-4, "{} vs {oracle}", conv.lip_bound());
    }

    #[test]
    fn bounds_are_sound() {
        let mut r = rng(3);
        let mut conv = ConvGloro::new(ConvShape::new(2, 3, 3, 5, 5).unwrap(), &mut r).unwrap();
        conv.refresh(Refresh::Full).unwrap();
        assert!(max_displacement_ratio(&conv, 1000, &mut r) <= conv.lip_bound() + 1e-6);
        let mut block = LiresnetBlock::new(3, 3, 4, 4, &mut r).unwrap();
        block.refresh(Refresh::Full).unwrap();
        assert!(max_displacement_ratio(&block, 1000, &mut r) <= block.lip_bound() + 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(4);
        let mut conv = ConvGloro::new(ConvShape::new(2, 2, 3, 3, 3).unwrap(), &mut r).unwrap();
        conv.refresh(Refresh::Step).unwrap();
        assert!(layer_gradient_error(&conv, 2, &mut r) <= 1e-5);
        let mut block = LiresnetBlock::new(2, 3, 3, 3, &mut r).unwrap();
        block.refresh(Refresh::Step).unwrap();
        assert!(layer_gradient_error(&block, 2, &mut r) <= 1e-5);
    }
}

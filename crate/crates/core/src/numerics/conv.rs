//! Stride-1, zero-padded ("same") 2D convolution and the per-channel
//! spatial mixing used by Spatial-MLP blocks.
//!
//! A batch is a `Matrix` with one sample per row, each laid out channel-major
//! as `C × H × W`. Kernels are `C_out × (C_in·k·k)` matrices.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, height: usize, width: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!("convolution kernel size must be odd, got {kernel}")));
        }
        if in_channels == 0 || out_channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("convolution dimensions must be positive"));
        }
        Ok(Self { in_channels, out_channels, kernel, height, width })
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.plane()
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.plane()
    }

    pub fn kernel_cols(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_len() {
            return Err(Error::shape(format!(
                "convolution expects {} input features ({}x{}x{}), got {}",
                self.in_len(),
                self.in_channels,
                self.height,
                self.width,
                x.cols()
            )));
        }
        Ok(())
    }

    fn check_kernel(&self, k: &Matrix) -> Result<()> {
        if k.shape() != (self.out_channels, self.kernel_cols()) {
            return Err(Error::shape(format!(
                "kernel should be {}x{}, got {}x{}",
                self.out_channels,
                self.kernel_cols(),
                k.rows(),
                k.cols()
            )));
        }
        Ok(())
    }
}

/// Unfolds every receptive field: `(C_in·k·k) × (B·H·W)`, samples blocked
/// along the columns.
fn im2col(x: &Matrix, s: &ConvShape) -> Matrix {
    let (h, w, k, p) = (s.height as isize, s.width as isize, s.kernel, s.pad() as isize);
    let batch = x.rows();
    let hw = s.plane();
    let ncols = batch * hw;
    let mut cols = vec![0.0; s.kernel_cols() * ncols];
    for b in 0..batch {
        let xs = x.row(b);
        for c in 0..s.in_channels {
            let plane = &xs[c * hw..(c + 1) * hw];
            for ki in 0..k {
                for kj in 0..k {
                    let r = (c * k + ki) * k + kj;
                    let dst = &mut cols[r * ncols + b * hw..r * ncols + (b + 1) * hw];
                    let (di, dj) = (ki as isize - p, kj as isize - p);
                    for i in 0..h {
                        let si = i + di;
                        if si < 0 || si >= h {
                            continue;
                        }
                        for j in 0..w {
                            let sj = j + dj;
                            if sj >= 0 && sj < w {
                                dst[(i * w + j) as usize] = plane[(si * w + sj) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Matrix::from_vec_unchecked(s.kernel_cols(), ncols, cols)
}

/// Adjoint of [`im2col`]: scatters receptive-field columns back onto the
/// input grid, accumulating overlaps.
fn col2im(cols: &Matrix, s: &ConvShape, batch: usize) -> Matrix {
    let (h, w, k, p) = (s.height as isize, s.width as isize, s.kernel, s.pad() as isize);
    let hw = s.plane();
    let ncols = cols.cols();
    let src = cols.as_slice();
    let mut x = Matrix::zeros(batch, s.in_len());
    for b in 0..batch {
        let xs = x.row_mut(b);
        for c in 0..s.in_channels {
            let plane = &mut xs[c * hw..(c + 1) * hw];
            for ki in 0..k {
                for kj in 0..k {
                    let r = (c * k + ki) * k + kj;
                    let from = &src[r * ncols + b * hw..r * ncols + (b + 1) * hw];
                    let (di, dj) = (ki as isize - p, kj as isize - p);
                    for i in 0..h {
                        let si = i + di;
                        if si < 0 || si >= h {
                            continue;
                        }
                        for j in 0..w {
                            let sj = j + dj;
                            if sj >= 0 && sj < w {
                                plane[(si * w + sj) as usize] += from[(i * w + j) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `B × (C·HW)` → `C × (B·HW)`.
fn to_channel_major(y: &Matrix, channels: usize, hw: usize) -> Matrix {
    let batch = y.rows();
    let mut out = vec![0.0; y.len()];
    for b in 0..batch {
        let row = y.row(b);
        for c in 0..channels {
            out[c * batch * hw + b * hw..c * batch * hw + (b + 1) * hw].copy_from_slice(&row[c * hw..(c + 1) * hw]);
        }
    }
    Matrix::from_vec_unchecked(channels, batch * hw, out)
}

/// Inverse of [`to_channel_major`].
fn from_channel_major(m: &Matrix, batch: usize, hw: usize) -> Matrix {
    let channels = m.rows();
    let mut out = Matrix::zeros(batch, channels * hw);
    for b in 0..batch {
        let row = out.row_mut(b);
        for c in 0..channels {
            row[c * hw..(c + 1) * hw].copy_from_slice(&m.row(c)[b * hw..(b + 1) * hw]);
        }
    }
    out
}

/// Cross-correlation `y = K ⋆ x` with zero padding, stride 1.
pub fn conv2d(x: &Matrix, kernel: &Matrix, s: &ConvShape) -> Result<Matrix> {
    s.check_input(x)?;
    s.check_kernel(kernel)?;
    let cols = im2col(x, s);
    let y = kernel.matmul(&cols)?;
    Ok(from_channel_major(&y, x.rows(), s.plane()))
}

/// Transposed convolution: the adjoint of `x ↦ conv2d(x, K)`.
pub fn conv2d_adjoint(y: &Matrix, kernel: &Matrix, s: &ConvShape) -> Result<Matrix> {
    if y.cols() != s.out_len() {
        return Err(Error::shape(format!("transposed convolution expects {} features, got {}", s.out_len(), y.cols())));
    }
    s.check_kernel(kernel)?;
    let g = to_channel_major(y, s.out_channels, s.plane());
    let cols = kernel.t_matmul(&g)?;
    Ok(col2im(&cols, s, y.rows()))
}

/// Gradient of `⟨gy, conv2d(x, K)⟩` with respect to `K`.
pub fn conv2d_kernel_grad(x: &Matrix, gy: &Matrix, s: &ConvShape) -> Result<Matrix> {
    s.check_input(x)?;
    if gy.shape() != (x.rows(), s.out_len()) {
        return Err(Error::shape("convolution output gradient has the wrong shape"));
    }
    let cols = im2col(x, s);
    let g = to_channel_major(gy, s.out_channels, s.plane());
    g.matmul_t(&cols)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialShape {
    pub channels: usize,
    pub side: usize,
    pub groups: usize,
}

impl SpatialShape {
    pub fn new(channels: usize, side: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::invalid(format!("{channels} channels are not divisible into {groups} groups")));
        }
        if side == 0 {
            return Err(Error::invalid("spatial side must be positive"));
        }
        Ok(Self { channels, side, groups })
    }

    pub fn positions(&self) -> usize {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.channels * self.positions()
    }

    /// Group owning channel `c`: the integer `k` with `cG/C ∈ [k, k+1)`.
    pub fn group_of(&self, c: usize) -> usize {
        c * self.groups / self.channels
    }
}

fn check_spatial(x: &Matrix, weights: &[Matrix], s: &SpatialShape) -> Result<()> {
    if x.cols() != s.len() {
        return Err(Error::shape(format!("spatial mixing expects {} features, got {}", s.len(), x.cols())));
    }
    if weights.len() != s.groups {
        return Err(Error::shape(format!("expected {} group weights, got {}", s.groups, weights.len())));
    }
    let p = s.positions();
    if let Some(w) = weights.iter().find(|w| w.shape() != (p, p)) {
        return Err(Error::shape(format!("group weight should be {p}x{p}, got {}x{}", w.rows(), w.cols())));
    }
    Ok(())
}

/// Gathers the `(B·C/G) × S²` block of channel planes owned by group `g`.
fn gather_group(x: &Matrix, s: &SpatialShape, g: usize) -> Matrix {
    let p = s.positions();
    let per = s.channels / s.groups;
    let mut data = Vec::with_capacity(x.rows() * per * p);
    for b in 0..x.rows() {
        let row = x.row(b);
        data.extend_from_slice(&row[g * per * p..(g + 1) * per * p]);
    }
    Matrix::from_vec_unchecked(x.rows() * per, p, data)
}

fn scatter_group(block: &Matrix, out: &mut Matrix, s: &SpatialShape, g: usize) {
    let p = s.positions();
    let per = s.channels / s.groups;
    let src = block.as_slice();
    for b in 0..out.rows() {
        out.row_mut(b)[g * per * p..(g + 1) * per * p].copy_from_slice(&src[b * per * p..(b + 1) * per * p]);
    }
}

/// Mixes spatial positions within every channel plane: plane `c` becomes
/// `W_k · x_c` with `k` the channel's group. The residual identity is not
/// included.
pub fn spatial_mix(x: &Matrix, weights: &[Matrix], s: &SpatialShape) -> Result<Matrix> {
    check_spatial(x, weights, s)?;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (g, w) in weights.iter().enumerate() {
        let block = gather_group(x, s, g).matmul_t(w)?;
        scatter_group(&block, &mut out, s, g);
    }
    Ok(out)
}

/// Adjoint of [`spatial_mix`] in `x`.
pub fn spatial_mix_adjoint(y: &Matrix, weights: &[Matrix], s: &SpatialShape) -> Result<Matrix> {
    check_spatial(y, weights, s)?;
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for (g, w) in weights.iter().enumerate() {
        let block = gather_group(y, s, g).matmul(w)?;
        scatter_group(&block, &mut out, s, g);
    }
    Ok(out)
}

/// Gradients of `⟨gy, spatial_mix(x, W)⟩` with respect to each `W_k`.
pub fn spatial_mix_weight_grads(x: &Matrix, gy: &Matrix, s: &SpatialShape) -> Result<Vec<Matrix>> {
    if x.shape() != gy.shape() || x.cols() != s.len() {
        return Err(Error::shape("spatial mixing gradient has the wrong shape"));
    }
    (0..s.groups).map(|g| gather_group(gy, s, g).t_matmul(&gather_group(x, s, g))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn conv_reference(x: &[f64], k: &Matrix, s: &ConvShape) -> Vec<f64> {
        let (h, w, kk, p) = (s.height as isize, s.width as isize, s.kernel as isize, s.pad() as isize);
        let mut y = vec![0.0; s.out_len()];
        for o in 0..s.out_channels {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for c in 0..s.in_channels {
                        for a in 0..kk {
                            for b in 0..kk {
                                let (si, sj) = (i + a - p, j + b - p);
                                if si >= 0 && si < h && sj >= 0 && sj < w {
                                    let kv = k[(o, ((c as isize * kk + a) * kk + b) as usize)];
                                    acc += kv * x[c * (h * w) as usize + (si * w + sj) as usize];
                                }
                            }
                        }
                    }
                    y[o * (h * w) as usize + (i * w + j) as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ConvShape::new(3, 2, 3, 5, 4).unwrap();
        let x = Matrix::random_uniform(2, s.in_len(), 1.0, &mut rng);
        let k = Matrix::random_uniform(2, s.kernel_cols(), 1.0, &mut rng);
        let y = conv2d(&x, &k, &s).unwrap();
        for b in 0..2 {
            let r = conv_reference(x.row(b), &k, &s);
            for (a, e) in y.row(b).iter().zip(&r) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = ConvShape::new(2, 3, 3, 4, 4).unwrap();
        let x = Matrix::random_uniform(3, s.in_len(), 1.0, &mut rng);
        let y = Matrix::random_uniform(3, s.out_len(), 1.0, &mut rng);
        let k = Matrix::random_uniform(3, s.kernel_cols(), 1.0, &mut rng);
        let lhs = dot(conv2d(&x, &k, &s).unwrap().as_slice(), y.as_slice());
        let rhs = dot(x.as_slice(), conv2d_adjoint(&y, &k, &s).unwrap().as_slice());
        assert!((lhs - rhs).abs() < 1e-10);
        let gk = conv2d_kernel_grad(&x, &y, &s).unwrap();
        assert!((dot(gk.as_slice(), k.as_slice()) - lhs).abs() < 1e-10);
    }

    #[test]
    fn spatial_group_assignment_and_adjoint() {
        let s = SpatialShape::new(4, 2, 2).unwrap();
        assert_eq!((0..4).map(|c| s.group_of(c)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ws = vec![Matrix::random_uniform(4, 4, 1.0, &mut rng), Matrix::random_uniform(4, 4, 1.0, &mut rng)];
        let x = Matrix::random_uniform(2, 16, 1.0, &mut rng);
        let y = Matrix::random_uniform(2, 16, 1.0, &mut rng);
        let lhs = dot(spatial_mix(&x, &ws, &s).unwrap().as_slice(), y.as_slice());
        let rhs = dot(x.as_slice(), spatial_mix_adjoint(&y, &ws, &s).unwrap().as_slice());
        assert!((lhs - rhs).abs() < 1e-10);
        let gw = spatial_mix_weight_grads(&x, &y, &s).unwrap();
        let via_w: f64 = gw.iter().zip(&ws).map(|(g, w)| dot(g.as_slice(), w.as_slice())).sum();
        assert!((via_w - lhs).abs() < 1e-10);
    }
}

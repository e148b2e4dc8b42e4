use super::{check_width, Binding, Layer, LayerSpec, Recorded, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Sorts consecutive pairs of every row into `(min, max)`.
pub fn minmax(x: &Matrix) -> Result<Matrix> {
    if x.cols() % 2 != 0 {
        return Err(Error::OddWidth(x.cols()));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for pair in out.row_mut(i).chunks_exact_mut(2) {
            if pair[0] > pair[1] {
                pair.swap(0, 1);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MinMax {
    dim: usize,
}

impl MinMax {
    pub fn new(dim: usize) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddWidth(dim));
        }
        Ok(Self { dim })
    }
}

impl Layer for MinMax {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Minmax { dim: self.dim }
    }

    fn in_dim(&self) -> usize {
        self.dim
    }

    fn out_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> Vec<&Matrix> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        Vec::new()
    }

    fn refresh(&mut self, _mode: Refresh) -> Result<()> {
        Ok(())
    }

    fn record(&self, tape: &mut Tape, x: Var, _binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.dim, "minmax")?;
        Ok(Recorded { out: tape.minmax(x)?, bound: None })
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim {
            return Err(Error::shape(format!("minmax expects {} features, got {}", self.dim, x.cols())));
        }
        minmax(x)
    }
}

/// Marks where a channel-major feature map becomes a plain vector. The
/// layout is already flat, so this is the identity.
#[derive(Clone, Debug)]
pub struct Flatten {
    dim: usize,
}

impl Flatten {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Layer for Flatten {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Flatten { dim: self.dim }
    }

    fn in_dim(&self) -> usize {
        self.dim
    }

    fn out_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> Vec<&Matrix> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        Vec::new()
    }

    fn refresh(&mut self, _mode: Refresh) -> Result<()> {
        Ok(())
    }

    fn record(&self, tape: &mut Tape, x: Var, _binding: Binding<'_>) -> Result<Recorded> {
        check_width(tape, x, self.dim, "flatten")?;
        Ok(Recorded { out: x, bound: None })
    }
}

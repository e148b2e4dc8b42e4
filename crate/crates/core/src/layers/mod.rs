//! The 1-Lipschitz layer zoo and network assembly.
//!
//! Every layer records itself onto an autodiff [`Tape`]. With
//! [`Binding::Params`] the effective weights and Lipschitz bounds are built
//! on the tape from raw parameters, so gradients reach them; with
//! [`Binding::Frozen`] cached weights enter as constants.

mod aol;
mod arch;
mod conv;
mod dense;
mod head;
mod network;
mod orthogonal;
pub mod ortho;
mod sandwich;
mod simple;
mod sll;
mod spatial;

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use aol::{aol_scaling, Aol, AolExponent};
pub use arch::{Architecture, DenseMechanism, InputShape};
pub use conv::{ConvGloro, LiresnetBlock};
pub use dense::{DenseGloro, ResidualDenseGloro};
pub use head::Head;
pub use network::{Frozen, LipschitzReport, NetRecord, Network};
pub use orthogonal::{OrthMethod, Orthogonal};
pub use ortho::{orthogonalize_cayley, orthogonalize_cholesky, orthogonalize_lot, orthogonalize_matexp, skew};
pub use sandwich::{sandwich_q, Sandwich};
pub use simple::{minmax, Flatten, MinMax};
pub use sll::Sll;
pub use spatial::SpatialMlp;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{ConvShape, Matrix};

/// How a layer's parameters enter a recording.
#[derive(Clone, Copy, Debug)]
pub enum Binding<'a> {
    /// Cached effective weights and bounds as constants.
    Frozen,
    /// One tape leaf per raw parameter, in [`Layer::params`] order.
    Params(&'a [Var]),
}

/// What [`Layer::refresh`] brings up to date.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refresh {
    /// Per training step: one warm-started power iteration where bounds are
    /// estimated. Orthogonal weights are rebuilt on the tape instead.
    Step,
    /// Before evaluation: effective weights recomputed and power iteration
    /// run to convergence.
    Full,
}

/// Output of [`Layer::record`]: the activation and, for layers whose bound is
/// not identically 1, the bound as a 1×1 node.
#[derive(Clone, Copy, Debug)]
pub struct Recorded {
    pub out: Var,
    pub bound: Option<Var>,
}

/// Elementwise 1-Lipschitz activation for the SLL and Sandwich blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn record(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

pub trait Layer: Debug + Send + Sync {
    fn spec(&self) -> LayerSpec;

    fn in_dim(&self) -> usize;

    fn out_dim(&self) -> usize;

    fn params(&self) -> Vec<&Matrix>;

    /// Mutable raw parameters. Marks cached effective weights stale.
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn refresh(&mut self, mode: Refresh) -> Result<()>;

    /// Cached Lipschitz bound (1 for constrained layers).
    fn lip_bound(&self) -> f64 {
        1.0
    }

    /// Whether the cached bound came from a converged power iteration.
    fn bound_converged(&self) -> bool {
        true
    }

    fn record(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Recorded>;

    /// Frozen forward pass on a batch (one sample per row).
    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let r = self.record(&mut tape, xv, Binding::Frozen)?;
        Ok(tape.value(r.out).clone())
    }
}

/// Declarative description of one layer, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    DenseGloro { in_dim: usize, out_dim: usize },
    ResidualDenseGloro { dim: usize },
    DenseCayley { in_dim: usize, out_dim: usize },
    DenseMatexp { in_dim: usize, out_dim: usize },
    DenseCholesky { in_dim: usize, out_dim: usize },
    DenseCholeskyResidual { dim: usize },
    DenseLot { in_dim: usize, out_dim: usize, newton_iters: usize },
    Aol { in_dim: usize, out_dim: usize, exponent: AolExponent },
    Sll { dim: usize, activation: Activation },
    Sandwich { dim: usize, activation: Activation },
    Minmax { dim: usize },
    ConvGloro { shape: ConvShape },
    LiresnetBlock { channels: usize, kernel: usize, height: usize, width: usize },
    SpatialMlp { channels: usize, side: usize, groups: usize },
    Flatten { dim: usize },
}

impl LayerSpec {
    /// Fresh layer with randomly initialized parameters.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Box<dyn Layer>> {
        Ok(match *self {
            LayerSpec::DenseGloro { in_dim, out_dim } => Box::new(DenseGloro::new(in_dim, out_dim, rng)?),
            LayerSpec::ResidualDenseGloro { dim } => Box::new(ResidualDenseGloro::new(dim, rng)?),
            LayerSpec::DenseCayley { in_dim, out_dim } => Box::new(Orthogonal::new(OrthMethod::Cayley, in_dim, out_dim, rng)?),
            LayerSpec::DenseMatexp { in_dim, out_dim } => Box::new(Orthogonal::new(OrthMethod::Matexp, in_dim, out_dim, rng)?),
            LayerSpec::DenseCholesky { in_dim, out_dim } => Box::new(Orthogonal::new(OrthMethod::Cholesky, in_dim, out_dim, rng)?),
            LayerSpec::DenseCholeskyResidual { dim } => Box::new(Orthogonal::new(OrthMethod::CholeskyResidual, dim, dim, rng)?),
            LayerSpec::DenseLot { in_dim, out_dim, newton_iters } => {
                Box::new(Orthogonal::new(OrthMethod::Lot { newton_iters }, in_dim, out_dim, rng)?)
            }
            LayerSpec::Aol { in_dim, out_dim, exponent } => Box::new(Aol::new(in_dim, out_dim, exponent, rng)?),
            LayerSpec::Sll { dim, activation } => Box::new(Sll::new(dim, activation, rng)?),
            LayerSpec::Sandwich { dim, activation } => Box::new(Sandwich::new(dim, activation, rng)?),
            LayerSpec::Minmax { dim } => Box::new(MinMax::new(dim)?),
            LayerSpec::ConvGloro { shape } => Box::new(ConvGloro::new(shape, rng)?),
            LayerSpec::LiresnetBlock { channels, kernel, height, width } => {
                Box::new(LiresnetBlock::new(channels, kernel, height, width, rng)?)
            }
            LayerSpec::SpatialMlp { channels, side, groups } => Box::new(SpatialMlp::new(channels, side, groups, rng)?),
            LayerSpec::Flatten { dim } => Box::new(Flatten::new(dim)),
        })
    }

    /// Short mechanism tag.
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::DenseGloro { .. } => "dense_gloro",
            LayerSpec::ResidualDenseGloro { .. } => "residual_dense_gloro",
            LayerSpec::DenseCayley { .. } => "dense_cayley",
            LayerSpec::DenseMatexp { .. } => "dense_matexp",
            LayerSpec::DenseCholesky { .. } => "dense_cholesky",
            LayerSpec::DenseCholeskyResidual { .. } => "dense_cholesky_residual",
            LayerSpec::DenseLot { .. } => "dense_lot",
            LayerSpec::Aol { .. } => "aol",
            LayerSpec::Sll { .. } => "sll",
            LayerSpec::Sandwich { .. } => "sandwich",
            LayerSpec::Minmax { .. } => "minmax",
            LayerSpec::ConvGloro { .. } => "conv_gloro",
            LayerSpec::LiresnetBlock { .. } => "liresnet_block",
            LayerSpec::SpatialMlp { .. } => "spatial_mlp",
            LayerSpec::Flatten { .. } => "flatten",
        }
    }
}

/// Parameter init bound `1/√n`.
pub(crate) fn init_bound(n: usize) -> f64 {
    1.0 / (n.max(1) as f64).sqrt()
}

pub(crate) fn expect_params<'a>(binding: Binding<'a>, count: usize, what: &str) -> Result<Option<&'a [Var]>> {
    match binding {
        Binding::Frozen => Ok(None),
        Binding::Params(p) if p.len() == count => Ok(Some(p)),
        Binding::Params(p) => Err(Error::shape(format!("{what} takes {count} parameters, got {}", p.len()))),
    }
}

pub(crate) fn check_width(tape: &Tape, x: Var, expected: usize, what: &str) -> Result<()> {
    let cols = tape.value(x).cols();
    if cols != expected {
        return Err(Error::shape(format!("{what} expects {expected} input features, got {cols}")));
    }
    Ok(())
}

pub(crate) fn stale_error(what: &str) -> Error {
    Error::invalid(format!("{what}: cached weights are stale; refresh before a frozen forward pass"))
}

#[cfg(test)]
pub(crate) mod testutil;

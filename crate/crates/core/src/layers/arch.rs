use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ortho::LOT_DEFAULT_ITERS;
use super::{Activation, AolExponent, Head, Layer, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::numerics::ConvShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputShape {
    Vector { dim: usize },
    /// Channel-major `channels × height × width`.
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Vector { dim } => dim,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-dimension sizes, outermost first.
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            InputShape::Vector { dim } => vec![dim],
            InputShape::Image { channels, height, width } => vec![channels, height, width],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [dim] => Ok(InputShape::Vector { dim }),
            [channels, height, width] => Ok(InputShape::Image { channels, height, width }),
            _ => Err(Error::invalid(format!("inputs must have 1 or 3 dimensions, got {}", dims.len()))),
        }
    }
}

/// Lipschitz control used for the dense stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenseMechanism {
    Gloro,
    Cayley,
    Matexp,
    CholeskyResidual,
    Lot,
    Aol,
    Sll,
    Sandwich,
}

impl DenseMechanism {
    pub const ALL: [DenseMechanism; 8] = [
        DenseMechanism::Gloro,
        DenseMechanism::Cayley,
        DenseMechanism::Matexp,
        DenseMechanism::CholeskyResidual,
        DenseMechanism::Lot,
        DenseMechanism::Aol,
        DenseMechanism::Sll,
        DenseMechanism::Sandwich,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DenseMechanism::Gloro => "gloro",
            DenseMechanism::Cayley => "cayley",
            DenseMechanism::Matexp => "matexp",
            DenseMechanism::CholeskyResidual => "cholesky-residual",
            DenseMechanism::Lot => "lot",
            DenseMechanism::Aol => "aol",
            DenseMechanism::Sll => "sll",
            DenseMechanism::Sandwich => "sandwich",
        }
    }
}

impl fmt::Display for DenseMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DenseMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        DenseMechanism::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown dense mechanism '{s}'")))
    }
}

/// Stem → backbone → neck → dense stack → head.
///
/// Vector inputs skip the convolutional part: the stem is a single
/// Cholesky-orthogonalized dense layer into the dense width. Image inputs get
/// a convolution stem, residual convolution blocks, an optional Spatial-MLP
/// block, and a flatten plus orthogonal dense neck. Every block is followed
/// by MinMax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input: InputShape,
    pub classes: usize,
    pub mechanism: DenseMechanism,
    pub dense_depth: usize,
    pub dense_width: usize,
    pub conv_channels: usize,
    pub conv_blocks: usize,
    pub kernel: usize,
    pub spatial_groups: Option<usize>,
    pub activation: Activation,
    pub aol_exponent: AolExponent,
    pub lot_iters: usize,
}

impl Architecture {
    /// Desk-scale defaults: 4 blocks of 64 channels, dense stack 8×256.
    pub fn vector(dim: usize, classes: usize, mechanism: DenseMechanism) -> Self {
        Self {
            input: InputShape::Vector { dim },
            classes,
            mechanism,
            dense_depth: 8,
            dense_width: 256,
            conv_channels: 64,
            conv_blocks: 4,
            kernel: 3,
            spatial_groups: None,
            activation: Activation::Relu,
            aol_exponent: AolExponent::InvSqrt,
            lot_iters: LOT_DEFAULT_ITERS,
        }
    }

    /// Large preset: 12 blocks of 512 channels, dense stack 8×2048.
    pub fn large_scale(input: InputShape, classes: usize) -> Self {
        Self {
            input,
            conv_channels: 512,
            conv_blocks: 12,
            dense_width: 2048,
            ..Self::vector(0, classes, DenseMechanism::CholeskyResidual)
        }
    }

    fn dense_spec(&self, width: usize) -> LayerSpec {
        let (in_dim, out_dim, dim) = (width, width, width);
        match self.mechanism {
            DenseMechanism::Gloro => LayerSpec::DenseGloro { in_dim, out_dim },
            DenseMechanism::Cayley => LayerSpec::DenseCayley { in_dim, out_dim },
            DenseMechanism::Matexp => LayerSpec::DenseMatexp { in_dim, out_dim },
            DenseMechanism::CholeskyResidual => LayerSpec::DenseCholeskyResidual { dim },
            DenseMechanism::Lot => LayerSpec::DenseLot { in_dim, out_dim, newton_iters: self.lot_iters },
            DenseMechanism::Aol => LayerSpec::Aol { in_dim, out_dim, exponent: self.aol_exponent },
            DenseMechanism::Sll => LayerSpec::Sll { dim, activation: self.activation },
            DenseMechanism::Sandwich => LayerSpec::Sandwich { dim, activation: self.activation },
        }
    }

    /// Layer specs in order, excluding the head.
    pub fn specs(&self) -> Result<Vec<LayerSpec>> {
        if self.classes < 2 {
            return Err(Error::invalid("at least 2 classes are required"));
        }
        if self.dense_width == 0 || self.input.is_empty() {
            return Err(Error::invalid("widths must be positive"));
        }
        let width = self.dense_width;
        let mut specs = Vec::new();
        let push_act = |specs: &mut Vec<LayerSpec>, s: LayerSpec, dim: usize| {
            specs.push(s);
            specs.push(LayerSpec::Minmax { dim });
        };
        match self.input {
            InputShape::Vector { dim } => {
                push_act(&mut specs, LayerSpec::DenseCholesky { in_dim: dim, out_dim: width }, width);
            }
            InputShape::Image { channels, height, width: w } => {
                let d = self.conv_channels;
                let shape = ConvShape::new(channels, d, self.kernel, height, w)?;
                let flat = shape.out_len();
                push_act(&mut specs, LayerSpec::ConvGloro { shape }, flat);
                for _ in 0..self.conv_blocks {
                    let block = LayerSpec::LiresnetBlock { channels: d, kernel: self.kernel, height, width: w };
                    push_act(&mut specs, block, flat);
                }
                if let Some(groups) = self.spatial_groups {
                    if height != w {
                        return Err(Error::invalid("spatial MLP needs square feature maps"));
                    }
                    push_act(&mut specs, LayerSpec::SpatialMlp { channels: d, side: height, groups }, flat);
                }
                specs.push(LayerSpec::Flatten { dim: flat });
                push_act(&mut specs, LayerSpec::DenseCholesky { in_dim: flat, out_dim: width }, width);
            }
        }
        for _ in 0..self.dense_depth {
            push_act(&mut specs, self.dense_spec(width), width);
        }
        Ok(specs)
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network> {
        let layers = self.specs()?.iter().map(|s| s.build(rng)).collect::<Result<Vec<Box<dyn Layer>>>>()?;
        let head = Head::new(self.dense_width, self.classes, rng)?;
        Network::new(layers, head, self.input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::rng;

    #[test]
    fn mechanism_names_round_trip() {
        for m in DenseMechanism::ALL {
            assert_eq!(m.name().parse::<DenseMechanism>().unwrap(), m);
        }
        assert_eq!("cholesky_residual".parse::<DenseMechanism>().unwrap(), DenseMechanism::CholeskyResidual);
        assert!("dense".parse::<DenseMechanism>().is_err());
    }

    #[test]
    fn every_mechanism_builds() {
        let mut r = rng(0);
        for m in DenseMechanism::ALL {
            let arch = Architecture { dense_depth: 2, dense_width: 6, ..Architecture::vector(2, 2, m) };
            let mut net = arch.build(&mut r).unwrap();
            let logits = net.freeze().unwrap().logits(&crate::Matrix::zeros(3, 2)).unwrap();
            assert_eq!(logits.shape(), (3, 2));
        }
    }

    #[test]
    fn image_layout() {
        let arch = Architecture {
            input: InputShape::Image { channels: 3, height: 8, width: 8 },
            conv_channels: 4,
            conv_blocks: 2,
            spatial_groups: Some(2),
            dense_depth: 1,
            dense_width: 16,
            ..Architecture::vector(0, 10, DenseMechanism::CholeskyResidual)
        };
        let kinds: Vec<&str> = arch.specs().unwrap().iter().map(|s| s.kind()).collect();
        assert_eq!(
            kinds,
            [
                "conv_gloro",
                "minmax",
                "liresnet_block",
                "minmax",
                "liresnet_block",
                "minmax",
                "spatial_mlp",
                "minmax",
                "flatten",
                "dense_cholesky",
                "minmax",
                "dense_cholesky_residual",
                "minmax"
            ]
        );
    }
}

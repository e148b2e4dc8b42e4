use serde::{Deserialize, Serialize};

use super::{Binding, Head, InputShape, Layer, LayerSpec, Refresh};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-layer Lipschitz bounds and their product over everything before the
/// head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub per_layer: Vec<f64>,
    pub backbone_product: f64,
    pub head: f64,
}

/// Nodes produced by recording a network.
#[derive(Clone, Debug)]
pub struct NetRecord {
    pub logits: Var,
    pub penultimate: Var,
    pub head_w: Var,
    /// Product of the layer bounds before the head (1×1).
    pub k_backbone: Var,
}

#[derive(Debug)]
pub struct Network {
    layers: Vec<Box<dyn Layer>>,
    head: Head,
    input: InputShape,
}

impl Network {
    pub fn new(layers: Vec<Box<dyn Layer>>, head: Head, input: InputShape) -> Result<Self> {
        let mut width = input.len();
        for layer in &layers {
            if layer.in_dim() != width {
                return Err(Error::shape(format!(
                    "{} expects {} features but receives {width}",
                    layer.spec().kind(),
                    layer.in_dim()
                )));
            }
            width = layer.out_dim();
        }
        if head.in_dim() != width {
            return Err(Error::shape(format!("head expects {} features but receives {width}", head.in_dim())));
        }
        Ok(Self { layers, head, input })
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn input_dim(&self) -> usize {
        self.input.len()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    /// Raw parameters: every layer in order, then head weight and bias.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.layers.iter().flat_map(|l| l.params()).collect();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn refresh(&mut self, mode: Refresh) -> Result<()> {
        for layer in &mut self.layers {
            layer.refresh(mode)?;
        }
        self.head.refresh(mode);
        Ok(())
    }

    /// Records the network with one tape leaf per raw parameter; the leaves
    /// are returned in [`Network::params`] order.
    pub fn record_params(&self, tape: &mut Tape, x: Var) -> Result<(NetRecord, Vec<Var>)> {
        let leaves: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
        Ok((self.record_bound_to(tape, x, &leaves)?, leaves))
    }

    /// Records the network with caller-provided nodes for its parameters,
    /// in [`Network::params`] order.
    pub fn record_bound_to(&self, tape: &mut Tape, x: Var, leaves: &[Var]) -> Result<NetRecord> {
        let expected = self.params().len();
        if leaves.len() != expected {
            return Err(Error::shape(format!("network has {expected} parameter tensors, got {}", leaves.len())));
        }
        let mut h = x;
        let mut bounds = Vec::new();
        let mut offset = 0;
        for layer in &self.layers {
            let n = layer.params().len();
            let r = layer.record(tape, h, Binding::Params(&leaves[offset..offset + n]))?;
            offset += n;
            h = r.out;
            bounds.extend(r.bound);
        }
        let k_backbone = tape.product(&bounds)?;
        let (w, b) = (leaves[offset], leaves[offset + 1]);
        let logits = Head::record(tape, h, w, b)?;
        Ok(NetRecord { logits, penultimate: h, head_w: w, k_backbone })
    }

    fn record_frozen(&self, tape: &mut Tape, x: Var) -> Result<NetRecord> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.record(tape, h, Binding::Frozen)?.out;
        }
        let w = tape.constant(self.head.w.clone());
        let b = tape.constant(self.head.b.clone());
        let logits = Head::record(tape, h, w, b)?;
        let k_backbone = tape.constant(Matrix::scalar(self.lipschitz().backbone_product));
        Ok(NetRecord { logits, penultimate: h, head_w: w, k_backbone })
    }

    /// Current cached bounds. Only meaningful after [`Network::refresh`].
    pub fn lipschitz(&self) -> LipschitzReport {
        let per_layer: Vec<f64> = self.layers.iter().map(|l| l.lip_bound()).collect();
        let backbone_product = per_layer.iter().product();
        LipschitzReport { per_layer, backbone_product, head: self.head.lip_bound() }
    }

    /// Recomputes effective weights and converges every bound, then hands
    /// out a read-only view for certification and attacks.
    pub fn freeze(&mut self) -> Result<Frozen<'_>> {
        self.refresh(Refresh::Full)?;
        Ok(Frozen { net: self })
    }
}

/// A network whose cached weights and bounds are current. Certification
/// only accepts this view, so it can never run on stale bounds.
#[derive(Clone, Copy, Debug)]
pub struct Frozen<'a> {
    net: &'a Network,
}

impl<'a> Frozen<'a> {
    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.net.classes()
    }

    pub fn head(&self) -> &'a Head {
        &self.net.head
    }

    pub fn lipschitz(&self) -> LipschitzReport {
        self.net.lipschitz()
    }

    /// Bound on everything before the head.
    pub fn k_backbone(&self) -> f64 {
        self.lipschitz().backbone_product
    }

    /// Bound on the whole network, for naive certification.
    pub fn k_total(&self) -> f64 {
        let r = self.lipschitz();
        r.backbone_product * r.head
    }

    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<NetRecord> {
        self.net.record_frozen(tape, x)
    }

    /// Penultimate features and logits for a batch.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!("network expects {} features, got {}", self.input_dim(), x.cols())));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let r = self.record(&mut tape, xv)?;
        Ok((tape.value(r.penultimate).clone(), tape.value(r.logits).clone()))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(_, l)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::rng;
    use crate::layers::{Architecture, DenseGloro, DenseMechanism, MinMax, OrthMethod, Orthogonal};
    use crate::numerics::spectral_norm_oracle;

    fn head(d: usize) -> Head {
        Head::from_weight(Matrix::eye(2, d), &mut rng(99))
    }

    #[test]
    fn orthogonal_stack_has_unit_product() {
        let mut r = rng(0);
        let layers: Vec<Box<dyn Layer>> = vec![
            Box::new(Orthogonal::new(OrthMethod::Cayley, 4, 4, &mut r).unwrap()),
            Box::new(MinMax::new(4).unwrap()),
            Box::new(Orthogonal::new(OrthMethod::CholeskyResidual, 4, 4, &mut r).unwrap()),
        ];
        let mut net = Network::new(layers, head(4), InputShape::Vector { dim: 4 }).unwrap();
        assert_eq!(net.freeze().unwrap().k_backbone(), 1.0);
    }

    #[test]
    fn diagonal_products() {
        let mut r = rng(1);
        let single: Vec<Box<dyn Layer>> = vec![Box::new(DenseGloro::from_weight(Matrix::diag(&[2.0, 1.0]), &mut r))];
        let mut net = Network::new(single, head(2), InputShape::Vector { dim: 2 }).unwrap();
        assert!((net.freeze().unwrap().k_backbone() - 2.0).abs() < 1e-6);

        let stacked: Vec<Box<dyn Layer>> = vec![
            Box::new(DenseGloro::from_weight(Matrix::diag(&[2.0, 1.0]), &mut r)),
            Box::new(DenseGloro::from_weight(Matrix::diag(&[3.0, 1.0]), &mut r)),
        ];
        let mut net = Network::new(stacked, head(2), InputShape::Vector { dim: 2 }).unwrap();
        assert!((net.freeze().unwrap().k_backbone() - 6.0).abs() < 1e-5);
    }

    #[test]
    fn shape_chain_is_checked() {
        let mut r = rng(2);
        let layers: Vec<Box<dyn Layer>> = vec![Box::new(DenseGloro::new(3, 4, &mut r).unwrap())];
        assert!(Network::new(layers, head(4), InputShape::Vector { dim: 2 }).is_err());
    }

    #[test]
    fn backbone_product_bounds_the_jacobian() {
        let mut r = rng(3);
        let arch = Architecture {
            input: InputShape::Image { channels: 1, height: 4, width: 4 },
            classes: 3,
            conv_channels: 2,
            conv_blocks: 3,
            kernel: 3,
            spatial_groups: Some(2),
            dense_depth: 1,
            dense_width: 8,
            ..Architecture::vector(2, 3, DenseMechanism::Gloro)
        };
        let mut net = arch.build(&mut r).unwrap();
        let frozen = net.freeze().unwrap();
        let k = frozen.k_backbone();
        let d = frozen.input_dim();
        let h = 1e-6;
        for _ in 0..50 {
            let x = Matrix::random_uniform(1, d, 1.0, &mut r);
            let mut batch = Matrix::zeros(d + 1, d);
            for i in 0..=d {
                batch.row_mut(i).copy_from_slice(x.row(0));
                if i < d {
                    batch[(i, i)] += h;
                }
            }
            let (pen, _) = frozen.forward(&batch).unwrap();
            let out = pen.cols();
            let jac = Matrix::from_fn(out, d, |o, i| (pen[(i, o)] - pen[(d, o)]) / h);
            let norm = spectral_norm_oracle(&jac);
            assert!(norm <= k + 1e-6, "{norm} > {k}");
        }
    }
}

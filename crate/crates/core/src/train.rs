//! Certification-aware training: the ⊥-augmented loss, the ε ramp, an SGD
//! loop and the dense-mechanism ablation driver.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::certify::{certify_dataset, head_distances, pairwise_bounds, CertMethod};
use crate::data::{mix_batch, Dataset, MixSpec, Sample};
use crate::error::{Error, Result};
use crate::layers::{Architecture, DenseMechanism, Head, NetRecord, Network, Refresh};
use crate::numerics::Matrix;

/// Default training radius, 108/255.
pub const DEFAULT_EPSILON_TRAIN: f64 = 108.0 / 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epsilon_train: f64,
    pub epochs: usize,
    pub mix: MixSpec,
    /// `None` scales 0.1 by `batch/256`.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub ramp_fraction: f64,
    pub method: CertMethod,
    pub seed: u64,
    /// Steps per epoch; `None` makes one pass over the real pool.
    pub steps_per_epoch: Option<usize>,
    /// Radii reported in the log each epoch.
    pub eval_epsilons: Vec<f64>,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon_train: DEFAULT_EPSILON_TRAIN,
            epochs: 10,
            mix: MixSpec { real_parts: 1, generated_parts: 0, batch_size: 256 },
            learning_rate: None,
            momentum: 0.9,
            ramp_fraction: 0.5,
            method: CertMethod::Tight,
            seed: 0,
            steps_per_epoch: None,
            eval_epsilons: vec![0.0, 36.0 / 255.0, 72.0 / 255.0, 108.0 / 255.0],
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_train >= 0.0 && self.epsilon_train.is_finite()) {
            return Err(Error::invalid("epsilon_train must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.ramp_fraction) {
            return Err(Error::invalid("ramp fraction must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("at least one epoch is required"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid("learning rate must be positive"));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("gradient clip must be positive"));
            }
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("steps_per_epoch must be positive"));
        }
        if self.eval_epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::invalid("evaluation radii must be finite and non-negative"));
        }
        self.mix.validate()
    }

    pub fn base_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(0.1 * self.mix.batch_size as f64 / 256.0)
    }
}

/// Linear ramp from 0 to `epsilon_train` over the first `ramp_fraction` of
/// training, constant afterwards.
pub fn eps_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let ramp = config.ramp_fraction * config.epochs.saturating_sub(1) as f64;
    if ramp <= 0.0 {
        return config.epsilon_train;
    }
    config.epsilon_train * (epoch as f64 / ramp).min(1.0)
}

/// Cosine decay from `base` at step 0 towards 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    base * 0.5 * (1.0 + (PI * step as f64 / total.max(1) as f64).cos())
}

/// `C×C` naive bound matrix: `√2·k·ε` off the diagonal.
pub fn naive_bounds(classes: usize, k: f64, epsilon: f64) -> Matrix {
    let v = SQRT_2 * k * epsilon;
    Matrix::from_fn(classes, classes, |i, j| if i == j { 0.0 } else { v })
}

/// Appends the ⊥ logit `max_{i≠j} (f_i + K_ji)` to every row, `j` being the
/// row's argmax. `bounds` already includes the factor ε.
pub fn gloro_augmented_logits(logits: &Matrix, bounds: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let y = tape.constant(logits.clone());
    let k = tape.constant(bounds.clone());
    let bottom = tape.gloro_bottom(y, k)?;
    let out = tape.concat_cols(y, bottom)?;
    Ok(tape.value(out).clone())
}

/// Records the augmented logits for a recorded network. The tight bounds
/// are `(‖w_j − w_i‖·K_backbone)·ε`, the same arithmetic the certifier uses.
pub fn record_augmented(tape: &mut Tape, rec: &NetRecord, head: &Head, epsilon: f64, method: CertMethod) -> Result<Var> {
    let k = match method {
        CertMethod::Tight => {
            let d = tape.pairwise_row_distance(rec.head_w)?;
            let dk = tape.scale_by(d, rec.k_backbone)?;
            tape.scale(dk, epsilon)?
        }
        CertMethod::Naive => {
            let kh = head.record_bound(tape, rec.head_w)?;
            let k_total = tape.product(&[rec.k_backbone, kh])?;
            let c = head.classes();
            let off = tape.constant(naive_bounds(c, 1.0, 1.0));
            let scaled = tape.scale_by(off, k_total)?;
            tape.scale(scaled, epsilon)?
        }
    };
    let bottom = tape.gloro_bottom(rec.logits, k)?;
    tape.concat_cols(rec.logits, bottom)
}

/// Mean cross-entropy over augmented logits; ⊥ is never a label.
pub fn loss(tape: &mut Tape, augmented: Var, labels: &[usize]) -> Result<Var> {
    let classes = tape.value(augmented).cols() - 1;
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
    }
    tape.cross_entropy(augmented, labels)
}

/// Loss and its leaves for one batch; the caller backpropagates.
pub struct LossRecord {
    pub tape: Tape,
    pub loss: Var,
    pub k_backbone: Var,
    pub leaves: Vec<Var>,
}

pub fn record_loss(net: &Network, x: &Matrix, labels: &[usize], epsilon: f64, method: CertMethod) -> Result<LossRecord> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (rec, leaves) = net.record_params(&mut tape, xv)?;
    let aug = record_augmented(&mut tape, &rec, net.head(), epsilon, method)?;
    let loss = loss(&mut tape, aug, labels)?;
    Ok(LossRecord { tape, loss, k_backbone: rec.k_backbone, leaves })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub clean_acc: f64,
    pub vra: Vec<f64>,
    pub loss: f64,
    pub lip_product: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epsilons: Vec<f64>,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    fn header(&self) -> String {
        let mut h = String::from("epoch,clean_acc");
        for e in &self.epsilons {
            let _ = write!(h, ",vra@{e}");
        }
        h.push_str(",loss,lip_product");
        h
    }

    /// Deterministic log; wall time lives in [`TrainLog::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{}", r.epoch, r.clean_acc);
            for v in &r.vra {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", r.loss, r.lip_product);
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:.6}", r.epoch, r.seconds);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Clean accuracy and VRA per radius, after re-converging every bound.
pub fn evaluate(net: &mut Network, data: &Dataset, epsilons: &[f64], method: CertMethod) -> Result<(f64, Vec<f64>, f64)> {
    net.refresh(Refresh::Full)?;
    let frozen = net.freeze()?;
    let grid: Vec<f64> = if epsilons.is_empty() { vec![0.0] } else { epsilons.to_vec() };
    let report = certify_dataset(&frozen, data, &grid, method)?;
    let vra = (0..epsilons.len()).map(|e| report.vra(e)).collect();
    Ok((report.clean_accuracy(), vra, frozen.k_backbone()))
}

/// Numerical failures that, once parameters have moved, mean the run blew up.
fn is_breakdown(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite
            | Error::RankDeficient
            | Error::NonConvergence { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::SingularMatrix { .. }
            | Error::SingularTriangular { .. }
    )
}

/// Trains `net` in place.
///
/// Every step runs one power iteration per regularized layer, records the
/// effective weights from raw parameters, and applies a momentum SGD update
/// with a cosine learning rate. Every epoch re-converges all bounds and
/// evaluates on `eval` (the real pool when `None`).
pub fn train(net: &mut Network, real: &Dataset, generated: &[Sample], eval: Option<&Dataset>, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    if real.is_empty() && config.mix.real_count() > 0 {
        return Err(Error::EmptyDataset);
    }
    if real.shape.len() != net.input_dim() {
        return Err(Error::shape(format!("network expects {} features, data has {}", net.input_dim(), real.shape.len())));
    }
    if real.classes != net.classes() {
        return Err(Error::shape(format!("network has {} classes, data has {}", net.classes(), real.classes)));
    }
    if generated.iter().any(|s| s.input.len() != net.input_dim() || s.label >= net.classes()) {
        return Err(Error::shape("generated samples do not match the network"));
    }
    let eval = eval.unwrap_or(real);
    let steps = config.steps_per_epoch.unwrap_or_else(|| {
        let per_batch = config.mix.real_count().max(1);
        let pool = if config.mix.real_count() > 0 { real.len() } else { generated.len() };
        pool.div_ceil(per_batch).max(1)
    });
    let total = steps * config.epochs;
    let base_lr = config.base_learning_rate();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Matrix> = net.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
    let mut log = TrainLog { epsilons: config.eval_epsilons.clone(), records: Vec::new() };

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let eps = eps_schedule(epoch, config);
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let batch = mix_batch(&real.samples, generated, config.mix, &mut rng)?;
            let updated = epoch > 0 || step > 0;
            let diverged = |e: Error| if updated && is_breakdown(&e) { Error::DivergedLoss { epoch } } else { e };
            net.refresh(Refresh::Step).map_err(diverged)?;
            let rec = record_loss(net, &batch.inputs, &batch.labels, eps, config.method).map_err(diverged)?;
            let value = rec.tape.scalar(rec.loss);
            if !value.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            loss_sum += value;
            let grads = rec.tape.grad(rec.loss)?;
            let grads: Vec<Matrix> = rec.leaves.iter().map(|&l| grads.wrt(l)).collect();
            let norm = grads.iter().map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
            let clip = match config.grad_clip {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            let lr = cosine_lr(base_lr, epoch * steps + step, total);
            for ((p, v), g) in net.params_mut().into_iter().zip(&mut velocity).zip(&grads) {
                for ((pi, vi), gi) in p.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(g.as_slice()) {
                    *vi = config.momentum * *vi + clip * gi;
                    *pi -= lr * *vi;
                }
            }
            if net.params().iter().any(|p| p.as_slice().iter().any(|v| !v.is_finite())) {
                return Err(Error::DivergedLoss { epoch });
            }
        }
        let (clean_acc, vra, lip_product) = evaluate(net, eval, &config.eval_epsilons, config.method)
            .map_err(|e| if is_breakdown(&e) { Error::DivergedLoss { epoch } } else { e })?;
        log.records.push(EpochRecord {
            epoch,
            epsilon: eps,
            clean_acc,
            vra,
            loss: loss_sum / steps as f64,
            lip_product,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mechanism: DenseMechanism,
    pub clean_acc: f64,
    pub vra: Vec<f64>,
    pub seconds_per_epoch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub epsilons: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Deterministic columns only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mechanism,clean_acc");
        for e in &self.epsilons {
            let _ = write!(out, ",vra@{e}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.mechanism, r.clean_acc);
            for v in &r.vra {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Clean accuracy and VRA in percent; timings are kept out so reruns
    /// compare equal.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| dense layer | clean |");
        for e in &self.epsilons {
            let _ = write!(out, " VRA@{e:.4} |");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(self.epsilons.len()));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {} | {:.2} |", r.mechanism, 100.0 * r.clean_acc);
            for v in &r.vra {
                let _ = write!(out, " {:.2} |", 100.0 * v);
            }
            out.push('\n');
        }
        out
    }
}

/// One training run per dense mechanism; backbone, data, seed and schedule
/// are shared.
pub fn ablate_dense_mechanism(
    base: &Architecture,
    mechanisms: &[DenseMechanism],
    real: &Dataset,
    generated: &[Sample],
    eval: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(mechanisms.len());
    for &mechanism in mechanisms {
        let arch = Architecture { mechanism, ..base.clone() };
        let mut net = arch.build(&mut ChaCha8Rng::seed_from_u64(config.seed))?;
        let log = train(&mut net, real, generated, eval, config)?;
        let last = log.last().expect("at least one epoch");
        let seconds = log.records.iter().map(|r| r.seconds).sum::<f64>() / log.records.len() as f64;
        rows.push(AblationRow { mechanism, clean_acc: last.clean_acc, vra: last.vra.clone(), seconds_per_epoch: seconds });
    }
    Ok(AblationTable { epsilons: config.eval_epsilons.clone(), rows })
}

/// Tight-bound matrix for a trained network at `epsilon`, as the loss sees it.
pub fn tight_bounds(head_w: &Matrix, k_backbone: f64, epsilon: f64) -> Matrix {
    pairwise_bounds(&head_distances(head_w), k_backbone, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::certify_tight_logits;
    use crate::layers::InputShape;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn augmented_logit_examples() {
        let y = Matrix::row_vector(vec![2.0, 0.5]);
        let z = gloro_augmented_logits(&y, &tight_bounds(&Matrix::identity(2), 1.0, 0.0)).unwrap();
        assert_eq!(z.row(0), &[2.0, 0.5, 0.5]);
        let z = gloro_augmented_logits(&y, &tight_bounds(&Matrix::identity(2), 1.0, 0.5)).unwrap();
        assert!((z[(0, 2)] - (0.5 + SQRT_2 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_c_plus_one() {
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::from_fn(3, 5, |_, _| 0.7));
        let l = loss(&mut tape, z, &[0, 1, 3]).unwrap();
        assert!((tape.scalar(l) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_in_true_logit() {
        let mut last = f64::INFINITY;
        for t in 0..10 {
            let mut tape = Tape::new();
            let z = tape.constant(Matrix::row_vector(vec![t as f64 * 0.3, 0.4, 0.9]));
            let l = loss(&mut tape, z, &[0]).unwrap();
            assert!(tape.scalar(l) < last);
            last = tape.scalar(l);
        }
    }

    #[test]
    fn label_bottom_is_rejected() {
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::zeros(1, 3));
        assert!(loss(&mut tape, z, &[2]).is_err());
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig { epochs: 11, epsilon_train: 0.2, ramp_fraction: 0.5, ..Default::default() };
        assert_eq!(eps_schedule(0, &cfg), 0.0);
        assert!((eps_schedule(5, &cfg) - 0.2).abs() < 1e-15);
        assert!((eps_schedule(2, &cfg) - 0.08).abs() < 1e-15);
        assert!((eps_schedule(10, &cfg) - 0.2).abs() < 1e-15);
        let full = TrainConfig { ramp_fraction: 1.0, ..cfg.clone() };
        assert_eq!(eps_schedule(10, &full), 0.2);
        let mut prev = 0.0;
        for e in 0..11 {
            assert!(eps_schedule(e, &full) >= prev);
            prev = eps_schedule(e, &full);
        }
    }

    #[test]
    fn loss_matches_certification_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agree = 0;
        for _ in 0..1000 {
            let c = rng.random_range(2..6);
            let d = rng.random_range(1..5);
            let w = Matrix::random_uniform(c, d, 1.0, &mut rng);
            let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kb = rng.random_range(0.1..2.0);
            let eps = rng.random_range(0.0..0.5);
            let z = gloro_augmented_logits(&Matrix::row_vector(logits.clone()), &tight_bounds(&w, kb, eps)).unwrap();
            let j = crate::autodiff::argmax(&logits);
            let cert = certify_tight_logits(&logits, &head_distances(&w), kb, eps);
            assert_eq!(z[(0, c)] < logits[j], cert.certified_at);
            agree += 1;
        }
        assert_eq!(agree, 1000);
    }

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let label = i % 2;
                let x = if label == 0 { rng.random_range(0.5..1.5) } else { rng.random_range(-1.5..-0.5) };
                Sample::real(vec![x, rng.random_range(-1.0..1.0)], label)
            })
            .collect();
        Dataset::new(InputShape::Vector { dim: 2 }, 2, None, samples).unwrap()
    }

    fn small_net(seed: u64) -> Network {
        let arch = Architecture { dense_depth: 1, dense_width: 8, ..Architecture::vector(2, 2, DenseMechanism::CholeskyResidual) };
        arch.build(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_epsilon_trains_a_separable_problem() {
        let data = separable(200, 1);
        let mut net = small_net(2);
        let cfg = TrainConfig {
            epsilon_train: 0.0,
            epochs: 10,
            mix: MixSpec::new(1, 0, 32).unwrap(),
            eval_epsilons: vec![0.0],
            ..Default::default()
        };
        let log = train(&mut net, &data, &[], None, &cfg).unwrap();
        assert!(log.last().unwrap().clean_acc >= 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(64, 3);
        let cfg = TrainConfig { epochs: 3, mix: MixSpec::new(1, 0, 16).unwrap(), epsilon_train: 0.1, ..Default::default() };
        let run = || {
            let mut net = small_net(4);
            let log = train(&mut net, &data, &[], None, &cfg).unwrap();
            (log.to_csv(), net.params().into_iter().cloned().collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ablation_repeats_identical_rows() {
        let data = separable(32, 5);
        let base = Architecture { dense_depth: 1, dense_width: 4, ..Architecture::vector(2, 2, DenseMechanism::CholeskyResidual) };
        let cfg = TrainConfig { epochs: 2, mix: MixSpec::new(1, 0, 16).unwrap(), ..Default::default() };
        let table = ablate_dense_mechanism(&base, &[DenseMechanism::Aol, DenseMechanism::Aol], &data, &[], None, &cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].vra, table.rows[1].vra);
        assert_eq!(table.rows[0].clean_acc, table.rows[1].clean_acc);
    }

    #[test]
    fn vra_at_zero_is_clean_accuracy() {
        let data = separable(64, 6);
        let mut net = small_net(7);
        let (clean, vra, _) = evaluate(&mut net, &data, &[0.0, 0.1, 1.0], CertMethod::Tight).unwrap();
        assert_eq!(vra[0], clean);
        assert!(vra[1] <= vra[0] && vra[2] <= vra[1]);
    }

    fn loss_gradient_error(arch: &Architecture, method: CertMethod, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = arch.build(&mut rng).unwrap();
        net.refresh(Refresh::Full).unwrap();
        let x = Matrix::random_uniform(4, net.input_dim(), 1.0, &mut rng);
        let labels: Vec<usize> = (0..4).map(|i| i % arch.classes).collect();
        let params: Vec<Matrix> = net.params().into_iter().cloned().collect();
        let report = crate::autodiff::finite_diff_check(
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let rec = net.record_bound_to(tape, xv, vars)?;
                let aug = record_augmented(tape, &rec, net.head(), 0.3, method)?;
                loss(tape, aug, &labels)
            },
            &params,
            1e-5,
        )
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn full_loss_matches_finite_differences() {
        for mechanism in DenseMechanism::ALL {
            let arch = Architecture { dense_depth: 1, dense_width: 6, ..Architecture::vector(3, 3, mechanism) };
            for method in [CertMethod::Tight, CertMethod::Naive] {
                let err = loss_gradient_error(&arch, method, 11);
                assert!(err <= 1e-4, "{mechanism} {method}: {err:e}");
            }
        }
        let image = Architecture {
            input: InputShape::Image { channels: 1, height: 4, width: 4 },
            conv_channels: 2,
            conv_blocks: 1,
            spatial_groups: Some(2),
            dense_depth: 1,
            dense_width: 4,
            ..Architecture::vector(0, 2, DenseMechanism::CholeskyResidual)
        };
        let err = loss_gradient_error(&image, CertMethod::Tight, 12);
        assert!(err <= 1e-4, "image: {err:e}");
    }

    proptest! {
        #[test]
        fn zero_epsilon_bottom_is_runner_up(logits in proptest::collection::vec(-5.0f64..5.0, 2..6)) {
            let c = logits.len();
            let z = gloro_augmented_logits(&Matrix::row_vector(logits.clone()), &Matrix::zeros(c, c)).unwrap();
            let j = crate::autodiff::argmax(&logits);
            let runner = logits.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(z[(0, c)], runner);
        }
    }
}

//! Margin-based robustness certification, verified robust accuracy and an
//! ℓ2 PGD attacker for empirical checks.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::argmax;
use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Frozen;
use crate::numerics::matrix::norm2;
use crate::numerics::Matrix;

/// Rows per parallel work item; fixed so results do not depend on the
/// thread count.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertMethod {
    /// Global bound: `f_j − √2·K·ε > f_i`.
    Naive,
    /// Pairwise head bound: `f_j − f_i > K_backbone·‖w_j − w_i‖·ε`.
    #[default]
    Tight,
}

impl fmt::Display for CertMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertMethod::Naive => "naive",
            CertMethod::Tight => "tight",
        })
    }
}

impl FromStr for CertMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(CertMethod::Naive),
            "tight" => Ok(CertMethod::Tight),
            _ => Err(Error::invalid(format!("unknown certification method '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertResult {
    pub predicted: usize,
    /// `f_j − max_{i≠j} f_i`; 0 on a tied argmax.
    pub margin: f64,
    pub certified_radius: f64,
    pub epsilon: f64,
    pub certified_at: bool,
    pub method: CertMethod,
}

fn margin(logits: &[f64]) -> (usize, f64) {
    let j = argmax(logits);
    let runner_up = logits.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    (j, logits[j] - runner_up)
}

fn check_logits(logits: &[f64]) {
    assert!(logits.len() >= 2, "certification needs at least two classes");
}

/// Certification from a bound `k` on the whole network.
///
/// Certified at `ε` iff `f_i + √2·k·ε < f_j` for every `i ≠ j`; the radius is
/// `margin / (√2·k)`.
pub fn certify_naive(logits: &[f64], k: f64, epsilon: f64) -> CertResult {
    check_logits(logits);
    let (j, m) = margin(logits);
    let threshold = SQRT_2 * k * epsilon;
    let certified_at = logits.iter().enumerate().all(|(i, &fi)| i == j || fi + threshold < logits[j]);
    let certified_radius = if m <= 0.0 {
        0.0
    } else if k > 0.0 {
        m / (SQRT_2 * k)
    } else {
        f64::INFINITY
    };
    CertResult { predicted: j, margin: m, certified_radius, epsilon, certified_at, method: CertMethod::Naive }
}

/// `D_ij = ‖w_i − w_j‖₂` over the head rows, computed exactly as the
/// training loss does.
pub fn head_distances(w: &Matrix) -> Matrix {
    let n = w.rows();
    Matrix::from_fn(n, n, |i, j| w.row(i).iter().zip(w.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Pairwise bound matrix `K_ji = D_ji·k_backbone·ε` as it enters the ⊥ logit.
pub fn pairwise_bounds(distances: &Matrix, k_backbone: f64, epsilon: f64) -> Matrix {
    distances.map(|d| d * k_backbone * epsilon)
}

/// Tight certification from logits and precomputed head distances.
pub fn certify_tight_logits(logits: &[f64], distances: &Matrix, k_backbone: f64, epsilon: f64) -> CertResult {
    check_logits(logits);
    let (j, m) = margin(logits);
    let mut certified_at = true;
    let mut radius = f64::INFINITY;
    for (i, &fi) in logits.iter().enumerate() {
        if i == j {
            continue;
        }
        let kji = distances[(j, i)] * k_backbone;
        if !(fi + kji * epsilon < logits[j]) {
            certified_at = false;
        }
        let gap = logits[j] - fi;
        let pair = if gap <= 0.0 {
            0.0
        } else if kji > 0.0 {
            gap / kji
        } else {
            f64::INFINITY
        };
        radius = radius.min(pair);
    }
    CertResult { predicted: j, margin: m, certified_radius: radius, epsilon, certified_at, method: CertMethod::Tight }
}

/// Certification using the head rows `w_i` and a bound on everything before
/// the head.
pub fn certify_tight(penultimate: &[f64], head_w: &Matrix, head_b: &[f64], k_backbone: f64, epsilon: f64) -> CertResult {
    let mut logits = head_w.matvec(penultimate);
    logits.iter_mut().zip(head_b).for_each(|(l, b)| *l += b);
    certify_tight_logits(&logits, &head_distances(head_w), k_backbone, epsilon)
}

/// Bounds of a frozen network, ready to certify its logits.
#[derive(Clone, Debug)]
pub struct Certifier {
    pub distances: Matrix,
    pub k_backbone: f64,
    pub k_total: f64,
}

impl Certifier {
    pub fn new(net: &Frozen<'_>) -> Self {
        Self { distances: head_distances(&net.head().w), k_backbone: net.k_backbone(), k_total: net.k_total() }
    }

    pub fn certify(&self, logits: &[f64], epsilon: f64, method: CertMethod) -> CertResult {
        match method {
            CertMethod::Naive => certify_naive(logits, self.k_total, epsilon),
            CertMethod::Tight => certify_tight_logits(logits, &self.distances, self.k_backbone, epsilon),
        }
    }
}

/// Logits for a batch, computed in fixed-size chunks in parallel.
pub fn batch_logits(net: &Frozen<'_>, x: &Matrix) -> Result<Matrix> {
    if x.cols() != net.input_dim() {
        return Err(Error::shape(format!("network expects {} features, got {}", net.input_dim(), x.cols())));
    }
    let starts: Vec<usize> = (0..x.rows()).step_by(CHUNK).collect();
    let parts: Vec<Matrix> = starts
        .par_iter()
        .map(|&s| net.logits(&x.block(s, 0, CHUNK.min(x.rows() - s), x.cols())))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(x.rows() * net.classes());
    for p in parts {
        data.extend(p.into_vec());
    }
    Matrix::new(x.rows(), net.classes(), data)
}

/// Per-point certification of a dataset at several radii.
#[derive(Clone, Debug)]
pub struct CertificationReport {
    pub method: CertMethod,
    pub labels: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `results[e][p]`: point `p` at `epsilons[e]`.
    pub results: Vec<Vec<CertResult>>,
}

impl CertificationReport {
    pub fn clean_accuracy(&self) -> f64 {
        let first = self.results.first().map(|r| r.as_slice()).unwrap_or(&[]);
        let correct = first.iter().zip(&self.labels).filter(|(r, &l)| r.predicted == l).count();
        correct as f64 / self.labels.len().max(1) as f64
    }

    /// Fraction of points both correct and certified at `epsilons[e]`.
    pub fn vra(&self, e: usize) -> f64 {
        let ok = self.results[e].iter().zip(&self.labels).filter(|(r, &l)| r.certified_at && r.predicted == l).count();
        ok as f64 / self.labels.len().max(1) as f64
    }
}

pub fn certify_dataset(net: &Frozen<'_>, data: &Dataset, epsilons: &[f64], method: CertMethod) -> Result<CertificationReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(Error::invalid(format!("epsilon must be finite and non-negative, got {e}")));
    }
    let logits = batch_logits(net, &data.inputs())?;
    let cert = Certifier::new(net);
    let results = epsilons
        .iter()
        .map(|&eps| (0..logits.rows()).map(|p| cert.certify(logits.row(p), eps, method)).collect())
        .collect();
    Ok(CertificationReport { method, labels: data.labels(), epsilons: epsilons.to_vec(), results })
}

/// Verified robust accuracy at one radius.
pub fn vra(net: &Frozen<'_>, data: &Dataset, epsilon: f64, method: CertMethod) -> Result<f64> {
    Ok(certify_dataset(net, data, &[epsilon], method)?.vra(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(epsilon: f64, steps: usize, restarts: usize) -> Self {
        Self { epsilon, steps, restarts, seed: 0 }
    }

    /// `2.5·ε/steps`.
    pub fn step_size(&self) -> f64 {
        2.5 * self.epsilon / self.steps.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub success: bool,
    pub adversarial: Vec<f64>,
    pub perturbation_norm: f64,
}

fn project(x: &[f64], delta: &mut [f64], eps: f64, range: Option<(f64, f64)>) {
    let n = norm2(delta);
    if n > eps {
        let s = if n > 0.0 { eps / n } else { 0.0 };
        delta.iter_mut().for_each(|d| *d *= s);
    }
    if let Some((lo, hi)) = range {
        for (d, &xi) in delta.iter_mut().zip(x) {
            *d = (xi + *d).clamp(lo, hi) - xi;
        }
    }
}

/// ℓ2 PGD on the margin loss `max_{i≠y} f_i − f_y`, batched over rows of
/// `x`. A point counts as broken as soon as any iterate inside the ball
/// (including the clean input) is misclassified; inputs are clamped to
/// `range`. With zero steps only clean misclassifications count.
pub fn pgd_attack_batch(
    net: &Frozen<'_>,
    x: &Matrix,
    labels: &[usize],
    range: Option<(f64, f64)>,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    if labels.len() != x.rows() {
        return Err(Error::shape("one label per input row is required"));
    }
    if x.cols() != net.input_dim() {
        return Err(Error::shape(format!("network expects {} features, got {}", net.input_dim(), x.cols())));
    }
    if !(cfg.epsilon >= 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::invalid("epsilon must be finite and non-negative"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= net.classes()) {
        return Err(Error::invalid(format!("label {l} out of range")));
    }
    let starts: Vec<usize> = (0..x.rows()).step_by(CHUNK).collect();
    let parts: Vec<Vec<AttackResult>> = starts
        .par_iter()
        .map(|&s| {
            let rows = CHUNK.min(x.rows() - s);
            let seed = cfg.seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            attack_chunk(net, &x.block(s, 0, rows, x.cols()), &labels[s..s + rows], range, cfg, seed)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn attack_chunk(
    net: &Frozen<'_>,
    x: &Matrix,
    labels: &[usize],
    range: Option<(f64, f64)>,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<AttackResult>> {
    let (b, d) = x.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let rec = net.record(&mut tape, xv)?;
    let mut results: Vec<AttackResult> =
        (0..b).map(|i| AttackResult { success: false, adversarial: x.row(i).to_vec(), perturbation_norm: 0.0 }).collect();

    let check = |tape: &Tape, point: &Matrix, delta: &Matrix, results: &mut Vec<AttackResult>| {
        let logits = tape.value(rec.logits);
        for i in 0..b {
            if !results[i].success && argmax(logits.row(i)) != labels[i] {
                results[i] = AttackResult {
                    success: true,
                    adversarial: point.row(i).to_vec(),
                    perturbation_norm: norm2(delta.row(i)),
                };
            }
        }
    };
    check(&tape, x, &Matrix::zeros(b, d), &mut results);
    if cfg.epsilon == 0.0 || cfg.steps == 0 {
        return Ok(results);
    }
    let alpha = cfg.step_size();
    for _ in 0..cfg.restarts {
        let mut delta = Matrix::zeros(b, d);
        for i in 0..b {
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let u: f64 = rand::Rng::random(&mut rng);
            let r = cfg.epsilon * u.powf(1.0 / d as f64) / norm2(&dir).max(f64::MIN_POSITIVE);
            delta.row_mut(i).iter_mut().zip(&dir).for_each(|(v, g)| *v = r * g);
            project(x.row(i), delta.row_mut(i), cfg.epsilon, range);
        }
        for step in 0..=cfg.steps {
            let point = x.add(&delta)?;
            tape.evaluate(&[(xv, point.clone())])?;
            check(&tape, &point, &delta, &mut results);
            if step == cfg.steps || results.iter().all(|r| r.success) {
                break;
            }
            let logits = tape.value(rec.logits).clone();
            let mut seed_m = Matrix::zeros(b, logits.cols());
            for i in 0..b {
                if results[i].success {
                    continue;
                }
                let y = labels[i];
                let row = logits.row(i);
                let other = (0..row.len()).filter(|&c| c != y).fold(None, |best: Option<usize>, c| match best {
                    Some(bc) if row[bc] >= row[c] => Some(bc),
                    _ => Some(c),
                });
                if let Some(o) = other {
                    seed_m[(i, o)] = 1.0;
                    seed_m[(i, y)] = -1.0;
                }
            }
            let g = tape.backward(rec.logits, &seed_m)?.wrt(xv);
            for i in 0..b {
                let gn = norm2(g.row(i));
                if results[i].success || gn == 0.0 {
                    continue;
                }
                delta.row_mut(i).iter_mut().zip(g.row(i)).for_each(|(v, gi)| *v += alpha * gi / gn);
                project(x.row(i), delta.row_mut(i), cfg.epsilon, range);
            }
        }
    }
    Ok(results)
}

/// Attack on a single input.
pub fn pgd_attack(net: &Frozen<'_>, x: &[f64], label: usize, range: Option<(f64, f64)>, cfg: &AttackConfig) -> Result<AttackResult> {
    let xm = Matrix::row_vector(x.to_vec());
    Ok(pgd_attack_batch(net, &xm, &[label], range, cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Head, InputShape, Network};
    use proptest::prelude::*;

    #[test]
    fn naive_examples() {
        let r = certify_naive(&[2.0, 0.5], 1.0, 0.1);
        assert!(r.certified_at);
        assert!((r.certified_radius - 1.5 / SQRT_2).abs() < 1e-12);
        let tied = certify_naive(&[1.0, 1.0], 1.0, 1e-9);
        assert!(!tied.certified_at && tied.certified_radius == 0.0 && tied.margin == 0.0);
        assert!(certify_naive(&[0.3, 0.2], 5.0, 0.0).certified_at);
        assert!(!certify_naive(&[0.3, 0.3], 5.0, 0.0).certified_at);
    }

    #[test]
    fn tight_examples() {
        let r = certify_tight(&[2.0, 0.5], &Matrix::identity(2), &[0.0, 0.0], 1.0, 0.5);
        assert!(r.certified_at);
        assert!((r.certified_radius - 1.5 / SQRT_2).abs() < 1e-12);
        let dup = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(certify_tight(&[0.4, 0.7], &dup, &[0.0, 0.0], 1.0, 0.1).certified_radius, 0.0);
        let r = certify_tight(&[0.4, 0.7], &dup, &[0.0, 1.0], 1.0, 10.0);
        assert!(r.certified_at && r.certified_radius.is_infinite());
    }

    fn linear_net(w: &[f64]) -> Network {
        let mut rows = Matrix::zeros(2, w.len());
        for (j, &v) in w.iter().enumerate() {
            rows[(0, j)] = v;
            rows[(1, j)] = -v;
        }
        let head = Head::from_weight(rows, &mut ChaCha8Rng::seed_from_u64(0));
        Network::new(Vec::new(), head, InputShape::Vector { dim: w.len() }).unwrap()
    }

    #[test]
    fn attack_on_linear_model_matches_closed_form() {
        let w = [0.6, -0.8, 0.0];
        let mut net = linear_net(&w);
        let net = net.freeze().unwrap();
        let x = [0.5, 0.0, 0.2];
        // f = (wᵀx, −wᵀx), margin m = 2·wᵀx = 0.6, distance to the boundary m/(2‖w‖) = 0.3.
        for (eps, expect) in [(0.29, false), (0.31, true), (0.0, false), (1.0, true)] {
            let r = pgd_attack(&net, &x, 0, None, &AttackConfig::new(eps, 100, 5)).unwrap();
            assert_eq!(r.success, expect, "eps {eps}");
            assert!(r.perturbation_norm <= eps + 1e-9);
        }
    }

    #[test]
    fn clean_misclassification_is_immediate() {
        let mut net = linear_net(&[1.0]);
        let net = net.freeze().unwrap();
        let r = pgd_attack(&net, &[1.0], 1, None, &AttackConfig::new(0.0, 0, 1)).unwrap();
        assert!(r.success && r.perturbation_norm == 0.0);
    }

    #[test]
    fn attack_respects_range() {
        let mut net = linear_net(&[1.0, 1.0]);
        let net = net.freeze().unwrap();
        let r = pgd_attack(&net, &[0.05, 0.05], 0, Some((0.0, 1.0)), &AttackConfig::new(1.0, 50, 2)).unwrap();
        assert!(!r.success);
        assert!(r.adversarial.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Matrix, f64)> {
        (2usize..6, 2usize..6).prop_flat_map(|(c, d)| {
            (
                proptest::collection::vec(-3.0f64..3.0, c),
                proptest::collection::vec(-1.0f64..1.0, c * d),
                0.1f64..3.0,
            )
                .prop_map(move |(l, w, k)| (l, Matrix::new(c, d, w).unwrap(), k))
        })
    }

    proptest! {
        #[test]
        fn tight_dominates_naive((logits, w, kb) in arb_instance()) {
            let head_norm = crate::numerics::spectral_norm_oracle(&w);
            let naive = certify_naive(&logits, kb * head_norm, 0.0);
            let tight = certify_tight_logits(&logits, &head_distances(&w), kb, 0.0);
            prop_assert!(tight.certified_radius >= naive.certified_radius - 1e-12);
        }

        #[test]
        fn certification_is_monotone_in_epsilon((logits, w, kb) in arb_instance(), e1 in 0.0f64..2.0, e2 in 0.0f64..2.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let d = head_distances(&w);
            for method in [CertMethod::Naive, CertMethod::Tight] {
                let at = |e| match method {
                    CertMethod::Naive => certify_naive(&logits, kb, e).certified_at,
                    CertMethod::Tight => certify_tight_logits(&logits, &d, kb, e).certified_at,
                };
                prop_assert!(!at(hi) || at(lo));
            }
        }

        #[test]
        fn naive_radius_scales_with_logits(logits in proptest::collection::vec(-3.0f64..3.0, 2..6), c in 0.1f64..10.0, k in 0.1f64..3.0) {
            let scaled: Vec<f64> = logits.iter().map(|v| v * c).collect();
            let a = certify_naive(&logits, k, 0.0).certified_radius;
            let b = certify_naive(&scaled, k, 0.0).certified_radius;
            prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

//! Python bindings: orthogonalization, certification of raw logits, and a
//! small vector-input model that can be trained and certified.
//!
//! Matrices cross the boundary as lists of rows.

use lipcert::certify::{certify_dataset, certify_naive, certify_tight_logits, head_distances, CertMethod, CertResult};
use lipcert::data::{two_moons as moons, Dataset, MixSpec, Sample};
use lipcert::layers::{
    orthogonalize_cayley, orthogonalize_cholesky, orthogonalize_lot, orthogonalize_matexp, Architecture, DenseMechanism, InputShape,
    Network,
};
use lipcert::train::{train, TrainConfig};
use lipcert::Matrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: lipcert::Error) -> PyErr {
    match e {
        lipcert::Error::ShapeMismatch(_) | lipcert::Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn method(name: &str) -> PyResult<CertMethod> {
    name.parse().map_err(err)
}

/// `(predicted, margin, certified_radius, certified)`.
type CertTuple = (usize, f64, f64, bool);

fn tuple(r: &CertResult) -> CertTuple {
    (r.predicted, r.margin, r.certified_radius, r.certified_at)
}

/// Orthogonalizes a square or rectangular matrix with `cholesky`, `cayley`,
/// `matexp` or `lot`.
#[pyfunction]
#[pyo3(signature = (a, method = "cholesky"))]
fn orthogonalize(a: Vec<Vec<f64>>, method: &str) -> PyResult<Vec<Vec<f64>>> {
    let a = matrix(&a)?;
    let w = match method {
        "cholesky" => orthogonalize_cholesky(&a),
        "cayley" => orthogonalize_cayley(&a),
        "matexp" => orthogonalize_matexp(&a),
        "lot" => orthogonalize_lot(&a, lipcert::layers::ortho::LOT_DEFAULT_ITERS),
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    }
    .map_err(err)?;
    Ok(rows(&w))
}

/// Certifies one logit vector from a whole-network Lipschitz bound `k`.
#[pyfunction]
fn certify_logits_naive(logits: Vec<f64>, k: f64, epsilon: f64) -> PyResult<CertTuple> {
    if logits.len() < 2 {
        return Err(PyValueError::new_err("need at least two logits"));
    }
    Ok(tuple(&certify_naive(&logits, k, epsilon)))
}

/// Certifies one logit vector from the head weights and a backbone bound.
#[pyfunction]
fn certify_logits_tight(logits: Vec<f64>, head_w: Vec<Vec<f64>>, k_backbone: f64, epsilon: f64) -> PyResult<CertTuple> {
    let w = matrix(&head_w)?;
    if logits.len() < 2 || w.rows() != logits.len() {
        return Err(PyValueError::new_err("logits must have one entry per head row, at least two"));
    }
    Ok(tuple(&certify_tight_logits(&logits, &head_distances(&w), k_backbone, epsilon)))
}

/// `(inputs, labels)` for the two-moons toy problem.
#[pyfunction]
fn two_moons(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = moons(n, seed);
    (rows(&d.inputs()), d.labels())
}

/// Vector-input classifier with a Lipschitz-bounded backbone.
#[pyclass(unsendable)]
struct Model {
    net: Network,
}

impl Model {
    fn dataset(&self, x: Vec<Vec<f64>>, y: Vec<usize>) -> PyResult<Dataset> {
        if x.len() != y.len() {
            return Err(PyValueError::new_err("inputs and labels differ in length"));
        }
        let samples = x.into_iter().zip(y).map(|(x, y)| Sample::real(x, y)).collect();
        Dataset::new(InputShape::Vector { dim: self.net.input_dim() }, self.net.classes(), None, samples).map_err(err)
    }
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (input_dim, classes, mechanism = "cholesky-residual", depth = 2, width = 16, seed = 0))]
    fn new(input_dim: usize, classes: usize, mechanism: &str, depth: usize, width: usize, seed: u64) -> PyResult<Self> {
        let mech: DenseMechanism = mechanism.parse().map_err(err)?;
        let arch = Architecture { dense_depth: depth, dense_width: width, ..Architecture::vector(input_dim, classes, mech) };
        let net = arch.build(&mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
        Ok(Self { net })
    }

    /// Trains in place; returns the final epoch's clean accuracy on the
    /// training data.
    #[pyo3(signature = (x, y, epsilon, epochs = 100, batch_size = 64, learning_rate = 0.1, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        x: Vec<Vec<f64>>,
        y: Vec<usize>,
        epsilon: f64,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<f64> {
        let data = self.dataset(x, y)?;
        let cfg = TrainConfig {
            epsilon_train: epsilon,
            epochs,
            mix: MixSpec::new(1, 0, batch_size).map_err(err)?,
            learning_rate: Some(learning_rate),
            seed,
            eval_epsilons: vec![epsilon],
            ..TrainConfig::default()
        };
        let log = train(&mut self.net, &data, &[], None, &cfg).map_err(err)?;
        Ok(log.last().map(|r| r.clean_acc).unwrap_or(0.0))
    }

    fn logits(&mut self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&x)?;
        let frozen = self.net.freeze().map_err(err)?;
        Ok(rows(&frozen.logits(&x).map_err(err)?))
    }

    /// Upper bound on the Lipschitz constant of the penultimate features.
    fn k_backbone(&mut self) -> PyResult<f64> {
        Ok(self.net.freeze().map_err(err)?.k_backbone())
    }

    /// Per-point `(predicted, margin, certified_radius, certified)` at one radius.
    #[pyo3(signature = (x, epsilon, method = "tight"))]
    fn certify(&mut self, x: Vec<Vec<f64>>, epsilon: f64, method: &str) -> PyResult<Vec<CertTuple>> {
        let m = self::method(method)?;
        let y = vec![0; x.len()];
        let data = self.dataset(x, y)?;
        let frozen = self.net.freeze().map_err(err)?;
        let report = certify_dataset(&frozen, &data, &[epsilon], m).map_err(err)?;
        Ok(report.results[0].iter().map(tuple).collect())
    }

    /// Fraction of points both correctly classified and certified at `epsilon`.
    #[pyo3(signature = (x, y, epsilon, method = "tight"))]
    fn vra(&mut self, x: Vec<Vec<f64>>, y: Vec<usize>, epsilon: f64, method: &str) -> PyResult<f64> {
        let m = self::method(method)?;
        let data = self.dataset(x, y)?;
        let frozen = self.net.freeze().map_err(err)?;
        Ok(certify_dataset(&frozen, &data, &[epsilon], m).map_err(err)?.vra(0))
    }
}

#[pymodule]
fn _lipcert(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(orthogonalize, m)?)?;
    m.add_function(wrap_pyfunction!(certify_logits_naive, m)?)?;
    m.add_function(wrap_pyfunction!(certify_logits_tight, m)?)?;
    m.add_function(wrap_pyfunction!(two_moons, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}

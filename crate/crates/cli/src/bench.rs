//! Wall-clock comparison of the orthogonalization methods.

use std::fmt::Write as _;
use std::time::Instant;

use lipcert::layers::ortho::LOT_DEFAULT_ITERS;
use lipcert::layers::{orthogonalize_cayley, orthogonalize_cholesky, orthogonalize_lot, orthogonalize_matexp};
use lipcert::{Matrix, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every benchmarked method must reach this `‖WᵀW − I‖_F`.
pub const RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMethod {
    Cholesky,
    Cayley,
    Matexp,
    Lot,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [BenchMethod::Cholesky, BenchMethod::Cayley, BenchMethod::Matexp, BenchMethod::Lot];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Cholesky => "cholesky",
            BenchMethod::Cayley => "cayley",
            BenchMethod::Matexp => "matexp",
            BenchMethod::Lot => "lot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s.trim())
    }

    fn run(self, raw: &Matrix) -> Result<Matrix> {
        match self {
            BenchMethod::Cholesky => orthogonalize_cholesky(raw),
            BenchMethod::Cayley => orthogonalize_cayley(raw),
            BenchMethod::Matexp => orthogonalize_matexp(raw),
            BenchMethod::Lot => orthogonalize_lot(raw, LOT_DEFAULT_ITERS),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub size: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub residual: f64,
}

impl BenchRow {
    pub fn ok(&self) -> bool {
        self.residual <= RESIDUAL_LIMIT
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times each method on the same `I + U` draw per size, after one warmup
/// call.
pub fn bench_ortho(sizes: &[usize], reps: usize, methods: &[BenchMethod], seed: u64) -> Result<Vec<BenchRow>> {
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(lipcert::Error::InvalidArgument(format!("benchmark sizes must be at least 2, got {n}")));
    }
    let reps = reps.max(1);
    let mut rows = Vec::new();
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let raw = Matrix::identity(n).add(&Matrix::random_uniform(n, n, 1.0 / (n as f64).sqrt(), &mut rng))?;
        for &method in methods {
            let w = method.run(&raw)?;
            let residual = w.orthogonality_residual();
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                let t = Instant::now();
                std::hint::black_box(method.run(std::hint::black_box(&raw))?);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            let mean_ms = times.iter().sum::<f64>() / reps as f64;
            rows.push(BenchRow { method, size: n, median_ms: median(times), mean_ms, residual });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,size,median_ms,mean_ms,residual,ok\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.3},{:.3},{:.3e},{}", r.method.name(), r.size, r.median_ms, r.mean_ms, r.residual, r.ok());
    }
    out
}

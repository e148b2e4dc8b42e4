//! Subcommand implementations. Each returns its results so tests can check
//! them without parsing output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lipcert::certify::{certify_dataset, pgd_attack_batch, AttackConfig, CertMethod, CertificationReport};
use lipcert::data::Dataset;
use lipcert::layers::{DenseMechanism, Network};
use lipcert::train::{ablate_dense_mechanism, train, AblationTable, TrainLog};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{self, BenchMethod, BenchRow};
use crate::checkpoint::{self, manifest_for};
use crate::config::RunConfig;
use crate::datasource::{load_run_data, resolve};
use crate::{CliError, CliResult};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TIMING: &str = "timing.csv";

pub struct TrainOutcome {
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

/// Parses the config, trains, and only then writes
/// `<out>/checkpoint/`, `<out>/train_log.csv` and `<out>/timing.csv`.
pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<TrainOutcome> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = Some(s);
    }
    let tc = cfg.train_config()?;
    let data = load_run_data(&cfg.data)?;
    let arch = cfg.architecture(data.train.shape, data.train.classes)?;
    let mut net = arch.build(&mut ChaCha8Rng::seed_from_u64(tc.seed))?;
    let log = train(&mut net, &data.train, &data.generated, Some(&data.test), &tc)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    checkpoint::save(&ckpt, &net, &manifest_for(&net, &arch, tc.seed, Some(&tc)))?;
    fs::write(out.join(TRAIN_LOG), log.to_csv())?;
    fs::write(out.join(TIMING), log.timing_csv())?;
    Ok(TrainOutcome { log, checkpoint: ckpt })
}

fn check_data(net: &Network, data: &Dataset) -> CliResult<()> {
    if data.shape.len() != net.input_dim() {
        return Err(CliError::Run(lipcert::Error::ShapeMismatch(format!(
            "checkpoint expects {} input features, dataset has {}",
            net.input_dim(),
            data.shape.len()
        ))));
    }
    if data.classes > net.classes() || data.samples.iter().any(|s| s.label >= net.classes()) {
        return Err(CliError::Run(lipcert::Error::ShapeMismatch(format!(
            "checkpoint has {} classes, dataset has {}",
            net.classes(),
            data.classes
        ))));
    }
    Ok(())
}

pub fn certify_csv(report: &CertificationReport) -> String {
    let mut out = String::from("index,label,epsilon,predicted,margin,certified_radius,certified\n");
    for (e, eps) in report.epsilons.iter().enumerate() {
        for (i, r) in report.results[e].iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{eps},{},{},{},{}",
                report.labels[i], r.predicted, r.margin, r.certified_radius, r.certified_at
            );
        }
    }
    out
}

pub fn summary_csv(report: &CertificationReport) -> String {
    let mut out = String::from("method,epsilon,vra,clean_acc\n");
    for (e, eps) in report.epsilons.iter().enumerate() {
        let _ = writeln!(out, "{},{eps},{},{}", report.method, report.vra(e), report.clean_accuracy());
    }
    out
}

/// Loads the checkpoint (re-converging bounds) and certifies every point.
pub fn cmd_certify(ckpt: &Path, data: &str, split: &str, epsilons: &[f64], method: CertMethod) -> CliResult<CertificationReport> {
    let mut c = checkpoint::load(ckpt)?;
    let data = resolve(data, split)?;
    check_data(&c.network, &data)?;
    let frozen = c.network.freeze()?;
    Ok(certify_dataset(&frozen, &data, epsilons, method)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSummary {
    pub epsilon: f64,
    pub clean_acc: f64,
    pub empirical_acc: f64,
    /// VRA under the tight method at the same radius.
    pub vra: f64,
    /// Certified points the attack still broke; nonzero means a soundness bug.
    pub violations: usize,
    pub csv: String,
}

pub fn cmd_attack(ckpt: &Path, data: &str, split: &str, cfg: &AttackConfig) -> CliResult<AttackSummary> {
    let mut c = checkpoint::load(ckpt)?;
    let data = resolve(data, split)?;
    check_data(&c.network, &data)?;
    let frozen = c.network.freeze()?;
    let labels = data.labels();
    let report = certify_dataset(&frozen, &data, &[cfg.epsilon], CertMethod::Tight)?;
    let results = pgd_attack_batch(&frozen, &data.inputs(), &labels, data.range, cfg)?;
    let mut csv = String::from("index,label,predicted,certified,success,perturbation_norm\n");
    let mut violations = 0;
    for (i, (r, cert)) in results.iter().zip(&report.results[0]).enumerate() {
        let certified = cert.certified_at && cert.predicted == labels[i];
        if certified && r.success {
            violations += 1;
        }
        let _ = writeln!(csv, "{i},{},{},{certified},{},{}", labels[i], cert.predicted, r.success, r.perturbation_norm);
    }
    let n = labels.len().max(1) as f64;
    Ok(AttackSummary {
        epsilon: cfg.epsilon,
        clean_acc: report.clean_accuracy(),
        empirical_acc: results.iter().filter(|r| !r.success).count() as f64 / n,
        vra: report.vra(0),
        violations,
        csv,
    })
}

pub fn cmd_ablate(config: &Path, mechanisms: &[DenseMechanism], seed: Option<u64>) -> CliResult<AblationTable> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = Some(s);
    }
    let tc = cfg.train_config()?;
    let data = load_run_data(&cfg.data)?;
    let arch = cfg.architecture(data.train.shape, data.train.classes)?;
    Ok(ablate_dense_mechanism(&arch, mechanisms, &data.train, &data.generated, Some(&data.test), &tc)?)
}

pub fn ablation_timing_csv(table: &AblationTable) -> String {
    let mut out = String::from("mechanism,seconds_per_epoch\n");
    for r in &table.rows {
        let _ = writeln!(out, "{},{:.6}", r.mechanism, r.seconds_per_epoch);
    }
    out
}

pub fn cmd_bench_ortho(sizes: &[usize], reps: usize, methods: &[BenchMethod]) -> CliResult<Vec<BenchRow>> {
    Ok(bench::bench_ortho(sizes, reps, methods, 0)?)
}

/// Markdown summary of a training run directory.
pub fn cmd_report(run: &Path) -> CliResult<String> {
    let path = run.join(TRAIN_LOG);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Config(e.to_string()))?.clone();
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", headers.iter().collect::<Vec<_>>().join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(headers.len()));
    let mut last = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Config(e.to_string()))?;
        let cells: Vec<String> = rec
            .iter()
            .map(|c| match c.parse::<f64>() {
                Ok(v) if c.contains('.') => format!("{v:.4}"),
                _ => c.to_string(),
            })
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        last = Some(rec);
    }
    if let Some(rec) = last {
        let _ = writeln!(out, "\nfinal epoch {}: clean accuracy {}", &rec[0], &rec[1]);
    }
    Ok(out)
}

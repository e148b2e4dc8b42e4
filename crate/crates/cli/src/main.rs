use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lipcert::certify::{AttackConfig, CertMethod};
use lipcert::layers::DenseMechanism;
use lipcert_cli::bench::{self, BenchMethod};
use lipcert_cli::commands::{self, ablation_timing_csv, certify_csv, summary_csv};
use lipcert_cli::config::{parse_epsilon, parse_epsilon_list};
use lipcert_cli::{init_threads, CliError, CliResult};

#[derive(Parser)]
#[command(name = "lipcert", version, about = "Lipschitz-constrained networks: training, certification and attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run configuration; writes a checkpoint and a log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Certify every point of a dataset at one or more radii.
    Certify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory, `.lcds` file, `two-moons:N:SEED` or
        /// `synthetic-images:N:CLASSES:SIDE:SEED`.
        #[arg(long)]
        data: String,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated radii; fractions like `36/255` are exact.
        #[arg(long, default_value = "0,36/255,72/255,108/255")]
        eps: String,
        #[arg(long, default_value = "tight")]
        method: String,
        /// Per-point CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary CSV; printed to stdout as well.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// ℓ2 PGD attack; reports empirical robust accuracy next to VRA.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        eps: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run per dense mechanism, everything else fixed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated; all eight when omitted.
        #[arg(long)]
        mechanisms: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for ablation.csv, ablation.md and ablation_timing.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the orthogonalization methods.
    BenchOrtho {
        #[arg(long, default_value = "256")]
        sizes: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value = "cholesky,cayley,matexp,lot")]
        methods: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Markdown summary of a training run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn parse_method(s: &str) -> CliResult<CertMethod> {
    s.parse().map_err(|e: lipcert::Error| CliError::Config(e.to_string()))
}

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn write_opt(path: &Option<PathBuf>, text: &str) -> CliResult<()> {
    if let Some(p) = path {
        fs::write(p, text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Train { config, out, seed } => {
            let outcome = commands::cmd_train(&config, &out, seed)?;
            if let Some(last) = outcome.log.last() {
                println!("epoch {} clean_acc {} vra {:?}", last.epoch, last.clean_acc, last.vra);
            }
            println!("checkpoint written to {}", outcome.checkpoint.display());
        }
        Command::Certify { checkpoint, data, split, eps, method, out, summary } => {
            let eps = parse_epsilon_list(&eps).map_err(config_err)?;
            let report = commands::cmd_certify(&checkpoint, &data, &split, &eps, parse_method(&method)?)?;
            write_opt(&out, &certify_csv(&report))?;
            let s = summary_csv(&report);
            write_opt(&summary, &s)?;
            print!("{s}");
        }
        Command::Attack { checkpoint, data, split, eps, steps, restarts, seed, out } => {
            let cfg = AttackConfig { epsilon: parse_epsilon(&eps).map_err(config_err)?, steps, restarts, seed };
            let s = commands::cmd_attack(&checkpoint, &data, &split, &cfg)?;
            write_opt(&out, &s.csv)?;
            println!("epsilon,clean_acc,empirical_robust_acc,vra");
            println!("{},{},{},{}", s.epsilon, s.clean_acc, s.empirical_acc, s.vra);
            if s.empirical_acc < s.vra || s.violations > 0 {
                eprintln!(
                    "warning: {} certified points were attacked successfully (empirical {} < certified {}); this indicates a soundness bug",
                    s.violations, s.empirical_acc, s.vra
                );
            }
        }
        Command::Ablate { config, mechanisms, seed, out } => {
            let mechs: Vec<DenseMechanism> = match mechanisms {
                Some(list) => list.split(',').map(|m| m.trim().parse().map_err(config_err)).collect::<CliResult<_>>()?,
                None => DenseMechanism::ALL.to_vec(),
            };
            let table = commands::cmd_ablate(&config, &mechs, seed)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("ablation.csv"), table.to_csv())?;
                fs::write(dir.join("ablation.md"), table.to_markdown())?;
                fs::write(dir.join("ablation_timing.csv"), ablation_timing_csv(&table))?;
            }
            print!("{}", table.to_markdown());
        }
        Command::BenchOrtho { sizes, reps, methods, out } => {
            let sizes: Vec<usize> =
                sizes.split(',').map(|s| s.trim().parse().map_err(config_err)).collect::<CliResult<_>>()?;
            let methods: Vec<BenchMethod> = methods
                .split(',')
                .map(|m| BenchMethod::parse(m).ok_or_else(|| CliError::Config(format!("unknown method '{m}'"))))
                .collect::<CliResult<_>>()?;
            let rows = commands::cmd_bench_ortho(&sizes, reps, &methods)?;
            let csv = bench::to_csv(&rows);
            write_opt(&out, &csv)?;
            print!("{csv}");
            if rows.iter().any(|r| !r.ok()) {
                return Err(CliError::Run(lipcert::Error::InvalidArgument(format!(
                    "orthogonality residual above {:e}",
                    bench::RESIDUAL_LIMIT
                ))));
            }
        }
        Command::Report { run } => print!("{}", commands::cmd_report(&run)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

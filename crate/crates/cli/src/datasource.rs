//! Resolving datasets from `[data]` sections and `--data` arguments.

use std::path::Path;

use lipcert::data::{
    class_mean_scorer, filter_bottom_scores, load_dataset_dir, read_lcds, score_samples, synthetic_images, two_moons, Dataset,
    GaussianMixtureGenerator, Sample,
};

use crate::config::{DataKind, DataSection};
use crate::{CliError, CliResult};

/// Train and test splits plus the generated pool.
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
    pub generated: Vec<Sample>,
}

fn data_err(e: lipcert::Error) -> CliError {
    match e {
        lipcert::Error::Io(_) | lipcert::Error::Format(_) => CliError::Config(format!("cannot read data: {e}")),
        other => CliError::Run(other),
    }
}

pub fn load_run_data(d: &DataSection) -> CliResult<RunData> {
    let (train, test) = match d.kind {
        DataKind::TwoMoons => (two_moons(d.n_train, d.seed), two_moons(d.n_test, d.seed.wrapping_add(1))),
        DataKind::SyntheticImages => (
            synthetic_images(d.n_train, d.classes, d.side, d.seed)?,
            synthetic_images(d.n_test, d.classes, d.side, d.seed.wrapping_add(1))?,
        ),
        DataKind::Dir => {
            let path = d.path.as_ref().ok_or_else(|| CliError::Config("[data] path is required".into()))?;
            let set = load_dataset_dir(path).map_err(data_err)?;
            (set.get(&d.train_split).map_err(data_err)?.clone(), set.get(&d.test_split).map_err(data_err)?.clone())
        }
        DataKind::Lcds => {
            let path = d.path.as_ref().ok_or_else(|| CliError::Config("[data] path is required".into()))?;
            let train = read_lcds(path).map_err(data_err)?;
            let test = match &d.test_path {
                Some(p) => read_lcds(p).map_err(data_err)?,
                None => train.clone(),
            };
            (train, test)
        }
    };
    let generated = if d.generated > 0 {
        let mut generator = GaussianMixtureGenerator::fit(&train, d.seed.wrapping_add(2))?;
        let pool = generator.generate(d.generated);
        if d.filter_fraction > 0.0 {
            let scored = score_samples(class_mean_scorer(&train)?, &pool)?;
            filter_bottom_scores(&scored, d.filter_fraction)?
        } else {
            pool
        }
    } else {
        Vec::new()
    };
    Ok(RunData { train, test, generated })
}

/// `--data` accepts a dataset directory (with a split name), an `.lcds`
/// file, `two-moons:N:SEED` or `synthetic-images:N:CLASSES:SIDE:SEED`.
pub fn resolve(spec: &str, split: &str) -> CliResult<Dataset> {
    let bad = || CliError::Config(format!("cannot interpret data source '{spec}'"));
    let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["two-moons", n, seed] => Ok(two_moons(num(n)? as usize, num(seed)?)),
        ["synthetic-images", n, c, side, seed] => {
            Ok(synthetic_images(num(n)? as usize, num(c)? as usize, num(side)? as usize, num(seed)?)?)
        }
        _ => {
            let path = Path::new(spec);
            if path.is_dir() {
                Ok(load_dataset_dir(path).map_err(data_err)?.get(split).map_err(data_err)?.clone())
            } else if path.is_file() {
                read_lcds(path).map_err(data_err)
            } else {
                Err(bad())
            }
        }
    }
}

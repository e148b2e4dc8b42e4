//! Run configuration: `[model]`, `[train]`, `[data]` and `[certify]`
//! sections of a TOML document.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lipcert::certify::CertMethod;
use lipcert::data::MixSpec;
use lipcert::layers::{Activation, AolExponent, Architecture, DenseMechanism, InputShape};
use lipcert::train::TrainConfig;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A radius given as a fraction (`"36/255"`), a decimal string or a number.
/// Strings are kept as exact rationals until converted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Number(f64),
    Text(String),
}

impl Epsilon {
    pub fn value(&self) -> Result<f64, ConfigError> {
        match self {
            Epsilon::Number(v) => check_eps(*v, &v.to_string()),
            Epsilon::Text(s) => parse_epsilon(s),
        }
    }
}

fn check_eps(v: f64, src: &str) -> Result<f64, ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError(format!("epsilon must be finite and non-negative, got '{src}'")))
    }
}

/// Exact rational for `"a/b"` or a plain decimal such as `"0.125"`.
pub fn parse_rational(s: &str) -> Result<Ratio<i128>, ConfigError> {
    let bad = || ConfigError(format!("cannot parse '{s}' as a fraction or decimal"));
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(ConfigError(format!("zero denominator in '{s}'")));
        }
        return Ok(Ratio::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if (int.is_empty() && frac.is_empty()) || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 30 {
        return Err(bad());
    }
    let digits: i128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let r = Ratio::new(digits, 10i128.checked_pow(frac.len() as u32).ok_or_else(bad)?);
    Ok(if neg { -r } else { r })
}

pub fn parse_epsilon(s: &str) -> Result<f64, ConfigError> {
    let r = parse_rational(s)?;
    check_eps(*r.numer() as f64 / *r.denom() as f64, s)
}

pub fn parse_epsilon_list(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_epsilon).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Large,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub mechanism: Option<String>,
    pub conv_blocks: Option<usize>,
    pub conv_channels: Option<usize>,
    pub dense_depth: Option<usize>,
    pub dense_width: Option<usize>,
    pub kernel: Option<usize>,
    pub spatial_groups: Option<usize>,
    pub activation: Option<Activation>,
    pub aol_exponent: Option<AolExponent>,
    pub lot_iters: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epsilon: Option<Epsilon>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub real_parts: Option<usize>,
    pub generated_parts: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub ramp_fraction: Option<f64>,
    pub method: Option<CertMethod>,
    pub seed: Option<u64>,
    pub steps_per_epoch: Option<usize>,
    pub grad_clip: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    #[default]
    TwoMoons,
    SyntheticImages,
    /// A dataset directory with `dataset.toml` and an index.
    Dir,
    /// A pair of LCDS files.
    Lcds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub train_split: String,
    pub test_split: String,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub side: usize,
    pub seed: u64,
    /// Generated samples drawn from a class-conditional Gaussian fit.
    pub generated: usize,
    pub filter_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::TwoMoons,
            path: None,
            test_path: None,
            train_split: "train".into(),
            test_split: "test".into(),
            n_train: 1000,
            n_test: 500,
            classes: 4,
            side: 8,
            seed: 0,
            generated: 0,
            filter_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub epsilons: Option<Vec<Epsilon>>,
    pub method: Option<CertMethod>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub certify: CertifySection,
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()?;
        self.mechanism()?;
        self.eval_epsilons()?;
        let d = &self.data;
        if matches!(d.kind, DataKind::Dir | DataKind::Lcds) && d.path.is_none() {
            return Err(ConfigError("[data] path is required for this kind".into()));
        }
        if !(0.0..1.0).contains(&d.filter_fraction) {
            return Err(ConfigError("[data] filter_fraction must lie in [0, 1)".into()));
        }
        if self.train_config()?.mix.generated_count() > 0 && d.generated == 0 {
            return Err(ConfigError("the batch mix draws generated samples but [data] generated = 0".into()));
        }
        Ok(())
    }

    pub fn mechanism(&self) -> Result<DenseMechanism, ConfigError> {
        match &self.model.mechanism {
            Some(m) => m.parse().map_err(|e: lipcert::Error| ConfigError(e.to_string())),
            None => Ok(DenseMechanism::CholeskyResidual),
        }
    }

    pub fn eval_epsilons(&self) -> Result<Vec<f64>, ConfigError> {
        match &self.certify.epsilons {
            Some(list) => list.iter().map(Epsilon::value).collect(),
            None => Ok(TrainConfig::default().eval_epsilons),
        }
    }

    pub fn method(&self) -> CertMethod {
        self.certify.method.or(self.train.method).unwrap_or_default()
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let d = TrainConfig::default();
        let t = &self.train;
        let mix = MixSpec::new(
            t.real_parts.unwrap_or(d.mix.real_parts),
            t.generated_parts.unwrap_or(d.mix.generated_parts),
            t.batch_size.unwrap_or(d.mix.batch_size),
        )
        .map_err(|e| ConfigError(e.to_string()))?;
        let cfg = TrainConfig {
            epsilon_train: match &t.epsilon {
                Some(e) => e.value()?,
                None => d.epsilon_train,
            },
            epochs: t.epochs.unwrap_or(d.epochs),
            mix,
            learning_rate: t.learning_rate.or(d.learning_rate),
            momentum: t.momentum.unwrap_or(d.momentum),
            ramp_fraction: t.ramp_fraction.unwrap_or(d.ramp_fraction),
            method: t.method.unwrap_or(d.method),
            seed: t.seed.unwrap_or(d.seed),
            steps_per_epoch: t.steps_per_epoch.or(d.steps_per_epoch),
            eval_epsilons: self.eval_epsilons()?,
            grad_clip: t.grad_clip.or(d.grad_clip),
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    /// Architecture for a given input; unset keys fall back to the preset.
    pub fn architecture(&self, input: InputShape, classes: usize) -> Result<Architecture, ConfigError> {
        let m = &self.model;
        let base = match m.preset {
            Preset::Desk => Architecture { input, ..Architecture::vector(0, classes, self.mechanism()?) },
            Preset::Large => Architecture { mechanism: self.mechanism()?, ..Architecture::large_scale(input, classes) },
        };
        let arch = Architecture {
            conv_blocks: m.conv_blocks.unwrap_or(base.conv_blocks),
            conv_channels: m.conv_channels.unwrap_or(base.conv_channels),
            dense_depth: m.dense_depth.unwrap_or(base.dense_depth),
            dense_width: m.dense_width.unwrap_or(base.dense_width),
            kernel: m.kernel.unwrap_or(base.kernel),
            spatial_groups: m.spatial_groups.or(base.spatial_groups),
            activation: m.activation.unwrap_or(base.activation),
            aol_exponent: m.aol_exponent.unwrap_or(base.aol_exponent),
            lot_iters: m.lot_iters.unwrap_or(base.lot_iters),
            ..base
        };
        arch.specs().map_err(|e| ConfigError(e.to_string()))?;
        Ok(arch)
    }
}

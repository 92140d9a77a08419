//! Config file handling: TOML sections with defaults, strict unknown-key
//! rejection, and `--set section.key=value` overrides.

use serde::{Deserialize, Serialize};

use hca_core::data::TargetDist;
use hca_core::distill::Alignment;
use hca_core::heads::{Optimizer, TrainConfig};
use hca_core::labels::LabelMode;
use hca_core::metrics::ShotThresholds;
use hca_core::quantize::{BinScheme, SplitMode};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataSection,
    pub quantize: QuantizeSection,
    pub labels: LabelsSection,
    pub train: TrainSection,
    pub distill: DistillSection,
    pub eval: EvalSection,
    pub subsample: SubsampleSection,
    pub table5: Table5Section,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "synthetic" or "csv".
    pub source: String,
    pub csv_path: String,
    /// "uniform", "exp-tail", or "head-tail".
    pub dist: String,
    pub lo: f64,
    pub hi: f64,
    /// Head/tail boundary (head-tail distribution only).
    pub split: f64,
    pub head_frac: f64,
    /// Exponential scale (exp-tail distribution only).
    pub scale: f64,
    pub n: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            csv_path: String::new(),
            dist: "uniform".into(),
            lo: 20.0,
            hi: 50.0,
            split: 35.0,
            head_frac: 0.95,
            scale: 8.0,
            n: 4000,
            dim: 64,
            noise: 2.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizeSection {
    /// "linear", "log", or "equal-count".
    pub scheme: String,
    pub log_offset: f64,
    pub classes: usize,
    pub levels: usize,
    /// "equal-count" or "equal-length" coarse splitting.
    pub split_mode: String,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        Self {
            scheme: "linear".into(),
            log_offset: 0.0,
            classes: 20,
            levels: 5,
            split_mode: "equal-count".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelsSection {
    /// "one-hot" or "soft".
    pub mode: String,
    /// Soft-label bandwidth in target units; 0 picks half the median
    /// finest-bin width.
    pub sigma: f64,
    pub lds: bool,
    pub lds_half_width: usize,
    pub lds_sigma: f64,
}

impl Default for LabelsSection {
    fn default() -> Self {
        Self {
            mode: "soft".into(),
            sigma: 0.0,
            lds: false,
            lds_half_width: 2,
            lds_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// "sgd", "sgd-momentum", or "adam".
    pub optimizer: String,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch: 64,
            lr: 1e-2,
            optimizer: "adam".into(),
            weight_decay: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    /// "max" (range-preserving) or "sum".
    pub alignment: String,
    /// Stage-2 epochs; 0 picks 20% of the stage-1 epochs.
    pub epochs: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            alignment: "max".into(),
            epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub shot_hi: usize,
    pub shot_lo: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            shot_hi: 100,
            shot_lo: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsampleSection {
    pub enabled: bool,
    pub head_lo: f64,
    pub head_hi: f64,
    pub tail_lo: f64,
    pub tail_hi: f64,
    pub ratio: f64,
    pub total: usize,
    pub bins_per_side: usize,
    pub seed: u64,
}

impl Default for SubsampleSection {
    fn default() -> Self {
        Self {
            enabled: false,
            head_lo: 20.0,
            head_hi: 35.0,
            tail_lo: 35.0,
            tail_hi: 50.0,
            ratio: 19.0,
            total: 2000,
            bins_per_side: 15,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table5Section {
    /// Per-cell training totals; each appears once balanced (1:1) and once
    /// imbalanced (`ratio`:1).
    pub totals: Vec<usize>,
    pub ratio: f64,
    pub seeds: usize,
}

impl Default for Table5Section {
    fn default() -> Self {
        Self {
            totals: vec![2000, 200, 20],
            ratio: 19.0,
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs".into() }
    }
}

impl Config {
    /// Load from an optional TOML file and apply `section.key=value`
    /// overrides. Unknown keys anywhere are rejected.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Config, CliError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse()
                    .map_err(|e| CliError::Config(format!("bad TOML in {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), CliError> {
        // fail fast on enum-like strings so typos cannot silently default
        self.target_dist()?;
        self.bin_scheme()?;
        self.split_mode()?;
        self.optimizer()?;
        self.alignment()?;
        match self.data.source.as_str() {
            "synthetic" => {}
            "csv" => {
                if self.data.csv_path.is_empty() {
                    return Err(CliError::Config(
                        "data.source = \"csv\" requires data.csv_path".into(),
                    ));
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown data.source `{other}` (want synthetic|csv)"
                )))
            }
        }
        match self.labels.mode.as_str() {
            "one-hot" | "soft" => {}
            other => {
                return Err(CliError::Config(format!(
                    "unknown labels.mode `{other}` (want one-hot|soft)"
                )))
            }
        }
        Ok(())
    }

    pub fn target_dist(&self) -> Result<TargetDist, CliError> {
        let d = &self.data;
        match d.dist.as_str() {
            "uniform" => Ok(TargetDist::Uniform { lo: d.lo, hi: d.hi }),
            "exp-tail" => Ok(TargetDist::ExpTail {
                lo: d.lo,
                hi: d.hi,
                scale: d.scale,
            }),
            "head-tail" => Ok(TargetDist::HeadTail {
                lo: d.lo,
                split: d.split,
                hi: d.hi,
                head_frac: d.head_frac,
            }),
            other => Err(CliError::Config(format!(
                "unknown data.dist `{other}` (want uniform|exp-tail|head-tail)"
            ))),
        }
    }

    pub fn bin_scheme(&self) -> Result<BinScheme, CliError> {
        match self.quantize.scheme.as_str() {
            "linear" => Ok(BinScheme::Linear),
            "log" => Ok(BinScheme::Log {
                offset: self.quantize.log_offset,
            }),
            "equal-count" => Ok(BinScheme::EqualCount),
            other => Err(CliError::Config(format!(
                "unknown quantize.scheme `{other}` (want linear|log|equal-count)"
            ))),
        }
    }

    pub fn split_mode(&self) -> Result<SplitMode, CliError> {
        match self.quantize.split_mode.as_str() {
            "equal-count" => Ok(SplitMode::EqualCount),
            "equal-length" => Ok(SplitMode::EqualLength),
            other => Err(CliError::Config(format!(
                "unknown quantize.split_mode `{other}` (want equal-count|equal-length)"
            ))),
        }
    }

    pub fn optimizer(&self) -> Result<Optimizer, CliError> {
        match self.train.optimizer.as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "sgd-momentum" => Ok(Optimizer::SgdMomentum),
            "adam" => Ok(Optimizer::Adam),
            other => Err(CliError::Config(format!(
                "unknown train.optimizer `{other}` (want sgd|sgd-momentum|adam)"
            ))),
        }
    }

    pub fn alignment(&self) -> Result<Alignment, CliError> {
        match self.distill.alignment.as_str() {
            "max" => Ok(Alignment::Max),
            "sum" => Ok(Alignment::Sum),
            other => Err(CliError::Config(format!(
                "unknown distill.alignment `{other}` (want max|sum)"
            ))),
        }
    }

    /// Label mode with the sigma default resolved against a hierarchy.
    pub fn label_mode(&self, hier: &hca_core::quantize::Hierarchy) -> LabelMode {
        match self.labels.mode.as_str() {
            "one-hot" => LabelMode::OneHot,
            _ => {
                let sigma = if self.labels.sigma > 0.0 {
                    self.labels.sigma
                } else {
                    hca_core::labels::default_sord_sigma(hier)
                };
                LabelMode::Soft { sigma }
            }
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch,
            learning_rate: self.train.lr,
            optimizer: self.optimizer()?,
            seed: self.train.seed,
            weight_decay: self.train.weight_decay,
        })
    }

    pub fn stage2_config(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = self.train_config()?;
        cfg.epochs = if self.distill.epochs > 0 {
            self.distill.epochs
        } else {
            hca_core::distill::stage2_epochs(self.train.epochs)
        };
        Ok(cfg)
    }

    pub fn shot_thresholds(&self) -> ShotThresholds {
        ShotThresholds {
            hi: self.eval.shot_hi,
            lo: self.eval.shot_lo,
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let mut segments = path.trim().split('.');
    let (section, key) = match (segments.next(), segments.next(), segments.next()) {
        (Some(s), Some(k), None) if !s.is_empty() && !k.is_empty() => (s, k),
        _ => {
            return Err(CliError::Config(format!(
                "override key `{path}` must be section.key"
            )))
        }
    };
    // parse as a TOML literal; bare words fall back to plain strings
    let value: toml::Value = match format!("v = {}", raw_value.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw_value.trim().to_string()),
    };
    table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("config section `{section}` is not a table")))?
        .insert(key.to_string(), value);
    Ok(())
}

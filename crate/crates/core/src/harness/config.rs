//! Run configuration: a TOML file plus dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};
use crate::kspace::STANDARD_ACCELERATIONS;
use crate::losses::{LossConfig, LossRouting, LossTerm};
use crate::model::{ReconModelConfig, Refinement, UNetConfig};
use crate::phantom::{PhantomSpec, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_slices: usize,
    pub phantom: PhantomSpec,
    pub center_lines: Option<usize>,
    /// Explicit `[train, eval, test]` counts.
    pub split: Option<[usize; 3]>,
    /// Zero-pad images to this `[H, W]` canvas for inference.
    pub canvas: Option<[usize; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_slices: 12,
            phantom: PhantomSpec::default(),
            center_lines: None,
            split: None,
            canvas: None,
        }
    }
}

/// Loss selection: a named preset or explicit terms, plus split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub preset: String,
    pub terms: Option<Vec<LossTerm>>,
    pub highpass_cutoff: f64,
    pub highpass_weight_ratio: f64,
    pub ssim_window: usize,
    /// Loss per output for refinement models (`sequential`, `end_to_end`
    /// or `output`); defaults to the model's refinement mode.
    pub routing: Option<String>,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            preset: "perp_l1_split".into(),
            terms: None,
            highpass_cutoff: 0.25,
            highpass_weight_ratio: 2.0,
            ssim_window: 7,
            routing: None,
        }
    }
}

impl LossSpec {
    pub fn resolve(&self) -> Result<LossConfig> {
        let mut cfg = match &self.terms {
            Some(terms) => LossConfig::new(terms.clone())?,
            None => LossConfig::preset(&self.preset)?,
        };
        cfg.highpass_cutoff = self.highpass_cutoff;
        cfg.highpass_weight_ratio = self.highpass_weight_ratio;
        cfg.ssim_window = self.ssim_window;
        cfg.validate()
            .map_err(|e| ReconError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Losses for a model with the given refinement mode; the preset alone
    /// scores the output of models without refinement.
    pub fn routing(&self, refinement: Refinement) -> Result<LossRouting> {
        let base = self.resolve()?;
        let default = match refinement {
            Refinement::None => return Ok(LossRouting::single(base)),
            Refinement::Sequential => "sequential",
            Refinement::EndToEnd => "end_to_end",
        };
        LossRouting::preset(self.routing.as_deref().unwrap_or(default), &base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Early-stopping patience in epochs without eval SSIM improvement.
    pub patience: usize,
    pub schedule: LrSchedule,
    /// Final learning rate as a fraction of `lr` under the cosine schedule.
    pub min_lr_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

impl OptimizerConfig {
    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let progress = if self.epochs > 1 {
                    (epoch.saturating_sub(1)) as f64 / (self.epochs - 1) as f64
                } else {
                    0.0
                };
                let c = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
                self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * c)
            }
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: "adam".into(),
            lr: 3e-4,
            epochs: 20,
            batch_size: 2,
            grad_clip: 1.0,
            patience: 10,
            schedule: LrSchedule::Constant,
            min_lr_ratio: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    #[default]
    Crnn,
    Unet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub target: TrainTarget,
    /// Stage-1 CRNN checkpoint for sequential refinement.
    pub crnn_checkpoint: Option<PathBuf>,
    pub resume: bool,
    /// Train on this acceleration only instead of the mixed set.
    pub finetune_acceleration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub unet_checkpoint: Option<PathBuf>,
    /// Column label for the main model.
    pub label: Option<String>,
    /// Split to score; defaults to the test split.
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub checkpoint: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    /// Fully sampled reference images, matched to `inputs` by position.
    pub references: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub accelerations: Vec<usize>,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub model: ReconModelConfig,
    pub unet: UNetConfig,
    pub loss: LossSpec,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub reconstruct: ReconstructConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            seed: 0,
            accelerations: STANDARD_ACCELERATIONS.to_vec(),
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            model: ReconModelConfig::default(),
            unet: UNetConfig::default(),
            loss: LossSpec::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            reconstruct: ReconstructConfig::default(),
        }
    }
}

/// Parse an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ReconError::Config(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ReconError::Config(format!("bad override key '{key}'")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            ReconError::Config(format!("override '{key}': '{part}' is not a table"))
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Load from an optional TOML file, then apply `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    ReconError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| ReconError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ReconError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.accelerations.is_empty() {
            return Err(ReconError::Config("accelerations must not be empty".into()));
        }
        if let Some(a) = self
            .accelerations
            .iter()
            .find(|a| !STANDARD_ACCELERATIONS.contains(a))
        {
            return Err(ReconError::Config(format!(
                "acceleration {a} not in {STANDARD_ACCELERATIONS:?}"
            )));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(ReconError::Config(
                "run_id must be a non-empty plain name".into(),
            ));
        }
        let o = &self.optimizer;
        if o.kind != "adam" {
            return Err(ReconError::Config(format!(
                "unsupported optimizer '{}'",
                o.kind
            )));
        }
        if !(o.lr.is_finite() && o.lr > 0.0) || o.epochs == 0 || o.batch_size == 0 {
            return Err(ReconError::Config(
                "lr, epochs and batch_size must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&o.min_lr_ratio) {
            return Err(ReconError::Config("min_lr_ratio must lie in [0, 1]".into()));
        }
        if o.grad_clip.is_nan() || o.grad_clip <= 0.0 {
            return Err(ReconError::Config("grad_clip must be positive".into()));
        }
        if let Some(a) = self.train.finetune_acceleration {
            if !self.accelerations.contains(&a) {
                return Err(ReconError::Config(format!(
                    "finetune_acceleration {a} not among accelerations"
                )));
            }
        }
        self.model.validate()?;
        self.unet.validate()?;
        self.loss.resolve()?;
        if let Some(r) = &self.loss.routing {
            LossRouting::preset(r, &self.loss.resolve()?)?;
        }
        Ok(())
    }

    pub fn canvas(&self) -> Option<(usize, usize)> {
        self.data.canvas.map(|[h, w]| (h, w))
    }

    /// Report file path with the run-id prefix.
    pub fn report_path(&self, suffix: &str) -> PathBuf {
        self.paths
            .report_dir
            .join(format!("{}_{suffix}", self.run_id))
    }

    pub fn checkpoint_path(&self, suffix: &str) -> PathBuf {
        self.paths
            .checkpoint_dir
            .join(format!("{}_{suffix}", self.run_id))
    }
}

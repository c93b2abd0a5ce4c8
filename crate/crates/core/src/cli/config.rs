//! Run configuration files: one JSON object with optional sections, parsed
//! strictly so a misspelt key is an error rather than a silent default.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::FlowConfig;
use crate::metrics::DEFAULT_FSCORE_TAUS;
use crate::nn::optim::AdamConfig;
use crate::stage1::{Stage1Config, TrainConfig};
use crate::stage2::Stage2Config;
use crate::synthdata::DataConfig;
use crate::util::read_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub train: TrainSchedule,
    pub flow: FlowConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
    /// Linear learning-rate warm-up length in steps.
    pub warmup_steps: u64,
    /// Half-cosine decay of the learning rate over the run.
    pub cosine_decay: bool,
    /// Learning rate at the end of the decay, as a fraction of `adam.lr`.
    pub final_lr_frac: f64,
    /// Validation-loss interval in steps; 0 disables it.
    pub eval_every: u64,
    /// Val samples used for the validation loss.
    pub val_samples: usize,
    /// Checkpoint (and log flush) interval in steps.
    pub checkpoint_every: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 1,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            warmup_steps: 100,
            cosine_decay: true,
            final_lr_frac: 0.05,
            eval_every: 0,
            val_samples: 4,
            checkpoint_every: 100,
        }
    }
}

impl TrainSchedule {
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        crate::nn::optim::scheduled_lr(self.adam.lr, step, total, self.warmup_steps, self.cosine_decay, self.final_lr_frac)
    }

    pub fn train_config(&self, flow: &FlowConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            adam: self.adam,
            grad_clip: self.grad_clip,
            flow: *flow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    #[default]
    None,
    /// Translation + global scale.
    Ts,
}

impl AlignMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlignMode::None => "none",
            AlignMode::Ts => "ts",
        }
    }
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AlignMode::None),
            "ts" => Ok(AlignMode::Ts),
            other => Err(Error::Config(format!("unknown align mode {other:?} (expected none or ts)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Points generated per prediction.
    pub points: usize,
    pub split: String,
    /// Evaluate at most this many samples.
    pub limit: Option<usize>,
    pub align: AlignMode,
    pub align_iters: usize,
    pub fscore_taus: Vec<f64>,
    /// Hole-ratio threshold as a fraction of the ground-truth bbox diagonal.
    pub hole_tau_diag: f64,
    pub density_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            points: 2048,
            split: "val".into(),
            limit: None,
            align: AlignMode::None,
            align_iters: 500,
            fscore_taus: DEFAULT_FSCORE_TAUS.to_vec(),
            hole_tau_diag: 0.1,
            density_k: crate::metrics::DEFAULT_DENSITY_K,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
        let cfg: RunConfig = parse_strict(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.flow.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.eval.points == 0 {
            return Err(Error::Config("eval.points must be positive".into()));
        }
        Ok(())
    }
}

/// Byte offset of a 1-based (line, column) position in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Names between backticks in a serde message, in order.
fn backticked(msg: &str) -> Vec<&str> {
    msg.split('`').skip(1).step_by(2).collect()
}

/// Closest expected name to `unknown`, if any is reasonably close.
pub fn suggest<'a>(unknown: &str, expected: &[&'a str]) -> Option<&'a str> {
    expected
        .iter()
        .map(|e| (strsim::jaro_winkler(unknown, e), *e))
        .filter(|(s, _)| *s >= 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, e)| e)
}

/// Deserializes `text` rejecting unknown keys. Syntax errors report the byte
/// offset; unknown keys come with the closest valid name.
pub fn parse_strict<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let at = byte_offset(text, e.line(), e.column());
        match e.classify() {
            serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
                Error::Config(format!("malformed JSON at byte {at} (line {}, column {}): {e}", e.line(), e.column()))
            }
            _ => {
                let msg = e.to_string();
                let mut out = format!("invalid config at byte {at}: {msg}");
                if msg.starts_with("unknown field") {
                    let names = backticked(&msg);
                    if let Some((unknown, expected)) = names.split_first() {
                        if let Some(s) = suggest(unknown, expected) {
                            out.push_str(&format!("; did you mean \"{s}\"?"));
                        }
                    }
                }
                Error::Config(out)
            }
        }
    })
}

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config;
use crate::data::StageTag;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::tts::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    FtConversational,
    FtSarcastic,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pretrain, Stage::FtConversational, Stage::FtSarcastic];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::FtConversational => "ft_conversational",
            Stage::FtSarcastic => "ft_sarcastic",
        }
    }

    /// The manifest stage tag this stage trains on.
    pub fn manifest_tag(self) -> StageTag {
        match self {
            Stage::Pretrain => StageTag::Pretrain,
            Stage::FtConversational => StageTag::Conversational,
            Stage::FtSarcastic => StageTag::Sarcastic,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::parse("stage", format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    /// `scale · hidden^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
    Noam {
        warmup: usize,
        #[serde(default = "unit")]
        scale: f64,
    },
    Constant {
        lr: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl LrSchedule {
    /// Learning rate for 1-based `step`.
    pub fn at(&self, step: usize, hidden: usize) -> f64 {
        match *self {
            LrSchedule::Noam { warmup, scale } => {
                let s = step.max(1) as f64;
                let w = warmup.max(1) as f64;
                scale * (hidden as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
            }
            LrSchedule::Constant { lr } => lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl OptimizerConfig {
    pub fn with_schedule(schedule: LrSchedule) -> Self {
        let AdamConfig { beta1, beta2, eps } = AdamConfig::default();
        Self {
            beta1,
            beta2,
            eps,
            schedule,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Standard,
    Desk,
}

/// Architecture of a freshly initialised model; ignored when training starts
/// from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: ModelPreset,
    pub sarcasm_conditioning: bool,
    pub n_speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// A checkpoint written by an earlier run of this same stage.
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
    pub feedback_enabled: bool,
    /// Frozen detector reading the acoustic model's mel bins.
    #[serde(default)]
    pub feedback_detector: Option<PathBuf>,
    /// Detector producing conditioning embeddings from ground-truth audio.
    #[serde(default)]
    pub conditioning_detector: Option<PathBuf>,
    pub model: ModelSpec,
    pub seed: u64,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    /// Permit initialising from a checkpoint that skipped the preceding stage.
    #[serde(default)]
    pub allow_stage_skip: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl StageConfig {
    pub fn preset(stage: Stage, preset: Preset) -> Self {
        let (iterations, batch_size, schedule, checkpoint_interval, log_interval, model) = match (preset, stage) {
            (Preset::Full, Stage::Pretrain) => (800_000, 16, LrSchedule::Noam { warmup: 4000, scale: 1.0 }, 5000, 100, ModelPreset::Standard),
            (Preset::Full, _) => (100_000, 16, LrSchedule::Constant { lr: 1e-4 }, 5000, 100, ModelPreset::Standard),
            (Preset::Desk, Stage::Pretrain) => (300, 8, LrSchedule::Constant { lr: 1e-3 }, 100, 1, ModelPreset::Desk),
            (Preset::Desk, _) => (100, 8, LrSchedule::Constant { lr: 1e-3 }, 50, 1, ModelPreset::Desk),
        };
        Self {
            stage,
            manifest: PathBuf::new(),
            output_dir: PathBuf::from("runs").join(stage.as_str()),
            iterations,
            batch_size,
            optimizer: OptimizerConfig::with_schedule(schedule),
            loss_weights: LossWeights::default(),
            init_checkpoint: None,
            resume_from: None,
            feedback_enabled: stage == Stage::FtSarcastic,
            feedback_detector: None,
            conditioning_detector: None,
            model: ModelSpec {
                preset: model,
                sarcasm_conditioning: true,
                n_speakers: 0,
            },
            seed: 0,
            checkpoint_interval,
            log_interval,
            allow_stage_skip: false,
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("{}: {m}", self.stage)));
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 || self.log_interval == 0 {
            return fail("batch_size, checkpoint_interval and log_interval must be positive".into());
        }
        if self.manifest.as_os_str().is_empty() {
            return fail("manifest path is not set".into());
        }
        if self.stage != Stage::Pretrain && self.init_checkpoint.is_none() && self.resume_from.is_none() {
            return fail("fine-tuning stages require init_checkpoint".into());
        }
        if self.feedback_enabled && self.feedback_detector.is_none() {
            return fail("feedback_enabled requires feedback_detector".into());
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return fail(format!("invalid Adam constants {o:?}"));
        }
        match o.schedule {
            LrSchedule::Constant { lr } if lr <= 0.0 => fail(format!("learning rate {lr} must be positive")),
            LrSchedule::Noam { scale, .. } if scale <= 0.0 => fail(format!("Noam scale {scale} must be positive")),
            _ => Ok(()),
        }
    }
}

/// One section per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    /// Run ft_sarcastic directly from the pretrained checkpoint.
    pub skip_conversational: bool,
    pub pretrain: StageConfig,
    pub ft_conversational: StageConfig,
    pub ft_sarcastic: StageConfig,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            skip_conversational: false,
            pretrain: StageConfig::preset(Stage::Pretrain, preset),
            ft_conversational: StageConfig::preset(Stage::FtConversational, preset),
            ft_sarcastic: StageConfig::preset(Stage::FtSarcastic, preset),
        }
    }

    /// Parses a pipeline file on top of its preset (`preset = "desk"` selects
    /// the desk-scale defaults), then applies dotted overrides.
    pub fn from_toml(src: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut preset = Preset::Full;
        if let Some(s) = src {
            let table: toml::Table = toml::from_str(s).map_err(|e| Error::parse("pipeline config", e))?;
            if let Some(v) = table.get("preset") {
                preset = v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            }
        }
        if let Some((_, v)) = overrides.iter().find(|(k, _)| k == "preset") {
            preset = config::parse_scalar(v)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        }
        let cfg: Self = config::resolve(&Self::preset(preset), src, overrides)?;
        for (st, c) in cfg.stages() {
            if c.stage != st {
                return Err(Error::Config(format!("section `{st}` declares stage `{}`", c.stage)));
            }
        }
        Ok(cfg)
    }

    pub fn stages(&self) -> [(Stage, &StageConfig); 3] {
        [
            (Stage::Pretrain, &self.pretrain),
            (Stage::FtConversational, &self.ft_conversational),
            (Stage::FtSarcastic, &self.ft_sarcastic),
        ]
    }

    pub fn stage(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::Pretrain => &self.pretrain,
            Stage::FtConversational => &self.ft_conversational,
            Stage::FtSarcastic => &self.ft_sarcastic,
        }
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageConfig {
        match stage {
            Stage::Pretrain => &mut self.pretrain,
            Stage::FtConversational => &mut self.ft_conversational,
            Stage::FtSarcastic => &mut self.ft_sarcastic,
        }
    }
}

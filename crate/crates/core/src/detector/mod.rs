//! Multimodal sarcasm detector.
//!
//! Two architectures share one interface: the proposed network reads a
//! log-mel spectrogram through a 2-D conv stack, dilated 1-D convs and
//! self-attention; the baseline reads the fixed 291-dim feature vector.
//! Both concatenate a 768-dim text embedding and emit a 768-dim sarcasm
//! embedding (penultimate layer) plus two-class logits.

pub mod metrics;
mod model;
pub mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::audio::{log_floor, MelSpec, BASELINE_AUDIO_DIM, FEATURE_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::nn::{self, CheckpointFiles};
use crate::text::{TextEmbedding, TEXT_DIM};

pub use metrics::{evaluate_detector, ClassMetrics, ConfusionCounts, DetectionMetrics};
pub use train::{detector_examples, train_detector, DetectorTrainConfig, EpochRecord, TrainedDetector};

use model::Net;

pub const SARCASM_EMBED_DIM: usize = 768;
const CHECKPOINT_KIND: &str = "sarcasm-detector";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SarcasmLabel {
    NonSarcastic = 0,
    Sarcastic = 1,
}

impl SarcasmLabel {
    pub fn is_sarcastic(self) -> bool {
        self == SarcasmLabel::Sarcastic
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for SarcasmLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(SarcasmLabel::NonSarcastic),
            1 => Ok(SarcasmLabel::Sarcastic),
            other => Err(Error::InvalidInput(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl From<SarcasmLabel> for u8 {
    fn from(l: SarcasmLabel) -> u8 {
        l as u8
    }
}

impl FromStr for SarcasmLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "sarcastic" | "true" => Ok(SarcasmLabel::Sarcastic),
            "0" | "non-sarcastic" | "non_sarcastic" | "neutral" | "false" => Ok(SarcasmLabel::NonSarcastic),
            other => Err(Error::parse("label", format!("unrecognised label `{other}`"))),
        }
    }
}

impl fmt::Display for SarcasmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_sarcastic() { "sarcastic" } else { "non-sarcastic" })
    }
}

/// Penultimate-layer activation of the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarcasmEmbedding {
    pub values: Vec<f32>,
}

impl SarcasmEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != SARCASM_EMBED_DIM {
            return Err(Error::Shape(format!(
                "sarcasm embedding has {} values, expected {SARCASM_EMBED_DIM}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; SARCASM_EMBED_DIM],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub embedding: SarcasmEmbedding,
    pub logits: [f32; 2],
    /// Softmax probability of the sarcastic class.
    pub probability: f32,
}

impl DetectorOutput {
    pub fn label(&self) -> SarcasmLabel {
        if self.probability > 0.5 {
            SarcasmLabel::Sarcastic
        } else {
            SarcasmLabel::NonSarcastic
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorArch {
    Proposed,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub arch: DetectorArch,
    /// Mel bins of the spectrogram input (proposed only).
    pub n_mels: usize,
    pub conv_channels: [usize; 2],
    pub attn_dim: usize,
    pub attn_heads: usize,
    pub text_dim: usize,
    pub embed_dim: usize,
    /// Shortest spectrogram (in frames) the conv stack accepts.
    pub min_frames: usize,
    /// Width of the fixed feature vector (baseline only).
    pub audio_dim: usize,
}

impl DetectorConfig {
    pub fn proposed(n_mels: usize) -> Self {
        Self {
            arch: DetectorArch::Proposed,
            n_mels,
            conv_channels: [32, 64],
            attn_dim: 128,
            attn_heads: 4,
            text_dim: TEXT_DIM,
            embed_dim: SARCASM_EMBED_DIM,
            min_frames: 16,
            audio_dim: BASELINE_AUDIO_DIM,
        }
    }

    pub fn baseline() -> Self {
        Self {
            arch: DetectorArch::Baseline,
            ..Self::proposed(128)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim != SARCASM_EMBED_DIM || self.text_dim != TEXT_DIM {
            return Err(Error::Config(format!(
                "detector needs embed_dim {SARCASM_EMBED_DIM} and text_dim {TEXT_DIM}"
            )));
        }
        if self.arch == DetectorArch::Proposed {
            if self.n_mels == 0 || self.n_mels % 4 != 0 {
                return Err(Error::Config(format!(
                    "n_mels must be a positive multiple of 4, got {}",
                    self.n_mels
                )));
            }
            if self.attn_heads == 0 || self.attn_dim % self.attn_heads != 0 {
                return Err(Error::Config("attn_dim must divide into attn_heads".into()));
            }
            if self.min_frames == 0 {
                return Err(Error::Config("min_frames must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Audio side of one detector example.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorFeatures {
    Mel(MelSpec),
    Vector(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorExample {
    pub id: String,
    pub features: DetectorFeatures,
    pub text: Vec<f32>,
    pub label: SarcasmLabel,
}

/// Right-pads a spectrogram with log-floor frames up to `min_frames`.
pub fn pad_to_min_frames(mel: &MelSpec, min_frames: usize) -> MelSpec {
    if mel.n_frames >= min_frames {
        return mel.clone();
    }
    let mut data = mel.data.clone();
    data.resize(min_frames * mel.n_mels, log_floor());
    MelSpec::new(data, min_frames, mel.n_mels, &mel.stft_config()).expect("consistent shape")
}

/// Batched audio tensors.
pub enum BatchAudio {
    /// `(B, T, M)` spectrograms with a `(B, T)` validity mask.
    Mel { mel: Tensor, mask: Tensor },
    /// `(B, D)` feature vectors.
    Vector(Tensor),
}

pub struct DetectorBatch {
    pub audio: BatchAudio,
    /// `(B, 768)`.
    pub text: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectorMeta {
    kind: String,
    config: DetectorConfig,
    feature_schema_version: String,
    encoder_id: String,
    #[serde(default)]
    validation: Option<DetectionMetrics>,
}

pub struct Detector {
    config: DetectorConfig,
    encoder_id: String,
    net: Net,
    varmap: Option<VarMap>,
    frozen: Vec<(String, Tensor)>,
    device: Device,
    dtype: DType,
}

impl fmt::Debug for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Detector")
            .field("config", &self.config)
            .field("encoder_id", &self.encoder_id)
            .field("trainable", &self.varmap.is_some())
            .finish()
    }
}

impl Detector {
    /// Fresh trainable detector with seeded parameters.
    pub fn new(config: DetectorConfig, encoder_id: impl Into<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let net = Net::new(&config, VarBuilder::from_varmap(&varmap, DType::F32, &device))?;
        nn::init_seeded(&varmap, seed)?;
        let det = Self {
            config,
            encoder_id: encoder_id.into(),
            net,
            varmap: Some(varmap),
            frozen: Vec::new(),
            device,
            dtype: DType::F32,
        };
        det.check_shapes()?;
        Ok(det)
    }

    /// Loads a frozen detector: its parameters are plain tensors and never
    /// receive gradients.
    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_in(dir, DType::F32)
    }

    /// [`Detector::load`] at a chosen float precision; F64 is useful for
    /// numerical gradient checks through the frozen network.
    pub fn load_in(dir: &Path, dtype: DType) -> Result<Self> {
        if !dtype.is_float() {
            return Err(Error::InvalidInput(format!("detector precision must be a float type, got {dtype:?}")));
        }
        let meta = Self::read_meta(dir)?;
        let device = Device::Cpu;
        let weights = nn::load_tensors(&dir.join(CheckpointFiles::WEIGHTS), dtype, &device)?;
        let vb = VarBuilder::from_tensors(weights.clone(), dtype, &device);
        let net = Net::new(&meta.config, vb).map_err(|e| Error::checkpoint(dir, e))?;
        let mut frozen: Vec<(String, Tensor)> = weights.into_iter().collect();
        frozen.sort_by(|a, b| a.0.cmp(&b.0));
        let det = Self {
            config: meta.config,
            encoder_id: meta.encoder_id,
            net,
            varmap: None,
            frozen,
            device,
            dtype,
        };
        det.check_shapes()?;
        Ok(det)
    }

    /// Loads a detector whose parameters can be trained further.
    pub fn load_trainable(dir: &Path) -> Result<Self> {
        let meta = Self::read_meta(dir)?;
        let det = Self::new(meta.config, meta.encoder_id, 0)?;
        let varmap = det.varmap.as_ref().expect("fresh detector is trainable");
        nn::load_into_varmap(varmap, &dir.join(CheckpointFiles::WEIGHTS))?;
        Ok(det)
    }

    fn read_meta(dir: &Path) -> Result<DetectorMeta> {
        let meta: DetectorMeta = nn::load_json(&dir.join(CheckpointFiles::CONFIG))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::checkpoint(dir, format!("not a detector checkpoint (kind `{}`)", meta.kind)));
        }
        if meta.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(Error::checkpoint(
                dir,
                format!(
                    "feature schema `{}` does not match this build's `{FEATURE_SCHEMA_VERSION}`",
                    meta.feature_schema_version
                ),
            ));
        }
        meta.config.validate()?;
        Ok(meta)
    }

    /// Validation metrics stored alongside a checkpoint, if any.
    pub fn stored_validation(dir: &Path) -> Result<Option<DetectionMetrics>> {
        Ok(Self::read_meta(dir)?.validation)
    }

    pub fn save(&self, dir: &Path, validation: Option<&DetectionMetrics>) -> Result<()> {
        let meta = DetectorMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            feature_schema_version: FEATURE_SCHEMA_VERSION.into(),
            encoder_id: self.encoder_id.clone(),
            validation: validation.cloned(),
        };
        let weights = match &self.varmap {
            Some(v) => nn::snapshot(v)?,
            None => self
                .frozen
                .iter()
                .map(|(k, t)| Ok((k.clone(), t.to_dtype(DType::F32)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        nn::save_checkpoint(dir, &meta, &[(CheckpointFiles::WEIGHTS, &weights)], &[])
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn varmap(&self) -> Option<&VarMap> {
        self.varmap.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.varmap.is_none()
    }

    fn check_shapes(&self) -> Result<()> {
        let text = Tensor::zeros((1, self.config.text_dim), self.dtype, &self.device)?;
        let audio = match self.config.arch {
            DetectorArch::Proposed => BatchAudio::Mel {
                mel: Tensor::zeros((1, self.config.min_frames, self.config.n_mels), self.dtype, &self.device)?,
                mask: Tensor::ones((1, self.config.min_frames), self.dtype, &self.device)?,
            },
            DetectorArch::Baseline => {
                BatchAudio::Vector(Tensor::zeros((1, self.config.audio_dim), self.dtype, &self.device)?)
            }
        };
        let (emb, logits) = self.forward_batch(&DetectorBatch { audio, text }, false)?;
        if emb.dims() != [1, self.config.embed_dim] || logits.dims() != [1, 2] {
            return Err(Error::Shape(format!(
                "detector head produced {:?}/{:?}",
                emb.dims(),
                logits.dims()
            )));
        }
        Ok(())
    }

    fn check_text(&self, text: &TextEmbedding) -> Result<()> {
        if text.values.len() != self.config.text_dim {
            return Err(Error::Shape(format!(
                "text embedding has {} values, expected {}",
                text.values.len(),
                self.config.text_dim
            )));
        }
        if text.encoder_id != self.encoder_id {
            return Err(Error::InvalidInput(format!(
                "text embedding from encoder `{}` but detector was trained with `{}`",
                text.encoder_id, self.encoder_id
            )));
        }
        Ok(())
    }

    /// Scores one spectrogram. Shorter than `min_frames` is an error; use
    /// [`pad_to_min_frames`] to opt into padding.
    pub fn forward(&self, mel: &MelSpec, text: &TextEmbedding) -> Result<DetectorOutput> {
        self.check_text(text)?;
        if self.config.arch != DetectorArch::Proposed {
            return Err(Error::InvalidInput("baseline detector takes a feature vector".into()));
        }
        self.check_mel(mel)?;
        let ex = DetectorExample {
            id: String::new(),
            features: DetectorFeatures::Mel(mel.clone()),
            text: text.values.clone(),
            label: SarcasmLabel::NonSarcastic,
        };
        Ok(self.predict(std::slice::from_ref(&ex), 1)?.remove(0))
    }

    /// Scores one fixed feature vector (baseline).
    pub fn forward_vector(&self, audio: &[f32], text: &TextEmbedding) -> Result<DetectorOutput> {
        self.check_text(text)?;
        if self.config.arch != DetectorArch::Baseline {
            return Err(Error::InvalidInput("proposed detector takes a spectrogram".into()));
        }
        let ex = DetectorExample {
            id: String::new(),
            features: DetectorFeatures::Vector(audio.to_vec()),
            text: text.values.clone(),
            label: SarcasmLabel::NonSarcastic,
        };
        Ok(self.predict(std::slice::from_ref(&ex), 1)?.remove(0))
    }

    pub fn extract_sarcasm_embedding(&self, mel: &MelSpec, text: &TextEmbedding) -> Result<SarcasmEmbedding> {
        Ok(self.forward(mel, text)?.embedding)
    }

    fn check_mel(&self, mel: &MelSpec) -> Result<()> {
        if mel.n_mels != self.config.n_mels {
            return Err(Error::Shape(format!(
                "detector expects {} mel bins, got {}",
                self.config.n_mels, mel.n_mels
            )));
        }
        if mel.n_frames < self.config.min_frames {
            return Err(Error::UtteranceTooShort {
                frames: mel.n_frames,
                min: self.config.min_frames,
            });
        }
        Ok(())
    }

    /// Assembles a batch. Spectrograms shorter than `min_frames` are padded
    /// with log-floor frames that count as valid; batch padding is masked.
    pub fn make_batch(&self, examples: &[&DetectorExample]) -> Result<DetectorBatch> {
        if examples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let b = examples.len();
        let mut text = Vec::with_capacity(b * self.config.text_dim);
        for ex in examples {
            if ex.text.len() != self.config.text_dim {
                return Err(Error::Shape(format!(
                    "example `{}` text embedding has {} values",
                    ex.id,
                    ex.text.len()
                )));
            }
            text.extend_from_slice(&ex.text);
        }
        let text = Tensor::from_vec(text, (b, self.config.text_dim), &self.device)?.to_dtype(self.dtype)?;
        let audio = match self.config.arch {
            DetectorArch::Proposed => {
                let mut mels = Vec::with_capacity(b);
                for ex in examples {
                    let DetectorFeatures::Mel(m) = &ex.features else {
                        return Err(Error::InvalidInput(format!("example `{}` lacks a spectrogram", ex.id)));
                    };
                    if m.n_mels != self.config.n_mels {
                        return Err(Error::Shape(format!(
                            "example `{}` has {} mel bins, detector expects {}",
                            ex.id, m.n_mels, self.config.n_mels
                        )));
                    }
                    mels.push(pad_to_min_frames(m, self.config.min_frames));
                }
                let t = mels.iter().map(|m| m.n_frames).max().expect("non-empty");
                let n_mels = self.config.n_mels;
                let mut data = Vec::with_capacity(b * t * n_mels);
                let mut lengths = Vec::with_capacity(b);
                for m in &mels {
                    data.extend_from_slice(&m.data);
                    data.resize(data.len() + (t - m.n_frames) * n_mels, log_floor());
                    lengths.push(m.n_frames);
                }
                BatchAudio::Mel {
                    mel: Tensor::from_vec(data, (b, t, n_mels), &self.device)?.to_dtype(self.dtype)?,
                    mask: nn::length_mask(&lengths, t, self.dtype, &self.device)?,
                }
            }
            DetectorArch::Baseline => {
                let mut data = Vec::with_capacity(b * self.config.audio_dim);
                for ex in examples {
                    let DetectorFeatures::Vector(v) = &ex.features else {
                        return Err(Error::InvalidInput(format!("example `{}` lacks a feature vector", ex.id)));
                    };
                    if v.len() != self.config.audio_dim {
                        return Err(Error::Shape(format!(
                            "example `{}` feature vector has {} values, expected {}",
                            ex.id,
                            v.len(),
                            self.config.audio_dim
                        )));
                    }
                    data.extend_from_slice(v);
                }
                BatchAudio::Vector(Tensor::from_vec(data, (b, self.config.audio_dim), &self.device)?.to_dtype(self.dtype)?)
            }
        };
        Ok(DetectorBatch { audio, text })
    }

    /// Differentiable forward: `(embedding (B, 768), logits (B, 2))`.
    pub fn forward_batch(&self, batch: &DetectorBatch, train: bool) -> Result<(Tensor, Tensor)> {
        self.net.forward(batch, train)
    }

    /// Sarcasm embeddings `(B, 768)` for a batch of spectrograms, keeping the
    /// graph back to `mel` so callers can differentiate through the detector.
    pub fn embed_mel_tensor(&self, mel: &Tensor, mask: &Tensor, text: &Tensor) -> Result<Tensor> {
        let batch = DetectorBatch {
            audio: BatchAudio::Mel {
                mel: mel.clone(),
                mask: mask.clone(),
            },
            text: text.clone(),
        };
        Ok(self.net.forward(&batch, false)?.0)
    }

    /// Eval-mode predictions in chunks of `batch_size`.
    pub fn predict(&self, examples: &[DetectorExample], batch_size: usize) -> Result<Vec<DetectorOutput>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&DetectorExample> = chunk.iter().collect();
            let batch = self.make_batch(&refs)?;
            let (emb, logits) = self.forward_batch(&batch, false)?;
            let (emb, logits) = (emb.to_dtype(DType::F32)?, logits.to_dtype(DType::F32)?);
            let probs = candle_nn::ops::softmax(&logits, D::Minus1)?.to_vec2::<f32>()?;
            let emb = emb.to_vec2::<f32>()?;
            let logits = logits.to_vec2::<f32>()?;
            for ((e, l), p) in emb.into_iter().zip(logits).zip(probs) {
                out.push(DetectorOutput {
                    embedding: SarcasmEmbedding { values: e },
                    logits: [l[0], l[1]],
                    probability: p[1],
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::StftConfig;

    fn mel(frames: usize, n_mels: usize, seed: f32) -> MelSpec {
        let data = (0..frames * n_mels)
            .map(|i| ((i as f32 * 0.37 + seed).sin() * 2.0) - 4.0)
            .collect();
        MelSpec::new(data, frames, n_mels, &StftConfig::default()).unwrap()
    }

    fn text(det: &Detector, v: f32) -> TextEmbedding {
        TextEmbedding {
            values: vec![v; TEXT_DIM],
            encoder_id: det.encoder_id().into(),
        }
    }

    #[test]
    fn output_shapes_and_probability_range() {
        let det = Detector::new(DetectorConfig::proposed(128), "enc", 1).unwrap();
        let out = det.forward(&mel(40, 128, 0.0), &text(&det, 0.1)).unwrap();
        assert_eq!(out.embedding.values.len(), SARCASM_EMBED_DIM);
        assert!((0.0..=1.0).contains(&out.probability));
        let e = (out.logits[1] - out.logits[0]).exp();
        assert!((out.probability - e / (1.0 + e)).abs() < 1e-5);
    }

    #[test]
    fn short_spectrogram_is_rejected_but_padding_is_opt_in() {
        let det = Detector::new(DetectorConfig::proposed(80), "enc", 1).unwrap();
        let short = mel(10, 80, 0.0);
        assert!(matches!(
            det.forward(&short, &text(&det, 0.0)),
            Err(Error::UtteranceTooShort { frames: 10, min: 16 })
        ));
        let padded = pad_to_min_frames(&short, 16);
        assert_eq!(padded.n_frames, 16);
        assert!(det.forward(&padded, &text(&det, 0.0)).is_ok());
    }

    #[test]
    fn batch_padding_does_not_change_results() {
        let det = Detector::new(DetectorConfig::proposed(80), "enc", 3).unwrap();
        let a = DetectorExample {
            id: "a".into(),
            features: DetectorFeatures::Mel(mel(20, 80, 0.5)),
            text: vec![0.2; TEXT_DIM],
            label: SarcasmLabel::Sarcastic,
        };
        let b = DetectorExample {
            id: "b".into(),
            features: DetectorFeatures::Mel(mel(33, 80, 1.5)),
            ..a.clone()
        };
        let alone = det.predict(std::slice::from_ref(&a), 1).unwrap();
        let together = det.predict(&[a, b], 2).unwrap();
        for (x, y) in alone[0].embedding.values.iter().zip(&together[0].embedding.values) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn save_load_round_trip_and_schema_guard() {
        let dir = tempfile::tempdir().unwrap();
        let det = Detector::new(DetectorConfig::baseline(), "enc", 5).unwrap();
        let ckpt = dir.path().join("det");
        det.save(&ckpt, None).unwrap();
        let loaded = Detector::load(&ckpt).unwrap();
        assert!(loaded.is_frozen());
        let v = vec![0.3; BASELINE_AUDIO_DIM];
        let a = det.forward_vector(&v, &text(&det, 0.1)).unwrap();
        let b = loaded.forward_vector(&v, &text(&loaded, 0.1)).unwrap();
        assert_eq!(a, b);
        let cfg_path = ckpt.join(CheckpointFiles::CONFIG);
        let raw = std::fs::read_to_string(&cfg_path).unwrap();
        std::fs::write(&cfg_path, raw.replace(FEATURE_SCHEMA_VERSION, "sarc-features/0")).unwrap();
        assert!(matches!(Detector::load(&ckpt), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn double_precision_load_agrees_and_saves_as_f32() {
        let dir = tempfile::tempdir().unwrap();
        let det = Detector::new(DetectorConfig::proposed(80), "enc", 2).unwrap();
        let ckpt = dir.path().join("det");
        det.save(&ckpt, None).unwrap();
        let wide = Detector::load_in(&ckpt, DType::F64).unwrap();
        assert_eq!(wide.dtype(), DType::F64);
        let m = mel(20, 80, 0.2);
        let a = det.forward(&m, &text(&det, 0.1)).unwrap();
        let b = wide.forward(&m, &text(&wide, 0.1)).unwrap();
        assert!((a.probability - b.probability).abs() < 1e-5);
        let again = dir.path().join("again");
        wide.save(&again, None).unwrap();
        assert_eq!(
            std::fs::read(ckpt.join(CheckpointFiles::WEIGHTS)).unwrap(),
            std::fs::read(again.join(CheckpointFiles::WEIGHTS)).unwrap()
        );
        assert!(Detector::load_in(&ckpt, DType::U32).is_err());
    }

    #[test]
    fn mismatched_encoder_is_rejected() {
        let det = Detector::new(DetectorConfig::baseline(), "enc", 5).unwrap();
        let t = TextEmbedding::zeros("other");
        assert!(det.forward_vector(&[0.0; BASELINE_AUDIO_DIM], &t).is_err());
    }

    #[test]
    fn label_parsing() {
        assert_eq!("1".parse::<SarcasmLabel>().unwrap(), SarcasmLabel::Sarcastic);
        assert_eq!("non-sarcastic".parse::<SarcasmLabel>().unwrap(), SarcasmLabel::NonSarcastic);
        assert!("maybe".parse::<SarcasmLabel>().is_err());
        assert_eq!(serde_json::to_string(&SarcasmLabel::Sarcastic).unwrap(), "1");
    }
}

//! Inference: text plus a conditioning source → mel → waveform.

mod bank;
mod vocoder;

use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use bank::{build_label_bank, embed_recording, record_embedding, LabelBank, LabelBankEntry, LABEL_BANK_FILE};
pub(crate) use bank::read_pipeline_wave;
pub use vocoder::{mel_to_wave, GriffinLim, Vocoder, VocoderRegistry};

use crate::audio::{MelSpec, Waveform};
use crate::detector::{Detector, SarcasmEmbedding, SarcasmLabel};
use crate::error::{Error, Result};
use crate::phoneme::{g2p, Lexicon, PhonemeSequence};
use crate::text::TextEmbedder;
use crate::tts::AcousticModel;

/// Where the sarcasm embedding comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    /// Detector embedding of a reference recording and the request text.
    ReferenceAudio(PathBuf),
    Embedding(SarcasmEmbedding),
    /// Stored mean embedding for a label.
    LabelBank(SarcasmLabel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub text: String,
    pub reference_audio: Option<PathBuf>,
    pub embedding: Option<SarcasmEmbedding>,
    pub label: Option<SarcasmLabel>,
    pub checkpoint: PathBuf,
    pub speaker_id: Option<u32>,
}

impl SynthesisRequest {
    pub fn new(text: impl Into<String>, checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            text: text.into(),
            reference_audio: None,
            embedding: None,
            label: None,
            checkpoint: checkpoint.into(),
            speaker_id: None,
        }
    }

    /// Checks the request without touching the checkpoint. At most one
    /// conditioning source may be set; none is only valid for
    /// unconditioned models.
    pub fn conditioning(&self) -> Result<Option<Conditioning>> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidInput("synthesis text is empty".into()));
        }
        let mut sources = Vec::new();
        if let Some(p) = &self.reference_audio {
            sources.push(Conditioning::ReferenceAudio(p.clone()));
        }
        if let Some(e) = &self.embedding {
            sources.push(Conditioning::Embedding(e.clone()));
        }
        if let Some(l) = self.label {
            sources.push(Conditioning::LabelBank(l));
        }
        if sources.len() > 1 {
            return Err(Error::InvalidInput(format!(
                "exactly one conditioning source allowed, got {}",
                sources.len()
            )));
        }
        Ok(sources.pop())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizerOptions {
    pub vocoder: String,
    /// Detector used for reference-audio conditioning.
    pub detector: Option<PathBuf>,
    /// Defaults to `label_bank.json` inside the checkpoint directory.
    pub label_bank: Option<PathBuf>,
    /// CMUdict-format lexicon; the built-in one otherwise.
    pub lexicon: Option<PathBuf>,
}

impl Default for SynthesizerOptions {
    fn default() -> Self {
        Self {
            vocoder: "griffin-lim".into(),
            detector: None,
            label_bank: None,
            lexicon: None,
        }
    }
}

/// A loaded acoustic model plus everything needed to resolve conditioning.
/// Immutable after load; safe to share across threads.
pub struct Synthesizer {
    model: AcousticModel,
    detector: Option<(Detector, TextEmbedder)>,
    bank: Option<LabelBank>,
    lexicon: Lexicon,
    vocoder: Arc<dyn Vocoder>,
}

impl Synthesizer {
    pub fn load(checkpoint: &Path, opts: &SynthesizerOptions, registry: &VocoderRegistry) -> Result<Self> {
        let vocoder = registry.create(&opts.vocoder)?;
        let model = AcousticModel::load(checkpoint)?;
        if model.config().mel_bins != vocoder.mel_bins() {
            return Err(Error::Config(format!(
                "acoustic model emits {} bins, vocoder `{}` expects {}",
                model.config().mel_bins,
                vocoder.backend_id(),
                vocoder.mel_bins()
            )));
        }
        let detector = match &opts.detector {
            Some(p) => {
                let d = Detector::load(p)?;
                let e = TextEmbedder::for_encoder_id(d.encoder_id())?;
                Some((d, e))
            }
            None => None,
        };
        let bank_path = opts.label_bank.clone().unwrap_or_else(|| checkpoint.join(LABEL_BANK_FILE));
        let bank = if bank_path.exists() {
            Some(LabelBank::load(&bank_path)?)
        } else if opts.label_bank.is_some() {
            return Err(Error::InvalidInput(format!("label bank {} not found", bank_path.display())));
        } else {
            None
        };
        let lexicon = match &opts.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::builtin(),
        };
        Ok(Self {
            model,
            detector,
            bank,
            lexicon,
            vocoder,
        })
    }

    pub fn model(&self) -> &AcousticModel {
        &self.model
    }

    pub fn vocoder(&self) -> &dyn Vocoder {
        self.vocoder.as_ref()
    }

    pub fn label_bank(&self) -> Option<&LabelBank> {
        self.bank.as_ref()
    }

    pub fn phonemes(&self, text: &str) -> Result<PhonemeSequence> {
        g2p(text, &self.lexicon, self.model.vocab())
    }

    pub fn resolve(&self, text: &str, cond: Option<&Conditioning>) -> Result<SarcasmEmbedding> {
        match cond {
            None if self.model.config().sarcasm_conditioning => {
                Err(Error::InvalidInput("this model needs a conditioning source".into()))
            }
            None => Ok(SarcasmEmbedding::zeros()),
            Some(Conditioning::Embedding(e)) => SarcasmEmbedding::new(e.values.clone()),
            Some(Conditioning::LabelBank(l)) => self
                .bank
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no label bank is available for this checkpoint".into()))?
                .get(*l),
            Some(Conditioning::ReferenceAudio(p)) => {
                let (det, emb) = self
                    .detector
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("reference-audio conditioning needs a detector checkpoint".into()))?;
                embed_recording(det, emb, p, text)
            }
        }
    }

    /// `T × 80` log-mel for `text`.
    pub fn synthesize_mel(&self, text: &str, cond: Option<&Conditioning>, speaker: Option<u32>) -> Result<MelSpec> {
        let sarc = self.resolve(text, cond)?;
        let seq = self.phonemes(text)?;
        self.model.infer(&seq, &sarc, speaker)
    }

    pub fn synthesize(&self, text: &str, cond: Option<&Conditioning>, speaker: Option<u32>) -> Result<Waveform> {
        let mel = self.synthesize_mel(text, cond, speaker)?;
        mel_to_wave(&mel, self.vocoder.as_ref())
    }
}

/// One-shot synthesis. The request is validated before the checkpoint is read.
pub fn synthesize(req: &SynthesisRequest, opts: &SynthesizerOptions) -> Result<Waveform> {
    let cond = req.conditioning()?;
    let synth = Synthesizer::load(&req.checkpoint, opts, &VocoderRegistry::default())?;
    synth.synthesize(&req.text, cond.as_ref(), req.speaker_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sources_rejected_before_load() {
        let mut req = SynthesisRequest::new("hello", "/definitely/missing");
        req.label = Some(SarcasmLabel::Sarcastic);
        req.embedding = Some(SarcasmEmbedding::zeros());
        let err = synthesize(&req, &SynthesizerOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(m) if m.contains("exactly one")));
        let empty = SynthesisRequest::new("  ", "/x");
        assert!(empty.conditioning().is_err());
        req.embedding = None;
        assert_eq!(req.conditioning().unwrap(), Some(Conditioning::LabelBank(SarcasmLabel::Sarcastic)));
    }
}

//! Per-label mean sarcasm embeddings for reference-free inference.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{mel_spectrogram, resample, MelConfig, Waveform, SAMPLE_RATE};
use crate::data::{write_atomic, CorpusManifest, Split, UtteranceRecord};
use crate::detector::{pad_to_min_frames, Detector, SarcasmEmbedding, SarcasmLabel, SARCASM_EMBED_DIM};
use crate::error::{Error, Result};
use crate::text::TextEmbedder;

pub const LABEL_BANK_FILE: &str = "label_bank.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBankEntry {
    pub count: usize,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBank {
    pub encoder_id: String,
    /// Keyed by label name (`sarcastic`, `non-sarcastic`).
    pub entries: BTreeMap<String, LabelBankEntry>,
}

impl LabelBank {
    pub fn get(&self, label: SarcasmLabel) -> Result<SarcasmEmbedding> {
        let e = self
            .entries
            .get(&label.to_string())
            .ok_or_else(|| Error::InvalidInput(format!("label bank has no `{label}` entry")))?;
        SarcasmEmbedding::new(e.embedding.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bank: Self = serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::parse(path.display().to_string(), e))?;
        for (k, e) in &bank.entries {
            if e.embedding.len() != SARCASM_EMBED_DIM {
                return Err(Error::Shape(format!("label bank entry `{k}` has {} values", e.embedding.len())));
            }
        }
        Ok(bank)
    }
}

/// Reads a WAV at the pipeline rate (resampling if needed).
pub(crate) fn read_pipeline_wave(path: &Path) -> Result<Waveform> {
    let w = Waveform::read_wav(path)?;
    if w.sample_rate == SAMPLE_RATE {
        Ok(w)
    } else {
        resample(&w, SAMPLE_RATE)
    }
}

/// Detector embedding of one recording and its transcript.
pub fn embed_recording(detector: &Detector, embedder: &TextEmbedder, audio: &Path, transcript: &str) -> Result<SarcasmEmbedding> {
    let wave = read_pipeline_wave(audio)?;
    let mel = mel_spectrogram(&wave, &MelConfig::for_bins(detector.config().n_mels)?)?;
    let text = embedder.embed_utterance(transcript)?;
    detector.extract_sarcasm_embedding(&pad_to_min_frames(&mel, detector.config().min_frames), &text)
}

pub fn record_embedding(detector: &Detector, embedder: &TextEmbedder, record: &UtteranceRecord) -> Result<SarcasmEmbedding> {
    embed_recording(detector, embedder, &record.audio_path, &record.transcript)
}

/// Mean detector embedding per label over the manifest's training records.
pub fn build_label_bank(manifest: &CorpusManifest, detector: &Detector) -> Result<LabelBank> {
    let embedder = TextEmbedder::for_encoder_id(detector.encoder_id())?;
    let mut sums: BTreeMap<SarcasmLabel, (usize, Vec<f64>)> = BTreeMap::new();
    for rec in manifest.split(Split::Train) {
        let Some(label) = rec.sarcasm_label else { continue };
        let emb = record_embedding(detector, &embedder, rec)?;
        let slot = sums.entry(label).or_insert_with(|| (0, vec![0.0; SARCASM_EMBED_DIM]));
        slot.0 += 1;
        for (a, &v) in slot.1.iter_mut().zip(&emb.values) {
            *a += v as f64;
        }
    }
    let mut entries = BTreeMap::new();
    for label in [SarcasmLabel::NonSarcastic, SarcasmLabel::Sarcastic] {
        let (count, sum) = sums
            .remove(&label)
            .ok_or_else(|| Error::InvalidInput(format!("no labelled training records for `{label}`")))?;
        entries.insert(
            label.to_string(),
            LabelBankEntry {
                count,
                embedding: sum.into_iter().map(|s| (s / count as f64) as f32).collect(),
            },
        );
    }
    Ok(LabelBank {
        encoder_id: detector.encoder_id().to_string(),
        entries,
    })
}

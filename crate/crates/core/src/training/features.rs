//! Per-utterance training features and padded batch assembly.

use std::path::PathBuf;

use candle_core::{Device, Tensor};
use log::warn;

use crate::audio::{f0_contour, frame_log_energy, mel_spectrogram, MelConfig, Waveform};
use crate::data::UtteranceRecord;
use crate::detector::{pad_to_min_frames, Detector, SarcasmEmbedding};
use crate::error::{Error, Result};
use crate::phoneme::{g2p, Lexicon, PhonemeSequence, PhonemeVocab};
use crate::text::{embed_batch_cached, TextEmbedder, TextEmbedding};
use crate::tts::{log_duration, TtsBatch, VarianceTargets};

/// Everything one utterance contributes to a training batch.
#[derive(Debug, Clone)]
pub struct TtsExample {
    pub id: String,
    pub phonemes: PhonemeSequence,
    pub targets: VarianceTargets,
    /// `n_frames × mel_bins`, row-major.
    pub mel: Vec<f32>,
    pub n_frames: usize,
    pub text: TextEmbedding,
    pub sarcasm: SarcasmEmbedding,
    pub speaker: u32,
}

pub struct FeatureSources<'a> {
    pub vocab: &'a PhonemeVocab,
    pub mel: MelConfig,
    pub embedder: Option<&'a TextEmbedder>,
    /// Produces the conditioning embedding from ground-truth audio + text;
    /// `None` yields zero embeddings.
    pub conditioning: Option<&'a Detector>,
    pub n_speakers: usize,
    pub text_cache: Option<PathBuf>,
}

fn speaker_index(id: &str, n_speakers: usize) -> Result<u32> {
    if n_speakers == 0 {
        return Ok(0);
    }
    let digits: String = id.chars().rev().take_while(|c| c.is_ascii_digit()).collect::<Vec<_>>().into_iter().rev().collect();
    let idx: u32 = digits
        .parse()
        .map_err(|_| Error::InvalidInput(format!("speaker id `{id}` carries no numeric index")))?;
    if idx as usize >= n_speakers {
        return Err(Error::InvalidInput(format!("speaker `{id}` outside the model's {n_speakers} speakers")));
    }
    Ok(idx)
}

/// Reconciles stored durations with the spectrogram length. A one-frame
/// discrepancy (framing rounding) is absorbed by the last phoneme.
fn reconcile(id: &str, mut durations: Vec<u32>, n_frames: usize) -> Result<Vec<u32>> {
    let total: i64 = durations.iter().map(|&d| d as i64).sum();
    let diff = n_frames as i64 - total;
    let last = durations
        .last_mut()
        .ok_or_else(|| Error::InvalidInput(format!("record `{id}` has no durations")))?;
    if diff.abs() > 1 || (*last as i64 + diff) < 0 {
        return Err(Error::InvalidInput(format!(
            "record `{id}`: durations sum to {total} frames but the audio has {n_frames}"
        )));
    }
    if diff != 0 {
        warn!("record `{id}`: adjusting last duration by {diff} frame");
        *last = (*last as i64 + diff) as u32;
    }
    Ok(durations)
}

/// Loads audio and extracts mel, pitch/energy targets, text and sarcasm
/// embeddings for each record.
pub fn prepare_examples(records: &[&UtteranceRecord], src: &FeatureSources<'_>) -> Result<Vec<TtsExample>> {
    let lexicon = Lexicon::builtin();
    let texts: Vec<String> = records.iter().map(|r| r.transcript.clone()).collect();
    let text_embs: Vec<TextEmbedding> = match (src.embedder, &src.text_cache) {
        (Some(e), Some(cache)) => embed_batch_cached(e, &texts, cache)?,
        (Some(e), None) => texts.iter().map(|t| e.embed_utterance(t)).collect::<Result<_>>()?,
        (None, _) => texts.iter().map(|_| TextEmbedding::zeros("none")).collect(),
    };
    let mut out = Vec::with_capacity(records.len());
    for (rec, text) in records.iter().zip(text_embs) {
        let phonemes = match &rec.phonemes {
            Some(symbols) => PhonemeSequence {
                ids: symbols.iter().map(|s| src.vocab.id_or_unk(s)).collect(),
            },
            None => g2p(&rec.transcript, &lexicon, src.vocab)?,
        };
        let durations = rec.durations.clone().ok_or_else(|| {
            Error::InvalidInput(format!("record `{}` has no phoneme durations; ingest an alignment first", rec.id))
        })?;
        if durations.len() != phonemes.len() {
            return Err(Error::InvalidInput(format!(
                "record `{}` has {} phonemes but {} durations",
                rec.id,
                phonemes.len(),
                durations.len()
            )));
        }
        let wave = Waveform::read_wav(&rec.audio_path)?;
        let mel = mel_spectrogram(&wave, &src.mel)?;
        let durations = reconcile(&rec.id, durations, mel.n_frames)?;
        let f0 = f0_contour(&wave, &src.mel.stft);
        let energy = frame_log_energy(&wave, &src.mel.stft);
        let targets = VarianceTargets::from_frames(&durations, &f0, &energy)?;
        let sarcasm = match src.conditioning {
            Some(det) => {
                let cond = mel_spectrogram(&wave, &MelConfig::for_bins(det.config().n_mels)?)?;
                det.extract_sarcasm_embedding(&pad_to_min_frames(&cond, det.config().min_frames), &text)?
            }
            None => SarcasmEmbedding::zeros(),
        };
        out.push(TtsExample {
            id: rec.id.clone(),
            phonemes,
            targets,
            n_frames: mel.n_frames,
            mel: mel.data,
            text,
            sarcasm,
            speaker: speaker_index(&rec.speaker_id, src.n_speakers)?,
        });
    }
    Ok(out)
}

/// A padded batch plus its ground-truth tensors.
pub struct PreparedBatch {
    pub ids: Vec<String>,
    pub batch: TtsBatch,
    /// `(B, F, mel_bins)`, zero past each length.
    pub mel: Tensor,
    /// `(B, T_ph)`.
    pub log_durations: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    /// `(B, 768)`.
    pub text: Tensor,
}

pub fn make_batch(examples: &[&TtsExample], mel_bins: usize, with_speakers: bool, device: &Device) -> Result<PreparedBatch> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let b = examples.len();
    let t = examples.iter().map(|e| e.phonemes.len()).max().expect("non-empty");
    let f = examples.iter().map(|e| e.n_frames).max().expect("non-empty");
    let mut mel = Vec::with_capacity(b * f * mel_bins);
    let (mut ld, mut pitch, mut energy) = (Vec::with_capacity(b * t), Vec::with_capacity(b * t), Vec::with_capacity(b * t));
    let mut text = Vec::with_capacity(b * crate::text::TEXT_DIM);
    let mut sarc = Vec::with_capacity(b * crate::detector::SARCASM_EMBED_DIM);
    for e in examples {
        if e.mel.len() != e.n_frames * mel_bins {
            return Err(Error::Shape(format!("example `{}` mel is not {} bins wide", e.id, mel_bins)));
        }
        mel.extend_from_slice(&e.mel);
        mel.resize(mel.len() + (f - e.n_frames) * mel_bins, 0.0);
        let pad = t - e.phonemes.len();
        ld.extend(e.targets.durations.iter().map(|&d| log_duration(d)));
        ld.extend(std::iter::repeat_n(0.0, pad));
        pitch.extend_from_slice(&e.targets.pitch);
        pitch.extend(std::iter::repeat_n(0.0, pad));
        energy.extend_from_slice(&e.targets.energy);
        energy.extend(std::iter::repeat_n(0.0, pad));
        text.extend_from_slice(&e.text.values);
        sarc.extend_from_slice(&e.sarcasm.values);
    }
    let text_dim = text.len() / b;
    Ok(PreparedBatch {
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        batch: TtsBatch {
            phonemes: examples.iter().map(|e| e.phonemes.clone()).collect(),
            sarcasm: Tensor::from_vec(sarc, (b, crate::detector::SARCASM_EMBED_DIM), device)?,
            speakers: with_speakers.then(|| examples.iter().map(|e| e.speaker).collect()),
            targets: Some(examples.iter().map(|e| e.targets.clone()).collect()),
        },
        mel: Tensor::from_vec(mel, (b, f, mel_bins), device)?,
        log_durations: Tensor::from_vec(ld, (b, t), device)?,
        pitch: Tensor::from_vec(pitch, (b, t), device)?,
        energy: Tensor::from_vec(energy, (b, t), device)?,
        text: Tensor::from_vec(text, (b, text_dim), device)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconcile_absorbs_one_frame() {
        assert_eq!(reconcile("a", vec![3, 4], 8).unwrap(), vec![3, 5]);
        assert_eq!(reconcile("a", vec![3, 4], 6).unwrap(), vec![3, 3]);
        assert!(reconcile("a", vec![3, 4], 10).is_err());
    }

    #[test]
    fn speaker_indices() {
        assert_eq!(speaker_index("spk3", 0).unwrap(), 0);
        assert_eq!(speaker_index("spk3", 4).unwrap(), 3);
        assert!(speaker_index("spk3", 3).is_err());
        assert!(speaker_index("alice", 2).is_err());
    }
}

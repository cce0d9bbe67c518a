//! Synthetic corpora for tests, demos and desk-scale runs.
//!
//! Each utterance is a transcript drawn from two phrase pools, rendered
//! phoneme by phoneme as a harmonic (voiced) or noise (unvoiced) segment of
//! known frame length. Sarcastic items get a higher, wider pitch contour,
//! louder delivery and slower timing, so both modalities carry the label.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{StftConfig, Waveform, SAMPLE_RATE};
use crate::data::{write_textgrid, CorpusManifest, Interval, StageTag, UtteranceRecord};
use crate::detector::SarcasmLabel;
use crate::error::Result;
use crate::phoneme::{g2p, Lexicon, PhonemeVocab};

const SARCASTIC: [&str; 8] = [
    "oh great another meeting",
    "wow that's just perfect",
    "yeah i really love monday",
    "sure that's a fantastic idea",
    "oh wonderful i love work",
    "totally the best day ever",
    "wow you are so fun",
    "that's amazing really amazing",
];

const PLAIN: [&str; 8] = [
    "the meeting is today",
    "we have work to do",
    "hello how are you",
    "it is a nice day",
    "i know the time",
    "she was at work",
    "do you like our idea",
    "my day was good",
];

const UNVOICED: [&str; 12] = ["P", "T", "K", "F", "TH", "S", "SH", "HH", "CH", "sil", "sp", "<unk>"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusConfig {
    pub n_utterances: usize,
    pub stage: StageTag,
    pub seed: u64,
    /// Attach alternating sarcasm labels.
    pub labeled: bool,
    pub id_prefix: String,
}

impl ToyCorpusConfig {
    pub fn new(n_utterances: usize, stage: StageTag, seed: u64) -> Self {
        Self {
            n_utterances,
            stage,
            seed,
            labeled: stage == StageTag::Sarcastic,
            id_prefix: format!("{stage}"),
        }
    }
}

fn formants(symbol: &str) -> (f32, f32) {
    let h = symbol.bytes().fold(2166136261u32, |h, b| (h ^ b as u32).wrapping_mul(16777619));
    (300.0 + (h % 600) as f32, 900.0 + ((h >> 10) % 1600) as f32)
}

/// Renders phoneme segments; the result has exactly `Σdurations` frames.
fn render(symbols: &[String], durations: &[u32], sarcastic: bool, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let hop = StftConfig::default().hop;
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let n = (total - 1) * hop;
    let sr = SAMPLE_RATE as f32;
    let (base, swing, gain) = if sarcastic { (170.0, 0.35, 0.5) } else { (120.0, 0.05, 0.3) };
    let mut out = Vec::with_capacity(n);
    let mut phase = 0f32;
    let mut start = 0usize;
    for (sym, &d) in symbols.iter().zip(durations) {
        let len = (d as usize * hop).min(n - start.min(n));
        let voiced = !UNVOICED.contains(&sym.as_str());
        let (f1, f2) = formants(sym);
        for j in 0..len {
            let pos = (start + j) as f32 / n as f32;
            let f0 = base * (1.0 + swing * (std::f32::consts::PI * 2.0 * pos).sin());
            phase += 2.0 * std::f32::consts::PI * f0 / sr;
            let env = {
                let x = j as f32 / len.max(1) as f32;
                (std::f32::consts::PI * x).sin().max(0.15)
            };
            let s = if voiced {
                let mut acc = 0.0;
                let mut k = 1;
                while (k as f32) * f0 < 5000.0 {
                    let f = k as f32 * f0;
                    let amp = (-((f - f1) / 250.0).powi(2)).exp() + 0.6 * (-((f - f2) / 350.0).powi(2)).exp() + 0.02;
                    acc += amp * (phase * k as f32).sin();
                    k += 1;
                }
                acc * 0.3
            } else {
                rng.random_range(-0.15f32..0.15)
            };
            out.push(gain * env * s);
        }
        start += len;
    }
    out.resize(n, 0.0);
    out
}

/// Writes `<root>/spk0/<id>.{wav,txt,label,TextGrid}` and returns the
/// manifest with phonemes and frame durations filled in.
pub fn write_toy_corpus(root: &Path, cfg: &ToyCorpusConfig) -> Result<CorpusManifest> {
    let dir = root.join("spk0");
    fs::create_dir_all(&dir)?;
    let lexicon = Lexicon::builtin();
    let vocab = PhonemeVocab::standard();
    let stft = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n_utterances);
    for i in 0..cfg.n_utterances {
        let sarcastic = i % 2 == 1;
        let pool = if sarcastic { &SARCASTIC } else { &PLAIN };
        let transcript = pool[rng.random_range(0..pool.len())];
        let seq = g2p(transcript, &lexicon, &vocab)?;
        let symbols: Vec<String> = seq.ids.iter().map(|&id| vocab.symbol(id).unwrap_or("<unk>").to_string()).collect();
        let stretch = if sarcastic { 2 } else { 0 };
        let durations: Vec<u32> = symbols.iter().map(|_| rng.random_range(3..=7) + stretch).collect();
        let samples = render(&symbols, &durations, sarcastic, &mut rng);
        let wave = Waveform::new(samples, SAMPLE_RATE)?;
        debug_assert_eq!(stft.n_frames(wave.len()), durations.iter().sum::<u32>() as usize);

        let id = format!("{}{i:04}", cfg.id_prefix);
        let wav = dir.join(format!("{id}.wav"));
        wave.write_wav(&wav)?;
        fs::write(dir.join(format!("{id}.txt")), transcript)?;
        let frame_secs = stft.hop as f64 / stft.sample_rate as f64;
        let mut t = 0.0;
        let intervals: Vec<Interval> = symbols
            .iter()
            .zip(&durations)
            .map(|(s, &d)| {
                let start = t;
                t += d as f64 * frame_secs;
                Interval {
                    start,
                    end: t,
                    text: s.clone(),
                }
            })
            .collect();
        fs::write(dir.join(format!("{id}.TextGrid")), write_textgrid(&intervals, t))?;

        let mut rec = UtteranceRecord::new(id.clone(), wav, transcript, "spk0", cfg.stage, wave.duration_secs());
        rec.phonemes = Some(symbols);
        rec.durations = Some(durations);
        if cfg.labeled {
            let label = if sarcastic { SarcasmLabel::Sarcastic } else { SarcasmLabel::NonSarcastic };
            fs::write(dir.join(format!("{id}.label")), (label as u8).to_string())?;
            rec.sarcasm_label = Some(label);
        }
        records.push(rec);
    }
    let manifest = CorpusManifest {
        records,
        stage_tag: cfg.stage,
    };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{f0_contour, mel_spectrogram, MelConfig};

    #[test]
    fn frames_match_durations_and_labels_alternate() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_toy_corpus(dir.path(), &ToyCorpusConfig::new(4, StageTag::Sarcastic, 3)).unwrap();
        assert_eq!(m.records.len(), 4);
        for (i, r) in m.records.iter().enumerate() {
            let wave = Waveform::read_wav(&r.audio_path).unwrap();
            let mel = mel_spectrogram(&wave, &MelConfig::tts()).unwrap();
            let total: u32 = r.durations.as_ref().unwrap().iter().sum();
            assert_eq!(mel.n_frames, total as usize);
            assert_eq!(r.sarcasm_label.unwrap().is_sarcastic(), i % 2 == 1);
            assert!(f0_contour(&wave, &StftConfig::default()).iter().any(|f| f.is_some()));
        }
    }

    #[test]
    fn seeded() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = ToyCorpusConfig::new(3, StageTag::Pretrain, 9);
        let ma = write_toy_corpus(a.path(), &cfg).unwrap();
        let mb = write_toy_corpus(b.path(), &cfg).unwrap();
        for (x, y) in ma.records.iter().zip(&mb.records) {
            assert_eq!(x.durations, y.durations);
            assert_eq!(fs::read(&x.audio_path).unwrap(), fs::read(&y.audio_path).unwrap());
        }
        assert!(ma.records.iter().all(|r| r.sarcasm_label.is_none()));
    }
}

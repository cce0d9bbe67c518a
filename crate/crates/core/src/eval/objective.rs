//! Detector-on-speech evaluation: synthesise (or load) each test utterance,
//! score it with the frozen detector per input type, and report weighted
//! precision / recall / F1.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{baseline_audio_vector, mel_spectrogram, MelConfig, Waveform};
use crate::data::{write_atomic, CorpusManifest, UtteranceRecord};
use crate::detector::{evaluate_detector, pad_to_min_frames, Detector, DetectorArch, DetectorOutput, SarcasmLabel};
use crate::error::{Error, Result};
use crate::synthesis::{Conditioning, Synthesizer, SynthesizerOptions, VocoderRegistry};
use crate::text::{TextEmbedder, TextEmbedding};
use crate::tts::StageStamp;

pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputType {
    #[serde(rename = "speech")]
    Speech,
    #[serde(rename = "speech+text")]
    SpeechText,
}

impl fmt::Display for InputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputType::Speech => "speech",
            InputType::SpeechText => "speech+text",
        })
    }
}

impl std::str::FromStr for InputType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(InputType::Speech),
            "speech+text" | "speech_text" => Ok(InputType::SpeechText),
            other => Err(Error::parse("input type", format!("unknown input type `{other}`"))),
        }
    }
}

/// What produces the audio the detector hears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    /// The test recordings themselves (real-data evaluation).
    GroundTruth,
    /// Speech synthesised by an acoustic-model checkpoint.
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSystem {
    pub name: String,
    pub source: EvalSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub input_type: InputType,
    /// Percentages, support-weighted.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_evaluated: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePrediction {
    pub method: String,
    pub input_type: InputType,
    pub utterance_id: String,
    pub truth: SarcasmLabel,
    /// `None` when the utterance was excluded.
    pub predicted: Option<SarcasmLabel>,
    pub probability: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// SHA-256 over the sorted test utterance ids.
    pub test_set_id: String,
    pub detector: PathBuf,
    /// Stage history of each checkpoint-backed method.
    pub provenance: Vec<(String, Vec<StageStamp>)>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

pub fn test_set_id(records: &[UtteranceRecord]) -> String {
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    hex::encode(Sha256::digest(ids.join("\n").as_bytes()))
}

pub fn save_predictions(path: &Path, preds: &[UtterancePrediction]) -> Result<()> {
    let mut buf = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn load_predictions(path: &Path) -> Result<Vec<UtterancePrediction>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

/// Rebuilds report rows from per-utterance predictions, in order of first
/// appearance of each (method, input type).
pub fn rows_from_predictions(preds: &[UtterancePrediction]) -> Result<Vec<EvalRow>> {
    let mut keys: Vec<(String, InputType)> = Vec::new();
    for p in preds {
        let k = (p.method.clone(), p.input_type);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, input_type)| {
            let group: Vec<&UtterancePrediction> = preds.iter().filter(|p| p.method == method && p.input_type == input_type).collect();
            let scored: Vec<(SarcasmLabel, SarcasmLabel)> = group.iter().filter_map(|p| p.predicted.map(|x| (x, p.truth))).collect();
            let n_excluded = group.len() - scored.len();
            let (precision, recall, f1) = if scored.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                let (pred, truth): (Vec<_>, Vec<_>) = scored.iter().copied().unzip();
                let m = evaluate_detector(&pred, &truth)?;
                (m.precision, m.recall, m.f1)
            };
            Ok(EvalRow {
                method,
                input_type,
                precision,
                recall,
                f1,
                n_evaluated: scored.len(),
                n_excluded,
            })
        })
        .collect()
}

fn score(detector: &Detector, wave: &Waveform, text: &TextEmbedding) -> Result<DetectorOutput> {
    match detector.config().arch {
        DetectorArch::Proposed => {
            let mel = mel_spectrogram(wave, &MelConfig::for_bins(detector.config().n_mels)?)?;
            detector.forward(&pad_to_min_frames(&mel, detector.config().min_frames), text)
        }
        DetectorArch::Baseline => detector.forward_vector(&baseline_audio_vector(wave)?.values, text),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvalOptions {
    pub synthesizer: SynthesizerOptions,
    /// Where synthesised WAVs are kept (optional).
    pub audio_dir: Option<PathBuf>,
}

impl Default for ObjectiveEvalOptions {
    fn default() -> Self {
        Self {
            synthesizer: SynthesizerOptions::default(),
            audio_dir: None,
        }
    }
}

/// Evaluates each system under each input type. Conditioned checkpoints are
/// driven by their label bank entry for the utterance's true label. Writes
/// `report.json` and `predictions.jsonl` into `out_dir`.
pub fn objective_eval(
    test: &CorpusManifest,
    systems: &[EvalSystem],
    detector_ckpt: &Path,
    input_types: &[InputType],
    opts: &ObjectiveEvalOptions,
    out_dir: &Path,
) -> Result<EvalReport> {
    if systems.is_empty() || input_types.is_empty() {
        return Err(Error::InvalidInput("need at least one system and one input type".into()));
    }
    let truths: Vec<SarcasmLabel> = test
        .records
        .iter()
        .map(|r| {
            r.sarcasm_label
                .ok_or_else(|| Error::InvalidInput(format!("test record `{}` has no sarcasm label", r.id)))
        })
        .collect::<Result<_>>()?;
    let detector = Detector::load(detector_ckpt)?;
    let embedder = TextEmbedder::for_encoder_id(detector.encoder_id())?;
    let registry = VocoderRegistry::default();
    let mut preds = Vec::new();
    let mut provenance = Vec::new();
    for sys in systems {
        let synth = match &sys.source {
            EvalSource::GroundTruth => None,
            EvalSource::Checkpoint(ckpt) => {
                let s = Synthesizer::load(ckpt, &opts.synthesizer, &registry)?;
                if s.model().config().sarcasm_conditioning && s.label_bank().is_none() {
                    return Err(Error::InvalidInput(format!(
                        "checkpoint {} is conditioned but has no label bank",
                        ckpt.display()
                    )));
                }
                provenance.push((sys.name.clone(), s.model().provenance().to_vec()));
                Some(s)
            }
        };
        for (rec, &truth) in test.records.iter().zip(&truths) {
            let wave = match &synth {
                None => crate::synthesis::read_pipeline_wave(&rec.audio_path),
                Some(s) => {
                    let cond = s.model().config().sarcasm_conditioning.then_some(Conditioning::LabelBank(truth));
                    s.synthesize(&rec.transcript, cond.as_ref(), None)
                }
            };
            if let (Ok(w), Some(dir)) = (&wave, &opts.audio_dir) {
                let sys_dir = dir.join(&sys.name);
                fs::create_dir_all(&sys_dir)?;
                w.write_wav(sys_dir.join(format!("{}.wav", rec.id)))?;
            }
            for &input_type in input_types {
                let result = wave.as_ref().map_err(|e| e.to_string()).and_then(|w| {
                    let text = match input_type {
                        InputType::Speech => Ok(TextEmbedding::zeros(detector.encoder_id())),
                        InputType::SpeechText => embedder.embed_utterance(&rec.transcript),
                    };
                    text.and_then(|t| score(&detector, w, &t)).map_err(|e| e.to_string())
                });
                let (predicted, probability, error) = match result {
                    Ok(out) => (Some(out.label()), Some(out.probability), None),
                    Err(e) => {
                        warn!("{}: excluding `{}` ({input_type}): {e}", sys.name, rec.id);
                        (None, None, Some(e))
                    }
                };
                preds.push(UtterancePrediction {
                    method: sys.name.clone(),
                    input_type,
                    utterance_id: rec.id.clone(),
                    truth,
                    predicted,
                    probability,
                    error,
                });
            }
        }
    }
    let report = EvalReport {
        rows: rows_from_predictions(&preds)?,
        test_set_id: test_set_id(&test.records),
        detector: detector_ckpt.to_path_buf(),
        provenance,
    };
    fs::create_dir_all(out_dir)?;
    save_predictions(&out_dir.join(PREDICTIONS_FILE), &preds)?;
    report.save(&out_dir.join(REPORT_FILE))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SarcasmLabel::{NonSarcastic as N, Sarcastic as S};

    fn p(method: &str, it: InputType, truth: SarcasmLabel, pred: Option<SarcasmLabel>) -> UtterancePrediction {
        UtterancePrediction {
            method: method.into(),
            input_type: it,
            utterance_id: "u".into(),
            truth,
            predicted: pred,
            probability: None,
            error: None,
        }
    }

    #[test]
    fn rows_group_in_order_and_count_exclusions() {
        let preds = vec![
            p("b", InputType::Speech, S, Some(S)),
            p("b", InputType::SpeechText, S, None),
            p("a", InputType::Speech, N, Some(N)),
            p("b", InputType::Speech, N, Some(S)),
        ];
        let rows = rows_from_predictions(&preds).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].method.as_str(), rows[0].input_type, rows[0].n_evaluated), ("b", InputType::Speech, 2));
        assert_eq!((rows[1].n_evaluated, rows[1].n_excluded, rows[1].f1), (0, 1, 0.0));
        assert_eq!(rows[2].f1, 100.0);
        assert!(rows.iter().all(|r| (0.0..=100.0).contains(&r.f1)));
    }

    #[test]
    fn input_type_names() {
        assert_eq!(serde_json::to_string(&InputType::SpeechText).unwrap(), "\"speech+text\"");
        assert_eq!("speech".parse::<InputType>().unwrap(), InputType::Speech);
    }
}

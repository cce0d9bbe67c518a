//! Supervised detector training with best-validation-F1 model selection.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_detector, DetectionMetrics, Detector, DetectorArch, DetectorConfig, DetectorExample, DetectorFeatures, SarcasmLabel};
use crate::audio::{baseline_audio_vector, mel_spectrogram, MelConfig};
use crate::data::UtteranceRecord;
use crate::error::{Error, Result};
use crate::nn::{self, Adam, AdamConfig};
use crate::synthesis::read_pipeline_wave;
use crate::text::TextEmbedder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Examples per forward pass; gradients are accumulated up to `batch_size`.
    pub micro_batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            micro_batch: 32,
            learning_rate: 1e-4,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug)]
pub struct TrainedDetector {
    pub detector: Detector,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub validation: DetectionMetrics,
    pub history: Vec<EpochRecord>,
}

fn validation_metrics(det: &Detector, val: &[DetectorExample], batch: usize) -> Result<DetectionMetrics> {
    let preds: Vec<SarcasmLabel> = det.predict(val, batch)?.iter().map(|o| o.label()).collect();
    let truths: Vec<SarcasmLabel> = val.iter().map(|e| e.label).collect();
    evaluate_detector(&preds, &truths)
}

/// Loads labelled records as examples for `config`'s architecture. Text
/// embeddings are zeroed when `with_text` is false (speech-only input).
pub fn detector_examples(
    records: &[&UtteranceRecord],
    config: &DetectorConfig,
    embedder: &TextEmbedder,
    with_text: bool,
) -> Result<Vec<DetectorExample>> {
    let mel_cfg = MelConfig::for_bins(config.n_mels)?;
    records
        .iter()
        .map(|rec| {
            let label = rec
                .sarcasm_label
                .ok_or_else(|| Error::InvalidInput(format!("record `{}` has no sarcasm label", rec.id)))?;
            let wave = read_pipeline_wave(&rec.audio_path)?;
            let features = match config.arch {
                DetectorArch::Proposed => DetectorFeatures::Mel(mel_spectrogram(&wave, &mel_cfg)?),
                DetectorArch::Baseline => DetectorFeatures::Vector(baseline_audio_vector(&wave)?.values),
            };
            let text = if with_text {
                embedder.embed_utterance(&rec.transcript)?.values
            } else {
                vec![0.0; config.text_dim]
            };
            Ok(DetectorExample {
                id: rec.id.clone(),
                features,
                text,
                label,
            })
        })
        .collect()
}

/// Trains a fresh detector. Example order is canonicalised by id before the
/// seeded shuffle, so results depend only on the example set and the seed.
/// The parameters with the best validation F1 are restored at the end.
pub fn train_detector(
    config: DetectorConfig,
    encoder_id: &str,
    train: &[DetectorExample],
    val: &[DetectorExample],
    cfg: &DetectorTrainConfig,
) -> Result<TrainedDetector> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 || cfg.micro_batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs, batch_size and micro_batch must be positive".into()));
    }
    let det = Detector::new(config, encoder_id, cfg.seed)?;
    let varmap = det.varmap().expect("fresh detector is trainable").clone();
    let mut opt = Adam::new(nn::trainable_vars(&varmap), cfg.adam, cfg.learning_rate)?;

    let mut order: Vec<&DetectorExample> = train.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_batch = cfg.micro_batch.max(1);

    let mut best: Option<(f64, usize, Vec<(String, candle_core::Tensor)>, DetectionMetrics)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            iteration += 1;
            let mut acc: Vec<Option<candle_core::Tensor>> = Vec::new();
            let mut batch_loss = 0.0;
            for micro in batch.chunks(cfg.micro_batch) {
                let b = det.make_batch(micro)?;
                let targets: Vec<u32> = micro.iter().map(|e| e.label.index() as u32).collect();
                let targets = candle_core::Tensor::from_vec(targets, micro.len(), det.device())?;
                let (_, logits) = det.forward_batch(&b, true)?;
                let weight = micro.len() as f64 / batch.len() as f64;
                let loss = (candle_nn::loss::cross_entropy(&logits, &targets)? * weight)?;
                let value = loss.to_scalar::<f32>()? as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        iteration,
                        batch_ids: batch.iter().map(|e| e.id.clone()).collect(),
                    });
                }
                batch_loss += value;
                Adam::accumulate(&mut acc, opt.collect(&loss.backward()?))?;
            }
            opt.step(&acc)?;
            loss_sum += batch_loss * batch.len() as f64;
        }
        let metrics = validation_metrics(&det, val, eval_batch)?;
        let train_loss = loss_sum / order.len() as f64;
        info!("epoch {epoch}: loss {train_loss:.4}, val F1 {:.2}", metrics.f1);
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_f1: metrics.f1,
        });
        if best.as_ref().is_none_or(|(f1, ..)| metrics.f1 > *f1) {
            best = Some((metrics.f1, epoch, nn::snapshot(&varmap)?, metrics));
        }
    }
    let (_, best_epoch, snap, validation) = best.expect("at least one epoch");
    nn::restore(&varmap, &snap)?;
    Ok(TrainedDetector {
        detector: det,
        best_epoch,
        validation,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::BASELINE_AUDIO_DIM;
    use crate::detector::DetectorFeatures;
    use crate::text::TEXT_DIM;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Vec<DetectorExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { SarcasmLabel::Sarcastic } else { SarcasmLabel::NonSarcastic };
                let centre = if label.is_sarcastic() { 0.4 } else { -0.4 };
                let v = (0..BASELINE_AUDIO_DIM).map(|_| centre + rng.random_range(-1.0..1.0)).collect();
                DetectorExample {
                    id: format!("{seed}-{i:04}"),
                    features: DetectorFeatures::Vector(v),
                    text: vec![0.0; TEXT_DIM],
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn baseline_learns_separable_blobs_and_is_deterministic() {
        let cfg = DetectorTrainConfig {
            epochs: 4,
            batch_size: 32,
            micro_batch: 16,
            learning_rate: 1e-3,
            seed: 7,
            ..Default::default()
        };
        let train = blobs(96, 1);
        let val = blobs(40, 2);
        let a = train_detector(DetectorConfig::baseline(), "enc", &train, &val, &cfg).unwrap();
        assert!(a.validation.f1 > 90.0, "F1 {}", a.validation.f1);
        let mut shuffled = train.clone();
        shuffled.reverse();
        let b = train_detector(DetectorConfig::baseline(), "enc", &shuffled, &val, &cfg).unwrap();
        assert_eq!(a.history, b.history);
    }
}

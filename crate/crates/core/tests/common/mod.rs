#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sarcasm_tts::data::{CorpusManifest, StageTag};
use sarcasm_tts::detector::{Detector, DetectorConfig};
use sarcasm_tts::text::TextEmbedder;
use sarcasm_tts::toy::{write_toy_corpus, ToyCorpusConfig};
use sarcasm_tts::training::{Preset, Stage, StageConfig};

/// Writes a toy corpus and its manifest; returns the manifest path.
pub fn toy_manifest(root: &Path, n: usize, stage: StageTag, seed: u64) -> (PathBuf, CorpusManifest) {
    let m = write_toy_corpus(&root.join(format!("corpus-{stage}")), &ToyCorpusConfig::new(n, stage, seed)).unwrap();
    let path = root.join(format!("{stage}.jsonl"));
    m.save(&path).unwrap();
    (path, m)
}

/// Saves an untrained (seeded) spectrogram detector.
pub fn random_detector(dir: &Path, n_mels: usize, seed: u64) -> PathBuf {
    let enc = TextEmbedder::default();
    let det = Detector::new(DetectorConfig::proposed(n_mels), enc.encoder_id(), seed).unwrap();
    det.save(dir, None).unwrap();
    dir.to_path_buf()
}

pub fn desk_stage(stage: Stage, manifest: &Path, out: &Path) -> StageConfig {
    let mut c = StageConfig::preset(stage, Preset::Desk);
    c.manifest = manifest.to_path_buf();
    c.output_dir = out.to_path_buf();
    c
}

/// Trains a small conditioned desk model on a labelled toy corpus and
/// writes its label bank. Returns (checkpoint, conditioning detector, manifest).
pub fn conditioned_checkpoint(root: &Path, iterations: usize) -> (PathBuf, PathBuf, CorpusManifest) {
    use sarcasm_tts::synthesis::{build_label_bank, LABEL_BANK_FILE};
    use sarcasm_tts::training::run_stage;
    let (manifest_path, manifest) = toy_manifest(root, 8, StageTag::Sarcastic, 21);
    let det = random_detector(&root.join("det128"), 128, 5);
    let mut cfg = desk_stage(Stage::Pretrain, &manifest_path, &root.join("run"));
    // pretraining stage on a sarcastic-tagged corpus is refused, so relabel
    let mut pre = manifest.clone();
    pre.stage_tag = StageTag::Pretrain;
    for r in &mut pre.records {
        r.stage_tag = StageTag::Pretrain;
    }
    let pre_path = root.join("pretrain-relabelled.jsonl");
    pre.save(&pre_path).unwrap();
    cfg.manifest = pre_path;
    cfg.iterations = iterations;
    cfg.conditioning_detector = Some(det.clone());
    let out = run_stage(&cfg).unwrap();
    let bank = build_label_bank(&manifest, &Detector::load(&det).unwrap()).unwrap();
    bank.save(&out.checkpoint.join(LABEL_BANK_FILE)).unwrap();
    (out.checkpoint, det, manifest)
}

/// Trains a small unconditioned desk model on the relabelled corpus written
/// by [`conditioned_checkpoint`] (which must run first under `root`).
pub fn plain_checkpoint(root: &Path, iterations: usize) -> PathBuf {
    use sarcasm_tts::training::run_stage;
    let mut cfg = desk_stage(Stage::Pretrain, &root.join("pretrain-relabelled.jsonl"), &root.join("run-plain"));
    cfg.iterations = iterations;
    cfg.model.sarcasm_conditioning = false;
    run_stage(&cfg).unwrap().checkpoint
}

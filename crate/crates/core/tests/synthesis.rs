mod common;

use common::{conditioned_checkpoint, random_detector, toy_manifest};
use sarcasm_tts::data::{Split, StageTag};
use sarcasm_tts::detector::{Detector, SarcasmLabel};
use sarcasm_tts::synthesis::{
    build_label_bank, record_embedding, synthesize, Conditioning, SynthesisRequest, Synthesizer, SynthesizerOptions,
    VocoderRegistry,
};
use sarcasm_tts::text::TextEmbedder;
use sarcasm_tts::Error;

#[test]
fn label_bank_is_the_per_label_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = toy_manifest(dir.path(), 6, StageTag::Sarcastic, 11);
    let det = Detector::load(&random_detector(&dir.path().join("d"), 128, 3)).unwrap();
    let bank = build_label_bank(&manifest, &det).unwrap();
    assert_eq!(bank.entries.len(), 2);
    let enc = TextEmbedder::for_encoder_id(det.encoder_id()).unwrap();
    for label in [SarcasmLabel::NonSarcastic, SarcasmLabel::Sarcastic] {
        let embs: Vec<Vec<f32>> = manifest
            .records
            .iter()
            .filter(|r| r.sarcasm_label == Some(label))
            .map(|r| record_embedding(&det, &enc, r).unwrap().values)
            .collect();
        let entry = bank.get(label).unwrap();
        assert_eq!(entry.values.len(), 768);
        for (i, v) in entry.values.iter().enumerate() {
            let mean = embs.iter().map(|e| e[i] as f64).sum::<f64>() / embs.len() as f64;
            assert!((*v as f64 - mean).abs() <= 1e-6, "dim {i}");
        }
    }

    // a label with one record equals that record's embedding
    let mut single = manifest.clone();
    let first_sarcastic = single.records.iter().position(|r| r.sarcasm_label == Some(SarcasmLabel::Sarcastic)).unwrap();
    single.records.retain(|r| r.sarcasm_label == Some(SarcasmLabel::NonSarcastic));
    single.records.push(manifest.records[first_sarcastic].clone());
    let bank = build_label_bank(&single, &det).unwrap();
    let expected = record_embedding(&det, &enc, &manifest.records[first_sarcastic]).unwrap();
    assert_eq!(bank.get(SarcasmLabel::Sarcastic).unwrap(), expected);

    // a label with no training records
    let mut only_plain = manifest.clone();
    only_plain.records.retain(|r| r.sarcasm_label == Some(SarcasmLabel::NonSarcastic));
    assert!(build_label_bank(&only_plain, &det).is_err());
    let mut test_only = manifest.clone();
    for r in test_only.records.iter_mut().filter(|r| r.sarcasm_label == Some(SarcasmLabel::Sarcastic)) {
        r.split = Split::Test;
    }
    assert!(build_label_bank(&test_only, &det).is_err());
}

#[test]
fn synthesis_is_deterministic_live_and_stateless() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, det, manifest) = conditioned_checkpoint(dir.path(), 20);
    let opts = SynthesizerOptions {
        detector: Some(det),
        ..Default::default()
    };
    let synth = Synthesizer::load(&ckpt, &opts, &VocoderRegistry::default()).unwrap();
    let text = "oh great another meeting";
    let sarc = Conditioning::LabelBank(SarcasmLabel::Sarcastic);
    let plain = Conditioning::LabelBank(SarcasmLabel::NonSarcastic);

    let m1 = synth.synthesize_mel(text, Some(&sarc), None).unwrap();
    assert_eq!(m1.n_mels, 80);
    let m2 = synth.synthesize_mel(text, Some(&plain), None).unwrap();
    let l1: f32 = if m1.n_frames == m2.n_frames {
        m1.data.iter().zip(&m2.data).map(|(a, b)| (a - b).abs()).sum()
    } else {
        f32::INFINITY
    };
    assert!(l1 > 0.0);

    // interleaving requests does not change results
    let w_sarc = synth.synthesize(text, Some(&sarc), None).unwrap();
    let _ = synth.synthesize("hello how are you", Some(&plain), None).unwrap();
    assert_eq!(synth.synthesize(text, Some(&sarc), None).unwrap(), w_sarc);
    assert_eq!(w_sarc.sample_rate, 22_050);

    let reference = Conditioning::ReferenceAudio(manifest.records[1].audio_path.clone());
    assert_eq!(synth.synthesize_mel(text, Some(&reference), None).unwrap().n_mels, 80);
    assert!(synth.synthesize_mel(text, None, None).is_err());

    // one-shot path: fresh load, same output
    let mut req = SynthesisRequest::new(text, &ckpt);
    req.label = Some(SarcasmLabel::Sarcastic);
    assert_eq!(synthesize(&req, &opts).unwrap(), w_sarc);

    let missing = SynthesizerOptions {
        vocoder: "hifigan".into(),
        ..Default::default()
    };
    assert!(matches!(synthesize(&req, &missing), Err(Error::VocoderMissing(n)) if n == "hifigan"));

    // unknown words still synthesise (letter-to-sound / unk)
    assert!(synth.synthesize_mel("zyxqv blorft", Some(&sarc), None).unwrap().n_frames > 0);
}

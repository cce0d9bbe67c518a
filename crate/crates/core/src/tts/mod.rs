//! Non-autoregressive acoustic model: phoneme encoder, sarcasm-embedding
//! combiner, variance adaptor and mel decoder.

pub mod loss;
pub mod variance;

use std::fmt;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Init, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::audio::{MelSpec, StftConfig, FEATURE_SCHEMA_VERSION};
use crate::detector::{SarcasmEmbedding, SARCASM_EMBED_DIM};
use crate::error::{Error, Result};
use crate::nn::{self, CheckpointFiles, Conv1d, FftBlock, ForwardCtx, Linear};
use crate::phoneme::{PhonemeSequence, PhonemeVocab};

pub use loss::{compute_losses, cosine_distance, cosine_distance_rows, feedback_cosine, BatchTargets, LossBreakdown, LossWeights};
pub use variance::{
    duration_from_log, length_regulate, length_regulate_batch, log_duration, Quantizer, VarianceTargets,
};

use variance::{bucket_embed, tensor_rows, VariancePredictor};

const CHECKPOINT_KIND: &str = "acoustic-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub ffn_filter: usize,
    pub ffn_kernels: [usize; 2],
    pub mel_bins: usize,
    /// `false` gives the unconditioned baseline: no combiner at all.
    pub sarcasm_conditioning: bool,
    pub sarcasm_dim: usize,
    pub combine_kernel: usize,
    pub variance_filter: usize,
    pub variance_kernel: usize,
    pub dropout: f32,
    pub variance_dropout: f32,
    pub n_bins: usize,
    /// Range of `ln(1 + F0)` covered by the pitch buckets.
    pub pitch_range: [f32; 2],
    /// Range of log frame energy covered by the energy buckets.
    pub energy_range: [f32; 2],
    /// 0 disables the speaker embedding.
    pub n_speakers: usize,
    pub speaker_dim: usize,
}

impl AcousticConfig {
    /// Full-size model.
    pub fn standard(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 256,
            encoder_blocks: 4,
            decoder_blocks: 4,
            heads: 2,
            ffn_filter: 1024,
            ffn_kernels: [9, 1],
            mel_bins: 80,
            sarcasm_conditioning: true,
            sarcasm_dim: SARCASM_EMBED_DIM,
            combine_kernel: 9,
            variance_filter: 256,
            variance_kernel: 3,
            dropout: 0.2,
            variance_dropout: 0.5,
            n_bins: 256,
            pitch_range: [0.0, 7.0],
            energy_range: [-12.0, 3.0],
            n_speakers: 0,
            speaker_dim: 64,
        }
    }

    /// Small CPU-friendly model that keeps the 256-wide hidden path, the
    /// 1024 → 256 combiner and 80 mel bins.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            encoder_blocks: 1,
            decoder_blocks: 1,
            ffn_filter: 256,
            ffn_kernels: [3, 1],
            variance_filter: 64,
            dropout: 0.1,
            variance_dropout: 0.1,
            ..Self::standard(vocab_size)
        }
    }

    pub fn combine_in(&self) -> usize {
        self.hidden + self.sarcasm_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 || self.hidden == 0 || self.mel_bins == 0 {
            return bad("vocab_size, hidden and mel_bins must be positive");
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad("hidden must divide into heads");
        }
        if self.n_bins < 2 || self.pitch_range[1] <= self.pitch_range[0] || self.energy_range[1] <= self.energy_range[0] {
            return bad("need at least 2 bins over non-empty pitch/energy ranges");
        }
        if self.sarcasm_conditioning && self.sarcasm_dim != SARCASM_EMBED_DIM {
            return bad("sarcasm_dim must match the detector embedding width");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.variance_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One training stage's stamp in a checkpoint's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: String,
    pub iteration: usize,
    pub complete: bool,
    #[serde(default)]
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticMeta {
    pub kind: String,
    pub config: AcousticConfig,
    pub vocab: Vec<String>,
    pub feature_schema_version: String,
    pub provenance: Vec<StageStamp>,
}

struct Net {
    phoneme_table: Tensor,
    encoder: Vec<FftBlock>,
    speaker: Option<(Tensor, Linear)>,
    combine: Option<Conv1d>,
    duration: VariancePredictor,
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_table: Tensor,
    energy_table: Tensor,
    decoder: Vec<FftBlock>,
    mel_out: Linear,
}

impl Net {
    fn new(cfg: &AcousticConfig, vb: VarBuilder) -> Result<Self> {
        let h = cfg.hidden;
        let table = |vb: VarBuilder, n: usize, d: usize| vb.get_with_hints((n, d), "table", Init::Randn { mean: 0.0, stdev: 0.1 });
        let blocks = |vb: VarBuilder, n: usize| -> Result<Vec<FftBlock>> {
            (0..n)
                .map(|i| FftBlock::new(h, cfg.heads, cfg.ffn_filter, (cfg.ffn_kernels[0], cfg.ffn_kernels[1]), vb.pp(i.to_string())))
                .collect()
        };
        let predictor = |name: &str| {
            VariancePredictor::new(h, cfg.variance_filter, cfg.variance_kernel, cfg.variance_dropout, vb.pp(name))
        };
        Ok(Self {
            phoneme_table: table(vb.pp("phoneme"), cfg.vocab_size, h)?,
            encoder: blocks(vb.pp("encoder"), cfg.encoder_blocks)?,
            speaker: if cfg.n_speakers > 0 {
                Some((
                    table(vb.pp("speaker"), cfg.n_speakers, cfg.speaker_dim)?,
                    Linear::new(cfg.speaker_dim, h, vb.pp("speaker_proj"))?,
                ))
            } else {
                None
            },
            combine: if cfg.sarcasm_conditioning {
                Some(Conv1d::new(cfg.combine_in(), h, cfg.combine_kernel, 1, vb.pp("combine"))?)
            } else {
                None
            },
            duration: predictor("duration")?,
            pitch: predictor("pitch")?,
            energy: predictor("energy")?,
            pitch_table: table(vb.pp("pitch_embed"), cfg.n_bins, h)?,
            energy_table: table(vb.pp("energy_embed"), cfg.n_bins, h)?,
            decoder: blocks(vb.pp("decoder"), cfg.decoder_blocks)?,
            mel_out: Linear::new(h, cfg.mel_bins, vb.pp("mel_out"))?,
        })
    }
}

/// A padded batch of utterances.
pub struct TtsBatch {
    pub phonemes: Vec<PhonemeSequence>,
    /// `(B, 768)`; ignored by unconditioned models.
    pub sarcasm: Tensor,
    pub speakers: Option<Vec<u32>>,
    /// Teacher-forcing targets, one per utterance.
    pub targets: Option<Vec<VarianceTargets>>,
}

/// Forward results; all tensors are batch-first and zero at padding.
pub struct AcousticOutput {
    /// `(B, F, mel_bins)`.
    pub mel: Tensor,
    /// `(B, F)`.
    pub frame_mask: Tensor,
    pub frame_lengths: Vec<usize>,
    /// `(B, T_ph)` each.
    pub log_durations: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    pub phoneme_mask: Tensor,
    pub phoneme_lengths: Vec<usize>,
    /// Durations used for expansion (ground truth or rounded predictions).
    pub durations: Vec<Vec<u32>>,
}

/// Per-utterance variance predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePrediction {
    pub log_durations: Vec<f32>,
    pub durations: Vec<u32>,
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
}

pub struct AcousticModel {
    config: AcousticConfig,
    vocab: PhonemeVocab,
    provenance: Vec<StageStamp>,
    net: Net,
    varmap: Option<VarMap>,
    frozen: Vec<(String, Tensor)>,
    pitch_q: Quantizer,
    energy_q: Quantizer,
    device: Device,
}

impl fmt::Debug for AcousticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AcousticModel")
            .field("config", &self.config)
            .field("provenance", &self.provenance)
            .field("trainable", &self.varmap.is_some())
            .finish()
    }
}

impl AcousticModel {
    pub fn new(config: AcousticConfig, vocab: PhonemeVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} symbols, config expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let net = Net::new(&config, VarBuilder::from_varmap(&varmap, DType::F32, &device))?;
        nn::init_seeded(&varmap, seed)?;
        Ok(Self::assemble(config, vocab, Vec::new(), net, Some(varmap), Vec::new(), device))
    }

    fn assemble(
        config: AcousticConfig,
        vocab: PhonemeVocab,
        provenance: Vec<StageStamp>,
        net: Net,
        varmap: Option<VarMap>,
        frozen: Vec<(String, Tensor)>,
        device: Device,
    ) -> Self {
        let pitch_q = Quantizer::new(config.pitch_range[0], config.pitch_range[1], config.n_bins);
        let energy_q = Quantizer::new(config.energy_range[0], config.energy_range[1], config.n_bins);
        Self {
            config,
            vocab,
            provenance,
            net,
            varmap,
            frozen,
            pitch_q,
            energy_q,
            device,
        }
    }

    pub fn read_meta(dir: &Path) -> Result<AcousticMeta> {
        let meta: AcousticMeta = nn::load_json(&dir.join(CheckpointFiles::CONFIG))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::checkpoint(dir, format!("not an acoustic-model checkpoint (kind `{}`)", meta.kind)));
        }
        if meta.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(Error::checkpoint(
                dir,
                format!("feature schema `{}` does not match `{FEATURE_SCHEMA_VERSION}`", meta.feature_schema_version),
            ));
        }
        meta.config.validate()?;
        Ok(meta)
    }

    /// Read-only model for inference.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = Self::read_meta(dir)?;
        let device = Device::Cpu;
        let weights = nn::load_tensors(&dir.join(CheckpointFiles::WEIGHTS), DType::F32, &device)?;
        let net = Net::new(&meta.config, VarBuilder::from_tensors(weights.clone(), DType::F32, &device))
            .map_err(|e| Error::checkpoint(dir, e))?;
        let mut frozen: Vec<(String, Tensor)> = weights.into_iter().collect();
        frozen.sort_by(|a, b| a.0.cmp(&b.0));
        let vocab = PhonemeVocab::from_symbols(meta.vocab);
        Ok(Self::assemble(meta.config, vocab, meta.provenance, net, None, frozen, device))
    }

    /// Trainable model initialised from a checkpoint.
    pub fn load_trainable(dir: &Path) -> Result<Self> {
        let meta = Self::read_meta(dir)?;
        let mut model = Self::new(meta.config, PhonemeVocab::from_symbols(meta.vocab), 0)?;
        nn::load_into_varmap(model.varmap.as_ref().expect("trainable"), &dir.join(CheckpointFiles::WEIGHTS))?;
        model.provenance = meta.provenance;
        Ok(model)
    }

    pub fn meta(&self) -> AcousticMeta {
        AcousticMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            vocab: self.vocab.symbols().to_vec(),
            feature_schema_version: FEATURE_SCHEMA_VERSION.into(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn named_tensors(&self) -> Result<Vec<(String, Tensor)>> {
        match &self.varmap {
            Some(v) => nn::snapshot(v),
            None => Ok(self.frozen.clone()),
        }
    }

    /// Writes config + weights (+ any extra tensor files / raw files).
    pub fn save_with(&self, dir: &Path, tensor_files: &[(&str, &[(String, Tensor)])], extra: &[(&str, Vec<u8>)]) -> Result<()> {
        let weights = self.named_tensors()?;
        let mut files: Vec<(&str, &[(String, Tensor)])> = vec![(CheckpointFiles::WEIGHTS, &weights)];
        files.extend_from_slice(tensor_files);
        nn::save_checkpoint(dir, &self.meta(), &files, extra)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, &[], &[])
    }

    pub fn config(&self) -> &AcousticConfig {
        &self.config
    }

    pub fn vocab(&self) -> &PhonemeVocab {
        &self.vocab
    }

    pub fn provenance(&self) -> &[StageStamp] {
        &self.provenance
    }

    pub fn set_provenance(&mut self, p: Vec<StageStamp>) {
        self.provenance = p;
    }

    pub fn varmap(&self) -> Option<&VarMap> {
        self.varmap.as_ref()
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn pitch_quantizer(&self) -> &Quantizer {
        &self.pitch_q
    }

    fn check_phonemes(&self, seq: &PhonemeSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::InvalidInput("empty phoneme sequence".into()));
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::PhonemeOutOfVocab {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn encode_batch(&self, phonemes: &[PhonemeSequence], speakers: Option<&[u32]>, ctx: &ForwardCtx) -> Result<(Tensor, Tensor, Vec<usize>)> {
        for seq in phonemes {
            self.check_phonemes(seq)?;
        }
        let b = phonemes.len();
        let lengths: Vec<usize> = phonemes.iter().map(|s| s.len()).collect();
        let t = *lengths.iter().max().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let pad = self.vocab.pad_id();
        let mut ids = Vec::with_capacity(b * t);
        for seq in phonemes {
            ids.extend_from_slice(&seq.ids);
            ids.extend(std::iter::repeat_n(pad, t - seq.len()));
        }
        let h = self.config.hidden;
        let ids = Tensor::from_vec(ids, b * t, &self.device)?;
        let mask = nn::length_mask(&lengths, t, DType::F32, &self.device)?;
        let m3 = mask.unsqueeze(2)?;
        let bias = nn::key_padding_bias(&mask)?;
        let pos = nn::sinusoid_table(t, h, DType::F32, &self.device)?;
        let mut x = self
            .net
            .phoneme_table
            .index_select(&ids, 0)?
            .reshape((b, t, h))?
            .broadcast_add(&pos)?
            .broadcast_mul(&m3)?;
        for block in &self.net.encoder {
            x = block.forward(&x, &m3, &bias, ctx)?;
        }
        if let Some((table, proj)) = &self.net.speaker {
            let spk = speakers.ok_or_else(|| Error::InvalidInput("model expects speaker ids".into()))?;
            if spk.len() != b {
                return Err(Error::Shape(format!("{} speaker ids for batch of {b}", spk.len())));
            }
            if let Some(&bad) = spk.iter().find(|&&s| s as usize >= self.config.n_speakers) {
                return Err(Error::InvalidInput(format!("speaker id {bad} outside {} speakers", self.config.n_speakers)));
            }
            let idx = Tensor::from_slice(spk, b, &self.device)?;
            let s = proj.forward(&table.index_select(&idx, 0)?)?.unsqueeze(1)?;
            x = x.broadcast_add(&s)?.broadcast_mul(&m3)?;
        }
        Ok((x, mask, lengths))
    }

    fn combine_batch(&self, x: &Tensor, sarcasm: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let Some(conv) = &self.net.combine else {
            return Ok(x.clone());
        };
        let (b, t, h) = x.dims3()?;
        if h != self.config.hidden || sarcasm.dims() != [b, self.config.sarcasm_dim] {
            return Err(Error::Shape(format!(
                "combine expects ({b}, {t}, {}) and ({b}, {}), got {:?} and {:?}",
                self.config.hidden,
                self.config.sarcasm_dim,
                x.dims(),
                sarcasm.dims()
            )));
        }
        let s = sarcasm.unsqueeze(1)?.broadcast_as((b, t, self.config.sarcasm_dim))?;
        let joint = Tensor::cat(&[x, &s], 2)?;
        debug_assert_eq!(joint.dim(2)?, self.config.combine_in());
        Ok(conv.forward(&joint)?.relu()?.broadcast_mul(&mask.unsqueeze(2)?)?)
    }

    fn decode_batch(&self, x: &Tensor, lengths: &[usize], ctx: &ForwardCtx) -> Result<(Tensor, Tensor)> {
        let (_, f, h) = x.dims3()?;
        let mask = nn::length_mask(lengths, f, DType::F32, &self.device)?;
        let m3 = mask.unsqueeze(2)?;
        let bias = nn::key_padding_bias(&mask)?;
        let pos = nn::sinusoid_table(f, h, DType::F32, &self.device)?;
        let mut y = x.broadcast_add(&pos)?.broadcast_mul(&m3)?;
        for block in &self.net.decoder {
            y = block.forward(&y, &m3, &bias, ctx)?;
        }
        Ok((self.net.mel_out.forward(&y)?.broadcast_mul(&m3)?, mask))
    }

    /// Full forward pass. With `ctx.train` the batch must carry targets, which
    /// drive expansion and the pitch/energy embeddings; otherwise predictions do.
    pub fn forward(&self, batch: &TtsBatch, ctx: &ForwardCtx) -> Result<AcousticOutput> {
        if ctx.train && batch.targets.is_none() {
            return Err(Error::InvalidInput("training forward requires variance targets".into()));
        }
        let (enc, ph_mask, ph_lens) = self.encode_batch(&batch.phonemes, batch.speakers.as_deref(), ctx)?;
        let x = self.combine_batch(&enc, &batch.sarcasm, &ph_mask)?;
        let m3 = ph_mask.unsqueeze(2)?;
        let log_durations = self.net.duration.forward(&x, &m3, ctx)?;
        let pitch = self.net.pitch.forward(&x, &m3, ctx)?;
        let energy = self.net.energy.forward(&x, &m3, ctx)?;
        let t = x.dim(1)?;
        let (durations, pitch_vals, energy_vals) = match &batch.targets {
            Some(targets) => {
                if targets.len() != ph_lens.len() {
                    return Err(Error::Shape(format!("{} targets for batch of {}", targets.len(), ph_lens.len())));
                }
                for (tg, &n) in targets.iter().zip(&ph_lens) {
                    tg.validate(n)?;
                }
                (
                    targets.iter().map(|t| t.durations.clone()).collect::<Vec<_>>(),
                    targets.iter().map(|t| t.pitch.clone()).collect::<Vec<_>>(),
                    targets.iter().map(|t| t.energy.clone()).collect::<Vec<_>>(),
                )
            }
            None => {
                let durs = tensor_rows(&log_durations, &ph_lens)?
                    .into_iter()
                    .map(|r| r.into_iter().map(duration_from_log).collect())
                    .collect();
                (durs, tensor_rows(&pitch, &ph_lens)?, tensor_rows(&energy, &ph_lens)?)
            }
        };
        let adapted = x
            .add(&bucket_embed(&self.net.pitch_table, &self.pitch_q, &pitch_vals, t)?)?
            .add(&bucket_embed(&self.net.energy_table, &self.energy_q, &energy_vals, t)?)?
            .broadcast_mul(&m3)?;
        let (expanded, frame_lengths) = length_regulate_batch(&adapted, &durations)?;
        let (mel, frame_mask) = self.decode_batch(&expanded, &frame_lengths, ctx)?;
        if mel.dim(2)? != self.config.mel_bins {
            return Err(Error::Shape(format!("decoder emitted {} bins", mel.dim(2)?)));
        }
        Ok(AcousticOutput {
            mel,
            frame_mask,
            frame_lengths,
            log_durations,
            pitch,
            energy,
            phoneme_mask: ph_mask,
            phoneme_lengths: ph_lens,
            durations,
        })
    }

    fn sarcasm_row(&self, sarc: &SarcasmEmbedding) -> Result<Tensor> {
        if sarc.values.len() != self.config.sarcasm_dim {
            return Err(Error::Shape(format!(
                "sarcasm embedding has {} values, expected {}",
                sarc.values.len(),
                self.config.sarcasm_dim
            )));
        }
        Ok(Tensor::from_slice(&sarc.values, (1, sarc.values.len()), &self.device)?)
    }

    /// `(T_ph, hidden)` encoder states for one utterance.
    pub fn encode_phonemes(&self, seq: &PhonemeSequence) -> Result<Tensor> {
        let speakers = self.net.speaker.as_ref().map(|_| vec![0u32]);
        let (x, _, _) = self.encode_batch(std::slice::from_ref(seq), speakers.as_deref(), &ForwardCtx::eval())?;
        Ok(x.squeeze(0)?)
    }

    /// Broadcast-concatenates the sarcasm embedding onto every step of
    /// `(T_ph, hidden)` and applies the combiner conv + ReLU.
    pub fn combine(&self, encoded: &Tensor, sarc: &SarcasmEmbedding) -> Result<Tensor> {
        if self.net.combine.is_none() {
            return Err(Error::InvalidInput("model has no sarcasm conditioning".into()));
        }
        let (t, _) = encoded.dims2()?;
        let mask = Tensor::ones((1, t), DType::F32, &self.device)?;
        Ok(self.combine_batch(&encoded.unsqueeze(0)?, &self.sarcasm_row(sarc)?, &mask)?.squeeze(0)?)
    }

    /// Predicts variances and expands `(T_ph, hidden)` to frame rate. With
    /// `targets`, expansion and embeddings are teacher-forced.
    pub fn variance_adapt(&self, hidden: &Tensor, targets: Option<&VarianceTargets>, ctx: &ForwardCtx) -> Result<(Tensor, VariancePrediction)> {
        if ctx.train && targets.is_none() {
            return Err(Error::InvalidInput("training mode requires variance targets".into()));
        }
        let (t, _) = hidden.dims2()?;
        let x = hidden.unsqueeze(0)?;
        let m3 = Tensor::ones((1, t, 1), DType::F32, &self.device)?;
        let ld = self.net.duration.forward(&x, &m3, ctx)?;
        let p = self.net.pitch.forward(&x, &m3, ctx)?;
        let e = self.net.energy.forward(&x, &m3, ctx)?;
        let pred = VariancePrediction {
            log_durations: ld.squeeze(0)?.to_vec1()?,
            durations: ld.squeeze(0)?.to_vec1::<f32>()?.into_iter().map(duration_from_log).collect(),
            pitch: p.squeeze(0)?.to_vec1()?,
            energy: e.squeeze(0)?.to_vec1()?,
        };
        let (durs, pv, ev) = match targets {
            Some(tg) => {
                tg.validate(t)?;
                (tg.durations.clone(), tg.pitch.clone(), tg.energy.clone())
            }
            None => (pred.durations.clone(), pred.pitch.clone(), pred.energy.clone()),
        };
        let adapted = x
            .add(&bucket_embed(&self.net.pitch_table, &self.pitch_q, &[pv], t)?)?
            .add(&bucket_embed(&self.net.energy_table, &self.energy_q, &[ev], t)?)?;
        Ok((length_regulate(&adapted.squeeze(0)?, &durs)?, pred))
    }

    /// `(T_frames, hidden)` → `(T_frames, mel_bins)`.
    pub fn decode_mel(&self, hidden: &Tensor) -> Result<Tensor> {
        let (f, _) = hidden.dims2()?;
        let (mel, _) = self.decode_batch(&hidden.unsqueeze(0)?, &[f], &ForwardCtx::eval())?;
        Ok(mel.squeeze(0)?)
    }

    /// Inference for one utterance.
    pub fn infer(&self, seq: &PhonemeSequence, sarc: &SarcasmEmbedding, speaker: Option<u32>) -> Result<MelSpec> {
        let batch = TtsBatch {
            phonemes: vec![seq.clone()],
            sarcasm: self.sarcasm_row(sarc)?,
            speakers: self.net.speaker.as_ref().map(|_| vec![speaker.unwrap_or(0)]),
            targets: None,
        };
        let out = self.forward(&batch, &ForwardCtx::eval())?;
        MelSpec::from_tensor(&out.mel.squeeze(0)?, &StftConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(conditioned: bool) -> AcousticModel {
        let vocab = PhonemeVocab::standard();
        let mut cfg = AcousticConfig::desk(vocab.len());
        cfg.sarcasm_conditioning = conditioned;
        AcousticModel::new(cfg, vocab, 1).unwrap()
    }

    fn seq(n: usize) -> PhonemeSequence {
        PhonemeSequence {
            ids: (0..n).map(|i| 4 + (i as u32 * 7) % 39).collect(),
        }
    }

    fn emb(v: f32) -> SarcasmEmbedding {
        SarcasmEmbedding::new((0..768).map(|i| ((i as f32) * v).sin()).collect()).unwrap()
    }

    #[test]
    fn encoder_shapes_and_position_sensitivity() {
        let m = model(true);
        let s = seq(12);
        let h = m.encode_phonemes(&s).unwrap();
        assert_eq!(h.dims(), &[12, 256]);
        let rev = PhonemeSequence {
            ids: s.ids.iter().rev().copied().collect(),
        };
        let hr = m.encode_phonemes(&rev).unwrap();
        let flipped = hr.to_vec2::<f32>().unwrap().into_iter().rev().collect::<Vec<_>>();
        assert_ne!(flipped, h.to_vec2::<f32>().unwrap());
        let one = m.encode_phonemes(&seq(1)).unwrap();
        assert_eq!(one.dims(), &[1, 256]);
    }

    #[test]
    fn out_of_vocab_rejected() {
        let m = model(true);
        let bad = PhonemeSequence { ids: vec![4, 999] };
        assert!(matches!(m.encode_phonemes(&bad), Err(Error::PhonemeOutOfVocab { id: 999, .. })));
    }

    #[test]
    fn combine_is_relu_and_live() {
        let m = model(true);
        let h = m.encode_phonemes(&seq(12)).unwrap();
        let a = m.combine(&h, &emb(0.1)).unwrap();
        let b = m.combine(&h, &emb(0.7)).unwrap();
        assert_eq!(a.dims(), &[12, 256]);
        assert!(a.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v >= 0.0));
        let delta = (a - b).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(delta > 0.0);
    }

    #[test]
    fn teacher_forced_expansion_and_zero_log_duration_inference() {
        let m = model(true);
        let h = m.encode_phonemes(&seq(8)).unwrap();
        let targets = VarianceTargets {
            durations: vec![30; 8],
            pitch: vec![5.0; 8],
            energy: vec![-3.0; 8],
        };
        let (x, _) = m.variance_adapt(&h, Some(&targets), &ForwardCtx::train(0.1, 1)).unwrap();
        assert_eq!(x.dims(), &[240, 256]);
        assert!(m.variance_adapt(&h, None, &ForwardCtx::train(0.1, 1)).is_err());
        let mel = m.decode_mel(&x).unwrap();
        assert_eq!(mel.dims(), &[240, 80]);
    }

    #[test]
    fn inference_is_deterministic_and_conditioned() {
        let m = model(true);
        let a = m.infer(&seq(6), &emb(0.1), None).unwrap();
        let b = m.infer(&seq(6), &emb(0.1), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_mels, 80);
    }

    #[test]
    fn baseline_has_no_combiner() {
        let m = model(false);
        let h = m.encode_phonemes(&seq(3)).unwrap();
        assert!(m.combine(&h, &emb(0.1)).is_err());
        assert!(m.infer(&seq(3), &SarcasmEmbedding::zeros(), None).is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(true);
        m.save(&dir.path().join("ck")).unwrap();
        let l = AcousticModel::load(&dir.path().join("ck")).unwrap();
        assert_eq!(m.infer(&seq(5), &emb(0.2), None).unwrap(), l.infer(&seq(5), &emb(0.2), None).unwrap());
    }
}

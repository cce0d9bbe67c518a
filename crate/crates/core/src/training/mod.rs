//! Staged acoustic-model training: pretraining on read speech, conversational
//! fine-tuning, then sarcastic fine-tuning with the detector feedback loss.

mod config;
pub mod features;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{LrSchedule, ModelPreset, ModelSpec, OptimizerConfig, PipelineConfig, Preset, Stage, StageConfig};
pub use features::{make_batch, prepare_examples, FeatureSources, PreparedBatch, TtsExample};

use crate::audio::MelConfig;
use crate::data::{write_atomic, CorpusManifest, Split};
use crate::detector::{Detector, DetectorArch};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, CheckpointFiles, ForwardCtx};
use crate::phoneme::PhonemeVocab;
use crate::text::TextEmbedder;
use crate::tts::{compute_losses, AcousticConfig, AcousticModel, BatchTargets, LossBreakdown, LossWeights, StageStamp};

pub const TRAINING_LOG: &str = "training_log.jsonl";
const TRAINING_STATE: &str = "training_state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub stage: Stage,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub feedback_enabled: bool,
    pub loss_weights: LossWeights,
    /// First iteration run by the process that wrote this header.
    pub start_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub losses: LossBreakdown,
    pub learning_rate: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Entry(LogEntry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    /// One header per process that contributed (resumed runs append one).
    pub headers: Vec<LogHeader>,
    pub entries: Vec<LogEntry>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainingLog {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut log = TrainingLog {
            headers: Vec::new(),
            entries: Vec::new(),
            final_checkpoint: None,
        };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))? {
                LogLine::Header(h) => log.headers.push(h),
                LogLine::Entry(e) => log.entries.push(e),
            }
        }
        Ok(log)
    }

    fn write_all(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for h in &self.headers {
            serde_json::to_writer(&mut buf, &LogLine::Header(h.clone()))?;
            buf.push(b'\n');
        }
        for e in &self.entries {
            serde_json::to_writer(&mut buf, &LogLine::Entry(e.clone()))?;
            buf.push(b'\n');
        }
        write_atomic(path, &buf)
    }
}

fn append_line(path: &Path, line: &LogLine) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = serde_json::to_vec(line)?;
    buf.push(b'\n');
    f.write_all(&buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainingState {
    stage: Stage,
    iteration: usize,
    seed: u64,
    optimizer_steps: usize,
    wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainingLog,
}

/// Checks that a checkpoint may seed `stage` and returns the provenance the
/// new stage builds on (with a skip stamp when the override is used).
pub fn check_stage_order(stage: Stage, provenance: &[StageStamp], allow_skip: bool) -> Result<Vec<StageStamp>> {
    let mut base = provenance.to_vec();
    if let Some(last) = base.last() {
        if !last.complete && !last.skipped {
            return Err(Error::StageOrder(format!(
                "checkpoint stops mid-stage ({} at iteration {}); resume that stage instead",
                last.stage, last.iteration
            )));
        }
    }
    let done = |s: Stage| base.iter().any(|p| p.complete && p.stage == s.as_str());
    match stage {
        Stage::Pretrain => {}
        Stage::FtConversational => {
            if !done(Stage::Pretrain) {
                return Err(Error::StageOrder("ft_conversational requires a pretrained checkpoint".into()));
            }
        }
        Stage::FtSarcastic => {
            if !done(Stage::FtConversational) {
                if !done(Stage::Pretrain) {
                    return Err(Error::StageOrder("ft_sarcastic requires a pretrained checkpoint".into()));
                }
                if !allow_skip {
                    return Err(Error::StageOrder(
                        "ft_sarcastic requires a checkpoint that completed ft_conversational (set allow_stage_skip to override)".into(),
                    ));
                }
                warn!("initialising ft_sarcastic from a checkpoint that skipped ft_conversational");
                base.push(StageStamp {
                    stage: Stage::FtConversational.as_str().into(),
                    iteration: 0,
                    complete: false,
                    skipped: true,
                });
            }
        }
    }
    Ok(base)
}

/// Deterministic batch order: each epoch is a seeded permutation, bucketed by
/// length in windows of eight batches, with the batch order shuffled again.
struct BatchPlan {
    seed: u64,
    batch_size: usize,
    lengths: Vec<usize>,
    epoch: Option<usize>,
    batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    fn new(lengths: Vec<usize>, batch_size: usize, seed: u64) -> Self {
        Self {
            seed,
            batch_size: batch_size.min(lengths.len()),
            lengths,
            epoch: None,
            batches: Vec::new(),
        }
    }

    fn per_epoch(&self) -> usize {
        self.lengths.len().div_ceil(self.batch_size)
    }

    fn batch(&mut self, iteration: usize) -> &[usize] {
        let epoch = (iteration - 1) / self.per_epoch();
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut order: Vec<usize> = (0..self.lengths.len()).collect();
            order.shuffle(&mut rng);
            let mut batches = Vec::with_capacity(self.per_epoch());
            for window in order.chunks(self.batch_size * 8) {
                let mut w = window.to_vec();
                w.sort_by_key(|&i| self.lengths[i]);
                batches.extend(w.chunks(self.batch_size).map(<[usize]>::to_vec));
            }
            batches.shuffle(&mut rng);
            self.batches = batches;
            self.epoch = Some(epoch);
        }
        &self.batches[(iteration - 1) % self.per_epoch()]
    }
}

fn checkpoint_dir(cfg: &StageConfig, iteration: usize) -> PathBuf {
    if iteration == cfg.iterations {
        cfg.output_dir.join("final")
    } else {
        cfg.output_dir.join(format!("ckpt-{iteration:07}"))
    }
}

fn fresh_model(spec: &ModelSpec, seed: u64) -> Result<AcousticModel> {
    let vocab = PhonemeVocab::standard();
    let mut cfg = match spec.preset {
        ModelPreset::Standard => AcousticConfig::standard(vocab.len()),
        ModelPreset::Desk => AcousticConfig::desk(vocab.len()),
    };
    cfg.sarcasm_conditioning = spec.sarcasm_conditioning;
    cfg.n_speakers = spec.n_speakers;
    AcousticModel::new(cfg, vocab, seed)
}

fn load_detector(path: &Path, role: &str) -> Result<Detector> {
    let det = Detector::load(path)?;
    if det.config().arch != DetectorArch::Proposed {
        return Err(Error::Config(format!("{role} detector at {} must be the spectrogram architecture", path.display())));
    }
    Ok(det)
}

/// Trains one stage. Checkpoints land in `output_dir/ckpt-NNNNNNN` every
/// `checkpoint_interval` iterations and in `output_dir/final` at the end.
pub fn run_stage(cfg: &StageConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let manifest = CorpusManifest::load(&cfg.manifest)?;
    if manifest.stage_tag != cfg.stage.manifest_tag() {
        return Err(Error::InvalidInput(format!(
            "stage {} trains on {} manifests, got a {} manifest",
            cfg.stage,
            cfg.stage.manifest_tag(),
            manifest.stage_tag
        )));
    }
    let records: Vec<_> = manifest.split(Split::Train).collect();
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let feedback = if cfg.feedback_enabled {
        let path = cfg.feedback_detector.as_ref().expect("validated");
        Some(load_detector(path, "feedback")?)
    } else {
        None
    };

    let (mut model, start, wall_offset, opt_state) = match (&cfg.resume_from, &cfg.init_checkpoint) {
        (Some(dir), _) => {
            let state: TrainingState = nn::load_json(&dir.join(TRAINING_STATE))?;
            if state.stage != cfg.stage {
                return Err(Error::checkpoint(dir, format!("written by stage {}, not {}", state.stage, cfg.stage)));
            }
            if state.iteration >= cfg.iterations {
                return Err(Error::Config(format!(
                    "checkpoint is at iteration {}, nothing left of {} iterations",
                    state.iteration, cfg.iterations
                )));
            }
            let model = AcousticModel::load_trainable(dir)?;
            let tensors = nn::load_tensors(&dir.join(CheckpointFiles::OPTIMIZER), candle_core::DType::F32, model.device())?;
            (model, state.iteration + 1, state.wall_time_secs, Some((tensors, state.optimizer_steps)))
        }
        (None, Some(dir)) => {
            let mut model = AcousticModel::load_trainable(dir)?;
            let base = check_stage_order(cfg.stage, model.provenance(), cfg.allow_stage_skip)?;
            model.set_provenance(base);
            (model, 1, 0.0, None)
        }
        (None, None) => (fresh_model(&cfg.model, cfg.seed)?, 1, 0.0, None),
    };
    // provenance without this stage's in-progress stamp
    let mut base = model.provenance().to_vec();
    if base.last().is_some_and(|p| p.stage == cfg.stage.as_str() && !p.complete) {
        base.pop();
    }
    let acoustic = model.config().clone();
    if let Some(det) = &feedback {
        if det.config().n_mels != acoustic.mel_bins {
            return Err(Error::Config(format!(
                "feedback detector reads {} mel bins, the acoustic model emits {}",
                det.config().n_mels,
                acoustic.mel_bins
            )));
        }
    }
    let conditioning = if acoustic.sarcasm_conditioning {
        let path = cfg
            .conditioning_detector
            .as_ref()
            .ok_or_else(|| Error::Config("a sarcasm-conditioned model needs conditioning_detector".into()))?;
        Some(load_detector(path, "conditioning")?)
    } else {
        None
    };
    let encoder_ids: Vec<&str> = conditioning.iter().chain(feedback.iter()).map(|d| d.encoder_id()).collect();
    if encoder_ids.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config(format!("detectors disagree on the text encoder: {encoder_ids:?}")));
    }
    let embedder = encoder_ids.first().map(|id| TextEmbedder::for_encoder_id(id)).transpose()?;

    let examples = prepare_examples(
        &records,
        &FeatureSources {
            vocab: model.vocab(),
            mel: MelConfig::for_bins(acoustic.mel_bins)?,
            embedder: embedder.as_ref(),
            conditioning: conditioning.as_ref(),
            n_speakers: acoustic.n_speakers,
            text_cache: cfg.cache_dir.as_ref().map(|d| d.join("text_embeddings.bin")),
        },
    )?;
    info!("{}: {} training utterances, iterations {start}..={}", cfg.stage, examples.len(), cfg.iterations);

    let varmap = model.varmap().expect("trainable model").clone();
    let lr0 = cfg.optimizer.schedule.at(start, acoustic.hidden);
    let mut opt = Adam::new(nn::trainable_vars(&varmap), cfg.optimizer.adam(), lr0)?;
    if let Some((tensors, steps)) = &opt_state {
        opt.load_state(tensors, *steps)?;
    }

    fs::create_dir_all(&cfg.output_dir)?;
    let log_path = cfg.output_dir.join(TRAINING_LOG);
    let mut log = if start > 1 && log_path.exists() {
        let mut log = TrainingLog::read(&log_path)?;
        log.entries.retain(|e| e.iteration < start);
        log
    } else {
        TrainingLog {
            headers: Vec::new(),
            entries: Vec::new(),
            final_checkpoint: None,
        }
    };
    log.headers.push(LogHeader {
        stage: cfg.stage,
        optimizer: cfg.optimizer,
        batch_size: cfg.batch_size,
        iterations: cfg.iterations,
        seed: cfg.seed,
        feedback_enabled: cfg.feedback_enabled,
        loss_weights: cfg.loss_weights,
        start_iteration: start,
    });
    log.write_all(&log_path)?;

    let mut plan = BatchPlan::new(examples.iter().map(|e| e.n_frames).collect(), cfg.batch_size, cfg.seed);
    let clock = Instant::now();
    let device = model.device().clone();
    for iteration in start..=cfg.iterations {
        let lr = cfg.optimizer.schedule.at(iteration, acoustic.hidden);
        opt.set_learning_rate(lr);
        let members: Vec<&TtsExample> = plan.batch(iteration).iter().map(|&i| &examples[i]).collect();
        let prepared = make_batch(&members, acoustic.mel_bins, acoustic.n_speakers > 0, &device)?;
        let ctx = ForwardCtx::train(acoustic.dropout, cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ iteration as u64);
        let out = model.forward(&prepared.batch, &ctx)?;
        let targets = BatchTargets {
            mel: &prepared.mel,
            log_durations: &prepared.log_durations,
            pitch: &prepared.pitch,
            energy: &prepared.energy,
        };
        let (loss, breakdown) = compute_losses(&out, &targets, feedback.as_ref().map(|d| (d, &prepared.text)), &cfg.loss_weights)?;
        let finite = [breakdown.total, breakdown.mel_mae, breakdown.duration_loss, breakdown.pitch_loss, breakdown.energy_loss]
            .iter()
            .chain(breakdown.feedback_cosine.iter())
            .all(|v| v.is_finite());
        if !finite {
            let dump = cfg.output_dir.join("nonfinite_batch.json");
            write_atomic(&dump, &serde_json::to_vec_pretty(&serde_json::json!({ "iteration": iteration, "batch_ids": prepared.ids }))?)?;
            return Err(Error::NonFiniteLoss {
                iteration,
                batch_ids: prepared.ids,
            });
        }
        let grads = opt.collect(&loss.backward()?);
        opt.step(&grads)?;

        let wall = wall_offset + clock.elapsed().as_secs_f64();
        if iteration == start || iteration % cfg.log_interval == 0 || iteration == cfg.iterations {
            let entry = LogEntry {
                iteration,
                losses: breakdown,
                learning_rate: lr,
                wall_time_secs: wall,
            };
            append_line(&log_path, &LogLine::Entry(entry.clone()))?;
            log.entries.push(entry);
        }
        if iteration % cfg.checkpoint_interval == 0 || iteration == cfg.iterations {
            let mut provenance = base.clone();
            provenance.push(StageStamp {
                stage: cfg.stage.as_str().into(),
                iteration,
                complete: iteration == cfg.iterations,
                skipped: false,
            });
            model.set_provenance(provenance);
            let state = TrainingState {
                stage: cfg.stage,
                iteration,
                seed: cfg.seed,
                optimizer_steps: opt.steps_taken(),
                wall_time_secs: wall,
            };
            let dir = checkpoint_dir(cfg, iteration);
            model.save_with(
                &dir,
                &[(CheckpointFiles::OPTIMIZER, &opt.state())],
                &[(TRAINING_STATE, serde_json::to_vec_pretty(&state)?)],
            )?;
            info!("{}: checkpoint {} at iteration {iteration}", cfg.stage, dir.display());
        }
    }
    let checkpoint = checkpoint_dir(cfg, cfg.iterations);
    log.final_checkpoint = Some(checkpoint.clone());
    Ok(StageOutcome { checkpoint, log })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub final_checkpoint: PathBuf,
    /// Final checkpoint of every stage that ran, in order.
    pub checkpoints: Vec<(Stage, PathBuf)>,
}

/// Runs pretrain → ft_conversational → ft_sarcastic, each stage initialised
/// from the previous stage's final checkpoint.
pub fn run_pipeline(p: &PipelineConfig) -> Result<PipelineOutcome> {
    for (_, c) in p.stages() {
        if !(p.skip_conversational && c.stage == Stage::FtConversational) {
            let mut probe = c.clone();
            if c.stage != Stage::Pretrain {
                probe.init_checkpoint.get_or_insert_with(|| PathBuf::from("<previous stage>"));
            }
            probe.validate()?;
        }
    }
    let mut checkpoints: Vec<(Stage, PathBuf)> = Vec::new();
    for stage in Stage::ALL {
        if stage == Stage::FtConversational && p.skip_conversational {
            info!("skipping ft_conversational");
            continue;
        }
        let mut cfg = p.stage(stage).clone();
        if let Some((_, prev)) = checkpoints.last() {
            cfg.init_checkpoint = Some(prev.clone());
            cfg.resume_from = None;
        }
        if stage == Stage::FtSarcastic && p.skip_conversational {
            cfg.allow_stage_skip = true;
        }
        match run_stage(&cfg) {
            Ok(out) => checkpoints.push((stage, out.checkpoint)),
            Err(e) => {
                return Err(Error::PipelineAborted {
                    stage: stage.as_str().into(),
                    last_good: checkpoints.last().map(|(_, c)| c.clone()),
                    source: Box::new(e),
                })
            }
        }
    }
    let final_checkpoint = checkpoints.last().map(|(_, c)| c.clone()).expect("at least one stage ran");
    Ok(PipelineOutcome {
        final_checkpoint,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamp(stage: &str, complete: bool) -> StageStamp {
        StageStamp {
            stage: stage.into(),
            iteration: 10,
            complete,
            skipped: false,
        }
    }

    #[test]
    fn stage_order_gate() {
        let pre = vec![stamp("pretrain", true)];
        assert!(check_stage_order(Stage::FtConversational, &pre, false).is_ok());
        assert!(matches!(check_stage_order(Stage::FtSarcastic, &pre, false), Err(Error::StageOrder(_))));
        let skipped = check_stage_order(Stage::FtSarcastic, &pre, true).unwrap();
        assert_eq!(skipped.len(), 2);
        assert!(skipped[1].skipped && skipped[1].stage == "ft_conversational");
        let conv = vec![stamp("pretrain", true), stamp("ft_conversational", true)];
        assert_eq!(check_stage_order(Stage::FtSarcastic, &conv, false).unwrap(), conv);
        assert!(check_stage_order(Stage::FtConversational, &[], false).is_err());
        assert!(check_stage_order(Stage::FtConversational, &[stamp("pretrain", false)], false).is_err());
    }

    #[test]
    fn batch_plan_covers_each_epoch() {
        let mut plan = BatchPlan::new((0..10).map(|i| 20 + (i * 7) % 13).collect(), 4, 3);
        assert_eq!(plan.per_epoch(), 3);
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (1..=3).flat_map(|k| plan.batch(epoch * 3 + k).to_vec()).collect();
            seen.sort();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        let mut again = BatchPlan::new((0..10).map(|i| 20 + (i * 7) % 13).collect(), 4, 3);
        assert_eq!(again.batch(5).to_vec(), plan.batch(5).to_vec());
    }
}

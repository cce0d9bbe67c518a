//! Resolved configurations for each subcommand and the work they do.

use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::workspace::Workspace;
use crate::audio::{wav_info, SAMPLE_RATE};
use crate::data::{
    build_manifest, ingest_alignment, preprocess, split_dataset, CorpusManifest, Exclusion, PreprocessConfig, SeparatorConfig, Split, SplitConfig,
    StageTag, UtteranceRecord,
};
use crate::detector::{detector_examples, train_detector, DetectorArch, DetectorConfig, DetectorTrainConfig, SarcasmLabel};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_subjective, export_listening_bundle, objective_eval, read_ratings, serve_rating_api, BundleKey, EvalSource, EvalSystem, InputType,
    ListeningBundle, ObjectiveEvalOptions, ServerConfig,
};
use crate::phoneme::PhonemeVocab;
use crate::synthesis::{build_label_bank, SynthesisRequest, SynthesizerOptions, LABEL_BANK_FILE};
use crate::text::TextEmbedder;
use crate::toy::{write_toy_corpus, ToyCorpusConfig};
use crate::training::{run_pipeline, run_stage, PipelineConfig, Stage, StageConfig};
use crate::tts::AcousticModel;

pub const ADMIN_TOKEN_ENV: &str = "SARC_TTS_ADMIN_TOKEN";

/// A fully resolved subcommand.
pub trait Job {
    /// Makes relative paths absolute under the workspace and checks that
    /// outputs stay inside it.
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()>;
    /// Rejects inconsistent settings before any work starts.
    fn check(&self) -> Result<()> {
        Ok(())
    }
    fn plan(&self) -> Vec<String>;
    fn run(&self) -> Result<()>;
    fn config_toml(&self) -> Result<String>;
}

fn out(ws: &Workspace, p: &mut PathBuf) -> Result<()> {
    *p = ws.output(p)?;
    Ok(())
}

fn inp(ws: &Workspace, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() {
        *p = ws.input(p);
    }
}

fn inp_opt(ws: &Workspace, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        inp(ws, p);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn save_manifest(m: &CorpusManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    m.save(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessJob {
    /// Corpus root laid out as `<speaker>/<id>.wav` + `<id>.txt`.
    pub input: PathBuf,
    pub stage: StageTag,
    pub manifest: PathBuf,
    pub exclusions: PathBuf,
    pub sample_rate: u32,
    pub trim_db: f32,
    pub peak: f32,
    pub separator: Option<SeparatorConfig>,
    #[serde(skip)]
    workspace: PathBuf,
}

impl Default for PreprocessJob {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self {
            input: "corpus".into(),
            stage: StageTag::Pretrain,
            manifest: "manifest.jsonl".into(),
            exclusions: "exclusions.json".into(),
            sample_rate: d.sample_rate,
            trim_db: d.trim_db,
            peak: d.peak,
            separator: None,
            workspace: PathBuf::new(),
        }
    }
}

impl Job for PreprocessJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.input);
        out(ws, &mut self.manifest)?;
        out(ws, &mut self.exclusions)?;
        self.workspace = ws.root().to_path_buf();
        Ok(())
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("scan {} as a `{}` corpus", self.input.display(), self.stage),
            format!("write normalised audio under {}", self.workspace.join("audio").display()),
            format!("write manifest {}", self.manifest.display()),
            format!("write exclusion report {}", self.exclusions.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let (manifest, mut report) = build_manifest(&self.input, self.stage)?;
        let cfg = PreprocessConfig {
            workspace: self.workspace.clone(),
            sample_rate: self.sample_rate,
            trim_db: self.trim_db,
            peak: self.peak,
            separator: self.separator.clone(),
        };
        let mut records = Vec::with_capacity(manifest.records.len());
        for rec in &manifest.records {
            match preprocess(rec, &cfg) {
                Ok(r) => records.push(r),
                Err(e) => {
                    warn!("excluding `{}`: {e}", rec.id);
                    report.excluded.push(Exclusion {
                        path: rec.audio_path.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        info!("{} records kept, {} excluded", records.len(), report.excluded.len());
        save_manifest(&CorpusManifest { records, stage_tag: self.stage }, &self.manifest)?;
        write_json(&self.exclusions, &report)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignIngestJob {
    pub manifest: PathBuf,
    /// Directory of `<id>.TextGrid` files; defaults to beside each source recording.
    pub textgrids: Option<PathBuf>,
    /// Defaults to rewriting `manifest`.
    pub output: Option<PathBuf>,
}

impl Default for AlignIngestJob {
    fn default() -> Self {
        Self {
            manifest: "manifest.jsonl".into(),
            textgrids: None,
            output: None,
        }
    }
}

impl AlignIngestJob {
    fn output_path(&self) -> &Path {
        self.output.as_deref().unwrap_or(&self.manifest)
    }

    fn grid_for(&self, rec: &UtteranceRecord) -> PathBuf {
        match &self.textgrids {
            Some(dir) => dir.join(format!("{}.TextGrid", rec.id)),
            None => rec
                .preprocess
                .as_ref()
                .map(|p| p.source_path.clone())
                .unwrap_or_else(|| rec.audio_path.clone())
                .with_extension("TextGrid"),
        }
    }
}

impl Job for AlignIngestJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.manifest);
        inp_opt(ws, &mut self.textgrids);
        let target = self.output.clone().unwrap_or_else(|| self.manifest.clone());
        self.output = Some(ws.output(&target)?);
        Ok(())
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("read manifest {}", self.manifest.display()),
            match &self.textgrids {
                Some(d) => format!("read TextGrids from {}", d.display()),
                None => "read TextGrids beside each source recording".into(),
            },
            format!("write aligned manifest {}", self.output_path().display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let mut m = CorpusManifest::load(&self.manifest)?;
        let vocab = PhonemeVocab::standard();
        let (mut aligned, mut missing) = (0, 0);
        for rec in &mut m.records {
            let grid = self.grid_for(rec);
            if !grid.exists() {
                missing += 1;
                warn!("no alignment for `{}` at {}", rec.id, grid.display());
                continue;
            }
            let (rate, frames) = wav_info(&rec.audio_path)?;
            let n_samples = (frames as f64 * SAMPLE_RATE as f64 / rate as f64).round() as usize;
            let a = ingest_alignment(&grid, &vocab, Some(n_samples))?;
            rec.phonemes = Some(a.symbols);
            rec.durations = Some(a.durations);
            aligned += 1;
        }
        if aligned == 0 {
            return Err(Error::InvalidInput("no record could be aligned".into()));
        }
        info!("aligned {aligned} records, {missing} without TextGrid");
        save_manifest(&m, self.output_path())
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitJob {
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub test_n: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitJob {
    fn default() -> Self {
        let d = SplitConfig::default();
        Self {
            manifest: "manifest.jsonl".into(),
            output: "split.jsonl".into(),
            test_n: d.test_n,
            val_fraction: d.val_fraction,
            seed: d.seed,
        }
    }
}

impl Job for SplitJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.manifest);
        out(ws, &mut self.output)
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("read manifest {}", self.manifest.display()),
            format!("assign {} test records, {} of the rest to validation (seed {})", self.test_n, self.val_fraction, self.seed),
            format!("write {}", self.output.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let m = CorpusManifest::load(&self.manifest)?;
        let cfg = SplitConfig {
            test_n: self.test_n,
            val_fraction: self.val_fraction,
            seed: self.seed,
        };
        save_manifest(&split_dataset(&m, &cfg)?, &self.output)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainDetectorJob {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub arch: DetectorArch,
    pub n_mels: usize,
    /// Train on zeroed text embeddings (a speech-only detector).
    pub speech_only: bool,
    pub training: DetectorTrainConfig,
}

impl Default for TrainDetectorJob {
    fn default() -> Self {
        Self {
            manifest: "split.jsonl".into(),
            output_dir: "detector".into(),
            arch: DetectorArch::Proposed,
            n_mels: 128,
            speech_only: false,
            training: DetectorTrainConfig::default(),
        }
    }
}

impl TrainDetectorJob {
    fn detector_config(&self) -> DetectorConfig {
        match self.arch {
            DetectorArch::Proposed => DetectorConfig::proposed(self.n_mels),
            DetectorArch::Baseline => DetectorConfig::baseline(),
        }
    }
}

impl Job for TrainDetectorJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.manifest);
        out(ws, &mut self.output_dir)
    }

    fn check(&self) -> Result<()> {
        self.detector_config().validate()
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("read train/val splits of {}", self.manifest.display()),
            format!(
                "train a {:?} detector for {} epochs{}",
                self.arch,
                self.training.epochs,
                if self.speech_only { " on speech only" } else { "" }
            ),
            format!("write checkpoint {}", self.output_dir.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let m = CorpusManifest::load(&self.manifest)?;
        let labelled = |s: Split| m.split(s).filter(|r| r.sarcasm_label.is_some()).collect::<Vec<_>>();
        let (train, val) = (labelled(Split::Train), labelled(Split::Val));
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidInput(format!(
                "need labelled train and validation records, found {} and {} (run `split` first)",
                train.len(),
                val.len()
            )));
        }
        let cfg = self.detector_config();
        let embedder = TextEmbedder::default();
        let train = detector_examples(&train, &cfg, &embedder, !self.speech_only)?;
        let val = detector_examples(&val, &cfg, &embedder, !self.speech_only)?;
        let trained = train_detector(cfg, embedder.encoder_id(), &train, &val, &self.training)?;
        info!("best epoch {} with validation F1 {:.2}", trained.best_epoch, trained.validation.f1);
        trained.detector.save(&self.output_dir, Some(&trained.validation))?;
        write_json(&self.output_dir.join("training_history.json"), &trained.history)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

fn resolve_stage(ws: &Workspace, c: &mut StageConfig) -> Result<()> {
    inp(ws, &mut c.manifest);
    out(ws, &mut c.output_dir)?;
    inp_opt(ws, &mut c.init_checkpoint);
    inp_opt(ws, &mut c.resume_from);
    inp_opt(ws, &mut c.feedback_detector);
    inp_opt(ws, &mut c.conditioning_detector);
    if let Some(p) = &mut c.cache_dir {
        out(ws, p)?;
    }
    Ok(())
}

/// The staged TTS schedule, or one stage of it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTtsJob {
    pub pipeline: PipelineConfig,
    pub only: Option<Stage>,
}

impl TrainTtsJob {
    fn last_stage(&self) -> &StageConfig {
        self.pipeline.stage(self.only.unwrap_or(Stage::FtSarcastic))
    }

    fn write_label_bank(&self, checkpoint: &Path) -> Result<()> {
        if !AcousticModel::read_meta(checkpoint)?.config.sarcasm_conditioning {
            return Ok(());
        }
        let stage = self.last_stage();
        let Some(det) = &stage.conditioning_detector else {
            return Ok(());
        };
        let manifest = CorpusManifest::load(&stage.manifest)?;
        match build_label_bank(&manifest, &crate::detector::Detector::load(det)?) {
            Ok(bank) => {
                let path = checkpoint.join(LABEL_BANK_FILE);
                bank.save(&path)?;
                info!("label bank written to {}", path.display());
            }
            Err(Error::InvalidInput(msg)) => warn!("no label bank written: {msg}"),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

impl Job for TrainTtsJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        for st in Stage::ALL {
            resolve_stage(ws, self.pipeline.stage_mut(st))?;
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if let Some(st) = self.only {
            return self.pipeline.stage(st).validate();
        }
        let skip = self.pipeline.skip_conversational;
        // later stages are chained from earlier outputs, so only check what the user supplies
        for (st, c) in self.pipeline.stages() {
            if st == Stage::FtConversational && skip {
                continue;
            }
            let mut c = c.clone();
            if st != Stage::Pretrain && c.init_checkpoint.is_none() {
                c.init_checkpoint = Some(PathBuf::from("<previous stage>"));
            }
            c.validate()?;
        }
        Ok(())
    }

    fn plan(&self) -> Vec<String> {
        let stages: Vec<Stage> = match self.only {
            Some(s) => vec![s],
            None => Stage::ALL
                .into_iter()
                .filter(|s| !(self.pipeline.skip_conversational && *s == Stage::FtConversational))
                .collect(),
        };
        let mut plan: Vec<String> = stages
            .iter()
            .map(|&s| {
                let c = self.pipeline.stage(s);
                format!(
                    "{s}: {} iterations on {} → {}",
                    c.iterations,
                    c.manifest.display(),
                    c.output_dir.display()
                )
            })
            .collect();
        plan.push("write the label bank into the final checkpoint when the model is conditioned".into());
        plan
    }

    fn run(&self) -> Result<()> {
        let checkpoint = match self.only {
            Some(st) => run_stage(self.pipeline.stage(st))?.checkpoint,
            None => run_pipeline(&self.pipeline)?.final_checkpoint,
        };
        info!("final checkpoint {}", checkpoint.display());
        self.write_label_bank(&checkpoint)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(&self.pipeline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesizeJob {
    pub text: String,
    pub reference: Option<PathBuf>,
    /// `sarcastic` or `neutral`.
    pub label: Option<String>,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    pub speaker: Option<u32>,
    /// Needed for reference-audio conditioning.
    pub detector: Option<PathBuf>,
    pub vocoder: String,
    pub label_bank: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

impl Default for SynthesizeJob {
    fn default() -> Self {
        Self {
            text: String::new(),
            reference: None,
            label: None,
            checkpoint: "runs/ft_sarcastic/final".into(),
            output: "out.wav".into(),
            speaker: None,
            detector: None,
            vocoder: "griffin-lim".into(),
            label_bank: None,
            lexicon: None,
        }
    }
}

impl SynthesizeJob {
    fn request(&self) -> Result<SynthesisRequest> {
        let mut req = SynthesisRequest::new(&self.text, &self.checkpoint);
        req.reference_audio = self.reference.clone();
        req.label = self.label.as_deref().map(str::parse::<SarcasmLabel>).transpose()?;
        req.speaker_id = self.speaker;
        Ok(req)
    }
}

impl Job for SynthesizeJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp_opt(ws, &mut self.reference);
        inp(ws, &mut self.checkpoint);
        out(ws, &mut self.output)?;
        inp_opt(ws, &mut self.detector);
        inp_opt(ws, &mut self.label_bank);
        inp_opt(ws, &mut self.lexicon);
        Ok(())
    }

    fn check(&self) -> Result<()> {
        self.request()?.conditioning().map(|_| ())
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("load {} with vocoder `{}`", self.checkpoint.display(), self.vocoder),
            format!("synthesise {:?}", self.text),
            format!("write {}", self.output.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let opts = SynthesizerOptions {
            vocoder: self.vocoder.clone(),
            detector: self.detector.clone(),
            label_bank: self.label_bank.clone(),
            lexicon: self.lexicon.clone(),
        };
        let wave = crate::synthesis::synthesize(&self.request()?, &opts)?;
        if let Some(dir) = self.output.parent() {
            fs::create_dir_all(dir)?;
        }
        wave.write_wav(&self.output)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub checkpoint: PathBuf,
}

impl std::str::FromStr for ModelEntry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("model `{s}` is not of the form name=checkpoint")))?;
        Ok(Self {
            name: name.trim().into(),
            checkpoint: path.trim().into(),
        })
    }
}

fn check_models(models: &[ModelEntry], at_least: usize) -> Result<()> {
    if models.len() < at_least {
        return Err(Error::Config(format!("need at least {at_least} model(s), got {}", models.len())));
    }
    let mut seen = BTreeSet::new();
    for m in models {
        if m.name.is_empty() || !seen.insert(&m.name) {
            return Err(Error::Config(format!("model names must be unique and non-empty (`{}`)", m.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Test,
    All,
}

fn subset(m: CorpusManifest, which: Subset) -> Result<CorpusManifest> {
    match which {
        Subset::All => Ok(m),
        Subset::Test => {
            let stage_tag = m.stage_tag;
            let records: Vec<_> = m.records.into_iter().filter(|r| r.split == Split::Test).collect();
            if records.is_empty() {
                return Err(Error::InvalidInput("manifest has no test records (run `split` first)".into()));
            }
            Ok(CorpusManifest { records, stage_tag })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalObjectiveJob {
    pub manifest: PathBuf,
    pub subset: Subset,
    pub detector: PathBuf,
    pub models: Vec<ModelEntry>,
    /// Also score the test recordings themselves.
    pub ground_truth: bool,
    pub input_types: Vec<InputType>,
    pub output_dir: PathBuf,
    /// Keep synthesised WAVs under `output_dir/audio`.
    pub keep_audio: bool,
}

impl Default for EvalObjectiveJob {
    fn default() -> Self {
        Self {
            manifest: "split.jsonl".into(),
            subset: Subset::Test,
            detector: "detector".into(),
            models: Vec::new(),
            ground_truth: false,
            input_types: vec![InputType::Speech, InputType::SpeechText],
            output_dir: "eval".into(),
            keep_audio: false,
        }
    }
}

impl Job for EvalObjectiveJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.manifest);
        inp(ws, &mut self.detector);
        for m in &mut self.models {
            inp(ws, &mut m.checkpoint);
        }
        out(ws, &mut self.output_dir)
    }

    fn check(&self) -> Result<()> {
        check_models(&self.models, if self.ground_truth { 0 } else { 1 })?;
        if self.input_types.is_empty() {
            return Err(Error::Config("input_types is empty".into()));
        }
        Ok(())
    }

    fn plan(&self) -> Vec<String> {
        let mut plan: Vec<String> = self
            .models
            .iter()
            .map(|m| format!("synthesise the test set with `{}` ({})", m.name, m.checkpoint.display()))
            .collect();
        let types: Vec<String> = self.input_types.iter().map(|t| t.to_string()).collect();
        plan.push(format!("score with {} on {}", self.detector.display(), types.join(", ")));
        plan.push(format!("write report and predictions under {}", self.output_dir.display()));
        plan
    }

    fn run(&self) -> Result<()> {
        let test = subset(CorpusManifest::load(&self.manifest)?, self.subset)?;
        let mut systems: Vec<EvalSystem> = self
            .models
            .iter()
            .map(|m| EvalSystem {
                name: m.name.clone(),
                source: EvalSource::Checkpoint(m.checkpoint.clone()),
            })
            .collect();
        if self.ground_truth {
            systems.push(EvalSystem {
                name: "ground-truth".into(),
                source: EvalSource::GroundTruth,
            });
        }
        let opts = ObjectiveEvalOptions {
            audio_dir: self.keep_audio.then(|| self.output_dir.join("audio")),
            ..Default::default()
        };
        let report = objective_eval(&test, &systems, &self.detector, &self.input_types, &opts, &self.output_dir)?;
        for r in &report.rows {
            info!(
                "{:<16} {:<12} P {:6.2}  R {:6.2}  F1 {:6.2}  (n={}, excluded {})",
                r.method, r.input_type, r.precision, r.recall, r.f1, r.n_evaluated, r.n_excluded
            );
        }
        Ok(())
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportListeningJob {
    pub manifest: PathBuf,
    pub subset: Subset,
    pub models: Vec<ModelEntry>,
    pub n_items: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExportListeningJob {
    fn default() -> Self {
        Self {
            manifest: "split.jsonl".into(),
            subset: Subset::Test,
            models: Vec::new(),
            n_items: 20,
            seed: 0,
            output_dir: "listening".into(),
        }
    }
}

impl Job for ExportListeningJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.manifest);
        for m in &mut self.models {
            inp(ws, &mut m.checkpoint);
        }
        out(ws, &mut self.output_dir)
    }

    fn check(&self) -> Result<()> {
        check_models(&self.models, 2)
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("sample {} test sentences (seed {}) from {}", self.n_items, self.seed, self.manifest.display()),
            format!("synthesise with {} models", self.models.len()),
            format!("write blinded bundle {}", self.output_dir.join("bundle").display()),
            format!("write key {}", self.output_dir.join(crate::eval::KEY_FILE).display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let test = subset(CorpusManifest::load(&self.manifest)?, self.subset)?;
        let systems: Vec<(String, PathBuf)> = self.models.iter().map(|m| (m.name.clone(), m.checkpoint.clone())).collect();
        let ex = export_listening_bundle(&test, &systems, self.n_items, self.seed, &SynthesizerOptions::default(), &self.output_dir)?;
        info!(
            "bundle {}: {} MOS items, {} pairs",
            ex.bundle.bundle_id,
            ex.bundle.mos_items.len(),
            ex.bundle.pairs.len()
        );
        Ok(())
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeRatingsJob {
    pub bundle_dir: PathBuf,
    pub key: Option<PathBuf>,
    pub store: PathBuf,
    pub bind: String,
    /// Falls back to `$SARC_TTS_ADMIN_TOKEN`.
    pub admin_token: Option<String>,
    pub cors_origin: Option<String>,
}

impl Default for ServeRatingsJob {
    fn default() -> Self {
        Self {
            bundle_dir: "listening/bundle".into(),
            key: Some("listening/key.json".into()),
            store: "ratings.jsonl".into(),
            bind: "127.0.0.1:8080".into(),
            admin_token: None,
            cors_origin: None,
        }
    }
}

impl ServeRatingsJob {
    fn addr(&self) -> Result<SocketAddr> {
        self.bind
            .parse()
            .map_err(|e| Error::Config(format!("bind address `{}`: {e}", self.bind)))
    }
}

impl Job for ServeRatingsJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.bundle_dir);
        inp_opt(ws, &mut self.key);
        out(ws, &mut self.store)?;
        if self.admin_token.is_none() {
            self.admin_token = std::env::var(ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        self.addr().map(|_| ())
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("serve {} on http://{}", self.bundle_dir.display(), self.bind),
            format!("append ratings to {}", self.store.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let cfg = ServerConfig {
            bundle_dir: self.bundle_dir.clone(),
            key_path: self.key.clone(),
            store_path: self.store.clone(),
            admin_token: self.admin_token.clone(),
            cors_origin: self.cors_origin.clone(),
        };
        let addr = self.addr()?;
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?
            .block_on(serve_rating_api(&cfg, addr))
    }

    fn config_toml(&self) -> Result<String> {
        let mut shown = self.clone();
        if shown.admin_token.is_some() {
            shown.admin_token = Some("<redacted>".into());
        }
        crate::config::to_toml_string(&shown)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateJob {
    pub ratings: PathBuf,
    pub bundle_dir: PathBuf,
    pub key: PathBuf,
    pub output: PathBuf,
}

impl Default for AggregateJob {
    fn default() -> Self {
        Self {
            ratings: "ratings.jsonl".into(),
            bundle_dir: "listening/bundle".into(),
            key: "listening/key.json".into(),
            output: "subjective_summary.json".into(),
        }
    }
}

impl Job for AggregateJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        inp(ws, &mut self.ratings);
        inp(ws, &mut self.bundle_dir);
        inp(ws, &mut self.key);
        out(ws, &mut self.output)
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("read ratings {}", self.ratings.display()),
            format!("unblind with {}", self.key.display()),
            format!("write {}", self.output.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let ratings = read_ratings(&self.ratings)?;
        let bundle = ListeningBundle::load(&self.bundle_dir)?;
        let key = BundleKey::load(&self.key)?;
        let summary = aggregate_subjective(&ratings, &bundle, &key);
        info!("{} ratings counted, {} rejected, {} raters", summary.accepted, summary.rejected, summary.n_raters);
        write_json(&self.output, &summary)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusJob {
    pub output_dir: PathBuf,
    pub manifest: PathBuf,
    pub n: usize,
    pub stage: StageTag,
    pub seed: u64,
    /// Defaults to labelling sarcastic-stage corpora only.
    pub labeled: Option<bool>,
}

impl Default for ToyCorpusJob {
    fn default() -> Self {
        Self {
            output_dir: "toy".into(),
            manifest: "toy/manifest.jsonl".into(),
            n: 8,
            stage: StageTag::Sarcastic,
            seed: 0,
            labeled: None,
        }
    }
}

impl Job for ToyCorpusJob {
    fn resolve_paths(&mut self, ws: &Workspace) -> Result<()> {
        out(ws, &mut self.output_dir)?;
        out(ws, &mut self.manifest)
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        Ok(())
    }

    fn plan(&self) -> Vec<String> {
        vec![
            format!("render {} synthetic `{}` utterances into {}", self.n, self.stage, self.output_dir.display()),
            format!("write manifest {}", self.manifest.display()),
        ]
    }

    fn run(&self) -> Result<()> {
        let mut cfg = ToyCorpusConfig::new(self.n, self.stage, self.seed);
        if let Some(l) = self.labeled {
            cfg.labeled = l;
        }
        let m = write_toy_corpus(&self.output_dir, &cfg)?;
        save_manifest(&m, &self.manifest)
    }

    fn config_toml(&self) -> Result<String> {
        crate::config::to_toml_string(self)
    }
}

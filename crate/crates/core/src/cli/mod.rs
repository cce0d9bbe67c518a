//! Command-line front end. Each subcommand resolves its configuration as
//! defaults ← `--config` file ← flags ← `--set key=value`, logs the result,
//! and then either prints its plan (`--dry-run`) or runs.

mod jobs;
mod workspace;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{error, info};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use jobs::*;
pub use workspace::{Workspace, WORKSPACE_ENV};

use crate::config::{parse_override, resolve};
use crate::data::StageTag;
use crate::detector::DetectorArch;
use crate::error::{Error, Result};
use crate::eval::InputType;
use crate::training::{PipelineConfig, Preset, Stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sarc-tts", version, about = "Sarcasm-aware text-to-speech toolkit")]
pub struct Cli {
    /// TOML file with this subcommand's settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any setting by dotted key (repeatable; applied last).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Workspace root; defaults to $SARC_TTS_WORKSPACE or the current directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub workspace: Option<PathBuf>,
    /// Print the resolved configuration and plan without touching anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a corpus, normalise its audio and write a manifest.
    Preprocess(PreprocessArgs),
    /// Attach forced-alignment durations from TextGrid files.
    AlignIngest(AlignArgs),
    /// Assign train / validation / test splits.
    Split(SplitArgs),
    /// Train a sarcasm detector.
    TrainDetector(TrainDetectorArgs),
    /// Run the staged acoustic-model training.
    TrainTts(TrainTtsArgs),
    /// Synthesise one utterance to a WAV file.
    Synthesize(SynthesizeArgs),
    /// Score synthesised (or recorded) test speech with a detector.
    EvalObjective(EvalArgs),
    /// Export a blinded listening-test bundle.
    ExportListening(ExportArgs),
    /// Serve the listening-test rating API.
    ServeRatings(ServeArgs),
    /// Unblind and summarise collected ratings.
    Aggregate(AggregateArgs),
    /// Render a small synthetic corpus for smoke tests.
    ToyCorpus(ToyArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_parser = parse_stage_tag)]
    pub stage: Option<StageTag>,
    #[arg(long = "out")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub textgrids: Option<PathBuf>,
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainDetectorArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<DetectorArch>,
    #[arg(long)]
    pub speech_only: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainTtsArgs {
    /// `full` or `desk` defaults.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Run only this stage.
    #[arg(long, value_parser = parse_stage)]
    pub stage: Option<Stage>,
    #[arg(long)]
    pub skip_conversational: bool,
    #[arg(long)]
    pub pretrain_manifest: Option<PathBuf>,
    #[arg(long)]
    pub conversational_manifest: Option<PathBuf>,
    #[arg(long)]
    pub sarcastic_manifest: Option<PathBuf>,
    /// Detector providing sarcasm embeddings (all stages).
    #[arg(long)]
    pub conditioning_detector: Option<PathBuf>,
    /// Frozen detector for the feedback loss.
    #[arg(long)]
    pub feedback_detector: Option<PathBuf>,
    /// Iterations for every stage.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Root for `<root>/<stage>` output directories.
    #[arg(long = "out")]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub text: Option<String>,
    /// Reference recording for the sarcasm embedding.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// `sarcastic` or `neutral` (label-bank conditioning).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long = "ckpt")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub speaker: Option<u32>,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long)]
    pub vocoder: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// `name=checkpoint` (repeatable).
    #[arg(long = "model", value_name = "NAME=CKPT")]
    pub models: Vec<String>,
    #[arg(long)]
    pub ground_truth: bool,
    /// `speech` or `speech+text` (repeatable).
    #[arg(long = "input-type", value_parser = parse_input_type)]
    pub input_types: Vec<InputType>,
    /// Use every record instead of the test split.
    #[arg(long)]
    pub all_records: bool,
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub keep_audio: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long = "model", value_name = "NAME=CKPT")]
    pub models: Vec<String>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub all_records: bool,
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_stage_tag)]
    pub stage: Option<StageTag>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_stage_tag(s: &str) -> std::result::Result<StageTag, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_input_type(s: &str) -> std::result::Result<InputType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_arch(s: &str) -> std::result::Result<DetectorArch, String> {
    match s {
        "proposed" => Ok(DetectorArch::Proposed),
        "baseline" => Ok(DetectorArch::Baseline),
        other => Err(format!("unknown detector architecture `{other}`")),
    }
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    match s {
        "full" => Ok(Preset::Full),
        "desk" => Ok(Preset::Desk),
        other => Err(format!("unknown preset `{other}`")),
    }
}

/// Flag values turned into dotted overrides, encoded as TOML literals.
#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn value<T: Serialize>(&mut self, key: &str, v: Option<T>) -> Result<()> {
        if let Some(v) = v {
            let lit = toml::Value::try_from(v).map_err(|e| Error::Config(format!("{key}: {e}")))?;
            self.0.push((key.to_string(), lit.to_string()));
        }
        Ok(())
    }

    fn flag(&mut self, key: &str, on: bool) -> Result<()> {
        self.value(key, on.then_some(true))
    }

    fn path(&mut self, key: &str, p: Option<&PathBuf>) -> Result<()> {
        self.value(key, p.map(|p| p.to_string_lossy().into_owned()))
    }
}

fn models_override(o: &mut Overrides, models: &[String]) -> Result<()> {
    if models.is_empty() {
        return Ok(());
    }
    let entries = models.iter().map(|m| m.parse::<ModelEntry>()).collect::<Result<Vec<_>>>()?;
    o.value("models", Some(entries))
}

fn build<J>(file: Option<&str>, flags: Overrides, sets: &[(String, String)]) -> Result<J>
where
    J: Job + Default + Serialize + DeserializeOwned,
{
    let mut all = flags.0;
    all.extend_from_slice(sets);
    resolve(&J::default(), file, &all)
}

fn boxed<J: Job + 'static>(j: J) -> Box<dyn Job> {
    Box::new(j)
}

/// Resolves a subcommand's configuration without side effects.
pub fn prepare(command: &Command, file: Option<&str>, sets: &[(String, String)]) -> Result<Box<dyn Job>> {
    let mut o = Overrides::default();
    Ok(match command {
        Command::Preprocess(a) => {
            o.path("input", a.input.as_ref())?;
            o.value("stage", a.stage)?;
            o.path("manifest", a.manifest.as_ref())?;
            o.path("exclusions", a.exclusions.as_ref())?;
            boxed(build::<PreprocessJob>(file, o, sets)?)
        }
        Command::AlignIngest(a) => {
            o.path("manifest", a.manifest.as_ref())?;
            o.path("textgrids", a.textgrids.as_ref())?;
            o.path("output", a.output.as_ref())?;
            boxed(build::<AlignIngestJob>(file, o, sets)?)
        }
        Command::Split(a) => {
            o.path("manifest", a.manifest.as_ref())?;
            o.path("output", a.output.as_ref())?;
            o.value("test_n", a.test_n)?;
            o.value("val_fraction", a.val_fraction)?;
            o.value("seed", a.seed)?;
            boxed(build::<SplitJob>(file, o, sets)?)
        }
        Command::TrainDetector(a) => {
            o.path("manifest", a.manifest.as_ref())?;
            o.path("output_dir", a.output_dir.as_ref())?;
            o.value("arch", a.arch)?;
            o.flag("speech_only", a.speech_only)?;
            o.value("training.epochs", a.epochs)?;
            o.value("training.seed", a.seed)?;
            boxed(build::<TrainDetectorJob>(file, o, sets)?)
        }
        Command::TrainTts(a) => {
            o.value("preset", a.preset)?;
            o.flag("skip_conversational", a.skip_conversational)?;
            o.path("pretrain.manifest", a.pretrain_manifest.as_ref())?;
            o.path("ft_conversational.manifest", a.conversational_manifest.as_ref())?;
            o.path("ft_sarcastic.manifest", a.sarcastic_manifest.as_ref())?;
            o.path("ft_sarcastic.feedback_detector", a.feedback_detector.as_ref())?;
            for st in Stage::ALL {
                o.path(&format!("{st}.conditioning_detector"), a.conditioning_detector.as_ref())?;
                o.value(&format!("{st}.iterations"), a.iterations)?;
                o.path(&format!("{st}.output_dir"), a.output_root.as_ref().map(|r| r.join(st.as_str())).as_ref())?;
            }
            let mut all = o.0;
            all.extend_from_slice(sets);
            boxed(TrainTtsJob {
                pipeline: PipelineConfig::from_toml(file, &all)?,
                only: a.stage,
            })
        }
        Command::Synthesize(a) => {
            o.value("text", a.text.as_ref())?;
            o.path("reference", a.reference.as_ref())?;
            o.value("label", a.label.as_ref())?;
            o.path("checkpoint", a.checkpoint.as_ref())?;
            o.path("output", a.output.as_ref())?;
            o.value("speaker", a.speaker)?;
            o.path("detector", a.detector.as_ref())?;
            o.value("vocoder", a.vocoder.as_ref())?;
            boxed(build::<SynthesizeJob>(file, o, sets)?)
        }
        Command::EvalObjective(a) => {
            o.path("manifest", a.manifest.as_ref())?;
            o.path("detector", a.detector.as_ref())?;
            models_override(&mut o, &a.models)?;
            o.flag("ground_truth", a.ground_truth)?;
            o.value("input_types", (!a.input_types.is_empty()).then_some(&a.input_types))?;
            o.value("subset", a.all_records.then_some(Subset::All))?;
            o.path("output_dir", a.output_dir.as_ref())?;
            o.flag("keep_audio", a.keep_audio)?;
            boxed(build::<EvalObjectiveJob>(file, o, sets)?)
        }
        Command::ExportListening(a) => {
            o.path("manifest", a.manifest.as_ref())?;
            models_override(&mut o, &a.models)?;
            o.value("n_items", a.n_items)?;
            o.value("seed", a.seed)?;
            o.value("subset", a.all_records.then_some(Subset::All))?;
            o.path("output_dir", a.output_dir.as_ref())?;
            boxed(build::<ExportListeningJob>(file, o, sets)?)
        }
        Command::ServeRatings(a) => {
            o.path("bundle_dir", a.bundle.as_ref())?;
            o.path("key", a.key.as_ref())?;
            o.path("store", a.store.as_ref())?;
            o.value("bind", a.bind.as_ref())?;
            o.value("cors_origin", a.cors_origin.as_ref())?;
            boxed(build::<ServeRatingsJob>(file, o, sets)?)
        }
        Command::Aggregate(a) => {
            o.path("ratings", a.ratings.as_ref())?;
            o.path("bundle_dir", a.bundle.as_ref())?;
            o.path("key", a.key.as_ref())?;
            o.path("output", a.output.as_ref())?;
            boxed(build::<AggregateJob>(file, o, sets)?)
        }
        Command::ToyCorpus(a) => {
            o.path("output_dir", a.output_dir.as_ref())?;
            o.path("manifest", a.manifest.as_ref())?;
            o.value("n", a.n)?;
            o.value("stage", a.stage)?;
            o.value("seed", a.seed)?;
            boxed(build::<ToyCorpusJob>(file, o, sets)?)
        }
    })
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn usage(msg: impl Display) -> i32 {
    eprintln!("error: {msg}\n\nRun `sarc-tts --help` for usage.");
    EXIT_USAGE
}

fn read_config(ws: &Workspace, path: &Path) -> Result<String> {
    let p = ws.input(path);
    std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))
}

/// Parses `argv` and runs the subcommand. Returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage or configuration error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let ws = match Workspace::locate(cli.workspace.as_deref()) {
        Ok(ws) => ws,
        Err(e) => return usage(e),
    };
    let prepared = (|| {
        let file = cli.config.as_deref().map(|p| read_config(&ws, p)).transpose()?;
        let sets = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        let mut job = prepare(&cli.command, file.as_deref(), &sets)?;
        job.check()?;
        job.resolve_paths(&ws)?;
        Ok::<_, Error>(job)
    })();
    let job = match prepared {
        Ok(j) => j,
        Err(e) => return usage(e),
    };
    let config = job.config_toml().unwrap_or_else(|e| format!("<unprintable: {e}>"));
    info!("workspace {}", ws.root().display());
    info!("resolved configuration:\n{config}");
    if cli.dry_run {
        println!("# workspace: {}\n{config}", ws.root().display());
        println!("# plan (dry run, nothing written)");
        for step in job.plan() {
            println!("- {step}");
        }
        return EXIT_OK;
    }
    match job.run() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                error!("  caused by: {s}");
                src = s.source();
            }
            EXIT_FAILURE
        }
    }
}

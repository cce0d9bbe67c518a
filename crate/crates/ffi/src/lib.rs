//! C ABI over the sarcasm-aware TTS toolkit.
//!
//! Every fallible call returns a [`SarcStatus`]; on failure a message is
//! available from [`sarc_last_error`] on the same thread. Objects are opaque
//! handles released with their matching `*_free` function. Handles are
//! immutable after load and may be shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use sarcasm_tts::audio::{mel_spectrogram, MelConfig, Waveform};
use sarcasm_tts::detector::{pad_to_min_frames, Detector, DetectorArch, SarcasmLabel, SARCASM_EMBED_DIM};
use sarcasm_tts::synthesis::{Conditioning, Synthesizer, SynthesizerOptions, VocoderRegistry};
use sarcasm_tts::text::{TextEmbedder, TextEmbedding};
use sarcasm_tts::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SarcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Checkpoint = 5,
    Config = 6,
    VocoderMissing = 7,
    ExternalTool = 8,
    Numeric = 9,
    Internal = 10,
    Panic = 11,
}

/// `label` argument of [`sarc_synthesize`].
pub const SARC_LABEL_NONE: i32 = -1;
pub const SARC_LABEL_NEUTRAL: i32 = 0;
pub const SARC_LABEL_SARCASTIC: i32 = 1;

/// A loaded sarcasm detector.
pub struct SarcDetector {
    detector: Detector,
    embedder: TextEmbedder,
}

/// A loaded acoustic model with its vocoder.
pub struct SarcSynthesizer {
    inner: Synthesizer,
}

/// Mono float samples at the pipeline sample rate.
pub struct SarcAudio {
    wave: Waveform,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SarcStatus {
    match e {
        Error::AudioTooShort { .. }
        | Error::EmptyAfterTrim
        | Error::UtteranceTooShort { .. }
        | Error::EmptyExpansion
        | Error::PhonemeOutOfVocab { .. }
        | Error::Shape(_)
        | Error::InvalidInput(_)
        | Error::NoRecords
        | Error::Parse { .. } => SarcStatus::InvalidInput,
        Error::Io(_) | Error::Wav(_) => SarcStatus::Io,
        Error::Checkpoint { .. } => SarcStatus::Checkpoint,
        Error::Config(_) | Error::StageOrder(_) => SarcStatus::Config,
        Error::VocoderMissing(_) => SarcStatus::VocoderMissing,
        Error::ToolNotFound(_) | Error::ToolFailed { .. } => SarcStatus::ExternalTool,
        Error::NonFiniteLoss { .. } | Error::Tensor(_) => SarcStatus::Numeric,
        _ => SarcStatus::Internal,
    }
}

/// Internal failure carrying its status.
struct Fail(SarcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SarcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SarcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SarcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SarcStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SarcStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(SarcStatus::NullPointer, format!("`{name}` is null")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(SarcStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message for the most recent failure on this thread, or null. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn sarc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sarc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length of sarcasm embeddings written by [`sarc_detector_predict_wav`].
#[no_mangle]
pub extern "C" fn sarc_embedding_dim() -> usize {
    SARCASM_EMBED_DIM
}

/// Loads a detector checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sarc_detector_load(dir: *const c_char, out: *mut *mut SarcDetector) -> SarcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let dir = str_arg(dir, "dir")?;
        let detector = Detector::load(Path::new(dir))?;
        let embedder = TextEmbedder::for_encoder_id(detector.encoder_id())?;
        *out = Box::into_raw(Box::new(SarcDetector { detector, embedder }));
        Ok(())
    })
}

/// Releases a detector; null is ignored.
///
/// # Safety
/// `det` must come from [`sarc_detector_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sarc_detector_free(det: *mut SarcDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Scores a WAV file. A null `transcript` runs in speech-only mode.
/// `out_embedding`, if non-null, receives [`sarc_embedding_dim`] floats.
///
/// # Safety
/// Pointers must be valid; `out_embedding` must hold `sarc_embedding_dim()` floats.
#[no_mangle]
pub unsafe extern "C" fn sarc_detector_predict_wav(
    det: *const SarcDetector,
    wav_path: *const c_char,
    transcript: *const c_char,
    out_probability: *mut f32,
    out_embedding: *mut f32,
) -> SarcStatus {
    guard(|| {
        let det = handle(det, "det")?;
        out_ptr(out_probability, "out_probability")?;
        let path = str_arg(wav_path, "wav_path")?;
        let text = match opt_str_arg(transcript, "transcript")? {
            Some(t) => det.embedder.embed_utterance(t)?,
            None => TextEmbedding::zeros(det.detector.encoder_id()),
        };
        let mut wave = Waveform::read_wav(path)?;
        if wave.sample_rate != sarcasm_tts::audio::SAMPLE_RATE {
            wave = sarcasm_tts::audio::resample(&wave, sarcasm_tts::audio::SAMPLE_RATE)?;
        }
        let cfg = det.detector.config();
        let output = match cfg.arch {
            DetectorArch::Proposed => {
                let mel = mel_spectrogram(&wave, &MelConfig::for_bins(cfg.n_mels)?)?;
                det.detector.forward(&pad_to_min_frames(&mel, cfg.min_frames), &text)?
            }
            DetectorArch::Baseline => {
                let v = sarcasm_tts::audio::baseline_audio_vector(&wave)?;
                det.detector.forward_vector(&v.values, &text)?
            }
        };
        *out_probability = output.probability;
        if !out_embedding.is_null() {
            ptr::copy_nonoverlapping(output.embedding.values.as_ptr(), out_embedding, SARCASM_EMBED_DIM);
        }
        Ok(())
    })
}

/// Loads an acoustic-model checkpoint with the built-in vocoder. A non-null
/// `detector_dir` enables reference-audio conditioning.
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sarc_synthesizer_load(
    checkpoint: *const c_char,
    detector_dir: *const c_char,
    out: *mut *mut SarcSynthesizer,
) -> SarcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ckpt = str_arg(checkpoint, "checkpoint")?;
        let opts = SynthesizerOptions {
            detector: opt_str_arg(detector_dir, "detector_dir")?.map(PathBuf::from),
            ..Default::default()
        };
        let inner = Synthesizer::load(Path::new(ckpt), &opts, &VocoderRegistry::default())?;
        *out = Box::into_raw(Box::new(SarcSynthesizer { inner }));
        Ok(())
    })
}

/// Releases a synthesizer; null is ignored.
///
/// # Safety
/// `synth` must come from [`sarc_synthesizer_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sarc_synthesizer_free(synth: *mut SarcSynthesizer) {
    if !synth.is_null() {
        drop(Box::from_raw(synth));
    }
}

/// Synthesises `text`. Conditioning is at most one of `label`
/// (`SARC_LABEL_*`, label-bank lookup) and `reference_wav`; pass
/// `SARC_LABEL_NONE` and null for an unconditioned model. `speaker < 0`
/// means no speaker id.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sarc_synthesize(
    synth: *const SarcSynthesizer,
    text: *const c_char,
    label: i32,
    reference_wav: *const c_char,
    speaker: i32,
    out: *mut *mut SarcAudio,
) -> SarcStatus {
    guard(|| {
        let synth = handle(synth, "synth")?;
        out_ptr(out, "out")?;
        let text = str_arg(text, "text")?;
        let reference = opt_str_arg(reference_wav, "reference_wav")?;
        let label = match label {
            SARC_LABEL_NONE => None,
            SARC_LABEL_NEUTRAL => Some(SarcasmLabel::NonSarcastic),
            SARC_LABEL_SARCASTIC => Some(SarcasmLabel::Sarcastic),
            other => return Err(Fail(SarcStatus::InvalidInput, format!("unknown label {other}"))),
        };
        let cond = match (label, reference) {
            (Some(_), Some(_)) => {
                return Err(Fail(SarcStatus::InvalidInput, "give a label or a reference recording, not both".into()));
            }
            (Some(l), None) => Some(Conditioning::LabelBank(l)),
            (None, Some(r)) => Some(Conditioning::ReferenceAudio(r.into())),
            (None, None) => None,
        };
        let speaker = u32::try_from(speaker).ok();
        let wave = synth.inner.synthesize(text, cond.as_ref(), speaker)?;
        *out = Box::into_raw(Box::new(SarcAudio { wave }));
        Ok(())
    })
}

/// Number of samples.
///
/// # Safety
/// `audio` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sarc_audio_len(audio: *const SarcAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.wave.len())
}

/// Sample rate in Hz (0 for null).
///
/// # Safety
/// `audio` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sarc_audio_sample_rate(audio: *const SarcAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.wave.sample_rate)
}

/// Borrowed sample buffer, valid until the handle is freed.
///
/// # Safety
/// `audio` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sarc_audio_samples(audio: *const SarcAudio) -> *const f32 {
    audio.as_ref().map_or(ptr::null(), |a| a.wave.samples.as_ptr())
}

/// Writes 16-bit PCM WAV.
///
/// # Safety
/// `audio` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sarc_audio_write_wav(audio: *const SarcAudio, path: *const c_char) -> SarcStatus {
    guard(|| {
        let audio = handle(audio, "audio")?;
        let path = str_arg(path, "path")?;
        audio.wave.write_wav(path)?;
        Ok(())
    })
}

/// Releases audio; null is ignored.
///
/// # Safety
/// `audio` must come from [`sarc_synthesize`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sarc_audio_free(audio: *mut SarcAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

//! Deterministic audio frontend: WAV I/O, resampling, silence trimming,
//! log-mel spectrograms, MFCCs, prosodic statistics and the 291-dim
//! baseline audio vector.
//!
//! Every function here is a pure function of `(samples, config)`.

mod prosody;
mod resample;
mod spectral;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use prosody::{f0_contour, frame_log_energy, prosodic_features, ProsodicVector, PROSODIC_DIM};
pub use resample::resample;
pub use spectral::{
    dct_ortho, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, mfcc, stft_magnitude,
    MelSpec,
};
pub(crate) use spectral::{istft, stft_complex};

/// Pipeline sample rate.
pub const SAMPLE_RATE: u32 = 22_050;

/// Mel energies are clamped at this value before the natural log.
pub const MEL_FLOOR: f32 = 1e-5;

/// `ln(MEL_FLOOR)`: the value every entry of a silent log-mel frame takes.
pub fn log_floor() -> f32 {
    MEL_FLOOR.ln()
}

/// Version tag of the feature schema (framing, mel bases, prosodic inventory).
/// Embedded in every cached feature file and checkpoint.
pub const FEATURE_SCHEMA_VERSION: &str = "sarc-features/1";

pub const MFCC_DIM: usize = 128;
pub const BASELINE_MEL_DIM: usize = 128;
pub const BASELINE_AUDIO_DIM: usize = MFCC_DIM + BASELINE_MEL_DIM + PROSODIC_DIM;

/// Mono audio with a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform has no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f32 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (e / self.samples.len() as f64).sqrt() as f32
    }

    /// Scales so the absolute peak equals `target`. Silent input is returned unchanged.
    pub fn peak_normalized(&self, target: f32) -> Self {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        let g = target / peak;
        Self {
            samples: self.samples.iter().map(|s| s * g).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Reads PCM (8/16/24/32-bit) or 32-bit float WAV, downmixing to mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 * scale))
                    .collect::<Result<_, _>>()?
            }
        };
        let samples: Vec<f32> = interleaved
            .chunks(channels)
            .map(|c| c.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit PCM mono. Samples are clipped to [-1, 1].
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

/// Reads only the header of a WAV file and returns `(sample_rate, frames)`.
pub fn wav_info(path: impl AsRef<Path>) -> Result<(u32, u32)> {
    let reader = hound::WavReader::open(path.as_ref())?;
    Ok((reader.spec().sample_rate, reader.duration()))
}

/// Short-time analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            win: 1024,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl StftConfig {
    /// Frame count under center-padded framing.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }
}

/// Log-mel analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
}

impl MelConfig {
    /// 80-bin view predicted by the acoustic model and consumed by the vocoder.
    pub fn tts() -> Self {
        Self {
            stft: StftConfig::default(),
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }

    /// 128-bin full-band view used by the detector and the MFCC path.
    pub fn detector() -> Self {
        Self {
            stft: StftConfig::default(),
            n_mels: 128,
            fmin: 0.0,
            fmax: SAMPLE_RATE as f32 / 2.0,
        }
    }

    /// The standard configuration for a given bin count.
    pub fn for_bins(n_mels: usize) -> Result<Self> {
        match n_mels {
            80 => Ok(Self::tts()),
            128 => Ok(Self::detector()),
            n => Err(Error::InvalidInput(format!(
                "n_mels must be 80 or 128, got {n}"
            ))),
        }
    }
}

/// Resamples to `target_rate`, then strips leading and trailing audio that
/// sits more than `trim_threshold_db` below the loudest frame. Interior
/// samples are never modified.
pub fn resample_and_trim(wave: &Waveform, target_rate: u32, trim_threshold_db: f32) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(Error::InvalidInput("waveform has no samples".into()));
    }
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    let resampled = resample(wave, target_rate)?;
    trim_silence(&resampled, trim_threshold_db)
}

const TRIM_FRAME: usize = 1024;
const TRIM_HOP: usize = 256;

/// Edge silence removal. Frames (1024 samples, hop 256) whose RMS is below
/// `peak_frame_rms - threshold_db` are silent; the coarse voiced span is then
/// refined to the first/last sample whose magnitude reaches the same level.
pub fn trim_silence(wave: &Waveform, threshold_db: f32) -> Result<Waveform> {
    let x = &wave.samples;
    let n = x.len();
    let frame = TRIM_FRAME.min(n);
    let starts: Vec<usize> = if n <= frame {
        vec![0]
    } else {
        (0..=(n - frame) / TRIM_HOP).map(|i| i * TRIM_HOP).collect()
    };
    let rms: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let seg = &x[s..(s + frame).min(n)];
            (seg.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / seg.len() as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::EmptyAfterTrim);
    }
    let level = peak * 10f64.powf(-(threshold_db as f64) / 20.0);
    let first = rms.iter().position(|&r| r >= level).ok_or(Error::EmptyAfterTrim)?;
    let last = rms.iter().rposition(|&r| r >= level).ok_or(Error::EmptyAfterTrim)?;
    let coarse_start = starts[first];
    let coarse_end = (starts[last] + frame).min(n);
    let start = (coarse_start..coarse_end)
        .find(|&i| x[i].abs() as f64 >= level)
        .ok_or(Error::EmptyAfterTrim)?;
    let end = (start..coarse_end)
        .rev()
        .find(|&i| x[i].abs() as f64 >= level)
        .map(|i| i + 1)
        .ok_or(Error::EmptyAfterTrim)?;
    Waveform::new(x[start..end].to_vec(), wave.sample_rate)
}

/// The 291-dim utterance vector: `[mean MFCC (128) | mean 128-bin log-mel | prosodic (35)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineAudioVector {
    pub values: Vec<f32>,
}

impl BaselineAudioVector {
    pub fn mfcc_part(&self) -> &[f32] {
        &self.values[..MFCC_DIM]
    }

    pub fn mel_part(&self) -> &[f32] {
        &self.values[MFCC_DIM..MFCC_DIM + BASELINE_MEL_DIM]
    }

    pub fn prosodic_part(&self) -> &[f32] {
        &self.values[MFCC_DIM + BASELINE_MEL_DIM..]
    }
}

pub fn baseline_audio_vector(wave: &Waveform) -> Result<BaselineAudioVector> {
    let cfg = MelConfig::detector();
    let mel = mel_spectrogram(wave, &cfg)?;
    let cepstra = spectral::mfcc_from_mel(&mel, MFCC_DIM)?;
    let mut values = Vec::with_capacity(BASELINE_AUDIO_DIM);
    values.extend(time_average(&cepstra, MFCC_DIM));
    values.extend(time_average(&mel.data, mel.n_mels));
    values.extend(prosodic_features(wave).values);
    debug_assert_eq!(values.len(), BASELINE_AUDIO_DIM);
    Ok(BaselineAudioVector { values })
}

/// Column means of a row-major `rows × width` matrix.
pub fn time_average(data: &[f32], width: usize) -> Vec<f32> {
    let rows = data.len() / width;
    let mut acc = vec![0f64; width];
    for row in data.chunks(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|a| (a / rows.max(1) as f64) as f32).collect()
}

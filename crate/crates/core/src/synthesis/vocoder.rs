//! Mel → waveform adapters and the backend registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex32;

use crate::audio::{istft, mel_filterbank, stft_complex, MelConfig, MelSpec, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub trait Vocoder: Send + Sync {
    fn backend_id(&self) -> &str;

    fn mel_bins(&self) -> usize {
        80
    }

    fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    /// Bound on `|output length − n_frames · hop|` in samples.
    fn padding_slack(&self) -> usize;

    fn vocode(&self, mel: &MelSpec) -> Result<Waveform>;
}

/// Validates bins and rates around a backend call.
pub fn mel_to_wave(mel: &MelSpec, vocoder: &dyn Vocoder) -> Result<Waveform> {
    if mel.n_mels != vocoder.mel_bins() {
        return Err(Error::Shape(format!(
            "vocoder `{}` expects {} mel bins, got {}",
            vocoder.backend_id(),
            vocoder.mel_bins(),
            mel.n_mels
        )));
    }
    if vocoder.sample_rate() != SAMPLE_RATE || mel.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "vocoder `{}` runs at {} Hz, mel at {} Hz, pipeline at {SAMPLE_RATE} Hz",
            vocoder.backend_id(),
            vocoder.sample_rate(),
            mel.sample_rate
        )));
    }
    let wave = vocoder.vocode(mel)?;
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "vocoder `{}` produced {} Hz audio",
            vocoder.backend_id(),
            wave.sample_rate
        )));
    }
    Ok(wave)
}

/// Phase reconstruction (fast Griffin-Lim) from a non-negative least-squares
/// inversion of the mel filterbank. Needs no trained weights. Output length
/// is `(n_frames − 1) · hop`.
#[derive(Debug, Clone)]
pub struct GriffinLim {
    pub iterations: usize,
    pub momentum: f32,
    /// Multiplicative-update sweeps for the filterbank inversion.
    pub nnls_iterations: usize,
    config: MelConfig,
    filterbank: Vec<f32>,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self::new(MelConfig::tts())
    }
}

impl GriffinLim {
    pub fn new(config: MelConfig) -> Self {
        Self {
            iterations: 32,
            momentum: 0.99,
            nnls_iterations: 40,
            filterbank: mel_filterbank(&config),
            config,
        }
    }

    /// Linear magnitudes `n_frames × (n_fft/2+1)` whose mel projection best
    /// matches `exp(mel)`.
    fn magnitudes(&self, mel: &MelSpec) -> Vec<Vec<f32>> {
        let n_bins = self.config.stft.n_fft / 2 + 1;
        let n_mels = self.config.n_mels;
        let fb = &self.filterbank;
        mel.frames()
            .map(|frame| {
                let target: Vec<f32> = frame.iter().map(|v| v.exp()).collect();
                // fbᵀ·target as the starting point and numerator
                let mut numer = vec![0f32; n_bins];
                for (m, &e) in target.iter().enumerate() {
                    for (k, n) in numer.iter_mut().enumerate() {
                        *n += fb[m * n_bins + k] * e;
                    }
                }
                let mut x: Vec<f32> = numer.iter().map(|&v| v.max(0.0)).collect();
                let mut proj = vec![0f32; n_mels];
                for _ in 0..self.nnls_iterations {
                    for (m, p) in proj.iter_mut().enumerate() {
                        *p = fb[m * n_bins..(m + 1) * n_bins].iter().zip(&x).map(|(w, v)| w * v).sum();
                    }
                    for (k, xk) in x.iter_mut().enumerate() {
                        if *xk <= 0.0 {
                            continue;
                        }
                        let denom: f32 = (0..n_mels).map(|m| fb[m * n_bins + k] * proj[m]).sum();
                        *xk *= numer[k] / (denom + 1e-12);
                    }
                }
                x
            })
            .collect()
    }
}

impl Vocoder for GriffinLim {
    fn backend_id(&self) -> &str {
        "griffin-lim"
    }

    fn mel_bins(&self) -> usize {
        self.config.n_mels
    }

    fn padding_slack(&self) -> usize {
        self.config.stft.hop
    }

    fn vocode(&self, mel: &MelSpec) -> Result<Waveform> {
        let stft = self.config.stft;
        let mags = self.magnitudes(mel);
        let mut spec: Vec<Vec<Complex32>> = mags
            .iter()
            .map(|row| row.iter().map(|&m| Complex32::new(m, 0.0)).collect())
            .collect();
        let mut prev = spec.clone();
        let mut y = istft(&spec, &stft);
        for _ in 0..self.iterations {
            if y.is_empty() {
                break;
            }
            let rebuilt = stft_complex(&y, &stft);
            for (t, row) in spec.iter_mut().enumerate() {
                for (k, c) in row.iter_mut().enumerate() {
                    let r = rebuilt.get(t).map(|f| f[k]).unwrap_or_default();
                    let accel = r + (r - prev[t][k]) * self.momentum;
                    prev[t][k] = r;
                    let norm = accel.norm();
                    let phase = if norm > 1e-12 { accel / norm } else { Complex32::new(1.0, 0.0) };
                    *c = phase * mags[t][k];
                }
            }
            y = istft(&spec, &stft);
        }
        Waveform::new(y, stft.sample_rate)
    }
}

type Factory = Box<dyn Fn() -> Result<Arc<dyn Vocoder>> + Send + Sync>;

/// Named vocoder backends. Only `griffin-lim` ships; neural backends are
/// registered by the embedding application.
pub struct VocoderRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for VocoderRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("griffin-lim", || Ok(Arc::new(GriffinLim::default()) as Arc<dyn Vocoder>));
        r
    }
}

impl VocoderRegistry {
    pub fn register(&mut self, name: &str, factory: impl Fn() -> Result<Arc<dyn Vocoder>> + Send + Sync + 'static) {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn Vocoder>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::VocoderMissing(name.to_string()))?;
        let v = f()?;
        if v.mel_bins() != 80 || v.sample_rate() != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "vocoder `{name}` declares {} bins at {} Hz; the pipeline needs 80 bins at {SAMPLE_RATE} Hz",
                v.mel_bins(),
                v.sample_rate()
            )));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{log_floor, mel_spectrogram, StftConfig};

    fn speech_like(n: usize) -> Waveform {
        let sr = SAMPLE_RATE as f32;
        let samples = (0..n)
            .map(|i| {
                let t = i as f32 / sr;
                let f0 = 140.0 + 30.0 * (2.0 * std::f32::consts::PI * 2.0 * t).sin();
                let phase = 2.0 * std::f32::consts::PI * f0 * t;
                let env = 0.5 + 0.5 * (2.0 * std::f32::consts::PI * 3.0 * t).sin().abs();
                env * (0.4 * phase.sin() + 0.2 * (2.0 * phase).sin() + 0.1 * (5.0 * phase).sin() + 0.05 * (11.0 * phase).sin())
            })
            .collect();
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn pearson(a: &[f32], b: &[f32]) -> f32 {
        let ma = a.iter().sum::<f32>() / a.len() as f32;
        let mb = b.iter().sum::<f32>() / b.len() as f32;
        let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            da += (x - ma).powi(2);
            db += (y - mb).powi(2);
        }
        num / (da.sqrt() * db.sqrt()).max(1e-12)
    }

    #[test]
    fn hop_arithmetic_and_silence() {
        let gl = GriffinLim::default();
        let mel = MelSpec::silent(87, 80, &StftConfig::default());
        let wave = mel_to_wave(&mel, &gl).unwrap();
        assert!((wave.len() as i64 - 87 * 256).unsigned_abs() as usize <= 1024);
        assert!(wave.rms() < 1e-3);
        assert_eq!(wave.sample_rate, SAMPLE_RATE);
    }

    #[test]
    fn round_trip_preserves_spectral_shape() {
        let mel = mel_spectrogram(&speech_like(22050), &MelConfig::tts()).unwrap();
        let wave = mel_to_wave(&mel, &GriffinLim::default()).unwrap();
        let back = mel_spectrogram(&wave, &MelConfig::tts()).unwrap();
        assert_eq!(back.n_frames, mel.n_frames);
        // frame-wise correlation of mean-removed log-mels, skipping edge frames
        let n = mel.n_frames;
        let mean: f32 = (2..n - 2).map(|t| pearson(mel.frame(t), back.frame(t))).sum::<f32>() / (n - 4) as f32;
        assert!(mean > 0.8, "mean frame correlation {mean}");
    }

    #[test]
    fn bin_mismatch_and_missing_backend() {
        let mel = MelSpec::new(vec![log_floor(); 20 * 128], 20, 128, &StftConfig::default()).unwrap();
        assert!(matches!(mel_to_wave(&mel, &GriffinLim::default()), Err(Error::Shape(_))));
        let reg = VocoderRegistry::default();
        match reg.create("hifigan") {
            Err(Error::VocoderMissing(name)) => assert_eq!(name, "hifigan"),
            other => panic!("unexpected {:?}", other.map(|v| v.backend_id().to_string())),
        }
        assert_eq!(reg.names(), ["griffin-lim"]);
    }

    #[test]
    fn deterministic() {
        let mel = mel_spectrogram(&speech_like(6000), &MelConfig::tts()).unwrap();
        let gl = GriffinLim::default();
        assert_eq!(gl.vocode(&mel).unwrap(), gl.vocode(&mel).unwrap());
    }
}

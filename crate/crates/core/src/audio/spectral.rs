//! STFT, Slaney mel filterbank, log-mel spectrogram and MFCC.

use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::{log_floor, MelConfig, StftConfig, Waveform, MEL_FLOOR};
use crate::error::{Error, Result};

/// Log-mel spectrogram, stored row-major as `n_frames × n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub data: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop_length: usize,
    pub win_length: usize,
    pub sample_rate: u32,
}

impl MelSpec {
    pub fn new(data: Vec<f32>, n_frames: usize, n_mels: usize, stft: &StftConfig) -> Result<Self> {
        if n_frames == 0 || data.len() != n_frames * n_mels {
            return Err(Error::Shape(format!(
                "mel data of length {} cannot be viewed as {n_frames}×{n_mels}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            n_mels,
            hop_length: stft.hop,
            win_length: stft.win,
            sample_rate: stft.sample_rate,
        })
    }

    /// A mel where every entry equals the log floor.
    pub fn silent(n_frames: usize, n_mels: usize, stft: &StftConfig) -> Self {
        Self::new(vec![log_floor(); n_frames * n_mels], n_frames, n_mels, stft)
            .expect("consistent shape")
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.n_mels)
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            n_fft: self.win_length.max(self.hop_length),
            hop: self.hop_length,
            win: self.win_length,
            sample_rate: self.sample_rate,
        }
    }

    pub fn to_tensor(&self, device: &candle_core::Device, dtype: candle_core::DType) -> Result<candle_core::Tensor> {
        Ok(candle_core::Tensor::from_slice(&self.data, (self.n_frames, self.n_mels), device)?
            .to_dtype(dtype)?)
    }

    pub fn from_tensor(t: &candle_core::Tensor, stft: &StftConfig) -> Result<Self> {
        let (n_frames, n_mels) = t.dims2()?;
        let data = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new(data, n_frames, n_mels, stft)
    }
}

pub fn hz_to_mel(hz: f32) -> f32 {
    // Slaney: linear below 1 kHz, logarithmic above
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f32).ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f32) -> f32 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f32).ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Slaney-normalised triangular filterbank, `n_mels × (n_fft/2 + 1)` row-major.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<f32> {
    let n_bins = cfg.stft.n_fft / 2 + 1;
    let sr = cfg.stft.sample_rate as f32;
    let mel_min = hz_to_mel(cfg.fmin);
    let mel_max = hz_to_mel(cfg.fmax);
    let points: Vec<f32> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f32 / (cfg.n_mels + 1) as f32))
        .collect();
    let fft_freqs: Vec<f32> = (0..n_bins).map(|k| k as f32 * sr / cfg.stft.n_fft as f32).collect();
    let mut fb = vec![0f32; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let up = (f - lo) / (centre - lo);
            let down = (hi - f) / (hi - centre);
            let w = up.min(down).max(0.0);
            fb[m * n_bins + k] = w * enorm;
        }
    }
    fb
}

struct Stft {
    cfg: StftConfig,
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl Stft {
    fn new(cfg: &StftConfig) -> Self {
        // periodic Hann of length `win`, centred inside n_fft
        let mut window = vec![0f32; cfg.n_fft];
        let off = (cfg.n_fft - cfg.win) / 2;
        for i in 0..cfg.win {
            window[off + i] =
                0.5 - 0.5 * (2.0 * std::f32::consts::PI * i as f32 / cfg.win as f32).cos();
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            cfg: *cfg,
            window,
            fft,
        }
    }

    /// Reflect-padded, centred complex STFT: `n_frames × (n_fft/2+1)`.
    fn complex(&self, x: &[f32]) -> Vec<Vec<Complex32>> {
        let n_fft = self.cfg.n_fft;
        let pad = n_fft / 2;
        let n = x.len();
        let reflect = |i: isize| -> f32 {
            // numpy "reflect" (edge sample not repeated)
            let mut i = i;
            let last = n as isize - 1;
            if last == 0 {
                return x[0];
            }
            loop {
                if i < 0 {
                    i = -i;
                } else if i > last {
                    i = 2 * last - i;
                } else {
                    return x[i as usize];
                }
            }
        };
        let n_frames = self.cfg.n_frames(n);
        let n_bins = n_fft / 2 + 1;
        let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let start = (t * self.cfg.hop) as isize - pad as isize;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = Complex32::new(reflect(start + j as isize) * self.window[j], 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..n_bins].to_vec());
        }
        out
    }
}

fn check_length(n: usize, cfg: &StftConfig) -> Result<()> {
    if n < cfg.win {
        return Err(Error::AudioTooShort {
            samples: n,
            min: cfg.win,
        });
    }
    Ok(())
}

/// Magnitude spectrogram `n_frames × (n_fft/2+1)`.
pub fn stft_magnitude(wave: &Waveform, cfg: &StftConfig) -> Result<Vec<Vec<f32>>> {
    check_length(wave.len(), cfg)?;
    Ok(Stft::new(cfg)
        .complex(&wave.samples)
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.norm()).collect())
        .collect())
}

/// Complex STFT used by the phase-reconstruction vocoder.
pub(crate) fn stft_complex(samples: &[f32], cfg: &StftConfig) -> Vec<Vec<Complex32>> {
    Stft::new(cfg).complex(samples)
}

/// Inverse of [`stft_complex`] by weighted overlap-add; returns
/// `(n_frames - 1) * hop` samples.
pub(crate) fn istft(frames: &[Vec<Complex32>], cfg: &StftConfig) -> Vec<f32> {
    let n_fft = cfg.n_fft;
    let stft = Stft::new(cfg);
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let pad = n_fft / 2;
    let n_frames = frames.len();
    let total = n_fft + cfg.hop * n_frames.saturating_sub(1);
    let mut y = vec![0f32; total];
    let mut wsum = vec![0f32; total];
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    for (t, frame) in frames.iter().enumerate() {
        for k in 0..n_fft {
            buf[k] = if k <= n_fft / 2 {
                frame[k]
            } else {
                frame[n_fft - k].conj()
            };
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for j in 0..n_fft {
            let w = stft.window[j];
            y[start + j] += buf[j].re / n_fft as f32 * w;
            wsum[start + j] += w * w;
        }
    }
    let out_len = cfg.hop * n_frames.saturating_sub(1);
    (0..out_len)
        .map(|i| {
            let w = wsum[i + pad];
            if w > 1e-8 {
                y[i + pad] / w
            } else {
                0.0
            }
        })
        .collect()
}

/// Log-mel spectrogram with center-padded framing:
/// `n_frames = 1 + floor(len / hop)`, entries `ln(max(mel, 1e-5))`.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpec> {
    if wave.sample_rate != cfg.stft.sample_rate {
        return Err(Error::InvalidInput(format!(
            "waveform rate {} differs from configured rate {}",
            wave.sample_rate, cfg.stft.sample_rate
        )));
    }
    let mag = stft_magnitude(wave, &cfg.stft)?;
    Ok(mel_from_magnitude(&mag, cfg))
}

pub(crate) fn mel_from_magnitude(mag: &[Vec<f32>], cfg: &MelConfig) -> MelSpec {
    let fb = mel_filterbank(cfg);
    let n_bins = cfg.stft.n_fft / 2 + 1;
    let mut data = Vec::with_capacity(mag.len() * cfg.n_mels);
    for row in mag {
        for m in 0..cfg.n_mels {
            let filt = &fb[m * n_bins..(m + 1) * n_bins];
            let e: f32 = filt.iter().zip(row).map(|(w, v)| w * v).sum();
            data.push(e.max(MEL_FLOOR).ln());
        }
    }
    MelSpec::new(data, mag.len(), cfg.n_mels, &cfg.stft).expect("consistent shape")
}

/// Orthonormal DCT-II of `x`, first `n_out` coefficients.
pub fn dct_ortho(x: &[f32], n_out: usize) -> Vec<f32> {
    let n = x.len();
    let pi = std::f64::consts::PI;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v as f64 * (pi * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .sum();
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (s * scale) as f32
        })
        .collect()
}

pub(crate) fn mfcc_from_mel(mel: &MelSpec, n_coeff: usize) -> Result<Vec<f32>> {
    if n_coeff > mel.n_mels {
        return Err(Error::InvalidInput(format!(
            "{n_coeff} cepstral coefficients requested from {} mel filters",
            mel.n_mels
        )));
    }
    // DCT basis computed once per call
    let n = mel.n_mels;
    let pi = std::f64::consts::PI;
    let basis: Vec<f64> = (0..n_coeff)
        .flat_map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n).map(move |i| scale * (pi * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
        })
        .collect();
    let mut out = Vec::with_capacity(mel.n_frames * n_coeff);
    for frame in mel.frames() {
        for k in 0..n_coeff {
            let row = &basis[k * n..(k + 1) * n];
            out.push(row.iter().zip(frame).map(|(b, &v)| b * v as f64).sum::<f64>() as f32);
        }
    }
    Ok(out)
}

/// MFCCs from the 128-filter full-band mel basis: `n_frames × n_coeff`, row-major.
pub fn mfcc(wave: &Waveform, n_coeff: usize) -> Result<(Vec<f32>, usize)> {
    let mel = mel_spectrogram(wave, &MelConfig::detector())?;
    let c = mfcc_from_mel(&mel, n_coeff)?;
    Ok((c, mel.n_frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn wave(samples: Vec<f32>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn one_second_gives_87_frames() {
        let w = wave(vec![0.1; 22_050]);
        assert_eq!(mel_spectrogram(&w, &MelConfig::tts()).unwrap().n_frames, 87);
        assert_eq!(mel_spectrogram(&w, &MelConfig::detector()).unwrap().n_frames, 87);
        let (c, t) = mfcc(&w, 128).unwrap();
        assert_eq!((t, c.len()), (87, 87 * 128));
    }

    #[test]
    fn silence_is_log_floor_everywhere() {
        let mel = mel_spectrogram(&wave(vec![0.0; 4096]), &MelConfig::tts()).unwrap();
        assert!(mel.data.iter().all(|&v| v == log_floor()));
    }

    #[test]
    fn short_audio_rejected() {
        let err = mel_spectrogram(&wave(vec![0.0; 1000]), &MelConfig::tts()).unwrap_err();
        assert!(matches!(err, Error::AudioTooShort { .. }));
    }

    #[test]
    fn tone_peaks_in_nearest_bin() {
        // oracle: bin centres straight from the Slaney formulas
        fn mel(hz: f64) -> f64 {
            if hz >= 1000.0 {
                15.0 + (hz / 1000.0).ln() / ((6.4f64).ln() / 27.0)
            } else {
                hz * 3.0 / 200.0
            }
        }
        fn hz(m: f64) -> f64 {
            if m >= 15.0 {
                1000.0 * (((6.4f64).ln() / 27.0) * (m - 15.0)).exp()
            } else {
                m * 200.0 / 3.0
            }
        }
        for cfg in [MelConfig::tts(), MelConfig::detector()] {
            let x: Vec<f32> = (0..22_050)
                .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 22_050.0).sin() as f32 * 0.5)
                .collect();
            let spec = mel_spectrogram(&wave(x), &cfg).unwrap();
            let avg = crate::audio::time_average(&spec.data, spec.n_mels);
            let argmax = avg
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let (lo, hi) = (mel(cfg.fmin as f64), mel(cfg.fmax as f64));
            let centres: Vec<f64> = (1..=cfg.n_mels)
                .map(|i| hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
                .collect();
            let nearest = centres
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - 440.0).abs().partial_cmp(&(b.1 - 440.0).abs()).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, nearest, "n_mels {}", cfg.n_mels);
        }
    }

    #[test]
    fn silence_mfcc_is_dct_of_constant() {
        let (c, t) = mfcc(&wave(vec![0.0; 4096]), 128).unwrap();
        let c0 = log_floor() * (128f32).sqrt();
        for f in 0..t {
            let row = &c[f * 128..(f + 1) * 128];
            assert!((row[0] - c0).abs() < 1e-3);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-3));
        }
    }

    #[test]
    fn white_noise_mfcc_higher_coefficients_small() {
        use rand::{Rng, SeedableRng};
        // statistical oracle: over 20 draws, the time-averaged higher
        // coefficients stay within 3σ of zero relative to |c0|
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f32> = (0..22_050).map(|_| rng.random_range(-0.5f32..0.5)).collect();
            let (c, t) = mfcc(&wave(x), 128).unwrap();
            let avg = crate::audio::time_average(&c, 128);
            let _ = t;
            let c0 = avg[0].abs();
            let hi = avg[1..].iter().map(|v| v.abs()).fold(0.0f32, f32::max);
            ratios.push(hi / c0);
        }
        let mean = ratios.iter().sum::<f32>() / ratios.len() as f32;
        let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f32>() / ratios.len() as f32).sqrt();
        assert!(mean + 3.0 * sd < 0.25, "mean {mean} sd {sd}");
    }

    #[test]
    fn istft_inverts_stft() {
        let cfg = StftConfig::default();
        let x: Vec<f32> = (0..8192).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect();
        let spec = stft_complex(&x, &cfg);
        let y = istft(&spec, &cfg);
        assert_eq!(y.len(), (spec.len() - 1) * cfg.hop);
        for i in 0..y.len() {
            assert!((y[i] - x[i]).abs() < 1e-4, "{i}");
        }
    }
}

//! Frame-level F0 / energy tracks and the 35-entry prosodic statistics vector.
//!
//! Inventory (index order):
//!
//! | range  | entries |
//! |--------|---------|
//! | 0..7   | F0 mean, std, min, max, range, median, slope (Hz, Hz/s; voiced frames only) |
//! | 7..14  | log-energy mean, std, min, max, range, median, slope |
//! | 14     | voicing ratio |
//! | 15..18 | interior pause count, mean pause duration (s), voiced onsets per second |
//! | 18..23 | F0 delta mean, std, min, max, mean-abs |
//! | 23..28 | log-energy delta mean, std, min, max, mean-abs |
//! | 28..32 | jitter (local), period perturbation (std/mean), shimmer (local), shimmer (dB) |
//! | 32..35 | spectral centroid mean, centroid std (Hz), zero-crossing-rate mean |
//!
//! All-unvoiced input yields zeros for every F0-derived entry.

use super::{StftConfig, Waveform, MEL_FLOOR};

pub const PROSODIC_DIM: usize = 35;

const F0_MIN: f32 = 50.0;
const F0_MAX: f32 = 600.0;
const VOICING_THRESHOLD: f32 = 0.5;
/// Frames quieter than this (relative to the loudest frame) are never voiced.
const SILENCE_DB: f32 = 40.0;
const MIN_PAUSE_SECS: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ProsodicVector {
    pub values: Vec<f32>,
}

fn frame_at(x: &[f32], centre: usize, len: usize) -> Vec<f32> {
    // zero-padded frame centred on `centre`
    let half = len / 2;
    (0..len)
        .map(|j| {
            let i = centre as isize - half as isize + j as isize;
            if i >= 0 && (i as usize) < x.len() {
                x[i as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn frame_rms(frame: &[f32]) -> f32 {
    (frame.iter().map(|v| v * v).sum::<f32>() / frame.len() as f32).sqrt()
}

/// Natural log of per-frame RMS (clamped at the mel floor), using the
/// mel framing so the track aligns with spectrogram frames.
pub fn frame_log_energy(wave: &Waveform, cfg: &StftConfig) -> Vec<f32> {
    let n_frames = cfg.n_frames(wave.len());
    (0..n_frames)
        .map(|t| frame_rms(&frame_at(&wave.samples, t * cfg.hop, cfg.win)).max(MEL_FLOOR).ln())
        .collect()
}

/// Autocorrelation pitch track aligned with mel frames; unvoiced frames are `None`.
pub fn f0_contour(wave: &Waveform, cfg: &StftConfig) -> Vec<Option<f32>> {
    let sr = wave.sample_rate as f32;
    let n_frames = cfg.n_frames(wave.len());
    let frames: Vec<Vec<f32>> = (0..n_frames)
        .map(|t| frame_at(&wave.samples, t * cfg.hop, cfg.win))
        .collect();
    let rms: Vec<f32> = frames.iter().map(|f| frame_rms(f)).collect();
    let peak = rms.iter().cloned().fold(0.0f32, f32::max);
    let gate = (peak * 10f32.powf(-SILENCE_DB / 20.0)).max(1e-4);
    let min_lag = (sr / F0_MAX).floor().max(1.0) as usize;
    let max_lag = (sr / F0_MIN).ceil() as usize;
    frames
        .iter()
        .zip(&rms)
        .map(|(frame, &r)| {
            if r < gate {
                return None;
            }
            pitch_of_frame(frame, min_lag, max_lag.min(frame.len() / 2), sr)
        })
        .collect()
}

fn pitch_of_frame(x: &[f32], min_lag: usize, max_lag: usize, sr: f32) -> Option<f32> {
    if max_lag <= min_lag + 2 {
        return None;
    }
    let mean = x.iter().sum::<f32>() / x.len() as f32;
    let x: Vec<f64> = x.iter().map(|&v| (v - mean) as f64).collect();
    let n = x.len();
    let nacf = |lag: usize| -> f64 {
        let (mut num, mut e0, mut e1) = (0.0, 0.0, 0.0);
        for i in 0..n - lag {
            num += x[i] * x[i + lag];
            e0 += x[i] * x[i];
            e1 += x[i + lag] * x[i + lag];
        }
        let den = (e0 * e1).sqrt();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(nacf).collect();
    let at = |lag: usize| r[lag + 1 - min_lag];
    let best = (min_lag..=max_lag).map(at).fold(f64::MIN, f64::max);
    if best < VOICING_THRESHOLD as f64 {
        return None;
    }
    // earliest local peak close to the global maximum avoids sub-octave picks
    let lag = (min_lag..=max_lag).find(|&l| {
        let v = at(l);
        v >= 0.9 * best && v >= at(l - 1) && v >= at(l + 1)
    })?;
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(sr / (lag as f64 + shift) as f32)
}

struct Summary {
    mean: f32,
    std: f32,
    min: f32,
    max: f32,
    median: f32,
}

fn summarize(v: &[f32]) -> Option<Summary> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Some(Summary {
        mean: mean as f32,
        std: var.sqrt() as f32,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median,
    })
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f32], ys: &[f32]) -> f32 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = ys.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        num += (x as f64 - mx) * (y as f64 - my);
        den += (x as f64 - mx).powi(2);
    }
    if den > 0.0 {
        (num / den) as f32
    } else {
        0.0
    }
}

fn seven(values: &[f32], times: &[f32], fallback: f32) -> [f32; 7] {
    match summarize(values) {
        Some(s) => [s.mean, s.std, s.min, s.max, s.max - s.min, s.median, slope(times, values)],
        None => [fallback, 0.0, fallback, fallback, 0.0, fallback, 0.0],
    }
}

fn delta_five(deltas: &[f32]) -> [f32; 5] {
    match summarize(deltas) {
        Some(s) => {
            let mean_abs = deltas.iter().map(|d| d.abs()).sum::<f32>() / deltas.len() as f32;
            [s.mean, s.std, s.min, s.max, mean_abs]
        }
        None => [0.0; 5],
    }
}

pub fn prosodic_features(wave: &Waveform) -> ProsodicVector {
    let cfg = StftConfig {
        sample_rate: wave.sample_rate,
        ..StftConfig::default()
    };
    let frame_secs = cfg.hop as f32 / wave.sample_rate as f32;
    let f0 = f0_contour(wave, &cfg);
    let log_e = frame_log_energy(wave, &cfg);
    let n_frames = f0.len();
    let times: Vec<f32> = (0..n_frames).map(|t| t as f32 * frame_secs).collect();

    let mut out = Vec::with_capacity(PROSODIC_DIM);

    let (voiced_t, voiced_f0): (Vec<f32>, Vec<f32>) = f0
        .iter()
        .enumerate()
        .filter_map(|(t, f)| f.map(|f| (times[t], f)))
        .unzip();
    out.extend(seven(&voiced_f0, &voiced_t, 0.0));
    out.extend(seven(&log_e, &times, MEL_FLOOR.ln()));

    let voiced_count = voiced_f0.len();
    out.push(voiced_count as f32 / n_frames.max(1) as f32);

    // pauses: interior runs of quiet frames at least MIN_PAUSE_SECS long
    let peak_e = log_e.iter().cloned().fold(f32::MIN, f32::max);
    let quiet_level = peak_e - SILENCE_DB / 20.0 * std::f32::consts::LN_10;
    let speech: Vec<bool> = log_e
        .iter()
        .map(|&e| e > quiet_level && e > MEL_FLOOR.ln())
        .collect();
    let first_speech = speech.iter().position(|&s| s);
    let last_speech = speech.iter().rposition(|&s| s);
    let mut pauses = Vec::new();
    if let (Some(a), Some(b)) = (first_speech, last_speech) {
        let mut run = 0usize;
        for &s in &speech[a..=b] {
            if s {
                if run as f32 * frame_secs >= MIN_PAUSE_SECS {
                    pauses.push(run as f32 * frame_secs);
                }
                run = 0;
            } else {
                run += 1;
            }
        }
    }
    out.push(pauses.len() as f32);
    out.push(if pauses.is_empty() {
        0.0
    } else {
        pauses.iter().sum::<f32>() / pauses.len() as f32
    });
    let onsets = (0..n_frames)
        .filter(|&t| f0[t].is_some() && (t == 0 || f0[t - 1].is_none()))
        .count();
    out.push(onsets as f32 / wave.duration_secs().max(1e-6) as f32);

    // deltas between consecutive voiced frames
    let f0_deltas: Vec<f32> = (1..n_frames)
        .filter_map(|t| match (f0[t - 1], f0[t]) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        })
        .collect();
    out.extend(delta_five(&f0_deltas));
    let e_deltas: Vec<f32> = log_e.windows(2).map(|w| w[1] - w[0]).collect();
    out.extend(delta_five(&e_deltas));

    // jitter / shimmer proxies over consecutive voiced frame pairs
    let amps: Vec<f32> = log_e.iter().map(|e| e.exp()).collect();
    let mut period_diffs = Vec::new();
    let mut amp_diffs = Vec::new();
    let mut amp_db = Vec::new();
    for t in 1..n_frames {
        if let (Some(a), Some(b)) = (f0[t - 1], f0[t]) {
            period_diffs.push((1.0 / a - 1.0 / b).abs());
            amp_diffs.push((amps[t] - amps[t - 1]).abs());
            amp_db.push((20.0 * (amps[t] / amps[t - 1]).log10()).abs());
        }
    }
    let periods: Vec<f32> = voiced_f0.iter().map(|f| 1.0 / f).collect();
    let voiced_amps: Vec<f32> = (0..n_frames).filter(|&t| f0[t].is_some()).map(|t| amps[t]).collect();
    let mean_of = |v: &[f32]| if v.is_empty() { 0.0 } else { v.iter().sum::<f32>() / v.len() as f32 };
    let mean_period = mean_of(&periods);
    let mean_amp = mean_of(&voiced_amps);
    out.push(if mean_period > 0.0 { mean_of(&period_diffs) / mean_period } else { 0.0 });
    out.push(match summarize(&periods) {
        Some(s) if s.mean > 0.0 => s.std / s.mean,
        _ => 0.0,
    });
    out.push(if mean_amp > 0.0 { mean_of(&amp_diffs) / mean_amp } else { 0.0 });
    out.push(mean_of(&amp_db));

    // spectral centroid over non-silent frames, zero-crossing rate over all frames
    let mags = if wave.len() >= cfg.win {
        super::stft_magnitude(wave, &cfg).unwrap_or_default()
    } else {
        Vec::new()
    };
    let bin_hz = wave.sample_rate as f32 / cfg.n_fft as f32;
    let centroids: Vec<f32> = mags
        .iter()
        .filter_map(|row| {
            let total: f32 = row.iter().sum();
            if total > 1e-6 {
                Some(row.iter().enumerate().map(|(k, m)| k as f32 * bin_hz * m).sum::<f32>() / total)
            } else {
                None
            }
        })
        .collect();
    match summarize(&centroids) {
        Some(s) => {
            out.push(s.mean);
            out.push(s.std);
        }
        None => out.extend([0.0, 0.0]),
    }
    let zcr: Vec<f32> = (0..n_frames)
        .map(|t| {
            let f = frame_at(&wave.samples, t * cfg.hop, cfg.win);
            f.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count() as f32 / (f.len() - 1) as f32
        })
        .collect();
    out.push(mean_of(&zcr));

    debug_assert_eq!(out.len(), PROSODIC_DIM);
    for v in out.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    ProsodicVector { values: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    /// Glottal pulse train through two damped resonators.
    fn synthetic_vowel(f0: f32, secs: f32) -> Waveform {
        let sr = SAMPLE_RATE as f32;
        let n = (secs * sr) as usize;
        let period = sr / f0;
        let mut src = vec![0f32; n];
        let mut next = 0.0f32;
        while (next as usize) < n {
            src[next as usize] = 1.0;
            next += period;
        }
        let mut y = src;
        for (freq, bw) in [(700.0f32, 110.0f32), (1200.0, 120.0)] {
            let r = (-std::f32::consts::PI * bw / sr).exp();
            let c = 2.0 * r * (2.0 * std::f32::consts::PI * freq / sr).cos();
            let mut out = vec![0f32; n];
            for i in 0..n {
                let y1 = if i >= 1 { out[i - 1] } else { 0.0 };
                let y2 = if i >= 2 { out[i - 2] } else { 0.0 };
                out[i] = y[i] + c * y1 - r * r * y2;
            }
            y = out;
        }
        Waveform::new(y, SAMPLE_RATE).unwrap().peak_normalized(0.5)
    }

    #[test]
    fn constant_pitch_vowel() {
        let v = prosodic_features(&synthetic_vowel(200.0, 1.0));
        assert_eq!(v.values.len(), PROSODIC_DIM);
        assert!((v.values[0] - 200.0).abs() < 5.0, "f0 mean {}", v.values[0]);
        assert!(v.values[1] < 5.0, "f0 std {}", v.values[1]);
        assert!(v.values[14] > 0.9);
    }

    #[test]
    fn silence_fallbacks() {
        let v = prosodic_features(&Waveform::new(vec![0.0; 22_050], SAMPLE_RATE).unwrap());
        assert!(v.values.iter().all(|x| x.is_finite()));
        assert_eq!(v.values[14], 0.0);
        assert_eq!(v.values[7], MEL_FLOOR.ln());
        assert!(v.values[..7].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic() {
        let w = synthetic_vowel(150.0, 0.5);
        assert_eq!(prosodic_features(&w), prosodic_features(&w));
    }

    #[test]
    fn contour_tracks_each_octave() {
        for f in [80.0, 120.0, 240.0, 400.0] {
            let w = synthetic_vowel(f, 0.5);
            let c = f0_contour(&w, &StftConfig::default());
            let voiced: Vec<f32> = c.iter().flatten().cloned().collect();
            let mean = voiced.iter().sum::<f32>() / voiced.len() as f32;
            assert!((mean - f).abs() / f < 0.03, "{f}: {mean}");
        }
    }
}

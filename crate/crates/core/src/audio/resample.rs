//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the sinc on each side of the kernel centre (at the
/// lower of the two rates).
const ZERO_CROSSINGS: usize = 16;
const KAISER_BETA: f64 = 8.6;
const ROLLOFF: f64 = 0.945;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(t: f64, half_width: f64) -> f64 {
    let r = t / half_width;
    if r.abs() > 1.0 {
        0.0
    } else {
        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples by the reduced ratio `up/down`. Output length is
/// `ceil(len * up / down)`. Equal rates return the input unchanged.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if wave.sample_rate == target_rate {
        return Ok(wave.clone());
    }
    let g = gcd(wave.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (wave.sample_rate as u64 / g) as usize;

    // kernel defined in input-sample units; cutoff relative to input Nyquist
    let cutoff = ROLLOFF * (up as f64 / down as f64).min(1.0);
    let half_width = ZERO_CROSSINGS as f64 / cutoff;
    let taps = half_width.ceil() as isize;

    // one filter per output phase: phase p corresponds to fractional offset p/up
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (-taps..=taps)
                .map(|k| {
                    let t = k as f64 - frac;
                    cutoff * sinc(cutoff * t) * kaiser(t, half_width)
                })
                .collect()
        })
        .collect();

    let x = &wave.samples;
    let n_in = x.len();
    let n_out = (n_in * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let pos = n * down;
        let base = (pos / up) as isize;
        let phase = &phases[pos % up];
        let mut acc = 0.0f64;
        for (j, &h) in phase.iter().enumerate() {
            // tap j sits at input index base + (j - taps); its kernel argument is
            // (j - taps) - frac, the distance from the output instant
            let idx = base + j as isize - taps;
            if idx >= 0 && (idx as usize) < n_in {
                acc += h * x[idx as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-9);
    }

    #[test]
    fn passband_tone_survives_48k_to_22k() {
        let f = 1000.0;
        let x: Vec<f32> = (0..48_000)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 48_000.0).sin() as f32 * 0.5)
            .collect();
        let w = Waveform::new(x, 48_000).unwrap();
        let out = resample(&w, 22_050).unwrap();
        assert_eq!(out.len(), (48_000usize * 147).div_ceil(320));
        // compare the interior against the analytic tone
        for i in 1000..2000 {
            let want = 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 22_050.0).sin();
            assert!((out.samples[i] as f64 - want).abs() < 5e-3, "{i}");
        }
    }

    #[test]
    fn above_nyquist_tone_is_suppressed() {
        let f = 15_000.0;
        let x: Vec<f32> = (0..44_100)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 44_100.0).sin() as f32)
            .collect();
        let out = resample(&Waveform::new(x, 44_100).unwrap(), 22_050).unwrap();
        let interior = &out.samples[500..out.len() - 500];
        let rms = (interior.iter().map(|v| v * v).sum::<f32>() / interior.len() as f32).sqrt();
        assert!(rms < 1e-2, "alias rms {rms}");
    }
}

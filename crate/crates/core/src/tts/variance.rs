//! Length regulation, value bucketing and the variance predictors.

use candle_core::{DType, Module, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, ForwardCtx, LayerNorm, Linear};

/// Per-phoneme ground truth for teacher forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTargets {
    /// Frames per phoneme.
    pub durations: Vec<u32>,
    /// Phoneme-averaged `ln(1 + F0 Hz)`; 0 where unvoiced.
    pub pitch: Vec<f32>,
    /// Phoneme-averaged log frame energy.
    pub energy: Vec<f32>,
}

impl VarianceTargets {
    pub fn validate(&self, n_phonemes: usize) -> Result<()> {
        if self.durations.len() != n_phonemes || self.pitch.len() != n_phonemes || self.energy.len() != n_phonemes {
            return Err(Error::Shape(format!(
                "variance targets ({}, {}, {}) do not match {n_phonemes} phonemes",
                self.durations.len(),
                self.pitch.len(),
                self.energy.len()
            )));
        }
        if self.pitch.iter().chain(&self.energy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pitch or energy target".into()));
        }
        if self.total_frames() == 0 {
            return Err(Error::EmptyExpansion);
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    /// Averages frame-level pitch (Hz, `None` = unvoiced) and log energy over
    /// each phoneme's frames.
    pub fn from_frames(durations: &[u32], f0: &[Option<f32>], log_energy: &[f32]) -> Result<Self> {
        let total: usize = durations.iter().map(|&d| d as usize).sum();
        if f0.len() != total || log_energy.len() != total {
            return Err(Error::Shape(format!(
                "durations cover {total} frames but features have {}/{}",
                f0.len(),
                log_energy.len()
            )));
        }
        let mut pitch = Vec::with_capacity(durations.len());
        let mut energy = Vec::with_capacity(durations.len());
        let mut start = 0;
        for &d in durations {
            let end = start + d as usize;
            let voiced: Vec<f32> = f0[start..end].iter().flatten().copied().collect();
            pitch.push(if voiced.is_empty() {
                0.0
            } else {
                (voiced.iter().sum::<f32>() / voiced.len() as f32).ln_1p()
            });
            energy.push(if d == 0 {
                crate::audio::log_floor()
            } else {
                log_energy[start..end].iter().sum::<f32>() / d as f32
            });
            start = end;
        }
        Ok(Self {
            durations: durations.to_vec(),
            pitch,
            energy,
        })
    }
}

/// Training target for the duration predictor.
pub fn log_duration(d: u32) -> f32 {
    (d as f32 + 1.0).ln()
}

/// Upper bound on one predicted phoneme's duration (about 11.6 s).
pub const MAX_PHONEME_FRAMES: u32 = 1000;

/// Inverse of [`log_duration`], rounded half-up and clamped to
/// `1..=MAX_PHONEME_FRAMES`.
pub fn duration_from_log(p: f32) -> u32 {
    let frames = (p.exp() - 1.0 + 0.5).floor();
    if frames.is_nan() || frames < 1.0 {
        1
    } else {
        frames.min(MAX_PHONEME_FRAMES as f32) as u32
    }
}

/// Repeats row `i` of `(T, H)` `durations[i]` times.
pub fn length_regulate(hidden: &Tensor, durations: &[u32]) -> Result<Tensor> {
    let (t, h) = hidden.dims2()?;
    let (out, _) = length_regulate_batch(&hidden.reshape((1, t, h))?, &[durations.to_vec()])?;
    Ok(out.squeeze(0)?)
}

/// Batched length regulator over `(B, T, H)`. Returns `(B, F, H)` with
/// `F = max Σ durations` (shorter items zero-padded) and per-item lengths.
pub fn length_regulate_batch(hidden: &Tensor, durations: &[Vec<u32>]) -> Result<(Tensor, Vec<usize>)> {
    let (b, t, h) = hidden.dims3()?;
    if durations.len() != b {
        return Err(Error::Shape(format!("{} duration vectors for batch of {b}", durations.len())));
    }
    let mut lengths = Vec::with_capacity(b);
    for d in durations {
        if d.len() > t {
            return Err(Error::Shape(format!("{} durations for {t} rows", d.len())));
        }
        let n: usize = d.iter().map(|&x| x as usize).sum();
        if n == 0 {
            return Err(Error::EmptyExpansion);
        }
        lengths.push(n);
    }
    let frames = *lengths.iter().max().expect("non-empty batch");
    let zero_row = (b * t) as u32;
    let mut index = Vec::with_capacity(b * frames);
    for (i, d) in durations.iter().enumerate() {
        for (j, &rep) in d.iter().enumerate() {
            index.extend(std::iter::repeat_n((i * t + j) as u32, rep as usize));
        }
        index.extend(std::iter::repeat_n(zero_row, frames - lengths[i]));
    }
    let flat = Tensor::cat(&[hidden.reshape((b * t, h))?, Tensor::zeros((1, h), hidden.dtype(), hidden.device())?], 0)?;
    let index = Tensor::from_vec(index, b * frames, hidden.device())?;
    Ok((flat.index_select(&index, 0)?.reshape((b, frames, h))?, lengths))
}

/// Linear bucketing into `n_bins` over `[lo, hi]`: `n_bins - 1` evenly spaced
/// boundaries; a value's bucket is the number of boundaries strictly below it.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    boundaries: Vec<f32>,
}

impl Quantizer {
    pub fn new(lo: f32, hi: f32, n_bins: usize) -> Self {
        assert!(n_bins >= 2 && hi > lo, "quantizer needs at least two bins over a non-empty range");
        let k = n_bins - 1;
        let boundaries = (0..k)
            .map(|i| lo + (hi - lo) * i as f32 / (k - 1).max(1) as f32)
            .collect();
        Self { boundaries }
    }

    pub fn boundaries(&self) -> &[f32] {
        &self.boundaries
    }

    pub fn n_bins(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn bucket(&self, v: f32) -> u32 {
        self.boundaries.partition_point(|&b| b < v) as u32
    }
}

/// Two conv layers with ReLU, layer-norm and dropout, then a scalar head.
pub struct VariancePredictor {
    conv1: Conv1d,
    norm1: LayerNorm,
    conv2: Conv1d,
    norm2: LayerNorm,
    head: Linear,
    dropout: f32,
}

impl VariancePredictor {
    pub fn new(hidden: usize, filter: usize, kernel: usize, dropout: f32, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::new(hidden, filter, kernel, 1, vb.pp("conv1"))?,
            norm1: LayerNorm::new(filter, vb.pp("norm1"))?,
            conv2: Conv1d::new(filter, filter, kernel, 1, vb.pp("conv2"))?,
            norm2: LayerNorm::new(filter, vb.pp("norm2"))?,
            head: Linear::new(filter, 1, vb.pp("head"))?,
            dropout,
        })
    }

    /// `(B, T, H)` + `(B, T, 1)` mask → `(B, T)` predictions (0 at padding).
    pub fn forward(&self, x: &Tensor, mask: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let y = self.norm1.forward(&self.conv1.forward(x)?.relu()?)?;
        let y = ctx.dropout_p(&y, self.dropout)?.broadcast_mul(mask)?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?.relu()?)?;
        let y = ctx.dropout_p(&y, self.dropout)?;
        let y = self.head.forward(&y)?.broadcast_mul(mask)?;
        Ok(y.squeeze(2)?)
    }
}

/// Embedding lookup for bucketed values: `(B, T)` floats → `(B, T, H)`.
pub fn bucket_embed(table: &Tensor, q: &Quantizer, values: &[Vec<f32>], t: usize) -> Result<Tensor> {
    let b = values.len();
    let mut idx = Vec::with_capacity(b * t);
    for row in values {
        idx.extend(row.iter().map(|&v| q.bucket(v)));
        idx.extend(std::iter::repeat_n(0, t - row.len()));
    }
    let h = table.dim(1)?;
    let idx = Tensor::from_vec(idx, b * t, table.device())?;
    Ok(table.index_select(&idx, 0)?.reshape((b, t, h))?)
}

pub(crate) fn tensor_rows(t: &Tensor, lengths: &[usize]) -> Result<Vec<Vec<f32>>> {
    let rows = t.to_dtype(DType::F32)?.to_vec2::<f32>()?;
    Ok(rows.into_iter().zip(lengths).map(|(r, &n)| r[..n].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(t: usize, h: usize) -> Tensor {
        Tensor::arange(0f32, (t * h) as f32, &Device::Cpu).unwrap().reshape((t, h)).unwrap()
    }

    #[test]
    fn expands_in_order() {
        let h = rows(3, 2);
        let out = length_regulate(&h, &[1, 2, 3]).unwrap().to_vec2::<f32>().unwrap();
        let want = vec![
            vec![0., 1.],
            vec![2., 3.],
            vec![2., 3.],
            vec![4., 5.],
            vec![4., 5.],
            vec![4., 5.],
        ];
        assert_eq!(out, want);
    }

    #[test]
    fn unit_durations_are_identity() {
        let h = rows(5, 3);
        assert_eq!(
            length_regulate(&h, &[1; 5]).unwrap().to_vec2::<f32>().unwrap(),
            h.to_vec2::<f32>().unwrap()
        );
    }

    #[test]
    fn all_zero_durations_error() {
        assert!(matches!(length_regulate(&rows(2, 2), &[0, 0]), Err(Error::EmptyExpansion)));
    }

    #[test]
    fn matches_repetition_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = Tensor::randn(0f32, 1.0, (50, 4), &Device::Cpu).unwrap();
        let hv = h.to_vec2::<f32>().unwrap();
        let d: Vec<u32> = (0..50).map(|_| rng.random_range(0..6)).collect();
        let got = length_regulate(&h, &d).unwrap().to_vec2::<f32>().unwrap();
        let mut want = Vec::new();
        for (i, &n) in d.iter().enumerate() {
            for _ in 0..n {
                want.push(hv[i].clone());
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn batch_pads_shorter_items_with_zeros() {
        let h = Tensor::ones((2, 2, 3), DType::F32, &Device::Cpu).unwrap();
        let (out, lens) = length_regulate_batch(&h, &[vec![1, 1], vec![2, 2]]).unwrap();
        assert_eq!(lens, vec![2, 4]);
        let v = out.to_vec3::<f32>().unwrap();
        assert_eq!(v[0][2], vec![0.0; 3]);
        assert_eq!(v[1][3], vec![1.0; 3]);
    }

    #[test]
    fn quantizer_matches_bucket_search() {
        let q = Quantizer::new(0.0, 7.0, 256);
        assert_eq!(q.n_bins(), 256);
        let b = q.boundaries().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut probes: Vec<f32> = (0..500).map(|_| rng.random_range(-1.0..8.0)).collect();
        probes.extend(b.iter().copied());
        for v in probes {
            let mut want = 0;
            while want < b.len() && b[want] < v {
                want += 1;
            }
            assert_eq!(q.bucket(v), want as u32, "value {v}");
        }
        assert_eq!(q.bucket(-5.0), 0);
        assert_eq!(q.bucket(100.0), 255);
    }

    #[test]
    fn duration_rounding() {
        assert_eq!(duration_from_log(0.0), 1);
        assert_eq!(duration_from_log(log_duration(7)), 7);
        assert_eq!(duration_from_log((3.6f32).ln()), 3);
        assert_eq!(duration_from_log((3.4f32).ln()), 2);
        assert_eq!(duration_from_log(-3.0), 1);
        assert_eq!(duration_from_log(f32::NAN), 1);
    }

    #[test]
    fn phoneme_averages_from_frames() {
        let t = VarianceTargets::from_frames(
            &[2, 1],
            &[Some(100.0), None, None],
            &[-1.0, -3.0, -5.0],
        )
        .unwrap();
        assert!((t.pitch[0] - 101f32.ln()).abs() < 1e-6);
        assert_eq!(t.pitch[1], 0.0);
        assert_eq!(t.energy, vec![-2.0, -5.0]);
    }
}

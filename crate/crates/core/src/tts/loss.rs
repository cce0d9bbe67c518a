//! Training losses, including the detector feedback term.

use candle_core::{Tensor, D};
use log::warn;
use serde::{Deserialize, Serialize};

use super::AcousticOutput;
use crate::audio::log_floor;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::nn;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub feedback: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 1.0,
            duration: 1.0,
            pitch: 1.0,
            energy: 1.0,
            feedback: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel_mae: f64,
    pub duration_loss: f64,
    pub pitch_loss: f64,
    pub energy_loss: f64,
    /// `None` when the feedback term is disabled.
    pub feedback_cosine: Option<f64>,
    pub total: f64,
    pub weights: LossWeights,
}

/// `1 − cos(a, b)`, clamped to `[0, 2]`. A zero-norm input yields 1.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine distance of {} vs {} values", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        warn!("cosine distance of a zero-norm vector; using 1");
        return Ok(1.0);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0) as f32)
}

const NORM_EPS: f64 = 1e-12;

/// Row-wise cosine distance of `(B, D)` tensors → `(B,)`, with an epsilon
/// inside the norms so zero rows give distance 1 and finite gradients.
pub fn cosine_distance_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let dot = (a * b)?.sum(D::Minus1)?;
    let na = (a.sqr()?.sum(D::Minus1)? + NORM_EPS)?.sqrt()?;
    let nb = (b.sqr()?.sum(D::Minus1)? + NORM_EPS)?.sqrt()?;
    Ok((1.0 - (dot / (na * nb)?)?)?.clamp(0.0, 2.0)?)
}

/// Replaces frames past each length with the log floor and right-pads to
/// at least `min_frames`, keeping the graph to `mel`.
fn detector_view(mel: &Tensor, lengths: &[usize], min_frames: usize) -> Result<(Tensor, Tensor)> {
    let (b, t, m) = mel.dims3()?;
    let mask = nn::length_mask(lengths, t, mel.dtype(), mel.device())?.unsqueeze(2)?;
    let floor = log_floor() as f64;
    let filled = (mel.broadcast_mul(&mask)? + ((1.0 - &mask)? * floor)?.broadcast_as((b, t, m))?)?;
    let filled = if t < min_frames {
        let pad = (Tensor::ones((b, min_frames - t, m), mel.dtype(), mel.device())? * floor)?;
        Tensor::cat(&[&filled, &pad], 1)?
    } else {
        filled
    };
    let valid: Vec<usize> = lengths.iter().map(|&l| l.max(min_frames)).collect();
    let t2 = filled.dim(1)?;
    Ok((filled, nn::length_mask(&valid, t2, mel.dtype(), mel.device())?))
}

/// Mean cosine distance between frozen-detector embeddings of ground truth
/// and prediction. The ground-truth branch is detached; gradients reach
/// `pred_mel` only.
pub fn feedback_cosine(
    detector: &Detector,
    pred_mel: &Tensor,
    gt_mel: &Tensor,
    lengths: &[usize],
    text: &Tensor,
) -> Result<Tensor> {
    if pred_mel.dims() != gt_mel.dims() {
        return Err(Error::Shape(format!(
            "predicted mel {:?} vs ground truth {:?}",
            pred_mel.dims(),
            gt_mel.dims()
        )));
    }
    if pred_mel.dim(2)? != detector.config().n_mels {
        return Err(Error::Shape(format!(
            "feedback detector reads {} bins, acoustic model emits {}",
            detector.config().n_mels,
            pred_mel.dim(2)?
        )));
    }
    let min = detector.config().min_frames;
    let (gt, mask) = detector_view(&gt_mel.detach(), lengths, min)?;
    let (pred, _) = detector_view(pred_mel, lengths, min)?;
    let e_gt = detector.embed_mel_tensor(&gt, &mask, &text.detach())?.detach();
    let e_pred = detector.embed_mel_tensor(&pred, &mask, &text.detach())?;
    Ok(cosine_distance_rows(&e_gt, &e_pred)?.mean_all()?)
}

/// Ground truth for one batch, aligned with an [`AcousticOutput`].
pub struct BatchTargets<'a> {
    /// `(B, F, 80)`.
    pub mel: &'a Tensor,
    /// `(B, T_ph)` each.
    pub log_durations: &'a Tensor,
    pub pitch: &'a Tensor,
    pub energy: &'a Tensor,
}

fn masked_mean(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let denom = mask.sum_all()?.clamp(1.0, f64::INFINITY)?;
    Ok(x.broadcast_mul(mask)?.sum_all()?.broadcast_div(&denom)?)
}

/// Weighted loss. `feedback` supplies the frozen detector and the `(B, 768)`
/// text embeddings; `None` disables the term (reported as absent).
pub fn compute_losses(
    out: &AcousticOutput,
    targets: &BatchTargets<'_>,
    feedback: Option<(&Detector, &Tensor)>,
    weights: &LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    if out.mel.dims() != targets.mel.dims() {
        return Err(Error::Shape(format!(
            "predicted mel {:?} vs ground truth {:?}",
            out.mel.dims(),
            targets.mel.dims()
        )));
    }
    let n_mels = out.mel.dim(2)?;
    let frame_mask = out.frame_mask.unsqueeze(2)?;
    let mel_mae = (masked_mean(&(&out.mel - targets.mel)?.abs()?, &frame_mask)? / n_mels as f64)?;
    let ph = &out.phoneme_mask;
    let mse = |pred: &Tensor, gt: &Tensor| -> Result<Tensor> { masked_mean(&(pred - gt)?.sqr()?, ph) };
    let duration = mse(&out.log_durations, targets.log_durations)?;
    let pitch = mse(&out.pitch, targets.pitch)?;
    let energy = mse(&out.energy, targets.energy)?;
    let feedback = match feedback {
        Some((det, text)) => Some(feedback_cosine(det, &out.mel, targets.mel, &out.frame_lengths, text)?),
        None => None,
    };
    let mut total = ((&mel_mae * weights.mel)? + (&duration * weights.duration)?)?;
    total = ((total + (&pitch * weights.pitch)?)? + (&energy * weights.energy)?)?;
    if let Some(fb) = &feedback {
        total = (total + (fb * weights.feedback)?)?;
    }
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
    let breakdown = LossBreakdown {
        mel_mae: scalar(&mel_mae)?,
        duration_loss: scalar(&duration)?,
        pitch_loss: scalar(&pitch)?,
        energy_loss: scalar(&energy)?,
        feedback_cosine: feedback.as_ref().map(scalar).transpose()?,
        total: scalar(&total)?,
        weights: *weights,
    };
    Ok((total, breakdown))
}

use candle_core::{Module, Tensor};
use candle_nn::VarBuilder;

use super::{BatchAudio, DetectorArch, DetectorBatch, DetectorConfig};
use crate::error::{Error, Result};
use crate::nn::{key_padding_bias, BatchNorm, Conv1d, Conv2d3x3, LayerNorm, Linear, MultiHeadAttention};

pub(super) enum Net {
    Proposed(Box<ProposedNet>),
    Baseline(BaselineNet),
}

pub(super) struct ProposedNet {
    conv1: Conv2d3x3,
    bn1: BatchNorm,
    conv2: Conv2d3x3,
    bn2: BatchNorm,
    proj: Linear,
    tconv1: Conv1d,
    tconv2: Conv1d,
    attn: MultiHeadAttention,
    norm: LayerNorm,
    hidden: Linear,
    out: Linear,
}

pub(super) struct BaselineNet {
    hidden: Linear,
    out: Linear,
}

/// Max-pools the frequency axis of `(B, T, F, C)` by 2.
fn pool_freq(x: &Tensor) -> candle_core::Result<Tensor> {
    let (b, t, f, c) = x.dims4()?;
    x.reshape((b, t, f / 2, 2, c))?.max(3)
}

impl Net {
    pub fn new(cfg: &DetectorConfig, vb: VarBuilder) -> Result<Self> {
        let head_in = |audio: usize| audio + cfg.text_dim;
        Ok(match cfg.arch {
            DetectorArch::Proposed => {
                let [c1, c2] = cfg.conv_channels;
                let vb = vb.pp("proposed");
                Net::Proposed(Box::new(ProposedNet {
                    conv1: Conv2d3x3::new(1, c1, vb.pp("conv1"))?,
                    bn1: BatchNorm::new(c1, vb.pp("bn1"))?,
                    conv2: Conv2d3x3::new(c1, c2, vb.pp("conv2"))?,
                    bn2: BatchNorm::new(c2, vb.pp("bn2"))?,
                    proj: Linear::new(cfg.n_mels / 4 * c2, cfg.attn_dim, vb.pp("proj"))?,
                    tconv1: Conv1d::new(cfg.attn_dim, cfg.attn_dim, 3, 1, vb.pp("tconv1"))?,
                    tconv2: Conv1d::new(cfg.attn_dim, cfg.attn_dim, 3, 2, vb.pp("tconv2"))?,
                    attn: MultiHeadAttention::new(cfg.attn_dim, cfg.attn_heads, vb.pp("attn"))?,
                    norm: LayerNorm::new(cfg.attn_dim, vb.pp("attn_norm"))?,
                    hidden: Linear::new(head_in(cfg.attn_dim), cfg.embed_dim, vb.pp("hidden"))?,
                    out: Linear::new(cfg.embed_dim, 2, vb.pp("out"))?,
                }))
            }
            DetectorArch::Baseline => {
                let vb = vb.pp("baseline");
                Net::Baseline(BaselineNet {
                    hidden: Linear::new(head_in(cfg.audio_dim), cfg.embed_dim, vb.pp("hidden"))?,
                    out: Linear::new(cfg.embed_dim, 2, vb.pp("out"))?,
                })
            }
        })
    }

    pub fn forward(&self, batch: &DetectorBatch, train: bool) -> Result<(Tensor, Tensor)> {
        let (audio, hidden, out) = match (self, &batch.audio) {
            (Net::Proposed(net), BatchAudio::Mel { mel, mask }) => {
                (net.encode(mel, mask, train)?, &net.hidden, &net.out)
            }
            (Net::Baseline(net), BatchAudio::Vector(v)) => (v.clone(), &net.hidden, &net.out),
            _ => return Err(Error::InvalidInput("batch features do not match detector architecture".into())),
        };
        let joint = Tensor::cat(&[&audio, &batch.text], 1)?;
        let embedding = hidden.forward(&joint)?.tanh()?;
        let logits = out.forward(&embedding)?;
        Ok((embedding, logits))
    }
}

impl ProposedNet {
    /// `(B, T, M)` spectrogram + `(B, T)` mask → `(B, attn_dim)` pooled summary.
    fn encode(&self, mel: &Tensor, mask: &Tensor, train: bool) -> Result<Tensor> {
        let (b, t, _) = mel.dims3()?;
        let m4 = mask.reshape((b, t, 1, 1))?;
        let m3 = mask.unsqueeze(2)?;
        let x = mel.broadcast_mul(&m3)?.unsqueeze(3)?;
        let x = self.bn1.forward_t(&self.conv1.forward(&x)?, train)?.relu()?;
        let x = pool_freq(&x)?.broadcast_mul(&m4)?;
        let x = self.bn2.forward_t(&self.conv2.forward(&x)?, train)?.relu()?;
        let x = pool_freq(&x)?.broadcast_mul(&m4)?;
        let (_, _, f, c) = x.dims4()?;
        let x = self.proj.forward(&x.reshape((b, t, f * c))?)?.relu()?.broadcast_mul(&m3)?;
        let x = self.tconv1.forward(&x)?.relu()?.broadcast_mul(&m3)?;
        let x = self.tconv2.forward(&x)?.relu()?.broadcast_mul(&m3)?;
        let a = self.attn.forward(&x, Some(&key_padding_bias(mask)?))?;
        let x = self.norm.forward(&(x + a)?)?.broadcast_mul(&m3)?;
        let denom = mask.sum_keepdim(1)?.clamp(1.0, f64::INFINITY)?;
        Ok(x.sum(1)?.broadcast_div(&denom)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn pool_halves_frequency_and_keeps_maxima() {
        let x = Tensor::arange(0f32, 16.0, &Device::Cpu).unwrap().reshape((1, 2, 4, 2)).unwrap();
        let y = pool_freq(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 2]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![2.0, 3.0, 6.0, 7.0, 10.0, 11.0, 14.0, 15.0]);
    }
}

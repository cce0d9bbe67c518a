//! Neural building blocks shared by the detector and the acoustic model.
//!
//! Activations are channels-last (`B × T × C`, or `B × H × W × C` for 2-D
//! convolutions). Convolutions are lowered to shifted slices and a single
//! matmul so their gradients go through matmul/concat kernels only.

mod ckpt;
mod optim;

use std::cell::RefCell;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Init, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ckpt::{load_frozen, load_json, load_tensors, save_checkpoint, CheckpointFiles};
pub(crate) use ckpt::load_into_varmap;
pub use optim::{Adam, AdamConfig};

use crate::error::Result;

/// Mode flags threaded through a forward pass.
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f32,
    rng: RefCell<ChaCha8Rng>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            dropout: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    /// Training mode with a seeded dropout stream.
    pub fn train(dropout: f32, seed: u64) -> Self {
        Self {
            train: true,
            dropout,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn dropout(&self, x: &Tensor) -> Result<Tensor> {
        self.dropout_p(x, self.dropout)
    }

    /// Dropout with an explicit rate (still a no-op outside training).
    pub fn dropout_p(&self, x: &Tensor, p: f32) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let n = x.elem_count();
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

fn uniform(fan_in: usize) -> Init {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Init::Uniform {
        lo: -bound,
        up: bound,
    }
}

pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints((out_dim, in_dim), "weight", uniform(in_dim))?;
        let bias = vb.get_with_hints(out_dim, "bias", uniform(in_dim))?;
        Ok(Self { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(0).expect("rank 2")
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / in_dim;
        let y = x
            .reshape((rows, in_dim))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-scalar") = self.weight.dim(0)?;
        y.reshape(out_dims)
    }
}

/// Layer normalisation over the last dimension.
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            gamma: vb.get_with_hints(dim, "gamma", Init::Const(1.0))?,
            beta: vb.get_with_hints(dim, "beta", Init::Const(0.0))?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        centred
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)
    }
}

fn zeros_like_with(x: &Tensor, dim: usize, len: usize) -> candle_core::Result<Tensor> {
    let mut shape = x.dims().to_vec();
    shape[dim] = len;
    Tensor::zeros(shape, x.dtype(), x.device())
}

fn pad_dim(x: &Tensor, dim: usize, before: usize, after: usize) -> candle_core::Result<Tensor> {
    if before == 0 && after == 0 {
        return Ok(x.clone());
    }
    let mut parts = Vec::with_capacity(3);
    if before > 0 {
        parts.push(zeros_like_with(x, dim, before)?);
    }
    parts.push(x.clone());
    if after > 0 {
        parts.push(zeros_like_with(x, dim, after)?);
    }
    Tensor::cat(&parts, dim)
}

/// Channels-last 1-D convolution with "same" zero padding.
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    dilation: usize,
    in_dim: usize,
}

impl Conv1d {
    pub fn new(in_dim: usize, out_dim: usize, kernel: usize, dilation: usize, vb: VarBuilder) -> Result<Self> {
        let fan_in = in_dim * kernel;
        // stored (out, kernel, in) so the im2col layout reshapes directly
        let weight = vb.get_with_hints((out_dim, kernel, in_dim), "weight", uniform(fan_in))?;
        let bias = vb.get_with_hints(out_dim, "bias", uniform(fan_in))?;
        Ok(Self {
            weight,
            bias,
            kernel,
            dilation,
            in_dim,
        })
    }
}

impl Module for Conv1d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        if c != self.in_dim {
            candle_core::bail!("conv1d expects {} channels, got {c}", self.in_dim);
        }
        let span = self.dilation * (self.kernel - 1);
        let cols = if self.kernel == 1 {
            x.clone()
        } else {
            let padded = pad_dim(x, 1, span / 2, span - span / 2)?;
            let slices = (0..self.kernel)
                .map(|j| padded.narrow(1, j * self.dilation, t))
                .collect::<candle_core::Result<Vec<_>>>()?;
            Tensor::cat(&slices, 2)?
        };
        let out = self.weight.dim(0)?;
        let w = self.weight.reshape((out, self.kernel * c))?;
        cols.reshape((b * t, self.kernel * c))?
            .matmul(&w.t()?)?
            .broadcast_add(&self.bias)?
            .reshape((b, t, out))
    }
}

/// Channels-last 3×3 convolution over `B × H × W × C` with "same" padding.
pub struct Conv2d3x3 {
    weight: Tensor,
    bias: Tensor,
    in_dim: usize,
}

impl Conv2d3x3 {
    pub fn new(in_dim: usize, out_dim: usize, vb: VarBuilder) -> Result<Self> {
        let fan_in = in_dim * 9;
        let weight = vb.get_with_hints((out_dim, 9, in_dim), "weight", uniform(fan_in))?;
        let bias = vb.get_with_hints(out_dim, "bias", uniform(fan_in))?;
        Ok(Self { weight, bias, in_dim })
    }
}

impl Module for Conv2d3x3 {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        if c != self.in_dim {
            candle_core::bail!("conv2d expects {} channels, got {c}", self.in_dim);
        }
        let padded = pad_dim(&pad_dim(x, 1, 1, 1)?, 2, 1, 1)?;
        let mut slices = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                slices.push(padded.narrow(1, i, h)?.narrow(2, j, w)?);
            }
        }
        let cols = Tensor::cat(&slices, 3)?;
        let out = self.weight.dim(0)?;
        let wt = self.weight.reshape((out, 9 * c))?;
        cols.reshape((b * h * w, 9 * c))?
            .matmul(&wt.t()?)?
            .broadcast_add(&self.bias)?
            .reshape((b, h, w, out))
    }
}

/// Batch normalisation over the last (channel) dimension with running statistics.
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        let running_mean = vb.get_with_hints(dim, "running_mean", Init::Const(0.0))?;
        let running_var = vb.get_with_hints(dim, "running_var", Init::Const(1.0))?;
        Ok(Self {
            gamma: vb.get_with_hints(dim, "gamma", Init::Const(1.0))?,
            beta: vb.get_with_hints(dim, "beta", Init::Const(0.0))?,
            running_mean: Var::from_tensor(&running_mean)?,
            running_var: Var::from_tensor(&running_var)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(D::Minus1)?;
        let flat = x.reshape(((), c))?;
        let (mean, var) = if train {
            let mean = flat.mean_keepdim(0)?;
            let var = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?;
            let n = flat.dim(0)? as f64;
            let m = self.momentum;
            let rm = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().squeeze(0)? * m)?)?;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let rv = ((self.running_var.as_tensor() * (1.0 - m))? + (var.detach().squeeze(0)? * (m * unbiased))?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_detached_tensor().unsqueeze(0)?,
                self.running_var.as_detached_tensor().unsqueeze(0)?,
            )
        };
        let y = flat
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?;
        Ok(y.reshape(x.shape())?)
    }
}

/// `(B, T)` validity mask (1 = real, 0 = padding) → additive `(B, 1, 1, T)` key bias.
pub fn key_padding_bias(mask: &Tensor) -> Result<Tensor> {
    let (b, t) = mask.dims2()?;
    let bias = ((mask - 1.0)? * 1e9)?;
    Ok(bias.reshape((b, 1, 1, t))?)
}

pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        assert_eq!(dim % heads, 0, "model dim must divide into heads");
        Ok(Self {
            q: Linear::new(dim, dim, vb.pp("q"))?,
            k: Linear::new(dim, dim, vb.pp("k"))?,
            v: Linear::new(dim, dim, vb.pp("v"))?,
            o: Linear::new(dim, dim, vb.pp("o"))?,
            heads,
            dim,
        })
    }

    /// `x`: `(B, T, D)`; `bias`: optional additive `(B, 1, 1, T)` key mask.
    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let dh = self.dim / self.heads;
        let split = |y: Tensor| -> candle_core::Result<Tensor> {
            y.reshape((b, t, self.heads, dh))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let mut scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, t, self.dim))?;
        Ok(self.o.forward(&ctx)?)
    }
}

/// Feed-forward Transformer block: self-attention and a two-layer 1-D
/// convolutional feed-forward, each with residual and post layer-norm.
pub struct FftBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    norm2: LayerNorm,
}

impl FftBlock {
    pub fn new(dim: usize, heads: usize, filter: usize, kernels: (usize, usize), vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(dim, heads, vb.pp("attn"))?,
            norm1: LayerNorm::new(dim, vb.pp("norm1"))?,
            conv1: Conv1d::new(dim, filter, kernels.0, 1, vb.pp("conv1"))?,
            conv2: Conv1d::new(filter, dim, kernels.1, 1, vb.pp("conv2"))?,
            norm2: LayerNorm::new(dim, vb.pp("norm2"))?,
        })
    }

    /// `mask`: `(B, T, 1)` validity; `bias`: additive key mask.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, bias: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let a = ctx.dropout(&self.attn.forward(x, Some(bias))?)?;
        let x = self.norm1.forward(&(x + a)?)?.broadcast_mul(mask)?;
        let h = self.conv1.forward(&x)?.relu()?;
        let h = ctx.dropout(&self.conv2.forward(&h)?)?;
        let x = self.norm2.forward(&(x + h)?)?.broadcast_mul(mask)?;
        Ok(x)
    }
}

/// Sinusoidal position table `(T, D)`.
pub fn sinusoid_table(t: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(t * dim);
    for pos in 0..t {
        for i in 0..dim {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() } as f32);
        }
    }
    Ok(Tensor::from_vec(data, (t, dim), device)?.to_dtype(dtype)?)
}

/// Builds a `(B, T)` validity mask from per-item lengths.
pub fn length_mask(lengths: &[usize], t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = lengths
        .iter()
        .flat_map(|&l| (0..t).map(move |i| if i < l { 1.0 } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(data, (lengths.len(), t), device)?.to_dtype(dtype)?)
}

/// Tensors of a var map sorted by name.
pub fn sorted_vars(varmap: &candle_nn::VarMap) -> Vec<(String, Var)> {
    let data = varmap.data().lock().expect("var map lock");
    let mut v: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

/// Deterministically re-draws every `weight`/`bias` (uniform in ±1/√fan_in)
/// and every `table` (normal, σ = 1/√dim) from `seed`. Norm parameters and
/// running statistics keep their constant initialisation.
pub fn init_seeded(varmap: &candle_nn::VarMap, seed: u64) -> Result<()> {
    use rand_distr::{Distribution, Normal};
    let vars = sorted_vars(varmap);
    let fan_in_of = |prefix: &str| -> Option<usize> {
        vars.iter()
            .find(|(k, _)| k.strip_suffix("weight") == Some(prefix))
            .map(|(_, v)| v.dims()[1..].iter().product())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, var) in &vars {
        let n = var.elem_count();
        let data: Vec<f32> = if let Some(prefix) = name.strip_suffix("weight") {
            let fan_in = fan_in_of(prefix).unwrap_or(1).max(1);
            let b = 1.0 / (fan_in as f32).sqrt();
            (0..n).map(|_| rng.random_range(-b..b)).collect()
        } else if let Some(prefix) = name.strip_suffix("bias") {
            let b = 1.0 / (fan_in_of(prefix).unwrap_or(1).max(1) as f32).sqrt();
            (0..n).map(|_| rng.random_range(-b..b)).collect()
        } else if name.ends_with("table") {
            let dim = *var.dims().last().unwrap_or(&1);
            let normal = Normal::new(0.0f32, 1.0 / (dim as f32).sqrt()).expect("valid sigma");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        } else {
            continue;
        };
        let t = Tensor::from_vec(data, var.shape(), var.device())?.to_dtype(var.dtype())?;
        var.set(&t)?;
    }
    Ok(())
}

/// Variables updated by the optimiser (running statistics excluded).
pub fn trainable_vars(varmap: &candle_nn::VarMap) -> Vec<(String, Var)> {
    sorted_vars(varmap)
        .into_iter()
        .filter(|(k, _)| !k.ends_with("running_mean") && !k.ends_with("running_var"))
        .collect()
}

/// Snapshot of every variable, keyed by name.
pub fn snapshot(varmap: &candle_nn::VarMap) -> Result<Vec<(String, Tensor)>> {
    sorted_vars(varmap)
        .into_iter()
        .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
        .collect()
}

pub fn restore(varmap: &candle_nn::VarMap, snap: &[(String, Tensor)]) -> Result<()> {
    let data = varmap.data().lock().expect("var map lock");
    for (k, t) in snap {
        if let Some(v) = data.get(k) {
            v.set(t)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_nn::VarMap;

    fn vb(map: &VarMap) -> VarBuilder<'_> {
        VarBuilder::from_varmap(map, DType::F64, &Device::Cpu)
    }

    #[test]
    fn conv1d_matches_direct_convolution() {
        let map = VarMap::new();
        let conv = Conv1d::new(3, 2, 3, 2, vb(&map).pp("c")).unwrap();
        let x = Tensor::randn(0.0, 1.0, (1, 7, 3), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 7, 2]);
        let w = conv.weight.to_vec3::<f64>().unwrap();
        let b = conv.bias.to_vec1::<f64>().unwrap();
        let xv = x.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let yv = y.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        for t in 0..7 {
            for o in 0..2 {
                let mut acc = b[o];
                for k in 0..3 {
                    let src = t as isize + (k as isize - 1) * 2;
                    if (0..7).contains(&src) {
                        for c in 0..3 {
                            acc += w[o][k][c] * xv[src as usize][c];
                        }
                    }
                }
                assert!((acc - yv[t][o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_convolution() {
        let map = VarMap::new();
        let conv = Conv2d3x3::new(2, 3, vb(&map).pp("c")).unwrap();
        let x = Tensor::randn(0.0, 1.0, (1, 4, 5, 2), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap();
        let y = conv.forward(&x).unwrap();
        let w = conv.weight.to_vec3::<f64>().unwrap();
        let b = conv.bias.to_vec1::<f64>().unwrap();
        let xv: Vec<Vec<Vec<f64>>> = x.squeeze(0).unwrap().to_vec3().unwrap();
        let yv: Vec<Vec<Vec<f64>>> = y.squeeze(0).unwrap().to_vec3().unwrap();
        for i in 0..4 {
            for j in 0..5 {
                for o in 0..3 {
                    let mut acc = b[o];
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                            if (0..4).contains(&si) && (0..5).contains(&sj) {
                                for c in 0..2 {
                                    acc += w[o][di * 3 + dj][c] * xv[si as usize][sj as usize][c];
                                }
                            }
                        }
                    }
                    assert!((acc - yv[i][j][o]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_ignores_padded_keys() {
        let map = VarMap::new();
        let attn = MultiHeadAttention::new(8, 2, vb(&map).pp("a")).unwrap();
        let x = Tensor::randn(0.0, 1.0, (1, 5, 8), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap();
        let mask = length_mask(&[3], 5, DType::F64, &Device::Cpu).unwrap();
        let bias = key_padding_bias(&mask).unwrap();
        let full = attn.forward(&x, Some(&bias)).unwrap().narrow(1, 0, 3).unwrap();
        let short = attn.forward(&x.narrow(1, 0, 3).unwrap(), None).unwrap();
        let diff = (full - short).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-9);
    }

    #[test]
    fn dropout_is_seeded() {
        let x = Tensor::ones((4, 16), DType::F32, &Device::Cpu).unwrap();
        let a = ForwardCtx::train(0.5, 3).dropout(&x).unwrap().to_vec2::<f32>().unwrap();
        let b = ForwardCtx::train(0.5, 3).dropout(&x).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, b);
        assert_eq!(ForwardCtx::eval().dropout(&x).unwrap().to_vec2::<f32>().unwrap(), vec![vec![1.0; 16]; 4]);
    }
}

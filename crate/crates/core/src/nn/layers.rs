use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, RngStream, Tensor};

pub(crate) const INIT_STD: f64 = 0.02;
pub const RMS_EPS: f64 = 1e-6;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    d_in: usize,
    d_out: usize,
}

impl Linear {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &RngStream,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), &[d_in, d_out], Init::Normal(INIT_STD), rng);
        let bias = bias.then(|| store.register(format!("{name}.bias"), &[d_out], Init::Zeros, rng));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// Applies along the last axis of `x`.
    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape();
        if shape.last() != Some(&self.d_in) {
            return Err(Error::shape(shape, &[self.d_in, self.d_out]));
        }
        let rows = x.numel() / self.d_in.max(1);
        let mut y = x.reshape(&[rows, self.d_in])?.matmul(p.get(self.weight))?;
        if let Some(b) = self.bias {
            y = y.add_row(p.get(b))?;
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = self.d_out;
        y.reshape(&out_shape)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
}

#[derive(Debug, Clone)]
pub enum Norm {
    Rms { gain: ParamId },
    Layer { gain: ParamId, bias: ParamId },
}

impl Norm {
    pub(crate) fn new<T: Element>(store: &mut ParamStore<T>, name: &str, d: usize, rms: bool, rng: &RngStream) -> Self {
        let gain = store.register(format!("{name}.gain"), &[d], Init::Ones, rng);
        if rms {
            Norm::Rms { gain }
        } else {
            let bias = store.register(format!("{name}.bias"), &[d], Init::Zeros, rng);
            Norm::Layer { gain, bias }
        }
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Norm::Rms { gain } => rmsnorm(x, p.get(*gain)),
            Norm::Layer { gain, bias } => x.layer_normalize(LAYER_NORM_EPS).mul_row(p.get(*gain))?.add_row(p.get(*bias)),
        }
    }
}

/// `x / sqrt(mean(x²) + 1e-6) ⊙ gain` over the last axis.
pub fn rmsnorm<T: Element>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    x.rms_normalize(RMS_EPS).mul_row(gain)
}

/// `w3( silu(w1 x) ⊙ (w2 x) )`, all maps bias-free and applied on the last axis.
pub fn swiglu<T: Element>(x: &Tensor<T>, w1: &Tensor<T>, w2: &Tensor<T>, w3: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    let d = *shape.last().unwrap_or(&1);
    let rows = x.numel() / d.max(1);
    let x2 = x.reshape(&[rows, d])?;
    let gate = x2.matmul(w1)?.silu();
    let up = x2.matmul(w2)?;
    let y = gate.mul(&up)?.matmul(w3)?;
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = w3.shape()[1];
    y.reshape(&out_shape)
}

#[derive(Debug, Clone)]
pub enum FeedForward {
    SwiGlu { w1: ParamId, w2: ParamId, w3: ParamId },
    /// Two-layer GELU MLP used when SwiGLU is ablated.
    Gelu { w1: ParamId, w3: ParamId },
}

impl FeedForward {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_ff: usize,
        use_swiglu: bool,
        rng: &RngStream,
    ) -> Self {
        let w1 = store.register(format!("{name}.w1"), &[d, d_ff], Init::Normal(INIT_STD), rng);
        if use_swiglu {
            let w2 = store.register(format!("{name}.w2"), &[d, d_ff], Init::Normal(INIT_STD), rng);
            let w3 = store.register(format!("{name}.w3"), &[d_ff, d], Init::Normal(INIT_STD), rng);
            FeedForward::SwiGlu { w1, w2, w3 }
        } else {
            let w3 = store.register(format!("{name}.w3"), &[d_ff, d], Init::Normal(INIT_STD), rng);
            FeedForward::Gelu { w1, w3 }
        }
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            FeedForward::SwiGlu { w1, w2, w3 } => swiglu(x, p.get(*w1), p.get(*w2), p.get(*w3)),
            FeedForward::Gelu { w1, w3 } => {
                let shape = x.shape().to_vec();
                let d = shape[shape.len() - 1];
                let y = x
                    .reshape(&[x.numel() / d, d])?
                    .matmul(p.get(*w1))?
                    .gelu()
                    .matmul(p.get(*w3))?;
                y.reshape(&shape)
            }
        }
    }

    pub fn output_weight(&self) -> ParamId {
        match self {
            FeedForward::SwiGlu { w3, .. } | FeedForward::Gelu { w3, .. } => *w3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    head_dim: usize,
    use_rope: bool,
}

impl Attention {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        use_rope: bool,
        rng: &RngStream,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("width {d} not divisible by {heads} heads")));
        }
        let head_dim = d / heads;
        if use_rope && !head_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "rotary embedding needs an even head width, got {head_dim}"
            )));
        }
        Ok(Attention {
            wq: Linear::new(store, &format!("{name}.wq"), d, d, false, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d, d, false, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d, d, false, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d, d, false, rng),
            heads,
            head_dim,
            use_rope,
        })
    }

    /// `[B×L×d] → [B×h×L×dh]`
    fn split_heads<T: Element>(&self, x: &Tensor<T>, b: usize, l: usize) -> Result<Tensor<T>> {
        x.reshape(&[b, l, self.heads, self.head_dim])?.permute(&[0, 2, 1, 3])
    }

    /// Multi-head self-attention over `[B×L×d]`.
    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, l, d) = match x.shape() {
            &[b, l, d] => (b, l, d),
            s => return Err(Error::InvalidArgument(format!("attention expects [B×L×d], got {s:?}"))),
        };
        let mut q = self.split_heads(&self.wq.forward(p, x)?, b, l)?;
        let mut k = self.split_heads(&self.wk.forward(p, x)?, b, l)?;
        let v = self.split_heads(&self.wv.forward(p, x)?, b, l)?;
        if self.use_rope {
            let positions: Vec<f64> = (0..l).map(|i| i as f64).collect();
            q = q.rope(&positions, ROPE_BASE)?;
            k = k.rope(&positions, ROPE_BASE)?;
        }
        let bh = b * self.heads;
        let q = q.reshape(&[bh, l, self.head_dim])?;
        let k = k.reshape(&[bh, l, self.head_dim])?;
        let v = v.reshape(&[bh, l, self.head_dim])?;
        let scale = T::of(1.0 / (self.head_dim as f64).sqrt());
        let weights = q.bmm(&k, true)?.scale(scale).softmax_last();
        let ctx = weights
            .bmm(&v, false)?
            .reshape(&[b, self.heads, l, self.head_dim])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, l, d])?;
        self.wo.forward(p, &ctx)
    }

    pub fn output_weight(&self) -> ParamId {
        self.wo.weight()
    }
}

/// One transformer layer.
///
/// With RMSNorm enabled the layer is pre-normalized:
/// `h += attn(norm1(h)); h += ffn(norm2(h))`. Without it the layer falls back
/// to the post-LayerNorm arrangement `h = norm1(h + attn(h)); h = norm2(h + ffn(h))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
    pre_norm: bool,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
        toggles: super::Toggles,
        rng: &RngStream,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: Norm::new(store, &format!("{name}.norm1"), d, toggles.use_rmsnorm, rng),
            attn: Attention::new(store, &format!("{name}.attn"), d, heads, toggles.use_rope, rng)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), d, toggles.use_rmsnorm, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, d_ff, toggles.use_swiglu, rng),
            pre_norm: toggles.use_rmsnorm,
        })
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        if self.pre_norm {
            let h = h.add(&self.attn.forward(p, &self.norm1.forward(p, h)?)?)?;
            h.add(&self.ffn.forward(p, &self.norm2.forward(p, &h)?)?)
        } else {
            let h = self.norm1.forward(p, &h.add(&self.attn.forward(p, h)?)?)?;
            self.norm2.forward(p, &h.add(&self.ffn.forward(p, &h)?)?)
        }
    }

    /// Output of the attention sublayer alone for stream input `h`.
    pub fn attention_output<T: Element>(&self, p: &ParamStore<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        if self.pre_norm {
            self.attn.forward(p, &self.norm1.forward(p, h)?)
        } else {
            self.attn.forward(p, h)
        }
    }

    pub fn attention(&self) -> &Attention {
        &self.attn
    }

    pub fn feed_forward(&self) -> &FeedForward {
        &self.ffn
    }
}

/// `[cos(v·f_i), sin(v·f_i)]` with `f_i = 10000^(-i/half)`, one row per value.
pub fn sinusoidal<T: Element>(values: &[f64], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(values.len() * dim);
    for &v in values {
        let mut row = vec![T::zero(); dim];
        for i in 0..half {
            let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let (s, c) = (v * f).sin_cos();
            row[i] = T::of(c);
            row[half + i] = T::of(s);
        }
        data.extend(row);
    }
    Tensor::new(data, &[values.len(), dim]).expect("row-major embedding")
}

/// Sinusoidal features followed by `linear → silu → linear`.
#[derive(Debug, Clone)]
pub struct ScalarEmbedding {
    fc1: Linear,
    fc2: Linear,
    dim: usize,
    input_scale: f64,
}

impl ScalarEmbedding {
    pub(crate) fn new<T: Element>(store: &mut ParamStore<T>, name: &str, d: usize, input_scale: f64, rng: &RngStream) -> Self {
        ScalarEmbedding {
            fc1: Linear::new(store, &format!("{name}.fc1"), d, d, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), d, d, true, rng),
            dim: d,
            input_scale,
        }
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, values: &[f64]) -> Result<Tensor<T>> {
        let scaled: Vec<f64> = values.iter().map(|v| v * self.input_scale).collect();
        let feats = sinusoidal::<T>(&scaled, self.dim);
        self.fc2.forward(p, &self.fc1.forward(p, &feats)?.silu())
    }
}

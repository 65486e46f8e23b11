//! Conditional transformer noise predictor.
//!
//! Tokens are projected to the model width, a conditioning vector
//! `time_embed(t) + cond_embed(c) + omega_embed(ω)` is added to every token,
//! the stream passes through the transformer blocks, and a final linear map
//! returns to the data channels.

mod layers;
pub(crate) mod params;

use serde::{Deserialize, Serialize};

pub use layers::{
    rmsnorm, sinusoidal, swiglu, Attention, FeedForward, Linear, Norm, ScalarEmbedding, TransformerBlock,
    LAYER_NORM_EPS, RMS_EPS, ROPE_BASE,
};
pub use params::{ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::tensor::{Element, RngStream, Tensor};
use params::Init;

/// Guidance scales are multiplied by this before the sinusoidal features so
/// that the working range of ω covers a span comparable to timestep indices.
pub const OMEGA_EMBED_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub use_rope: bool,
    pub use_rmsnorm: bool,
    pub use_swiglu: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            use_rope: true,
            use_rmsnorm: true,
            use_swiglu: true,
        }
    }
}

/// Architecture descriptor. Two nets with equal configs have identical
/// parameter names and shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub data_dim: usize,
    pub seq_len: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn: usize,
    pub num_classes: usize,
    /// Largest valid timestep index (the schedule's `N`).
    pub num_timesteps: usize,
    pub toggles: Toggles,
}

impl NetConfig {
    /// 2 blocks, width 64, 4 heads, feed-forward width 128.
    pub fn toy(data_dim: usize, seq_len: usize, num_classes: usize, num_timesteps: usize) -> Self {
        NetConfig {
            data_dim,
            seq_len,
            width: 64,
            blocks: 2,
            heads: 4,
            ffn: 128,
            num_classes,
            num_timesteps,
            toggles: Toggles::default(),
        }
    }

    /// Index of the reserved unconditional token.
    pub fn null_class(&self) -> usize {
        self.num_classes
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserNet<T: Element> {
    config: NetConfig,
    params: ParamStore<T>,
    token_proj: Linear,
    time_embed: ScalarEmbedding,
    cond_embed: ParamId,
    omega_embed: ScalarEmbedding,
    blocks: Vec<TransformerBlock>,
    out_proj: Linear,
}

impl<T: Element> DenoiserNet<T> {
    pub fn new(config: NetConfig, rng: &RngStream) -> Result<Self> {
        if !config.width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("width {} must be even", config.width)));
        }
        if config.data_dim == 0 || config.seq_len == 0 {
            return Err(Error::InvalidArgument("data_dim and seq_len must be positive".into()));
        }
        let d = config.width;
        let mut p = ParamStore::default();
        let token_proj = Linear::new(&mut p, "token_proj", config.data_dim, d, true, rng);
        let time_embed = ScalarEmbedding::new(&mut p, "time_embed", d, 1.0, rng);
        let cond_embed = p.register(
            "cond_embed.table".into(),
            &[config.num_classes + 1, d],
            Init::Normal(layers::INIT_STD),
            rng,
        );
        let omega_embed = ScalarEmbedding::new(&mut p, "omega_embed", d, OMEGA_EMBED_SCALE, rng);
        let blocks = (0..config.blocks)
            .map(|i| TransformerBlock::new(&mut p, &format!("blocks.{i}"), d, config.heads, config.ffn, config.toggles, rng))
            .collect::<Result<Vec<_>>>()?;
        let out_proj = Linear::new(&mut p, "out_proj", d, config.data_dim, true, rng);
        Ok(DenoiserNet {
            config,
            params: p,
            token_proj,
            time_embed,
            cond_embed,
            omega_embed,
            blocks,
            out_proj,
        })
    }

    /// Build the architecture for `config` and load `params` into it.
    pub fn with_params(config: NetConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(config, &RngStream::new(0))?;
        if !net.params.same_layout(&params) {
            return Err(Error::ArchitectureMismatch(
                "parameter names or shapes do not match the architecture descriptor".into(),
            ));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[TransformerBlock] {
        &self.blocks
    }

    /// Copy whose parameters never receive gradients.
    pub fn frozen(&self) -> Self {
        DenoiserNet {
            params: self.params.frozen(),
            ..self.clone()
        }
    }

    /// Copy whose parameters are fresh trainable leaves.
    pub fn trainable(&self) -> Self {
        DenoiserNet {
            params: self.params.trainable(),
            ..self.clone()
        }
    }

    pub fn cast<U: Element>(&self) -> DenoiserNet<U> {
        DenoiserNet {
            config: self.config,
            params: self.params.cast(),
            token_proj: self.token_proj.clone(),
            time_embed: self.time_embed.clone(),
            cond_embed: self.cond_embed,
            omega_embed: self.omega_embed.clone(),
            blocks: self.blocks.clone(),
            out_proj: self.out_proj.clone(),
        }
    }

    fn validate(&self, z: &Tensor<T>, t: &[usize], c: &[usize], omega: &[f64]) -> Result<usize> {
        let cfg = &self.config;
        let b = match z.shape() {
            &[b, l, d] if l == cfg.seq_len && d == cfg.data_dim => b,
            s => return Err(Error::shape(s, &[0, cfg.seq_len, cfg.data_dim])),
        };
        if t.len() != b || c.len() != b || omega.len() != b {
            return Err(Error::InvalidArgument(format!(
                "batch of {b} needs as many timesteps, classes and guidance scales (got {}, {}, {})",
                t.len(),
                c.len(),
                omega.len()
            )));
        }
        if let Some(&bad) = t.iter().find(|&&t| t > cfg.num_timesteps) {
            return Err(Error::TimestepOutOfRange {
                t: bad,
                max: cfg.num_timesteps,
            });
        }
        if let Some(&bad) = c.iter().find(|&&c| c > cfg.num_classes) {
            return Err(Error::ConditionOutOfRange {
                c: bad,
                max: cfg.num_classes,
            });
        }
        Ok(b)
    }

    /// Conditioning vector per item, `[B×d]`.
    pub fn conditioning(&self, t: &[usize], c: &[usize], omega: &[f64]) -> Result<Tensor<T>> {
        let p = &self.params;
        let times: Vec<f64> = t.iter().map(|&t| t as f64).collect();
        self.time_embed
            .forward(p, &times)?
            .add(&p.get(self.cond_embed).embedding(c)?)?
            .add(&self.omega_embed.forward(p, omega)?)
    }

    /// Residual stream entering the first block, `[B×L×d]`.
    pub fn embed(&self, z: &Tensor<T>, t: &[usize], c: &[usize], omega: &[f64]) -> Result<Tensor<T>> {
        self.validate(z, t, c, omega)?;
        let h = self.token_proj.forward(&self.params, z)?;
        h.add(&self.conditioning(t, c, omega)?.expand_tokens(self.config.seq_len)?)
    }

    /// Predicted noise `ε̂(z, ω, c, t)` with the same shape as `z` (`[B×L×D]`).
    pub fn forward(&self, z: &Tensor<T>, t: &[usize], c: &[usize], omega: &[f64]) -> Result<Tensor<T>> {
        if z.shape().first() == Some(&0) {
            self.validate(z, t, c, omega)?;
            return Ok(Tensor::zeros(z.shape()));
        }
        let mut h = self.embed(z, t, c, omega)?;
        for block in &self.blocks {
            h = block.forward(&self.params, &h)?;
        }
        self.out_proj.forward(&self.params, &h)
    }

    /// Apply only the output projection to a residual stream.
    pub fn project_out(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        self.out_proj.forward(&self.params, h)
    }
}

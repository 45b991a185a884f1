//! Vision transformer encoder: patch embedding, `L` pre-norm transformer
//! blocks and a final layer norm.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{patchify, Image};
use crate::params::{zeros_param, Init, LayerNorm, Linear, Parameters};
use crate::tensor::{DropoutStream, Real, Tensor};
use crate::weights::{self, NamedTensor};

const PROJ_INIT_STD: f64 = 0.02;

/// Dropout site identifiers; see [`Mode::stream`].
pub(crate) mod site {
    pub const EMBED: u64 = 1;
    pub const HASH_INPUT: u64 = 2;
    pub const MLP_BASE: u64 = 16;
}

/// Whether a forward pass trains (dropout active) or evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64, step: u64 },
}

impl Mode {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    pub fn stream(&self, op_id: u64) -> DropoutStream {
        match *self {
            Mode::Eval => DropoutStream { seed: 0, op_id, step: 0 },
            Mode::Train { seed, step } => DropoutStream { seed, op_id, step },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub hidden_size: usize,
    pub mlp_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
}

impl VitConfig {
    fn base(patch_size: usize) -> Self {
        Self {
            image_size: 224,
            patch_size,
            channels: 3,
            hidden_size: 768,
            mlp_dim: 3072,
            num_layers: 12,
            num_heads: 12,
            dropout: 0.1,
        }
    }

    /// ViT-B/32 backbone: 49 patches.
    pub fn vts32() -> Self {
        Self::base(32)
    }

    /// ViT-B/16 backbone: 196 patches.
    pub fn vts16() -> Self {
        Self::base(16)
    }

    /// Desk-scale model for tests and demos: 16 patches of 8x8, width 64.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            hidden_size: 64,
            mlp_dim: 128,
            num_layers: 2,
            num_heads: 4,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.image_size,
            self.patch_size,
            self.channels,
            self.hidden_size,
            self.mlp_dim,
            self.num_heads,
        ];
        if positive.contains(&0) {
            return Err(Error::Config(format!("zero dimension in {self:?}")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    /// Tokens seen by the transformer: patches plus the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

#[derive(Clone, Debug)]
pub struct Attention<T: Real> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
    pub num_heads: usize,
}

impl<T: Real> Attention<T> {
    /// Returns the projected output `[B, T, de]` and attention weights
    /// `[B, heads, T, T]`.
    pub fn forward(&self, l: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (b, tokens, width) = dims3(l)?;
        let heads = self.num_heads;
        let hs = width / heads;
        let split = |x: Tensor<T>| x.reshape(&[b, tokens, heads, hs]);
        let q = split(self.query.forward(l)?)?.permute(&[0, 2, 1, 3])?;
        let k = split(self.key.forward(l)?)?.permute(&[0, 2, 3, 1])?;
        let v = split(self.value.forward(l)?)?.permute(&[0, 2, 1, 3])?;
        let scores = q.matmul(&k)?.scale(T::lit(1.0 / (hs as f64).sqrt()));
        let weights = scores.softmax(3)?;
        let mixed = weights
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, tokens, width])?;
        Ok((self.out.forward(&mixed)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct Block<T: Real> {
    pub ln1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp_in: Linear<T>,
    pub mlp_out: Linear<T>,
    pub dropout: f64,
}

impl<T: Real> Block<T> {
    fn new(cfg: &VitConfig, init: &mut Init) -> Self {
        let de = cfg.hidden_size;
        let mut proj = || Linear::new(init, de, de, PROJ_INIT_STD);
        let attn = Attention {
            query: proj(),
            key: proj(),
            value: proj(),
            out: proj(),
            num_heads: cfg.num_heads,
        };
        Self {
            ln1: LayerNorm::new(de),
            attn,
            ln2: LayerNorm::new(de),
            mlp_in: Linear::new(init, de, cfg.mlp_dim, PROJ_INIT_STD),
            mlp_out: Linear::new(init, cfg.mlp_dim, de, PROJ_INIT_STD),
            dropout: cfg.dropout,
        }
    }

    /// One transformer block; returns the new hidden state and the
    /// attention weights.
    pub fn forward(&self, h: &Tensor<T>, mode: Mode, index: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let (fs, weights) = self.attn.forward(&self.ln1.forward(h)?)?;
        let residual = h.add(&fs)?;
        let hidden = self.mlp_in.forward(&self.ln2.forward(&residual)?)?.gelu();
        let hidden = hidden.dropout(
            self.dropout,
            mode.is_training(),
            mode.stream(site::MLP_BASE + index as u64),
        )?;
        let out = residual.add(&self.mlp_out.forward(&hidden)?)?;
        Ok((out, weights))
    }

    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.ln1.visit(&format!("{p}.ln1"), f);
        let a = &self.attn;
        a.query.visit(&format!("{p}.attn.w_q"), &format!("{p}.attn.b_q"), f);
        a.key.visit(&format!("{p}.attn.w_k"), &format!("{p}.attn.b_k"), f);
        a.value.visit(&format!("{p}.attn.w_v"), &format!("{p}.attn.b_v"), f);
        a.out.visit(&format!("{p}.attn.w_a"), &format!("{p}.attn.b_a"), f);
        self.ln2.visit(&format!("{p}.ln2"), f);
        self.mlp_in.visit(&format!("{p}.mlp.w1"), &format!("{p}.mlp.b1"), f);
        self.mlp_out.visit(&format!("{p}.mlp.w2"), &format!("{p}.mlp.b2"), f);
    }

    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.ln1.visit_mut(&format!("{p}.ln1"), f);
        let a = &mut self.attn;
        a.query.visit_mut(&format!("{p}.attn.w_q"), &format!("{p}.attn.b_q"), f);
        a.key.visit_mut(&format!("{p}.attn.w_k"), &format!("{p}.attn.b_k"), f);
        a.value.visit_mut(&format!("{p}.attn.w_v"), &format!("{p}.attn.b_v"), f);
        a.out.visit_mut(&format!("{p}.attn.w_a"), &format!("{p}.attn.b_a"), f);
        self.ln2.visit_mut(&format!("{p}.ln2"), f);
        self.mlp_in.visit_mut(&format!("{p}.mlp.w1"), &format!("{p}.mlp.b1"), f);
        self.mlp_out.visit_mut(&format!("{p}.mlp.w2"), &format!("{p}.mlp.b2"), f);
    }
}

/// Encoder output for a batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput<T: Real> {
    /// Final layer-normalized states `[B, N+1, de]`.
    pub te: Tensor<T>,
    /// Input to the first block followed by every block output.
    pub hidden: Vec<Tensor<T>>,
    /// Per-block attention weights `[B, heads, N+1, N+1]`.
    pub attention: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct VitEncoder<T: Real = f32> {
    pub config: VitConfig,
    pub patch_proj: Linear<T>,
    pub cls_token: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub final_ln: LayerNorm<T>,
}

impl<T: Real> VitEncoder<T> {
    /// Fresh model: truncated-normal projections, zero biases, zero class
    /// token and position embeddings, identity layer norms.
    pub fn new(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let de = config.hidden_size;
        let patch_proj = Linear::new(&mut init, config.patch_dim(), de, PROJ_INIT_STD);
        let blocks = (0..config.num_layers).map(|_| Block::new(&config, &mut init)).collect();
        Ok(Self {
            patch_proj,
            cls_token: zeros_param(&[1, de]),
            pos_embed: zeros_param(&[config.num_tokens(), de]),
            blocks,
            final_ln: LayerNorm::new(de),
            config,
        })
    }

    /// Patch tensor `[B, N, c*k*k]` for a batch of images.
    pub fn patch_batch(&self, images: &[&Image]) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let mut data = Vec::with_capacity(images.len() * cfg.num_patches() * cfg.patch_dim());
        for img in images {
            if img.size() != cfg.image_size || img.channels() != cfg.channels {
                return Err(Error::Shape(format!(
                    "image {}x{}x{} does not match encoder input {}x{}x{}",
                    img.size(),
                    img.size(),
                    img.channels(),
                    cfg.image_size,
                    cfg.image_size,
                    cfg.channels
                )));
            }
            data.extend(patchify(img, cfg.patch_size)?.into_iter().map(|v| T::lit(v as f64)));
        }
        Tensor::from_vec(&[images.len(), cfg.num_patches(), cfg.patch_dim()], data)
    }

    /// `FE = dropout([CT; V W_PE] + PoE)`, shape `[B, N+1, de]`.
    pub fn embed(&self, patches: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, n, d) = dims3(patches)?;
        let cfg = &self.config;
        if n != cfg.num_patches() || d != cfg.patch_dim() {
            return Err(Error::Shape(format!(
                "patches {:?} do not match [_, {}, {}]",
                patches.shape(),
                cfg.num_patches(),
                cfg.patch_dim()
            )));
        }
        let de = cfg.hidden_size;
        let pe = self.patch_proj.forward(patches)?;
        let ct = self.cls_token.reshape(&[1, 1, de])?.broadcast_to(&[b, 1, de])?;
        let expanded = Tensor::concat(&[&ct, &pe], 1)?;
        expanded
            .add(&self.pos_embed)?
            .dropout(cfg.dropout, mode.is_training(), mode.stream(site::EMBED))
    }

    pub fn forward(&self, patches: &Tensor<T>, mode: Mode) -> Result<EncoderOutput<T>> {
        let mut h = self.embed(patches, mode)?;
        let mut hidden = vec![h.clone()];
        let mut attention = Vec::with_capacity(self.blocks.len());
        for (j, block) in self.blocks.iter().enumerate() {
            let (next, weights) = block.forward(&h, mode, j)?;
            h = next;
            hidden.push(h.clone());
            attention.push(weights);
        }
        Ok(EncoderOutput {
            te: self.final_ln.forward(&h)?,
            hidden,
            attention,
        })
    }

    /// Eval-mode encoding of one image; `te` has shape `[N+1, de]`.
    pub fn encode(&self, image: &Image) -> Result<EncoderOutput<T>> {
        let out = self.forward(&self.patch_batch(&[image])?, Mode::Eval)?;
        let cfg = &self.config;
        Ok(EncoderOutput {
            te: out.te.reshape(&[cfg.num_tokens(), cfg.hidden_size])?,
            ..out
        })
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        weights::write_weights(path, &self.to_named_tensors())
    }

    /// Loads an encoder saved with [`save_weights`](Self::save_weights);
    /// every tensor must be present, known and of the configured shape.
    pub fn load_weights(path: &Path, config: VitConfig) -> Result<Self> {
        let mut map = weights::into_map(weights::read_weights(path)?);
        let enc = Self::from_tensors(config, &mut map)?;
        weights::ensure_consumed(&map)?;
        Ok(enc)
    }

    pub fn from_tensors(config: VitConfig, map: &mut BTreeMap<String, NamedTensor>) -> Result<Self> {
        let mut enc = Self::new(config, 0)?;
        enc.assign_from(map)?;
        Ok(enc)
    }
}

impl<T: Real> Parameters<T> for VitEncoder<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.patch_proj.visit("embed.w_pe", "embed.b_pe", f);
        f("embed.cls_token", &self.cls_token);
        f("embed.pos_embed", &self.pos_embed);
        for (j, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block{j}"), f);
        }
        self.final_ln.visit("final_ln", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.patch_proj.visit_mut("embed.w_pe", "embed.b_pe", f);
        f("embed.cls_token", &mut self.cls_token);
        f("embed.pos_embed", &mut self.pos_embed);
        for (j, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block{j}"), f);
        }
        self.final_ln.visit_mut("final_ln", f);
    }
}

fn dims3<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Shape(format!("expected a rank-3 tensor, got {:?}", x.shape()))),
    }
}

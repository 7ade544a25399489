use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Dropout, ParamStore};

/// Output of one encoder call over `l` tokens.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `l x d` contextual embeddings.
    pub hidden: Tensor,
    /// `H x l x l` final-layer attention; every row sums to one.
    pub attention: Tensor,
}

/// Contract for document encoders. Implementations must be deterministic for
/// fixed parameters, input and dropout stream.
pub trait EncoderBackend {
    fn hidden_dim(&self) -> usize;
    fn num_heads(&self) -> usize;
    /// Longest sequence accepted by a single `encode` call.
    fn max_positions(&self) -> usize;
    fn encode(&self, ids: &[u32], dropout: &mut Dropout) -> Result<Encoded>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTransformerConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
}

struct Layer {
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ln1_g: Tensor,
    ln1_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    ln2_g: Tensor,
    ln2_b: Tensor,
}

/// Small post-norm transformer encoder with learned positions, trained from
/// scratch. Stands in for a pretrained language model behind
/// [`EncoderBackend`].
pub struct ToyTransformer {
    config: ToyTransformerConfig,
    tok_emb: Tensor,
    pos_emb: Tensor,
    emb_ln_g: Tensor,
    emb_ln_b: Tensor,
    layers: Vec<Layer>,
}

const LN_EPS: f64 = 1e-12;

/// Fixed sine/cosine position table, `max_positions x d`.
fn sinusoidal_positions(max_positions: usize, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(max_positions * d);
    for p in 0..max_positions {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((i / 2 * 2) as f64 / d as f64);
            let angle = p as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    nn::tensor_from(&data, &[max_positions, d])
}

impl ToyTransformer {
    pub fn new(
        config: ToyTransformerConfig,
        params: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        if config.num_heads == 0 || !d.is_multiple_of(config.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {d} is not divisible by num_heads {}",
                config.num_heads
            )));
        }
        let tok_emb = params.uniform("encoder.tok_emb", &[config.vocab_size, d], 0.1, rng)?;
        let pos_emb = sinusoidal_positions(config.max_positions, d)?;
        let emb_ln_g = params.constant("encoder.emb_ln.gamma", &[d], 1.0)?;
        let emb_ln_b = params.constant("encoder.emb_ln.beta", &[d], 0.0)?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let p = format!("encoder.layer{i}");
            let mut sq = |name: &str, params: &mut ParamStore| {
                params.fan_in(&format!("{p}.{name}"), &[d, d], d, rng)
            };
            let wq = sq("wq", params)?;
            let wk = sq("wk", params)?;
            let wv = sq("wv", params)?;
            let wo = sq("wo", params)?;
            let zeros = |name: &str, n: usize, params: &mut ParamStore| {
                params.constant(&format!("{p}.{name}"), &[n], 0.0)
            };
            let bq = zeros("bq", d, params)?;
            let bk = zeros("bk", d, params)?;
            let bv = zeros("bv", d, params)?;
            let bo = zeros("bo", d, params)?;
            let ln1_g = params.constant(&format!("{p}.ln1.gamma"), &[d], 1.0)?;
            let ln1_b = zeros("ln1.beta", d, params)?;
            let w1 = params.fan_in(&format!("{p}.w1"), &[d, f], d, rng)?;
            let b1 = zeros("b1", f, params)?;
            let w2 = params.fan_in(&format!("{p}.w2"), &[f, d], f, rng)?;
            let b2 = zeros("b2", d, params)?;
            let ln2_g = params.constant(&format!("{p}.ln2.gamma"), &[d], 1.0)?;
            let ln2_b = zeros("ln2.beta", d, params)?;
            layers.push(Layer {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                w1,
                b1,
                w2,
                b2,
                ln2_g,
                ln2_b,
            });
        }
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        })
    }

    pub fn config(&self) -> &ToyTransformerConfig {
        &self.config
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (l, d) = x.dims2()?;
        let h = self.config.num_heads;
        Ok(x.reshape((l, h, d / h))?.transpose(0, 1)?.contiguous()?)
    }
}

impl EncoderBackend for ToyTransformer {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn num_heads(&self) -> usize {
        self.config.num_heads
    }

    fn max_positions(&self) -> usize {
        self.config.max_positions
    }

    fn encode(&self, ids: &[u32], dropout: &mut Dropout) -> Result<Encoded> {
        let l = ids.len();
        if l == 0 {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        if l > self.config.max_positions {
            return Err(Error::Contract(format!(
                "sequence of {l} tokens exceeds {} positions",
                self.config.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside the vocabulary"
            )));
        }
        let d = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let scale = 1.0 / ((d / heads) as f64).sqrt();

        let idx = Tensor::new(ids, self.tok_emb.device())?;
        let x = (self.tok_emb.index_select(&idx, 0)? + self.pos_emb.narrow(0, 0, l)?)?;
        let mut x = dropout.apply(&nn::layer_norm(&x, &self.emb_ln_g, &self.emb_ln_b, LN_EPS)?)?;
        let mut attention = None;
        for layer in &self.layers {
            let q = self.split_heads(&nn::linear(&x, &layer.wq, Some(&layer.bq))?)?;
            let k = self.split_heads(&nn::linear(&x, &layer.wk, Some(&layer.bk))?)?;
            let v = self.split_heads(&nn::linear(&x, &layer.wv, Some(&layer.bv))?)?;
            let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * scale)?;
            let probs = nn::softmax_last(&scores)?;
            let ctx = probs
                .matmul(&v)?
                .transpose(0, 1)?
                .contiguous()?
                .reshape((l, d))?;
            let out = dropout.apply(&nn::linear(&ctx, &layer.wo, Some(&layer.bo))?)?;
            x = nn::layer_norm(&(x + out)?, &layer.ln1_g, &layer.ln1_b, LN_EPS)?;
            let ff = nn::linear(&x, &layer.w1, Some(&layer.b1))?.gelu()?;
            let ff = dropout.apply(&nn::linear(&ff, &layer.w2, Some(&layer.b2))?)?;
            x = nn::layer_norm(&(x + ff)?, &layer.ln2_g, &layer.ln2_b, LN_EPS)?;
            attention = Some(probs);
        }
        let attention = match attention {
            Some(a) => a,
            // Without layers there is no attention map; fall back to uniform.
            None => (Tensor::ones((heads, l, l), nn::DTYPE, x.device())? / l as f64)?,
        };
        debug_assert_eq!(attention.dims(), &[heads, l, l]);
        debug_assert_eq!(x.dim(D::Minus1)?, d);
        Ok(Encoded {
            hidden: x,
            attention,
        })
    }
}

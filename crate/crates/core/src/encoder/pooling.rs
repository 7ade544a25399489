//! Entity and context pooling over encoder outputs.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{self, NEG_MASK};

/// Logsumexp pooling of an `m x d` stack of mention embeddings into one
/// `d`-vector.
pub fn pool_entity(mention_embs: &Tensor) -> Result<Tensor> {
    let (m, _) = mention_embs.dims2()?;
    if m == 0 {
        return Err(Error::Contract(
            "entity pooling needs at least one mention".into(),
        ));
    }
    Ok(nn::logsumexp_keepdim(mention_embs, 0)?.squeeze(0)?)
}

/// Pools every entity at once. `markers[e]` lists the opening-marker
/// positions of entity `e`; the result is `n x d`.
pub fn pool_entities(hidden: &Tensor, markers: &[Vec<usize>]) -> Result<Tensor> {
    let (l, d) = hidden.dims2()?;
    let width = markers.iter().map(Vec::len).max().unwrap_or(0);
    if markers.iter().any(Vec::is_empty) {
        return Err(Error::Contract(
            "entity pooling needs at least one mention".into(),
        ));
    }
    let n = markers.len();
    let mut idx = Vec::with_capacity(n * width);
    let mut pad = Vec::with_capacity(n * width);
    for m in markers {
        for j in 0..width {
            let pos = m.get(j).copied().unwrap_or(m[0]);
            if pos >= l {
                return Err(Error::Contract(format!(
                    "marker {pos} outside sequence of {l}"
                )));
            }
            idx.push(pos as u32);
            pad.push(if j < m.len() { 0.0 } else { NEG_MASK });
        }
    }
    let idx = Tensor::from_vec(idx, n * width, hidden.device())?;
    let gathered = hidden.index_select(&idx, 0)?.reshape((n, width, d))?;
    let pad = nn::tensor_from(&pad, &[n, width, 1])?;
    let masked = gathered.broadcast_add(&pad)?;
    Ok(nn::logsumexp_keepdim(&masked, 1)?.squeeze(1)?)
}

/// Mean of the attention rows at the given marker positions: `H x l`.
pub fn pool_entity_attention(attention: &Tensor, markers: &[usize]) -> Result<Tensor> {
    let (_, l, _) = attention.dims3()?;
    if markers.is_empty() {
        return Err(Error::Contract(
            "attention pooling needs at least one mention".into(),
        ));
    }
    if let Some(&bad) = markers.iter().find(|&&m| m >= l) {
        return Err(Error::Contract(format!(
            "marker {bad} outside sequence of {l}"
        )));
    }
    let idx: Vec<u32> = markers.iter().map(|&m| m as u32).collect();
    let idx = Tensor::new(idx.as_slice(), attention.device())?;
    Ok(attention.index_select(&idx, 1)?.mean(1)?)
}

/// Per-entity attention for every entity: `n x H x l`.
pub fn pool_entity_attentions(attention: &Tensor, markers: &[Vec<usize>]) -> Result<Tensor> {
    let (heads, l, _) = attention.dims3()?;
    let all: Vec<u32> = markers.iter().flatten().map(|&m| m as u32).collect();
    if markers.iter().any(Vec::is_empty) {
        return Err(Error::Contract(
            "attention pooling needs at least one mention".into(),
        ));
    }
    if let Some(&bad) = all.iter().find(|&&m| m as usize >= l) {
        return Err(Error::Contract(format!(
            "marker {bad} outside sequence of {l}"
        )));
    }
    let total = all.len();
    let n = markers.len();
    // Averaging matrix: row e holds 1/|m_e| over the columns of e's mentions.
    let mut avg = vec![0.0; n * total];
    let mut col = 0;
    for (e, m) in markers.iter().enumerate() {
        for _ in m {
            avg[e * total + col] = 1.0 / m.len() as f64;
            col += 1;
        }
    }
    let idx = Tensor::from_vec(all, total, attention.device())?;
    let rows = attention.index_select(&idx, 1)?; // H x total x l
    let avg = nn::tensor_from(&avg, &[1, n, total])?.broadcast_as((heads, n, total))?;
    let pooled = avg.contiguous()?.matmul(&rows.contiguous()?)?; // H x n x l
    Ok(pooled.transpose(0, 1)?.contiguous()?)
}

/// Turns a raw query into a distribution; an all-zero query becomes uniform.
fn normalize_query(q: &Tensor) -> Result<Tensor> {
    let len = q.dim(D::Minus1)?;
    let total = q.sum_keepdim(D::Minus1)?;
    let zero = total.eq(0.0)?.to_dtype(nn::DTYPE)?;
    let num = q.broadcast_add(&(&zero / len as f64)?)?;
    Ok(num.broadcast_div(&(total + zero)?)?)
}

/// Context vector of one pair: `q = sum_h A_s[h] * A_o[h]`, optionally
/// normalized, then `c = hidden^T q`.
pub fn context_vector(
    attn_s: &Tensor,
    attn_o: &Tensor,
    hidden: &Tensor,
    normalize: bool,
) -> Result<Tensor> {
    let q = (attn_s * attn_o)?.sum(0)?;
    let q = if normalize { normalize_query(&q)? } else { q };
    Ok(q.unsqueeze(0)?.matmul(hidden)?.squeeze(0)?)
}

/// Context vectors for all ordered pairs: `n x n x d` from `n x H x l`
/// entity attention and `l x d` hidden states.
pub fn pair_contexts(entity_attn: &Tensor, hidden: &Tensor, normalize: bool) -> Result<Tensor> {
    let (n, _, l) = entity_attn.dims3()?;
    let d = hidden.dim(1)?;
    let by_pos = entity_attn.permute((2, 0, 1))?.contiguous()?; // l x n x H
    let q = by_pos.matmul(&by_pos.transpose(1, 2)?.contiguous()?)?; // l x n x n
    let q = q.permute((1, 2, 0))?.contiguous()?; // n x n x l
    let q = if normalize { normalize_query(&q)? } else { q };
    Ok(q.reshape((n * n, l))?.matmul(hidden)?.reshape((n, n, d))?)
}

/// Context fusion weights: `z = tanh(h W_e + c W_c)`.
#[derive(Debug, Clone)]
pub struct FuseParams {
    pub w_entity: Tensor,
    pub w_context: Tensor,
}

pub fn fuse_context(h_e: &Tensor, c: &Tensor, params: &FuseParams) -> Result<Tensor> {
    let a = nn::linear(&h_e.unsqueeze(0)?, &params.w_entity, None)?;
    let b = nn::linear(&c.unsqueeze(0)?, &params.w_context, None)?;
    Ok((a + b)?.tanh()?.squeeze(0)?)
}

/// Subject and object representations for every ordered pair: `z_s[s][o]`
/// fuses entity `s` with `c[s][o]`, `z_o[s][o]` fuses entity `o` with it.
pub fn fuse_pairs(
    entities: &Tensor,
    contexts: &Tensor,
    subject: &FuseParams,
    object: &FuseParams,
) -> Result<(Tensor, Tensor)> {
    let (n, d) = entities.dims2()?;
    let hs = nn::linear(entities, &subject.w_entity, None)?.reshape((n, 1, d))?;
    let cs = nn::linear(contexts, &subject.w_context, None)?;
    let z_s = cs.broadcast_add(&hs)?.tanh()?;
    let ho = nn::linear(entities, &object.w_entity, None)?.reshape((1, n, d))?;
    let co = nn::linear(contexts, &object.w_context, None)?;
    let z_o = co.broadcast_add(&ho)?.tanh()?;
    Ok((z_s, z_o))
}

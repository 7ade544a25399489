use candle_core::{Tensor, D};

use super::backend::{Encoded, EncoderBackend};
use crate::error::{Error, Result};
use crate::nn::{self, Dropout};

/// Chunk start offsets covering `len` positions with windows of `max_len`
/// advanced by `stride`. The final window is clipped at `len`.
pub fn chunk_starts(len: usize, max_len: usize, stride: usize) -> Result<Vec<usize>> {
    if len <= max_len {
        return Ok(vec![0]);
    }
    if stride == 0 || stride >= max_len {
        return Err(Error::Config(format!(
            "sequence of {len} tokens needs chunking but stride {stride} is not in 1..{max_len}"
        )));
    }
    let mut starts = vec![0];
    let mut s = 0;
    while s + max_len < len {
        s += stride;
        starts.push(s);
    }
    Ok(starts)
}

/// Encodes a sequence longer than the backend window as overlapping chunks.
///
/// Hidden states of a position are averaged over the chunks covering it.
/// Attention entries are averaged over the chunks covering both the query
/// and the key position (entries no chunk covers are zero) and each row is
/// then renormalized to sum to one.
pub fn encode_chunked<B: EncoderBackend + ?Sized>(
    ids: &[u32],
    backend: &B,
    max_len: usize,
    stride: usize,
    dropout: &mut Dropout,
) -> Result<Encoded> {
    let len = ids.len();
    if max_len == 0 || max_len > backend.max_positions() {
        return Err(Error::Config(format!(
            "chunk length {max_len} must be in 1..={}",
            backend.max_positions()
        )));
    }
    let starts = chunk_starts(len, max_len, stride)?;
    if starts.len() == 1 {
        return backend.encode(ids, dropout);
    }

    let mut hidden_sum: Option<Tensor> = None;
    let mut attn_sum: Option<Tensor> = None;
    let mut pos_count = vec![0f64; len];
    let mut cell_count = vec![0f64; len * len];
    for &s in &starts {
        let e = (s + max_len).min(len);
        let enc = backend.encode(&ids[s..e], dropout)?;
        let h = enc.hidden.pad_with_zeros(0, s, len - e)?;
        let a = enc
            .attention
            .pad_with_zeros(1, s, len - e)?
            .pad_with_zeros(2, s, len - e)?;
        hidden_sum = Some(match hidden_sum {
            Some(acc) => (acc + h)?,
            None => h,
        });
        attn_sum = Some(match attn_sum {
            Some(acc) => (acc + a)?,
            None => a,
        });
        for i in s..e {
            pos_count[i] += 1.0;
            for j in s..e {
                cell_count[i * len + j] += 1.0;
            }
        }
    }
    let hidden_sum = hidden_sum.expect("at least one chunk");
    let attn_sum = attn_sum.expect("at least one chunk");

    let pos_count = nn::tensor_from(&pos_count, &[len, 1])?;
    let hidden = hidden_sum.broadcast_div(&pos_count)?;

    let divisor: Vec<f64> = cell_count.iter().map(|&c| c.max(1.0)).collect();
    let divisor = nn::tensor_from(&divisor, &[1, len, len])?;
    let mean = attn_sum.broadcast_div(&divisor)?;
    let row_sum = mean.sum_keepdim(D::Minus1)?;
    let attention = mean.broadcast_div(&row_sum)?;
    Ok(Encoded { hidden, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::backend::{ToyTransformer, ToyTransformerConfig};
    use crate::nn::{seeded_rng, ParamStore, DTYPE};

    fn toy(max_positions: usize) -> ToyTransformer {
        let mut params = ParamStore::new();
        ToyTransformer::new(
            ToyTransformerConfig {
                vocab_size: 12,
                hidden_dim: 8,
                num_heads: 2,
                num_layers: 2,
                ffn_dim: 16,
                max_positions,
            },
            &mut params,
            &mut seeded_rng(5, "init"),
        )
        .unwrap()
    }

    /// Hidden state depends only on the token, attention is uniform; chunking
    /// must then leave hidden states untouched.
    struct Tokenwise;

    impl EncoderBackend for Tokenwise {
        fn hidden_dim(&self) -> usize {
            3
        }
        fn num_heads(&self) -> usize {
            1
        }
        fn max_positions(&self) -> usize {
            4
        }
        fn encode(&self, ids: &[u32], _: &mut Dropout) -> Result<Encoded> {
            let l = ids.len();
            let data: Vec<f64> = ids
                .iter()
                .flat_map(|&i| [i as f64, (i as f64).sin(), 1.0])
                .collect();
            Ok(Encoded {
                hidden: nn::tensor_from(&data, &[l, 3])?,
                attention: (Tensor::ones((1, l, l), DTYPE, &nn::device())? / l as f64)?,
            })
        }
    }

    #[test]
    fn starts_cover_the_sequence() {
        assert_eq!(chunk_starts(5, 8, 4).unwrap(), vec![0]);
        assert_eq!(chunk_starts(9, 8, 4).unwrap(), vec![0, 4]);
        assert_eq!(chunk_starts(20, 8, 4).unwrap(), vec![0, 4, 8, 12]);
        assert!(matches!(chunk_starts(9, 8, 0), Err(Error::Config(_))));
        assert!(chunk_starts(8, 8, 0).is_ok());
    }

    #[test]
    fn single_chunk_is_bit_identical() {
        let t = toy(8);
        let ids = [1, 2, 3, 4, 5];
        let direct = t.encode(&ids, &mut Dropout::disabled()).unwrap();
        let chunked = encode_chunked(&ids, &t, 8, 4, &mut Dropout::disabled()).unwrap();
        assert_eq!(
            direct.hidden.to_vec2::<f64>().unwrap(),
            chunked.hidden.to_vec2::<f64>().unwrap()
        );
        assert_eq!(
            direct.attention.to_vec3::<f64>().unwrap(),
            chunked.attention.to_vec3::<f64>().unwrap()
        );
    }

    #[test]
    fn overlap_matches_brute_force_average() {
        let t = toy(8);
        let ids: Vec<u32> = (0..9).map(|i| (i * 5 % 11) as u32 + 1).collect();
        let (max_len, stride) = (8, 4);
        let out = encode_chunked(&ids, &t, max_len, stride, &mut Dropout::disabled()).unwrap();
        let hidden = out.hidden.to_vec2::<f64>().unwrap();
        let attention = out.attention.to_vec3::<f64>().unwrap();

        // Oracle: explicit per-chunk encodes, then loops over positions.
        type Chunk = (usize, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);
        let chunks: Vec<Chunk> = [0usize, 4]
            .iter()
            .map(|&s| {
                let e = (s + max_len).min(ids.len());
                let enc = t.encode(&ids[s..e], &mut Dropout::disabled()).unwrap();
                (
                    s,
                    enc.hidden.to_vec2::<f64>().unwrap(),
                    enc.attention.to_vec3::<f64>().unwrap(),
                )
            })
            .collect();
        let l = ids.len();
        for p in 0..l {
            let covering: Vec<_> = chunks
                .iter()
                .filter(|(s, h, _)| p >= *s && p < s + h.len())
                .collect();
            if (4..8).contains(&p) {
                assert_eq!(covering.len(), 2);
            }
            for k in 0..8 {
                let mean = covering.iter().map(|(s, h, _)| h[p - s][k]).sum::<f64>()
                    / covering.len() as f64;
                assert!((hidden[p][k] - mean).abs() < 1e-12);
            }
            for head in 0..2 {
                let mut row = vec![0.0; l];
                for (q, cell) in row.iter_mut().enumerate() {
                    let vals: Vec<f64> = covering
                        .iter()
                        .filter(|(s, h, _)| q >= *s && q < s + h.len())
                        .map(|(s, _, a)| a[head][p - s][q - s])
                        .collect();
                    if !vals.is_empty() {
                        *cell = vals.iter().sum::<f64>() / vals.len() as f64;
                    }
                }
                let z: f64 = row.iter().sum();
                for q in 0..l {
                    assert!((attention[head][p][q] - row[q] / z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_chunks_average_to_single_chunk_values() {
        let ids = [1, 2, 1, 2, 1, 2, 1, 2, 1, 2];
        let single = Tokenwise.encode(&ids, &mut Dropout::disabled()).unwrap();
        let chunked = encode_chunked(&ids, &Tokenwise, 4, 2, &mut Dropout::disabled()).unwrap();
        assert_eq!(
            single.hidden.to_vec2::<f64>().unwrap(),
            chunked.hidden.to_vec2::<f64>().unwrap()
        );
        for row in chunked.attention.to_vec3::<f64>().unwrap().remove(0) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

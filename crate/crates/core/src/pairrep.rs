//! Entity-pair matrix: grouped bilinear fusion, axial attention over the
//! `n x n` pair grid and the per-pair classifier head.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, NEG_MASK};

/// Grouped bilinear weights. With block size `b = d / k`, `weight` has shape
/// `(k * b * b, d)` and `weight[(j * b + x) * b + y][i]` is entry `(x, y)` of
/// the block matrix of group `j` for output dimension `i`.
#[derive(Debug, Clone)]
pub struct BilinearParams {
    pub groups: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl BilinearParams {
    pub fn new(groups: usize, weight: Tensor, bias: Tensor) -> Result<Self> {
        let d = bias.dim(0)?;
        check_groups(d, groups)?;
        let b = d / groups;
        if weight.dims() != [groups * b * b, d] {
            return Err(Error::Config(format!(
                "bilinear weight has shape {:?}, expected [{}, {d}]",
                weight.dims(),
                groups * b * b
            )));
        }
        Ok(Self {
            groups,
            weight,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.dims()[1]
    }
}

pub fn check_groups(d: usize, groups: usize) -> Result<()> {
    if groups == 0 || !d.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "group count {groups} does not divide dimension {d}"
        )));
    }
    Ok(())
}

/// Grouped bilinear form over any leading batch shape: inputs `(..., d)`,
/// output `(..., d)`.
pub fn grouped_bilinear_batch(
    z_s: &Tensor,
    z_o: &Tensor,
    params: &BilinearParams,
) -> Result<Tensor> {
    let dims = z_s.dims().to_vec();
    let d = *dims
        .last()
        .ok_or_else(|| Error::Contract("scalar input".into()))?;
    if d != params.dim() || z_o.dims() != dims.as_slice() {
        return Err(Error::Contract(format!(
            "bilinear inputs {:?} and {:?} do not match dimension {}",
            dims,
            z_o.dims(),
            params.dim()
        )));
    }
    let k = params.groups;
    let b = d / k;
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let left = z_s.reshape((rows, k, b, 1))?;
    let right = z_o.reshape((rows, k, 1, b))?;
    let outer = left.broadcast_mul(&right)?.reshape((rows, k * b * b))?;
    let g = nn::linear(&outer, &params.weight, Some(&params.bias))?;
    Ok(g.reshape(dims)?)
}

pub fn grouped_bilinear(z_s: &Tensor, z_o: &Tensor, params: &BilinearParams) -> Result<Tensor> {
    grouped_bilinear_batch(z_s, z_o, params)
}

/// `n x n x d` pair representations; diagonal cells are zero and masked.
#[derive(Debug, Clone)]
pub struct PairMatrix {
    pub g: Tensor,
    pub n: usize,
}

impl PairMatrix {
    pub fn diagonal_mask(&self, s: usize, o: usize) -> bool {
        s != o
    }
}

/// `n x n x 1` tensor with 0 on the diagonal and 1 elsewhere.
pub fn off_diagonal(n: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..n * n)
        .map(|i| if i / n == i % n { 0.0 } else { 1.0 })
        .collect();
    nn::tensor_from(&data, &[n, n, 1])
}

/// Fills `G[s][o] = bilinear(z_s[s][o], z_o[s][o])` for `s != o`.
pub fn build_pair_matrix(
    z_s: &Tensor,
    z_o: &Tensor,
    params: &BilinearParams,
) -> Result<PairMatrix> {
    let (n, n2, _) = z_s.dims3()?;
    if n != n2 {
        return Err(Error::Contract(format!("pair grid is {n} x {n2}")));
    }
    let g = grouped_bilinear_batch(z_s, z_o, params)?;
    let g = g.broadcast_mul(&off_diagonal(n)?)?;
    Ok(PairMatrix { g, n })
}

#[derive(Debug, Clone)]
pub struct AxialParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AxialOptions {
    /// Exclude diagonal cells from the attention keys.
    #[serde(default)]
    pub mask_diagonal: bool,
    /// Project the second axis from `r_h` instead of `g`.
    #[serde(default)]
    pub stacked: bool,
}

fn project(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    nn::linear(x, w, None)
}

/// `[a][_][p]` is masked when `a == p`, matching both axis layouts below.
fn diagonal_key_mask(n: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..n * n)
        .map(|i| if i / n == i % n { NEG_MASK } else { 0.0 })
        .collect();
    nn::tensor_from(&data, &[n, 1, n])
}

/// Attention along the last-but-one axis of `(a, b, d)` tensors: for every
/// `(a, b)`, softmax over `p` of `q[a][b] . k[a][p]`, weighted sum of `v[a][p]`.
fn attend(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let scores = q.matmul(&k.transpose(1, 2)?.contiguous()?)?;
    let scores = match mask {
        Some(m) => scores.broadcast_add(m)?,
        None => scores,
    };
    Ok(nn::softmax_last(&scores)?.matmul(v)?)
}

/// One pass of two-axis attention with residuals:
///
/// `r_h(s,o) = g(s,o) + sum_p softmax_p(q(s,o).k(p,o)) v(p,o)`
/// `r_w(s,o) = r_h(s,o) + sum_p softmax_p(q(s,o).k(s,p)) v(s,p)`
///
/// with `q, k, v` linear projections of `g` (of `r_h` for the second axis
/// when `stacked`). Returns `r_w`.
pub fn axial_attention(g: &Tensor, params: &AxialParams, opts: AxialOptions) -> Result<Tensor> {
    let (n, _, _) = g.dims3()?;
    let mask = if opts.mask_diagonal {
        Some(diagonal_key_mask(n)?)
    } else {
        None
    };
    let q = project(g, &params.w_q)?;
    let k = project(g, &params.w_k)?;
    let v = project(g, &params.w_v)?;

    // Column axis: fix o, attend over p in (p, o).
    let qt = q.transpose(0, 1)?.contiguous()?;
    let kt = k.transpose(0, 1)?.contiguous()?;
    let vt = v.transpose(0, 1)?.contiguous()?;
    let col = attend(&qt, &kt, &vt, mask.as_ref())?.transpose(0, 1)?;
    let r_h = (g + col)?;

    // Row axis: fix s, attend over p in (s, p).
    let row = if opts.stacked {
        let q = project(&r_h, &params.w_q)?;
        let k = project(&r_h, &params.w_k)?;
        let v = project(&r_h, &params.w_v)?;
        attend(&q, &k, &v, mask.as_ref())?
    } else {
        attend(&q, &k, &v, mask.as_ref())?
    };
    Ok((r_h + row)?)
}

/// Linear map to `c = |R| + 1` logits, threshold class at index 0.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ClassifierHead {
    pub fn num_classes(&self) -> usize {
        self.bias.dims()[0]
    }
}

pub fn classify(r: &Tensor, head: &ClassifierHead) -> Result<Tensor> {
    nn::linear(r, &head.weight, Some(&head.bias))
}

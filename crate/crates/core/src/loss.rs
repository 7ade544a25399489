//! Threshold-class losses and the multi-label decision rule.
//!
//! Logit vectors have `c = |R| + 1` entries: the threshold class at
//! [`TH_INDEX`] followed by the relations in schema order, so relation
//! position `r` lives at logit index `r + 1`.

use std::collections::BTreeSet;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelTensor, TH_INDEX};
use crate::error::{Error, Result};
use crate::nn::{self, NEG_MASK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossVariant {
    /// Each positive ranked against the threshold with focal weighting, plus
    /// a threshold-versus-negatives softmax term.
    #[default]
    #[serde(rename = "AFL")]
    Afl,
    /// All positives share one softmax with the threshold class.
    #[serde(rename = "ATL")]
    Atl,
    /// Independent binary cross-entropy on `l_r - l_TH`; diagnostic only.
    #[serde(rename = "BCE")]
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub variant: LossVariant,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.5
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::Afl,
            gamma: default_gamma(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be a finite nonnegative number, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Positive relation positions of one pair; every other relation is negative.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairTarget {
    pub positives: BTreeSet<usize>,
}

impl PairTarget {
    pub fn new(positives: impl IntoIterator<Item = usize>) -> Self {
        Self {
            positives: positives.into_iter().collect(),
        }
    }

    pub fn negatives(&self, num_relations: usize) -> Vec<usize> {
        (0..num_relations)
            .filter(|r| !self.positives.contains(r))
            .collect()
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_target(logits: &[f64], target: &PairTarget) -> Result<usize> {
    let num_relations = logits
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Contract("empty logit vector".into()))?;
    if let Some(&r) = target.positives.iter().find(|&&r| r >= num_relations) {
        return Err(Error::Contract(format!(
            "positive relation {r} outside {num_relations} relations"
        )));
    }
    Ok(num_relations)
}

/// `-log P(TH)` with the softmax taken over the negatives and TH.
fn threshold_term(logits: &[f64], target: &PairTarget, num_relations: usize) -> f64 {
    let th = logits[TH_INDEX];
    let support = std::iter::once(th).chain(
        target
            .negatives(num_relations)
            .into_iter()
            .map(|r| logits[r + 1]),
    );
    log_sum_exp(support) - th
}

/// Adaptive focal loss of one pair:
/// `sum_{r in P} (1 - P(r))^gamma * -log P(r) - log P(TH)` where
/// `P(r) = sigmoid(l_r - l_TH)`.
pub fn afl_loss(logits: &[f64], target: &PairTarget, gamma: f64) -> Result<f64> {
    let num_relations = check_target(logits, target)?;
    let th = logits[TH_INDEX];
    let positive: f64 = target
        .positives
        .iter()
        .map(|&r| {
            let l = logits[r + 1];
            // 1 - P(r) = sigmoid(l_TH - l_r), -log P(r) = softplus(l_TH - l_r)
            (-gamma * softplus(l - th)).exp() * softplus(th - l)
        })
        .sum();
    Ok(positive + threshold_term(logits, target, num_relations))
}

/// Adaptive thresholding loss: positives ranked jointly in one softmax with
/// TH; the threshold term is shared with [`afl_loss`].
pub fn atl_loss(logits: &[f64], target: &PairTarget) -> Result<f64> {
    let num_relations = check_target(logits, target)?;
    let th = logits[TH_INDEX];
    let lse =
        log_sum_exp(std::iter::once(th).chain(target.positives.iter().map(|&r| logits[r + 1])));
    let positive: f64 = target.positives.iter().map(|&r| lse - logits[r + 1]).sum();
    Ok(positive + threshold_term(logits, target, num_relations))
}

pub fn bce_loss(logits: &[f64], target: &PairTarget) -> Result<f64> {
    let num_relations = check_target(logits, target)?;
    let th = logits[TH_INDEX];
    Ok((0..num_relations)
        .map(|r| {
            let margin = logits[r + 1] - th;
            if target.positives.contains(&r) {
                softplus(-margin)
            } else {
                softplus(margin)
            }
        })
        .sum())
}

pub fn pair_loss(logits: &[f64], target: &PairTarget, config: &LossConfig) -> Result<f64> {
    match config.variant {
        LossVariant::Afl => afl_loss(logits, target, config.gamma),
        LossVariant::Atl => atl_loss(logits, target),
        LossVariant::Bce => bce_loss(logits, target),
    }
}

/// Relations whose logit is strictly above the threshold logit. Empty means
/// no relation.
pub fn decide(logits: &[f64]) -> BTreeSet<usize> {
    let th = logits[TH_INDEX];
    logits
        .iter()
        .skip(1)
        .enumerate()
        .filter(|(_, &l)| l > th)
        .map(|(r, _)| r)
        .collect()
}

/// Per-pair losses for a `(p, c)` logit tensor and `(p, |R|)` 0/1 labels.
pub fn pair_losses(logits: &Tensor, labels: &Tensor, config: &LossConfig) -> Result<Tensor> {
    let (p, c) = logits.dims2()?;
    if labels.dims() != [p, c - 1] {
        return Err(Error::Contract(format!(
            "labels {:?} do not match logits {:?}",
            labels.dims(),
            logits.dims()
        )));
    }
    let th = logits.narrow(1, TH_INDEX, 1)?;
    let rel = logits.narrow(1, 1, c - 1)?;
    let margin = rel.broadcast_sub(&th)?;
    let negatives = labels.affine(-1.0, 1.0)?;

    let threshold = || -> Result<Tensor> {
        let masked = (&rel + (labels * NEG_MASK)?)?;
        let support = Tensor::cat(&[&th, &masked], 1)?;
        Ok(nn::logsumexp_keepdim(&support, 1)?.sub(&th)?.squeeze(1)?)
    };

    let loss = match config.variant {
        LossVariant::Afl => {
            let weight = (nn::softplus(&margin)? * -config.gamma)?.exp()?;
            let nll = nn::softplus(&margin.neg()?)?;
            let positive = (weight * nll)?.mul(labels)?.sum(D::Minus1)?;
            (positive + threshold()?)?
        }
        LossVariant::Atl => {
            let masked = (&rel + (&negatives * NEG_MASK)?)?;
            let support = Tensor::cat(&[&th, &masked], 1)?;
            let lse = nn::logsumexp_keepdim(&support, 1)?;
            let positive = lse.broadcast_sub(&rel)?.mul(labels)?.sum(D::Minus1)?;
            (positive + threshold()?)?
        }
        LossVariant::Bce => {
            let pos = nn::softplus(&margin.neg()?)?.mul(labels)?;
            let neg = nn::softplus(&margin)?.mul(&negatives)?;
            (pos + neg)?.sum(D::Minus1)?
        }
    };
    Ok(loss)
}

/// Flat indices `s * n + o` of the pairs that take part in the loss:
/// off-diagonal and, when given, enabled in `mask`.
pub fn active_pairs(n: usize, mask: Option<&[bool]>) -> Result<Vec<u32>> {
    if let Some(m) = mask {
        if m.len() != n * n {
            return Err(Error::Contract(format!(
                "mask has {} cells, expected {}",
                m.len(),
                n * n
            )));
        }
    }
    Ok((0..n * n)
        .filter(|&i| i / n != i % n && mask.is_none_or(|m| m[i]))
        .map(|i| i as u32)
        .collect())
}

/// `(p, |R|)` 0/1 label rows for the given flat pair indices.
pub fn label_rows(labels: &LabelTensor, pairs: &[u32]) -> Result<Tensor> {
    let r = labels.num_relations;
    let n = labels.n;
    let mut data = Vec::with_capacity(pairs.len() * r);
    for &i in pairs {
        let i = i as usize;
        data.extend((0..r).map(|k| f64::from(labels.get(i / n, i % n, k))));
    }
    nn::tensor_from(&data, &[pairs.len(), r])
}

/// Mean per-pair loss over the active pairs of an `n x n x c` logit tensor.
pub fn batch_loss(
    logits: &Tensor,
    labels: &LabelTensor,
    mask: Option<&[bool]>,
    config: &LossConfig,
) -> Result<Tensor> {
    let (n, n2, c) = logits.dims3()?;
    if n != labels.n || n2 != labels.n || c != labels.num_relations + 1 {
        return Err(Error::Contract(format!(
            "logits {:?} do not match labels for {} entities and {} relations",
            logits.dims(),
            labels.n,
            labels.num_relations
        )));
    }
    let pairs = active_pairs(n, mask)?;
    if pairs.is_empty() {
        return Err(Error::Contract("every pair is masked".into()));
    }
    let idx = Tensor::new(pairs.as_slice(), logits.device())?;
    let rows = logits.reshape((n * n, c))?.index_select(&idx, 0)?;
    let targets = label_rows(labels, &pairs)?;
    Ok(pair_losses(&rows, &targets, config)?.mean_all()?)
}

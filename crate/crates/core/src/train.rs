//! Mini-batch trainer shared by every stage: AdamW with linear warmup and
//! decay, global gradient-norm clipping, seeded shuffling and dropout.

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_label_tensor, Document, LabelTensor, RelationSchema};
use crate::distill::{kd_pair_losses, KdKind, SoftLabelStore};
use crate::error::{Error, Result};
use crate::loss::{active_pairs, label_rows, pair_losses, LossConfig};
use crate::model::RelationModel;
use crate::nn::{self, Dropout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of all steps spent on the linear warmup.
    pub warmup_fraction: f64,
    pub dropout: f64,
    pub max_grad_norm: f64,
    /// Documents per optimizer step.
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-5,
            warmup_fraction: 0.06,
            dropout: 0.1,
            max_grad_norm: 1.0,
            batch_size: 4,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        Ok(())
    }
}

/// Learning rate at 0-based `step` of `total`: linear warmup over the first
/// `warmup` steps, then linear decay towards zero.
pub fn scheduled_lr(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base * (total - step) as f64 / (total - warmup).max(1) as f64
    }
}

pub struct KdTerm<'a> {
    pub kind: KdKind,
    pub weight: f64,
    pub store: &'a SoftLabelStore,
}

/// Hard-label relation loss, optionally plus a weighted distillation term.
pub struct Objective<'a> {
    pub loss: LossConfig,
    pub kd: Option<KdTerm<'a>>,
}

impl<'a> Objective<'a> {
    pub fn hard(loss: LossConfig) -> Self {
        Self { loss, kd: None }
    }

    pub fn distill(loss: LossConfig, kind: KdKind, weight: f64, store: &'a SoftLabelStore) -> Self {
        Self {
            loss,
            kd: Some(KdTerm {
                kind,
                weight,
                store,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    pub grad_norm: f64,
    /// Relation loss of the batch.
    pub re_loss: f64,
    /// Weighted distillation loss; zero without a distillation term.
    pub kd_loss: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.total_loss)
    }

    /// Mean total loss per epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.steps.last().map_or(0, |s| s.epoch + 1);
        (0..epochs)
            .map(|e| {
                let v: Vec<f64> = self
                    .steps
                    .iter()
                    .filter(|s| s.epoch == e)
                    .map(|s| s.total_loss)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }
}

/// Called after every epoch with the 0-based epoch index.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &RelationModel) -> Result<()>;

struct Example<'d> {
    doc: &'d Document,
    labels: LabelTensor,
    pairs: Vec<u32>,
    targets: Tensor,
    teacher: Option<Tensor>,
}

fn prepare<'d>(
    docs: &'d [Document],
    schema: &RelationSchema,
    objective: &Objective<'_>,
) -> Result<Vec<Example<'d>>> {
    let mut out = Vec::new();
    for doc in docs {
        if doc.n_entities() < 2 {
            continue;
        }
        let labels = build_label_tensor(doc, schema)?;
        let n = doc.n_entities();
        let pairs = active_pairs(n, None)?;
        let targets = label_rows(&labels, &pairs)?;
        let teacher = match &objective.kd {
            Some(kd) => {
                let mut rows = Vec::with_capacity(pairs.len() * schema.num_classes());
                for &p in &pairs {
                    let p = p as usize;
                    rows.extend_from_slice(kd.store.get(&doc.doc_id, p / n, p % n)?);
                }
                Some(nn::tensor_from(
                    &rows,
                    &[pairs.len(), schema.num_classes()],
                )?)
            }
            None => None,
        };
        out.push(Example {
            doc,
            labels,
            pairs,
            targets,
            teacher,
        });
    }
    Ok(out)
}

fn clip_gradients(model: &RelationModel, grads: &mut GradStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (_, var) in model.params().iter() {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += nn::scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Ok(norm);
    }
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for (_, var) in model.params().iter() {
            if let Some(g) = grads.remove(var.as_tensor()) {
                grads.insert(var.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

/// Trains `model` in place on `docs`. The shuffling and dropout streams are
/// derived from `seed` and `stage`, so a stage is reproducible on its own.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &RelationModel,
    docs: &[Document],
    schema: &RelationSchema,
    config: &TrainConfig,
    objective: &Objective<'_>,
    seed: u64,
    stage: &str,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainLog> {
    config.validate()?;
    objective.loss.validate()?;
    model.check_schema(schema)?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus(format!("{stage} corpus is empty")));
    }
    let examples = prepare(docs, schema, objective)?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{stage} corpus has no document with two or more entities"
        )));
    }
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }

    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total = batches_per_epoch * config.epochs;
    let warmup = (config.warmup_fraction * total as f64).floor() as usize;
    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        },
    )?;
    let mut shuffle_rng = nn::seeded_rng(seed, &format!("{stage}/shuffle"));
    let mut dropout = Dropout::new(
        config.dropout,
        nn::seeded_rng(seed, &format!("{stage}/dropout")),
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let mut re_terms = Vec::with_capacity(batch.len());
            let mut kd_terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &examples[i];
                let logits = model.forward(ex.doc, &mut dropout)?;
                let n = ex.labels.n;
                let idx = Tensor::new(ex.pairs.as_slice(), logits.device())?;
                let rows = logits
                    .reshape((n * n, schema.num_classes()))?
                    .index_select(&idx, 0)?;
                re_terms.push(pair_losses(&rows, &ex.targets, &objective.loss)?.mean_all()?);
                if let (Some(kd), Some(teacher)) = (&objective.kd, &ex.teacher) {
                    kd_terms.push(kd_pair_losses(&rows, teacher, kd.kind)?.mean_all()?);
                }
            }
            let re = (Tensor::stack(&re_terms, 0)?.mean_all())?;
            let (kd, total_loss) = match &objective.kd {
                Some(term) => {
                    let kd = (Tensor::stack(&kd_terms, 0)?.mean_all()? * term.weight)?;
                    let total_loss = (&re + &kd)?;
                    (Some(kd), total_loss)
                }
                None => (None, re.clone()),
            };
            let total_value = nn::scalar(&total_loss)?;
            if !total_value.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("{stage} loss became {total_value} in epoch {epoch}"),
                });
            }
            let mut grads = total_loss.backward()?;
            let grad_norm = clip_gradients(model, &mut grads, config.max_grad_norm)?;
            if !grad_norm.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("{stage} gradient norm became {grad_norm}"),
                });
            }
            let lr = scheduled_lr(config.learning_rate, step, total, warmup);
            opt.set_learning_rate(lr);
            opt.step(&grads)?;
            log.steps.push(StepRecord {
                epoch,
                step,
                learning_rate: lr,
                grad_norm,
                re_loss: nn::scalar(&re)?,
                kd_loss: match &kd {
                    Some(k) => nn::scalar(k)?,
                    None => 0.0,
                },
                total_loss: total_value,
            });
            step += 1;
        }
        if let Some(h) = hook.as_mut() {
            h(epoch, model)?;
        }
    }
    Ok(log)
}

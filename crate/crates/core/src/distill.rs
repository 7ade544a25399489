//! Adaptation from distantly supervised data: teacher soft labels, the
//! distillation losses and the teacher / pretrain / finetune stages.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Document, RelationSchema};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::loss::LossConfig;
use crate::model::{ModelConfig, RelationModel};
use crate::nn;
use crate::train::{train, EpochHook, Objective, TrainConfig, TrainLog};

pub const SOFT_LABEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Strategy {
    /// Pretrain on distant hard labels only.
    #[default]
    #[serde(rename = "NA")]
    Na,
    #[serde(rename = "KD_MSE")]
    KdMse,
    #[serde(rename = "KD_KL")]
    KdKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KdKind {
    Mse,
    Kl,
}

impl Strategy {
    pub fn kd_kind(self) -> Option<KdKind> {
        match self {
            Strategy::Na => None,
            Strategy::KdMse => Some(KdKind::Mse),
            Strategy::KdKl => Some(KdKind::Kl),
        }
    }
}

/// Mean squared difference over the full logit vector.
pub fn kd_mse_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    check_lengths(student, teacher)?;
    Ok(student
        .iter()
        .zip(teacher)
        .map(|(s, t)| (s - t) * (s - t))
        .sum::<f64>()
        / student.len() as f64)
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// `KL(softmax(teacher) || softmax(student))` at temperature 1.
pub fn kd_kl_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    check_lengths(student, teacher)?;
    let ls = log_softmax(student);
    let lt = log_softmax(teacher);
    Ok(lt
        .iter()
        .zip(&ls)
        .map(|(t, s)| t.exp() * (t - s))
        .sum::<f64>()
        .max(0.0))
}

fn check_lengths(student: &[f64], teacher: &[f64]) -> Result<()> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::ClassCountMismatch {
            expected: teacher.len(),
            found: student.len(),
        });
    }
    Ok(())
}

/// Per-pair distillation losses for `(p, c)` student and teacher logits.
pub fn kd_pair_losses(student: &Tensor, teacher: &Tensor, kind: KdKind) -> Result<Tensor> {
    if student.dims() != teacher.dims() {
        return Err(Error::Contract(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.dims(),
            teacher.dims()
        )));
    }
    Ok(match kind {
        KdKind::Mse => (student - teacher)?.sqr()?.mean(D::Minus1)?,
        KdKind::Kl => {
            let log_q = student.broadcast_sub(&nn::logsumexp_keepdim(student, 1)?)?;
            let log_p = teacher.broadcast_sub(&nn::logsumexp_keepdim(teacher, 1)?)?;
            (log_p.exp()? * (log_p - log_q)?)?.sum(D::Minus1)?
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    class_count: usize,
    teacher_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreRecord {
    doc_id: String,
    s: usize,
    o: usize,
    logits: Vec<f64>,
}

/// Teacher logits for every off-diagonal pair of a corpus.
///
/// Stored as JSON lines: a header object `{version, class_count,
/// teacher_fingerprint}` followed by one `{doc_id, s, o, logits}` object per
/// pair, sorted by `(doc_id, s, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelStore {
    pub class_count: usize,
    pub teacher_fingerprint: String,
    records: BTreeMap<(String, usize, usize), Vec<f64>>,
}

impl SoftLabelStore {
    pub fn new(class_count: usize, teacher_fingerprint: impl Into<String>) -> Self {
        Self {
            class_count,
            teacher_fingerprint: teacher_fingerprint.into(),
            records: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, doc_id: &str, s: usize, o: usize, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.class_count {
            return Err(Error::ClassCountMismatch {
                expected: self.class_count,
                found: logits.len(),
            });
        }
        self.records.insert((doc_id.to_string(), s, o), logits);
        Ok(())
    }

    pub fn get(&self, doc_id: &str, s: usize, o: usize) -> Result<&[f64]> {
        self.records
            .get(&(doc_id.to_string(), s, o))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingSoftLabel {
                doc_id: doc_id.to_string(),
                head: s,
                tail: o,
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = ((&str, usize, usize), &[f64])> {
        self.records
            .iter()
            .map(|((d, s, o), v)| ((d.as_str(), *s, *o), v.as_slice()))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&StoreHeader {
            version: SOFT_LABEL_FORMAT_VERSION,
            class_count: self.class_count,
            teacher_fingerprint: self.teacher_fingerprint.clone(),
        })?;
        out.push('\n');
        for ((doc_id, s, o), logits) in &self.records {
            out.push_str(&serde_json::to_string(&StoreRecord {
                doc_id: doc_id.clone(),
                s: *s,
                o: *o,
                logits: logits.clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Contract("soft-label store is empty".into()))?
            .map_err(|e| Error::Contract(format!("reading soft labels: {e}")))?;
        let header: StoreHeader = serde_json::from_str(&header)?;
        if header.version != SOFT_LABEL_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported soft-label format version {}",
                header.version
            )));
        }
        let mut store = Self::new(header.class_count, header.teacher_fingerprint);
        for line in lines {
            let line = line.map_err(|e| Error::Contract(format!("reading soft labels: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoreRecord = serde_json::from_str(&line)?;
            store.insert(&rec.doc_id, rec.s, rec.o, rec.logits)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_jsonl(BufReader::new(f))
    }

    /// Loads a store and verifies it was produced for `class_count` classes
    /// by the teacher with `fingerprint`.
    pub fn load_checked(path: &Path, class_count: usize, fingerprint: &str) -> Result<Self> {
        let store = Self::load(path)?;
        store.verify(class_count, fingerprint)?;
        Ok(store)
    }

    pub fn verify(&self, class_count: usize, fingerprint: &str) -> Result<()> {
        if self.class_count != class_count {
            return Err(Error::ClassCountMismatch {
                expected: class_count,
                found: self.class_count,
            });
        }
        if self.teacher_fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: fingerprint.to_string(),
                found: self.teacher_fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::Contract(format!("writing soft labels: {e}")))
    }
}

/// Hash identifying a teacher: SHA-256 over its model configuration,
/// vocabulary, class count and every parameter value in name order.
pub fn teacher_fingerprint(teacher: &RelationModel) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(teacher.config())?);
    h.update(serde_json::to_vec(teacher.vocab())?);
    h.update((teacher.num_classes() as u64).to_le_bytes());
    for (name, var) in teacher.params().iter() {
        h.update(name.as_bytes());
        for v in var.as_tensor().flatten_all()?.to_vec1::<f64>()? {
            h.update(v.to_le_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs the teacher over every document of `corpus` and stores the logits of
/// each off-diagonal pair.
pub fn generate_soft_labels(
    teacher: &RelationModel,
    corpus: &[Document],
    fingerprint: &str,
) -> Result<SoftLabelStore> {
    let mut store = SoftLabelStore::new(teacher.num_classes(), fingerprint);
    for doc in corpus {
        if doc.n_entities() < 2 {
            continue;
        }
        let logits = teacher.logits(doc)?;
        for (s, o) in doc.candidate_pairs() {
            store.insert(&doc.doc_id, s, o, logits[s][o].clone())?;
        }
    }
    Ok(store)
}

/// Which distant-data adaptation to run and how strongly to weigh the
/// distillation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationPlan {
    pub strategy: Strategy,
    pub kd_weight: f64,
}

impl Default for AdaptationPlan {
    fn default() -> Self {
        Self {
            strategy: Strategy::Na,
            kd_weight: 1.0,
        }
    }
}

impl AdaptationPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.kd_weight >= 0.0 && self.kd_weight.is_finite()) {
            return Err(Error::Config(format!(
                "kd_weight must be finite and nonnegative, got {}",
                self.kd_weight
            )));
        }
        Ok(())
    }

    pub fn needs_soft_labels(&self) -> bool {
        self.strategy.kd_kind().is_some()
    }
}

/// Trains a fresh model on annotated data.
#[allow(clippy::too_many_arguments)]
pub fn train_teacher(
    corpus: &[Document],
    schema: &RelationSchema,
    config: ModelConfig,
    vocab: Vocab,
    train_config: &TrainConfig,
    loss: &LossConfig,
    seed: u64,
    hook: Option<EpochHook<'_>>,
) -> Result<(RelationModel, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(
            "teacher training corpus is empty".into(),
        ));
    }
    let model = RelationModel::new(config, vocab, schema.num_classes(), seed)?;
    let log = train(
        &model,
        corpus,
        schema,
        train_config,
        &Objective::hard(*loss),
        seed,
        "teacher",
        hook,
    )?;
    Ok((model, log))
}

/// Pretrains `student` on the distant corpus with hard labels, plus the
/// distillation term against `soft_labels` for the KD strategies.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_student(
    student: &RelationModel,
    distant: &[Document],
    schema: &RelationSchema,
    soft_labels: Option<&SoftLabelStore>,
    plan: &AdaptationPlan,
    train_config: &TrainConfig,
    loss: &LossConfig,
    seed: u64,
) -> Result<TrainLog> {
    plan.validate()?;
    let objective = match (plan.strategy.kd_kind(), soft_labels) {
        (None, _) => Objective::hard(*loss),
        (Some(kind), Some(store)) => {
            store.verify(student.num_classes(), &store.teacher_fingerprint)?;
            Objective::distill(*loss, kind, plan.kd_weight, store)
        }
        (Some(_), None) => {
            return Err(Error::Config(format!(
                "strategy {:?} needs a soft-label store",
                plan.strategy
            )))
        }
    };
    train(
        student,
        distant,
        schema,
        train_config,
        &objective,
        seed,
        "pretrain",
        None,
    )
}

/// Continues training on annotated data with hard labels only.
pub fn finetune(
    model: &RelationModel,
    corpus: &[Document],
    schema: &RelationSchema,
    train_config: &TrainConfig,
    loss: &LossConfig,
    seed: u64,
    hook: Option<EpochHook<'_>>,
) -> Result<TrainLog> {
    train(
        model,
        corpus,
        schema,
        train_config,
        &Objective::hard(*loss),
        seed,
        "finetune",
        hook,
    )
}

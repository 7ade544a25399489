//! End-to-end commands: each reads a [`RunConfig`], works on files under the
//! output directory and writes every artifact atomically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta, Stage};
use crate::config::RunConfig;
use crate::corpus::{
    build_fact_index_with, corpus_statistics, corpus_to_json, load_corpus, CorpusStats, Document,
    RelationSchema,
};
use crate::distill::{
    finetune, generate_soft_labels, pretrain_student, teacher_fingerprint, train_teacher,
    SoftLabelStore,
};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::eval::{
    error_breakdown, evaluate, from_records, gold_triples, ign_f1, micro_f1, to_records, DocLookup,
    ErrorCounts, EvalInputs, EvalReport, PredictionRecord, PredictionSet, Triple,
};
use crate::io::{read_file, write_atomic};
use crate::model::RelationModel;
use crate::nn::sub_seed;
use crate::synthetic::distant_testbed;
use crate::train::TrainLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
    Distant,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Test, Split::Distant];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Distant => "distant",
        }
    }

    /// Configured path of the split, if any.
    pub fn path(self, config: &RunConfig) -> Option<&Path> {
        let p = &config.paths;
        match self {
            Split::Train => Some(p.train.as_path()),
            Split::Dev => p.dev.as_deref(),
            Split::Test => p.test.as_deref(),
            Split::Distant => p.distant.as_deref(),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|split| split.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// File names of every artifact below the output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            root: config.paths.output_dir.clone(),
        }
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn teacher(&self) -> PathBuf {
        self.root.join("teacher.safetensors")
    }

    pub fn soft_labels(&self) -> PathBuf {
        self.root.join("soft_labels.jsonl")
    }

    pub fn student(&self) -> PathBuf {
        self.root.join("student_pretrained.safetensors")
    }

    pub fn finetuned(&self) -> PathBuf {
        self.root.join("finetuned.safetensors")
    }

    pub fn metrics(&self, stage: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{stage}.jsonl"))
    }

    pub fn report(&self, split: Split) -> PathBuf {
        self.root.join("reports").join(format!("{split}.json"))
    }

    pub fn predictions(&self, split: Split) -> PathBuf {
        self.root.join("predictions").join(format!("{split}.json"))
    }

    pub fn error_report(&self, split: Split) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{split}_errors.json"))
    }
}

fn require_inputs(config: &RunConfig, splits: &[Split]) -> Result<()> {
    for &split in splits {
        match split.path(config) {
            Some(p) if !p.exists() => return Err(Error::MissingFile(p.to_path_buf())),
            Some(_) => {}
            None => {
                return Err(Error::Config(format!(
                    "no path configured for the {split} split"
                )))
            }
        }
    }
    if let Some(p) = &config.paths.schema {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    Ok(())
}

pub fn load_split(config: &RunConfig, split: Split) -> Result<Vec<Document>> {
    let path = split
        .path(config)
        .ok_or_else(|| Error::Config(format!("no path configured for the {split} split")))?;
    load_corpus(path, split == Split::Distant)
}

/// The configured schema, or one derived from the train and distant
/// relations, with the frequent set taken from `train`.
pub fn load_schema(config: &RunConfig, train: &[Document]) -> Result<RelationSchema> {
    let schema = match &config.paths.schema {
        Some(p) => RelationSchema::load(p)?,
        None => {
            let mut ids: BTreeSet<String> = train
                .iter()
                .flat_map(|d| d.facts.iter().map(|f| f.relation.clone()))
                .collect();
            if let Some(p) = &config.paths.distant {
                for doc in load_corpus(p, true)? {
                    ids.extend(doc.facts.into_iter().map(|f| f.relation));
                }
            }
            RelationSchema::new(ids.into_iter().collect())?
        }
    };
    Ok(schema.with_frequent_from(train, config.eval.frequent_k))
}

/// Vocabulary over the text of every configured split. Only surface tokens
/// are used, never labels.
fn build_vocab(config: &RunConfig, train: &[Document]) -> Result<Vocab> {
    let mut docs = train.to_vec();
    for split in [Split::Dev, Split::Test, Split::Distant] {
        if split.path(config).is_some() {
            docs.extend(load_split(config, split)?);
        }
    }
    Ok(Vocab::build(&docs))
}

fn relation_ids(schema: &RelationSchema) -> Vec<&str> {
    (0..schema.num_relations())
        .map(|p| schema.relation_at(p))
        .collect()
}

fn check_checkpoint_schema(meta: &CheckpointMeta, schema: &RelationSchema) -> Result<()> {
    if meta.schema.num_classes() != schema.num_classes() {
        return Err(Error::ClassCountMismatch {
            expected: schema.num_classes(),
            found: meta.schema.num_classes(),
        });
    }
    if relation_ids(&meta.schema) != relation_ids(schema) {
        return Err(Error::Config(
            "checkpoint relation ids differ from the configured schema".into(),
        ));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        out.extend(serde_json::to_vec(row)?);
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

fn save_checkpoint(
    path: &Path,
    model: &RelationModel,
    config: &RunConfig,
    stage: Stage,
    step: usize,
    seed: u64,
    schema: &RelationSchema,
) -> Result<()> {
    let mut meta = CheckpointMeta::new(stage, step, seed, model, schema);
    meta.run_config = Some(serde_json::to_value(config)?);
    checkpoint::save(path, model, &meta)
}

/// Summary written by [`prepare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub relations: Vec<String>,
    pub frequent: Vec<String>,
    pub vocab_size: usize,
    pub splits: BTreeMap<Split, CorpusStats>,
}

/// Loads and validates every configured input, checks each document's
/// labels against the schema and writes corpus statistics.
pub fn prepare(config: &RunConfig) -> Result<PrepareSummary> {
    require_inputs(config, &[Split::Train])?;
    let train = load_split(config, Split::Train)?;
    let schema = load_schema(config, &train)?;
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        if split.path(config).is_none() {
            continue;
        }
        let docs = load_split(config, split)?;
        for doc in &docs {
            crate::corpus::build_label_tensor(doc, &schema)?;
        }
        splits.insert(split, corpus_statistics(&docs)?);
    }
    let summary = PrepareSummary {
        relations: relation_ids(&schema)
            .into_iter()
            .map(str::to_string)
            .collect(),
        frequent: relation_ids(&schema)
            .into_iter()
            .filter(|r| schema.is_frequent(r))
            .map(str::to_string)
            .collect(),
        vocab_size: build_vocab(config, &train)?.len(),
        splits,
    };
    write_json(&OutputLayout::new(config).stats(), &summary)?;
    Ok(summary)
}

/// Writes the synthetic noisy-distant dataset and a matching toy config
/// into `dir`; returns the config path.
pub fn write_synthetic_dataset(dir: &Path, seed: u64) -> Result<PathBuf> {
    let tb = distant_testbed(300, 600, 50, 50, 0.3, 0.05, seed)?;
    let mut config = RunConfig::synthetic_preset();
    config.seed = seed;
    for (name, docs) in [
        ("train.json", &tb.annotated),
        ("dev.json", &tb.dev),
        ("test.json", &tb.test),
        ("distant.json", &tb.distant),
    ] {
        write_atomic(&dir.join(name), corpus_to_json(docs)?.as_bytes())?;
    }
    write_json(&dir.join("schema.json"), &relation_ids(&tb.schema))?;
    let path = dir.join("config.toml");
    config.save(&path)?;
    Ok(path)
}

/// Per-epoch record of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: String,
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_f1: Option<f64>,
    pub dev_ign_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
    pub metrics: Vec<EpochMetrics>,
}

/// Dev F1 and Ign_F1 of `model`, keyed against the train facts.
fn dev_scores(
    model: &RelationModel,
    dev: &[Document],
    train: &[Document],
    schema: &RelationSchema,
    config: &RunConfig,
) -> Result<(f64, f64)> {
    let pred = model.predict_corpus(dev, schema)?;
    let gold = gold_triples(dev);
    let index = build_fact_index_with(train, config.eval.fact_key_mode);
    let ign = ign_f1(&pred, &gold, &index, &DocLookup::new(dev))?;
    Ok((micro_f1(&pred, &gold).f1, ign.f1))
}

fn epoch_metrics(stage: &str, log: &TrainLog, dev_scores: &[(f64, f64)]) -> Vec<EpochMetrics> {
    log.epoch_losses()
        .into_iter()
        .enumerate()
        .map(|(epoch, mean_loss)| EpochMetrics {
            stage: stage.to_string(),
            epoch,
            mean_loss,
            dev_f1: dev_scores.get(epoch).map(|s| s.0),
            dev_ign_f1: dev_scores.get(epoch).map(|s| s.1),
        })
        .collect()
}

/// Trains the teacher on the annotated split, logging dev F1 and Ign_F1
/// after each epoch when a dev split is configured.
pub fn cmd_train_teacher(config: &RunConfig) -> Result<StageOutcome> {
    config.validate()?;
    let mut needed = vec![Split::Train];
    needed.extend(config.paths.dev.as_ref().map(|_| Split::Dev));
    require_inputs(config, &needed)?;
    let train = load_split(config, Split::Train)?;
    let schema = load_schema(config, &train)?;
    let dev = match config.paths.dev {
        Some(_) => Some(load_split(config, Split::Dev)?),
        None => None,
    };
    let vocab = build_vocab(config, &train)?;
    let mut scores = Vec::new();
    let mut hook = |_epoch: usize, model: &RelationModel| -> Result<()> {
        if let Some(dev) = &dev {
            let s = dev_scores(model, dev, &train, &schema, config)?;
            log::info!("teacher dev F1 {:.4} Ign_F1 {:.4}", s.0, s.1);
            scores.push(s);
        }
        Ok(())
    };
    let (model, log) = train_teacher(
        &train,
        &schema,
        config.model.clone(),
        vocab,
        &config.optimizer.teacher,
        &config.loss,
        config.seed,
        Some(&mut hook),
    )?;
    let layout = OutputLayout::new(config);
    let metrics = epoch_metrics("teacher", &log, &scores);
    write_jsonl(&layout.metrics("teacher"), &metrics)?;
    let path = layout.teacher();
    save_checkpoint(
        &path,
        &model,
        config,
        Stage::Teacher,
        log.steps.len(),
        config.seed,
        &schema,
    )?;
    Ok(StageOutcome {
        checkpoint: path,
        log,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub checkpoint: PathBuf,
    /// Soft-label store used, absent for the NA strategy.
    pub soft_labels: Option<PathBuf>,
    /// Whether an existing store was verified and reused.
    pub reused_store: bool,
    pub log: TrainLog,
}

/// Pretrains a fresh student on the distant split. For the KD strategies the
/// teacher's soft labels are generated once and stored; an existing store is
/// reused only if its class count and teacher fingerprint match.
pub fn cmd_distill(
    config: &RunConfig,
    teacher: Option<&Path>,
    regenerate: bool,
) -> Result<DistillOutcome> {
    config.validate()?;
    require_inputs(config, &[Split::Train, Split::Distant])?;
    let layout = OutputLayout::new(config);
    let teacher_path = teacher
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.teacher());
    let train = load_split(config, Split::Train)?;
    let schema = load_schema(config, &train)?;
    let distant = load_split(config, Split::Distant)?;
    let (teacher, meta) = checkpoint::load(&teacher_path)?;
    check_checkpoint_schema(&meta, &schema)?;

    let mut reused_store = false;
    let store = if config.adaptation.needs_soft_labels() {
        let fingerprint = teacher_fingerprint(&teacher)?;
        let path = layout.soft_labels();
        let store = if path.exists() && !regenerate {
            reused_store = true;
            SoftLabelStore::load_checked(&path, teacher.num_classes(), &fingerprint)?
        } else {
            let store = generate_soft_labels(&teacher, &distant, &fingerprint)?;
            store.save(&path)?;
            store
        };
        Some((path, store))
    } else {
        None
    };

    let student_seed = sub_seed(config.seed, "student");
    let student = RelationModel::new(
        config.model.clone(),
        teacher.vocab().clone(),
        schema.num_classes(),
        student_seed,
    )?;
    let log = pretrain_student(
        &student,
        &distant,
        &schema,
        store.as_ref().map(|(_, s)| s),
        &config.adaptation,
        &config.optimizer.pretrain,
        &config.loss,
        config.seed,
    )?;
    write_jsonl(
        &layout.metrics("pretrain"),
        &epoch_metrics("pretrain", &log, &[]),
    )?;
    let path = layout.student();
    save_checkpoint(
        &path,
        &student,
        config,
        Stage::PretrainedStudent,
        log.steps.len(),
        student_seed,
        &schema,
    )?;
    Ok(DistillOutcome {
        checkpoint: path,
        soft_labels: store.map(|(p, _)| p),
        reused_store,
        log,
    })
}

/// Continues training a checkpoint (the pretrained student by default) on
/// the annotated split with hard labels.
pub fn cmd_finetune(config: &RunConfig, from: Option<&Path>) -> Result<StageOutcome> {
    config.validate()?;
    let mut needed = vec![Split::Train];
    needed.extend(config.paths.dev.as_ref().map(|_| Split::Dev));
    require_inputs(config, &needed)?;
    let layout = OutputLayout::new(config);
    let from = from
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.student());
    let train = load_split(config, Split::Train)?;
    let schema = load_schema(config, &train)?;
    let dev = match config.paths.dev {
        Some(_) => Some(load_split(config, Split::Dev)?),
        None => None,
    };
    let (model, meta) = checkpoint::load(&from)?;
    check_checkpoint_schema(&meta, &schema)?;
    let mut scores = Vec::new();
    let mut hook = |_epoch: usize, model: &RelationModel| -> Result<()> {
        if let Some(dev) = &dev {
            let s = dev_scores(model, dev, &train, &schema, config)?;
            log::info!("finetune dev F1 {:.4} Ign_F1 {:.4}", s.0, s.1);
            scores.push(s);
        }
        Ok(())
    };
    let log = finetune(
        &model,
        &train,
        &schema,
        &config.optimizer.finetune,
        &config.loss,
        config.seed,
        Some(&mut hook),
    )?;
    let metrics = epoch_metrics("finetune", &log, &scores);
    write_jsonl(&layout.metrics("finetune"), &metrics)?;
    let path = layout.finetuned();
    save_checkpoint(
        &path,
        &model,
        config,
        Stage::Finetuned,
        meta.step + log.steps.len(),
        meta.seed,
        &schema,
    )?;
    Ok(StageOutcome {
        checkpoint: path,
        log,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: EvalReport,
    pub report_path: PathBuf,
    pub predictions_path: PathBuf,
}

/// Scores a checkpoint (the finetuned model by default) on `split` and
/// writes the report and leaderboard-style predictions.
pub fn cmd_evaluate(
    config: &RunConfig,
    checkpoint_path: Option<&Path>,
    split: Split,
    binary: bool,
) -> Result<EvaluateOutcome> {
    require_inputs(config, &[Split::Train, split])?;
    let layout = OutputLayout::new(config);
    let path = checkpoint_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.finetuned());
    let train = load_split(config, Split::Train)?;
    let schema = load_schema(config, &train)?;
    let docs = load_split(config, split)?;
    let (model, meta) = checkpoint::load(&path)?;
    check_checkpoint_schema(&meta, &schema)?;
    let pred = model.predict_corpus(&docs, &schema)?;
    let gold = gold_triples(&docs);
    let index = build_fact_index_with(&train, config.eval.fact_key_mode);
    let report = evaluate(
        &pred,
        &gold,
        &EvalInputs {
            docs: &docs,
            fact_index: &index,
            schema: &schema,
            binary: binary || config.eval.binary,
        },
    )?;
    let report_path = layout.report(split);
    let predictions_path = layout.predictions(split);
    write_json(&report_path, &report)?;
    write_json(&predictions_path, &to_records(&pred))?;
    Ok(EvaluateOutcome {
        report,
        report_path,
        predictions_path,
    })
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let records: Vec<PredictionRecord> = serde_json::from_slice(&read_file(path)?)?;
    Ok(from_records(&records))
}

/// Error categories of a prediction file against a gold split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub counts: ErrorCounts,
    /// Share of C, W, MS and MR among their sum, in percent.
    pub percentages: BTreeMap<String, f64>,
    /// Up to `eval.error_samples` triples per category, in sorted order.
    pub samples: BTreeMap<String, Vec<Triple>>,
    pub predicted: usize,
}

impl ErrorReport {
    pub fn to_table(&self) -> String {
        let c = &self.counts;
        let mut out = format!("{:<10} {:>7} {:>8}\n", "category", "count", "percent");
        for (name, count) in [
            ("C", c.correct),
            ("W", c.wrong),
            ("MS", c.missed),
            ("MR", c.more),
        ] {
            out.push_str(&format!(
                "{name:<10} {count:>7} {:>7.2}%\n",
                self.percentages[name]
            ));
        }
        out.push_str(&format!(
            "C + W + MR = {} = |pred| {}\n",
            c.correct + c.wrong + c.more,
            self.predicted
        ));
        out
    }
}

pub fn error_report(
    pred: &PredictionSet,
    gold: &PredictionSet,
    samples: usize,
) -> Result<ErrorReport> {
    let breakdown = error_breakdown(pred, gold);
    let counts = breakdown.counts();
    if counts.correct + counts.wrong + counts.more != pred.len() {
        return Err(Error::Contract(format!(
            "error categories do not cover the {} predictions",
            pred.len()
        )));
    }
    let total = (counts.correct + counts.wrong + counts.missed + counts.more).max(1) as f64;
    let mut percentages = BTreeMap::new();
    let mut sampled = BTreeMap::new();
    for (name, count, triples) in [
        ("C", counts.correct, &breakdown.correct),
        ("W", counts.wrong, &breakdown.wrong),
        ("MS", counts.missed, &breakdown.missed),
        ("MR", counts.more, &breakdown.more),
    ] {
        percentages.insert(name.to_string(), 100.0 * count as f64 / total);
        sampled.insert(
            name.to_string(),
            triples.iter().take(samples).cloned().collect(),
        );
    }
    Ok(ErrorReport {
        counts,
        percentages,
        samples: sampled,
        predicted: pred.len(),
    })
}

/// Categorizes a prediction file against `split`. Predictions naming a
/// document or entity that the split lacks are rejected.
pub fn cmd_error_report(
    config: &RunConfig,
    predictions: &Path,
    split: Split,
) -> Result<ErrorReport> {
    require_inputs(config, &[split])?;
    let docs = load_split(config, split)?;
    let pred = read_predictions(predictions)?;
    DocLookup::new(&docs).check(&pred)?;
    let report = error_report(&pred, &gold_triples(&docs), config.eval.error_samples)?;
    write_json(&OutputLayout::new(config).error_report(split), &report)?;
    Ok(report)
}

/// Predicts relations for every document of `corpus` with a checkpoint and
/// writes them to `out`. Labels in `corpus` are ignored.
pub fn cmd_predict(checkpoint_path: &Path, corpus: &Path, out: &Path) -> Result<usize> {
    let (model, meta) = checkpoint::load(checkpoint_path)?;
    let docs = load_corpus(corpus, false)?;
    let pred = model.predict_corpus(&docs, &meta.schema)?;
    write_json(out, &to_records(&pred))?;
    Ok(pred.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("valid".parse::<Split>().is_err());
    }

    #[test]
    fn error_report_on_exact_predictions_is_all_correct() {
        let gold: PredictionSet = [Triple::new("d", 0, "R1", 1), Triple::new("d", 1, "R2", 2)]
            .into_iter()
            .collect();
        let r = error_report(&gold, &gold, 1).unwrap();
        assert_eq!(r.counts.correct, 2);
        assert_eq!(r.counts.wrong + r.counts.missed + r.counts.more, 0);
        assert_eq!(r.percentages["C"], 100.0);
        assert_eq!(r.samples["C"].len(), 1);
    }

    #[test]
    fn error_report_delegates_to_categories() {
        let gold: PredictionSet = [Triple::new("d", 0, "R1", 1), Triple::new("d", 2, "R1", 3)]
            .into_iter()
            .collect();
        let pred: PredictionSet = [Triple::new("d", 0, "R2", 1), Triple::new("d", 1, "R1", 0)]
            .into_iter()
            .collect();
        let r = error_report(&pred, &gold, 5).unwrap();
        assert_eq!(r.counts, crate::eval::error_categories(&pred, &gold));
        assert_eq!((r.counts.wrong, r.counts.more, r.counts.missed), (1, 1, 1));
        assert_eq!(r.percentages["W"], 100.0 / 3.0);
    }
}

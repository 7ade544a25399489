//! Scaled-down synthetic experiments: memorization, two-hop composition,
//! long-tail relations and adaptation from noisy distant data. Each run is
//! fully determined by its preset and seed.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, RelationSchema};
use crate::distill::{
    finetune, generate_soft_labels, pretrain_student, teacher_fingerprint, train_teacher,
    AdaptationPlan, Strategy,
};
use crate::encoder::Vocab;
use crate::error::Result;
use crate::eval::{gold_triples, infer_f1, micro_f1, split_f1, Scores};
use crate::loss::{LossConfig, LossVariant};
use crate::model::{ModelConfig, RelationModel};
use crate::nn::sub_seed;
use crate::synthetic::{composition_corpus, distant_testbed, longtail_corpus, overfit_corpus};
use crate::train::TrainConfig;

/// Median of a non-empty slice; the mean of the middle pair for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn toy_train(epochs: usize, learning_rate: f64, dropout: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate,
        dropout,
        ..TrainConfig::default()
    }
}

fn corpus_f1(model: &RelationModel, docs: &[Document], schema: &RelationSchema) -> Result<Scores> {
    Ok(micro_f1(
        &model.predict_corpus(docs, schema)?,
        &gold_triples(docs),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitPreset {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub target_f1: f64,
}

impl Default for OverfitPreset {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            learning_rate: 1e-3,
            target_f1: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitOutcome {
    /// Train F1 after every epoch.
    pub f1_by_epoch: Vec<f64>,
    /// First 1-based epoch reaching the target, if any.
    pub reached_at: Option<usize>,
}

/// Trains the default model without dropout on the 20-document overfit
/// corpus and tracks train F1 after each epoch.
pub fn overfit_run(preset: &OverfitPreset, seed: u64) -> Result<OverfitOutcome> {
    let (docs, schema) = overfit_corpus(seed)?;
    let mut f1_by_epoch = Vec::new();
    let mut hook = |_epoch: usize, model: &RelationModel| -> Result<()> {
        f1_by_epoch.push(corpus_f1(model, &docs, &schema)?.f1);
        Ok(())
    };
    train_teacher(
        &docs,
        &schema,
        ModelConfig::default(),
        Vocab::build(&docs),
        &toy_train(preset.max_epochs, preset.learning_rate, 0.0),
        &LossConfig::default(),
        seed,
        Some(&mut hook),
    )?;
    let reached_at = f1_by_epoch
        .iter()
        .position(|&f| f >= preset.target_f1)
        .map(|e| e + 1);
    Ok(OverfitOutcome {
        f1_by_epoch,
        reached_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionPreset {
    pub train_docs: usize,
    pub dev_docs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub num_layers: usize,
}

impl Default for CompositionPreset {
    fn default() -> Self {
        Self {
            train_docs: 200,
            dev_docs: 100,
            epochs: 60,
            learning_rate: 5e-3,
            dropout: 0.1,
            num_layers: 2,
        }
    }
}

/// Dev Infer-F1 on the composition corpus, with or without axial attention.
/// The dev documents come from an independent generator stream.
pub fn composition_run(preset: &CompositionPreset, seed: u64, use_axial: bool) -> Result<Scores> {
    let (train, schema) = composition_corpus(preset.train_docs, seed, "c")?;
    let (dev, _) = composition_corpus(preset.dev_docs, sub_seed(seed, "dev"), "dev")?;
    let config = ModelConfig {
        use_axial,
        num_layers: preset.num_layers,
        ..ModelConfig::default()
    };
    let (model, _) = train_teacher(
        &train,
        &schema,
        config,
        Vocab::build(train.iter().chain(&dev)),
        &toy_train(preset.epochs, preset.learning_rate, preset.dropout),
        &LossConfig::default(),
        seed,
        None,
    )?;
    Ok(infer_f1(
        &model.predict_corpus(&dev, &schema)?,
        &gold_triples(&dev),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongtailPreset {
    pub train_docs: usize,
    pub dev_docs: usize,
    pub heads: usize,
    pub tails: usize,
    /// Sampling weight of a head relation relative to a tail relation.
    pub skew: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
}

impl Default for LongtailPreset {
    fn default() -> Self {
        Self {
            train_docs: 400,
            dev_docs: 100,
            heads: 2,
            tails: 6,
            skew: 10.0,
            epochs: 30,
            learning_rate: 3e-3,
            dropout: 0.1,
        }
    }
}

/// Dev F1 on the tail relations (those outside the `heads` most frequent
/// training relations) for one loss variant.
pub fn longtail_run(preset: &LongtailPreset, seed: u64, variant: LossVariant) -> Result<Scores> {
    let (train, schema) = longtail_corpus(
        preset.train_docs,
        preset.heads,
        preset.tails,
        preset.skew,
        seed,
        "train",
    )?;
    let (dev, _) = longtail_corpus(
        preset.dev_docs,
        preset.heads,
        preset.tails,
        preset.skew,
        sub_seed(seed, "dev"),
        "dev",
    )?;
    let schema = schema.with_frequent_from(&train, preset.heads);
    let (model, _) = train_teacher(
        &train,
        &schema,
        ModelConfig::default(),
        Vocab::build(train.iter().chain(&dev)),
        &toy_train(preset.epochs, preset.learning_rate, preset.dropout),
        &LossConfig {
            variant,
            ..LossConfig::default()
        },
        seed,
        None,
    )?;
    let (_, tail) = split_f1(
        &model.predict_corpus(&dev, &schema)?,
        &gold_triples(&dev),
        &schema,
    );
    Ok(tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistantPreset {
    pub annotated_docs: usize,
    pub distant_docs: usize,
    pub dev_docs: usize,
    pub flip: f64,
    pub spurious: f64,
    pub teacher: TrainConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub kd_weight: f64,
}

impl Default for DistantPreset {
    fn default() -> Self {
        Self {
            annotated_docs: 300,
            distant_docs: 600,
            dev_docs: 100,
            flip: 0.3,
            spurious: 0.05,
            teacher: toy_train(30, 3e-3, 0.1),
            pretrain: toy_train(10, 3e-3, 0.1),
            finetune: toy_train(5, 1e-3, 0.1),
            kd_weight: 1.0,
        }
    }
}

/// Dev F1 of the fine-tuned student for each strategy, in the order given.
/// The teacher, the noisy corpus and the student initialization are shared
/// by all strategies of one seed.
pub fn distant_run(
    preset: &DistantPreset,
    seed: u64,
    strategies: &[Strategy],
) -> Result<Vec<Scores>> {
    let tb = distant_testbed(
        preset.annotated_docs,
        preset.distant_docs,
        preset.dev_docs,
        0,
        preset.flip,
        preset.spurious,
        seed,
    )?;
    let vocab = Vocab::build(tb.annotated.iter().chain(&tb.distant).chain(&tb.dev));
    let loss = LossConfig::default();
    let config = ModelConfig::default();
    let (teacher, _) = train_teacher(
        &tb.annotated,
        &tb.schema,
        config.clone(),
        vocab.clone(),
        &preset.teacher,
        &loss,
        seed,
        None,
    )?;
    let store = generate_soft_labels(&teacher, &tb.distant, &teacher_fingerprint(&teacher)?)?;
    let mut out = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let plan = AdaptationPlan {
            strategy,
            kd_weight: preset.kd_weight,
        };
        let student = RelationModel::new(
            config.clone(),
            vocab.clone(),
            tb.schema.num_classes(),
            sub_seed(seed, "student"),
        )?;
        pretrain_student(
            &student,
            &tb.distant,
            &tb.schema,
            plan.needs_soft_labels().then_some(&store),
            &plan,
            &preset.pretrain,
            &loss,
            seed,
        )?;
        finetune(
            &student,
            &tb.annotated,
            &tb.schema,
            &preset.finetune,
            &loss,
            seed,
            None,
        )?;
        out.push(corpus_f1(&student, &tb.dev, &tb.schema)?);
    }
    Ok(out)
}

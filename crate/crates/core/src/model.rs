//! The full relation model: encoder, pooling, pair matrix, axial attention
//! and classifier, with parameters held in one [`ParamStore`].

use std::collections::BTreeSet;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, RelationSchema};
use crate::encoder::{
    encode_chunked, fuse_pairs, insert_markers, pair_contexts, pool_entities,
    pool_entity_attentions, EncoderBackend, FuseParams, ToyTransformer, ToyTransformerConfig,
    Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{PredictionSet, Triple};
use crate::loss;
use crate::nn::{self, Dropout, ParamStore};
use crate::pairrep::{
    axial_attention, build_pair_matrix, check_groups, classify, AxialOptions, AxialParams,
    BilinearParams, ClassifierHead,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    /// Encoder window; longer documents are encoded in overlapping chunks.
    pub max_positions: usize,
    /// Chunk stride, `max_positions / 2` when unset.
    pub chunk_stride: Option<usize>,
    /// Hard cap on marked sequence length. Entities with a mention past the
    /// cap make the document fail instead of being dropped.
    pub max_tokens: Option<usize>,
    /// Group count of the bilinear pair fusion.
    pub groups: usize,
    pub use_axial: bool,
    pub axial: AxialOptions,
    pub normalize_context_query: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            num_heads: 2,
            num_layers: 2,
            ffn_dim: 64,
            max_positions: 512,
            chunk_stride: None,
            max_tokens: None,
            groups: 4,
            use_axial: true,
            axial: AxialOptions::default(),
            normalize_context_query: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_groups(self.hidden_dim, self.groups)?;
        if self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_stride.unwrap_or(self.max_positions / 2)
    }
}

/// Predicted relation positions for one ordered pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPrediction {
    pub head: usize,
    pub tail: usize,
    pub relations: BTreeSet<usize>,
}

pub struct RelationModel {
    config: ModelConfig,
    vocab: Vocab,
    num_classes: usize,
    params: ParamStore,
    encoder: ToyTransformer,
    subject: FuseParams,
    object: FuseParams,
    bilinear: BilinearParams,
    axial: Option<AxialParams>,
    head: ClassifierHead,
}

impl RelationModel {
    /// Builds a freshly initialized model. All weights are drawn from a
    /// stream derived from `seed`, so equal seeds give equal models.
    pub fn new(config: ModelConfig, vocab: Vocab, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least one relation besides the threshold class, got {num_classes} classes"
            )));
        }
        let d = config.hidden_dim;
        let mut rng = nn::seeded_rng(seed, "init");
        let mut params = ParamStore::new();
        let encoder = ToyTransformer::new(
            ToyTransformerConfig {
                vocab_size: vocab.len(),
                hidden_dim: d,
                num_heads: config.num_heads,
                num_layers: config.num_layers,
                ffn_dim: config.ffn_dim,
                max_positions: config.max_positions,
            },
            &mut params,
            &mut rng,
        )?;
        let mut fuse = |side: &str, params: &mut ParamStore| -> Result<FuseParams> {
            Ok(FuseParams {
                w_entity: params.fan_in(&format!("fuse.{side}.w_entity"), &[d, d], d, &mut rng)?,
                w_context: params.fan_in(
                    &format!("fuse.{side}.w_context"),
                    &[d, d],
                    d,
                    &mut rng,
                )?,
            })
        };
        let subject = fuse("subject", &mut params)?;
        let object = fuse("object", &mut params)?;
        let k = config.groups;
        let b = d / k;
        let bilinear = BilinearParams::new(
            k,
            params.fan_in("bilinear.weight", &[k * b * b, d], k * b * b, &mut rng)?,
            params.constant("bilinear.bias", &[d], 0.0)?,
        )?;
        let axial = if config.use_axial {
            Some(AxialParams {
                w_q: params.fan_in("axial.w_q", &[d, d], d, &mut rng)?,
                w_k: params.fan_in("axial.w_k", &[d, d], d, &mut rng)?,
                w_v: params.fan_in("axial.w_v", &[d, d], d, &mut rng)?,
            })
        } else {
            None
        };
        let head = ClassifierHead {
            weight: params.fan_in("classifier.weight", &[d, num_classes], d, &mut rng)?,
            bias: params.constant("classifier.bias", &[num_classes], 0.0)?,
        };
        Ok(Self {
            config,
            vocab,
            num_classes,
            params,
            encoder,
            subject,
            object,
            bilinear,
            axial,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn check_schema(&self, schema: &RelationSchema) -> Result<()> {
        if schema.num_classes() != self.num_classes {
            return Err(Error::ClassCountMismatch {
                expected: self.num_classes,
                found: schema.num_classes(),
            });
        }
        Ok(())
    }

    /// Entity-level encoder features: `n x d` entity embeddings, `n x n x d`
    /// pair contexts.
    fn encode_document(&self, doc: &Document, dropout: &mut Dropout) -> Result<(Tensor, Tensor)> {
        let mut marked = insert_markers(doc, &self.vocab)?;
        if let Some(cap) = self.config.max_tokens {
            marked.truncate(cap, &doc.doc_id)?;
        }
        let window = self.config.max_positions.min(self.encoder.max_positions());
        let encoded = encode_chunked(
            &marked.ids,
            &self.encoder,
            window,
            self.config.stride(),
            dropout,
        )?;
        let entities = pool_entities(&encoded.hidden, &marked.mention_markers)?;
        let attn = pool_entity_attentions(&encoded.attention, &marked.mention_markers)?;
        let contexts = pair_contexts(&attn, &encoded.hidden, self.config.normalize_context_query)?;
        Ok((entities, contexts))
    }

    /// `n x n x c` logits for every ordered entity pair; the diagonal is
    /// computed but meaningless.
    pub fn forward(&self, doc: &Document, dropout: &mut Dropout) -> Result<Tensor> {
        if doc.n_entities() == 0 {
            return Err(Error::schema(&doc.doc_id, "document has no entities"));
        }
        let (entities, contexts) = self.encode_document(doc, dropout)?;
        let (z_s, z_o) = fuse_pairs(&entities, &contexts, &self.subject, &self.object)?;
        let pairs = build_pair_matrix(&z_s, &z_o, &self.bilinear)?;
        let r = match &self.axial {
            Some(p) => axial_attention(&pairs.g, p, self.config.axial)?,
            None => pairs.g,
        };
        classify(&r, &self.head)
    }

    /// Detached `n x n x c` logits as nested vectors.
    pub fn logits(&self, doc: &Document) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(self
            .forward(doc, &mut Dropout::disabled())?
            .detach()
            .to_vec3::<f64>()?)
    }

    /// Threshold decisions for every off-diagonal pair, in `(s, o)` order.
    /// Documents with fewer than two entities yield no pairs.
    pub fn predict(&self, doc: &Document) -> Result<Vec<PairPrediction>> {
        if doc.n_entities() < 2 {
            return Ok(Vec::new());
        }
        let logits = self.logits(doc)?;
        Ok(doc
            .candidate_pairs()
            .map(|(s, o)| PairPrediction {
                head: s,
                tail: o,
                relations: loss::decide(&logits[s][o]),
            })
            .collect())
    }

    /// Predicted triples for a whole corpus.
    pub fn predict_corpus(
        &self,
        docs: &[Document],
        schema: &RelationSchema,
    ) -> Result<PredictionSet> {
        self.check_schema(schema)?;
        let mut out = PredictionSet::new();
        for doc in docs {
            for p in self.predict(doc)? {
                for r in p.relations {
                    out.insert(Triple::new(
                        doc.doc_id.clone(),
                        p.head,
                        schema.relation_at(r),
                        p.tail,
                    ));
                }
            }
        }
        Ok(out)
    }
}

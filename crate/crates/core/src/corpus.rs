//! DocRED-schema corpora: documents, relation schema, label tensors and the
//! training fact index used by Ign_F1.
//!
//! Mentions are stored with spans in document token order (sentences
//! concatenated); the sentence-relative `pos` of the JSON schema is
//! recovered on serialization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the threshold class in every logit vector.
pub const TH_INDEX: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub entity_index: usize,
    pub sentence_index: usize,
    /// Half-open span in document token order.
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub entity_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub mentions: Vec<Mention>,
}

impl Entity {
    /// Surface form of the first mention.
    pub fn name(&self) -> &str {
        &self.mentions[0].surface
    }
}

/// A `(head, relation, tail)` fact over entity indices of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub head: usize,
    pub relation: String,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub facts: BTreeSet<Fact>,
    /// Evidence sentence ids per fact; parsed and written back, never used.
    pub evidence: BTreeMap<Fact, Vec<usize>>,
    /// Provenance flag for distantly supervised documents.
    pub is_distant: bool,
}

impl Document {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// All tokens in document order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    /// Ordered candidate pairs `(s, o)` with `s != o`; exactly `n(n-1)` of them.
    pub fn candidate_pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        candidate_pairs(self.n_entities())
    }

    fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut acc = 0;
        for sent in &self.sentences {
            offsets.push(acc);
            acc += sent.len();
        }
        offsets
    }

    /// Converts back to the raw DocRED JSON layout.
    pub fn to_raw(&self) -> RawDocument {
        let offsets = self.sentence_offsets();
        let vertex_set = self
            .entities
            .iter()
            .map(|e| {
                e.mentions
                    .iter()
                    .map(|m| {
                        let off = offsets[m.sentence_index];
                        RawMention {
                            name: m.surface.clone(),
                            sent_id: m.sentence_index,
                            pos: [m.start - off, m.end - off],
                            entity_type: m.entity_type.clone(),
                        }
                    })
                    .collect()
            })
            .collect();
        let labels = self
            .facts
            .iter()
            .map(|f| RawLabel {
                h: f.head,
                t: f.tail,
                r: f.relation.clone(),
                evidence: self.evidence.get(f).cloned().unwrap_or_default(),
            })
            .collect();
        RawDocument {
            title: self.doc_id.clone(),
            sents: self.sentences.clone(),
            vertex_set,
            labels: Some(labels),
        }
    }
}

pub fn candidate_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawMention {
    pub name: String,
    pub sent_id: usize,
    pub pos: [usize; 2],
    #[serde(rename = "type")]
    pub entity_type: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawLabel {
    pub h: usize,
    pub t: usize,
    pub r: String,
    #[serde(default)]
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub title: String,
    pub sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    pub vertex_set: Vec<Vec<RawMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<RawLabel>>,
}

/// Parses one DocRED JSON object, validating spans and facts.
pub fn parse_document(raw: &serde_json::Value) -> Result<Document> {
    let doc_id = raw
        .get("title")
        .and_then(|t| t.as_str())
        .unwrap_or("<untitled>")
        .to_string();
    for key in ["title", "sents", "vertexSet"] {
        if raw.get(key).is_none() {
            return Err(Error::schema(&doc_id, format!("missing key `{key}`")));
        }
    }
    let raw: RawDocument =
        serde_json::from_value(raw.clone()).map_err(|e| Error::schema(&doc_id, e.to_string()))?;
    from_raw(raw, false)
}

/// Validates a deserialized raw document.
pub fn from_raw(raw: RawDocument, is_distant: bool) -> Result<Document> {
    let doc_id = raw.title;
    let mut offsets = Vec::with_capacity(raw.sents.len());
    let mut acc = 0;
    for sent in &raw.sents {
        offsets.push(acc);
        acc += sent.len();
    }

    let mut entities = Vec::with_capacity(raw.vertex_set.len());
    for (ei, vertex) in raw.vertex_set.into_iter().enumerate() {
        if vertex.is_empty() {
            return Err(Error::schema(
                &doc_id,
                format!("entity {ei} has no mentions"),
            ));
        }
        let mut mentions = Vec::with_capacity(vertex.len());
        for (mi, m) in vertex.into_iter().enumerate() {
            let sent = raw.sents.get(m.sent_id).ok_or_else(|| {
                Error::schema(
                    &doc_id,
                    format!(
                        "mention {mi} (`{}`) of entity {ei}: sent_id {} out of range",
                        m.name, m.sent_id
                    ),
                )
            })?;
            let [start, end] = m.pos;
            if start >= end || end > sent.len() {
                return Err(Error::schema(
                    &doc_id,
                    format!(
                        "mention {mi} (`{}`) of entity {ei}: malformed span [{start}, {end}) in sentence of length {}",
                        m.name,
                        sent.len()
                    ),
                ));
            }
            let off = offsets[m.sent_id];
            mentions.push(Mention {
                entity_index: ei,
                sentence_index: m.sent_id,
                start: off + start,
                end: off + end,
                surface: m.name,
                entity_type: m.entity_type,
            });
        }
        entities.push(Entity { mentions });
    }

    let n = entities.len();
    let mut facts = BTreeSet::new();
    let mut evidence = BTreeMap::new();
    for label in raw.labels.unwrap_or_default() {
        if label.h >= n || label.t >= n {
            return Err(Error::schema(
                &doc_id,
                format!(
                    "fact ({}, {}, {}) references an entity outside 0..{n}",
                    label.h, label.r, label.t
                ),
            ));
        }
        if label.h == label.t {
            return Err(Error::schema(
                &doc_id,
                format!(
                    "fact ({}, {}, {}) has head == tail",
                    label.h, label.r, label.t
                ),
            ));
        }
        let fact = Fact {
            head: label.h,
            relation: label.r,
            tail: label.t,
        };
        if !label.evidence.is_empty() {
            evidence
                .entry(fact.clone())
                .or_insert_with(Vec::new)
                .extend(label.evidence);
        }
        facts.insert(fact);
    }
    for ev in evidence.values_mut() {
        ev.sort_unstable();
        ev.dedup();
    }

    Ok(Document {
        doc_id,
        sentences: raw.sents,
        entities,
        facts,
        evidence,
        is_distant,
    })
}

/// Loads a corpus file (a JSON array of DocRED documents).
pub fn load_corpus(path: &Path, is_distant: bool) -> Result<Vec<Document>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<serde_json::Value> = serde_json::from_str(&text)?;
    values
        .iter()
        .map(|v| {
            let mut doc = parse_document(v)?;
            doc.is_distant = is_distant;
            Ok(doc)
        })
        .collect()
}

pub fn corpus_to_json(docs: &[Document]) -> Result<String> {
    let raws: Vec<RawDocument> = docs.iter().map(Document::to_raw).collect();
    Ok(serde_json::to_string(&raws)?)
}

/// Ordered relation label space. Class index 0 is the threshold class; the
/// relation at position `i` has class index `i + 1`. "No relation" is the
/// empty positive set and never has a class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr")]
pub struct RelationSchema {
    pub relation_ids: Vec<String>,
    pub frequent_set: BTreeSet<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct SchemaRepr {
    relation_ids: Vec<String>,
    #[serde(default)]
    frequent_set: BTreeSet<String>,
}

impl TryFrom<SchemaRepr> for RelationSchema {
    type Error = Error;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        let mut schema = Self::new(r.relation_ids)?;
        schema.frequent_set = r.frequent_set;
        Ok(schema)
    }
}

pub const DEFAULT_FREQUENT_K: usize = 10;

impl RelationSchema {
    pub fn new(relation_ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(relation_ids.len());
        for (i, r) in relation_ids.iter().enumerate() {
            if index.insert(r.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate relation id `{r}`")));
            }
        }
        Ok(Self {
            relation_ids,
            frequent_set: BTreeSet::new(),
            index,
        })
    }

    /// Reads a schema file: a JSON array, a DocRED `rel2id` object (the `Na`
    /// entry is dropped), or one relation id per line.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let trimmed = text.trim_start();
        let ids = if trimmed.starts_with('[') {
            serde_json::from_str::<Vec<String>>(trimmed)?
        } else if trimmed.starts_with('{') {
            let map: BTreeMap<String, usize> = serde_json::from_str(trimmed)?;
            let mut pairs: Vec<(usize, String)> = map
                .into_iter()
                .filter(|(k, _)| k != "Na")
                .map(|(k, v)| (v, k))
                .collect();
            pairs.sort();
            pairs.into_iter().map(|(_, k)| k).collect()
        } else {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect()
        };
        Self::new(ids)
    }

    pub fn num_relations(&self) -> usize {
        self.relation_ids.len()
    }

    /// Relations plus the threshold class.
    pub fn num_classes(&self) -> usize {
        self.relation_ids.len() + 1
    }

    pub fn th_index(&self) -> usize {
        TH_INDEX
    }

    /// Position of a relation id in schema order.
    pub fn position(&self, relation: &str) -> Option<usize> {
        self.index.get(relation).copied()
    }

    pub fn class_index(&self, relation: &str) -> Option<usize> {
        self.position(relation).map(|p| p + 1)
    }

    pub fn relation_at(&self, position: usize) -> &str {
        &self.relation_ids[position]
    }

    /// Picks the `k` most frequent relations of a training corpus (ties go to
    /// schema order) as the frequent set.
    pub fn with_frequent_from(mut self, train: &[Document], k: usize) -> Self {
        let mut counts = vec![0usize; self.num_relations()];
        for doc in train {
            for f in &doc.facts {
                if let Some(p) = self.position(&f.relation) {
                    counts[p] += 1;
                }
            }
        }
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        self.frequent_set = order
            .into_iter()
            .take(k)
            .map(|p| self.relation_ids[p].clone())
            .collect();
        self
    }

    pub fn is_frequent(&self, relation: &str) -> bool {
        self.frequent_set.contains(relation)
    }
}

/// Multi-hot `n x n x |R|` relation labels of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTensor {
    pub n: usize,
    pub num_relations: usize,
    values: Vec<u8>,
}

impl LabelTensor {
    /// Wraps raw row-major `n x n x num_relations` 0/1 values.
    pub fn from_values(n: usize, num_relations: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != n * n * num_relations {
            return Err(Error::Contract(format!(
                "{} label values for {n} entities and {num_relations} relations",
                values.len()
            )));
        }
        if (0..n).any(|s| (0..num_relations).any(|r| values[(s * n + s) * num_relations + r] != 0))
        {
            return Err(Error::Contract("diagonal labels must be zero".into()));
        }
        Ok(Self {
            n,
            num_relations,
            values: values.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    fn offset(&self, s: usize, o: usize) -> usize {
        (s * self.n + o) * self.num_relations
    }

    pub fn get(&self, s: usize, o: usize, r: usize) -> bool {
        self.values[self.offset(s, o) + r] != 0
    }

    /// Relation positions labelled for `(s, o)`; empty means NR.
    pub fn positives(&self, s: usize, o: usize) -> Vec<usize> {
        let off = self.offset(s, o);
        (0..self.num_relations)
            .filter(|&r| self.values[off + r] != 0)
            .collect()
    }

    /// `false` on the diagonal.
    pub fn diagonal_mask(&self, s: usize, o: usize) -> bool {
        s != o
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Inverse of [`build_label_tensor`].
    pub fn to_facts(&self, schema: &RelationSchema) -> BTreeSet<Fact> {
        let mut facts = BTreeSet::new();
        for (s, o) in candidate_pairs(self.n) {
            for r in self.positives(s, o) {
                facts.insert(Fact {
                    head: s,
                    relation: schema.relation_at(r).to_string(),
                    tail: o,
                });
            }
        }
        facts
    }
}

pub fn build_label_tensor(doc: &Document, schema: &RelationSchema) -> Result<LabelTensor> {
    let n = doc.n_entities();
    let nr = schema.num_relations();
    let mut values = vec![0u8; n * n * nr];
    for f in &doc.facts {
        let r = schema.position(&f.relation).ok_or_else(|| {
            Error::schema(&doc.doc_id, format!("unknown relation id `{}`", f.relation))
        })?;
        values[(f.head * n + f.tail) * nr + r] = 1;
    }
    Ok(LabelTensor {
        n,
        num_relations: nr,
        values,
    })
}

/// How training triples are keyed when filtering for Ign_F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactKeyMode {
    /// Normalized surface of each entity's first mention (leaderboard convention).
    #[default]
    Surface,
    /// Document id plus entity indices; only literal re-occurrences match.
    DocEntity,
}

pub type FactKey = (String, String, String);

/// Set of training triples keyed by [`FactKeyMode`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactIndex {
    pub mode: FactKeyMode,
    keys: HashSet<FactKey>,
}

fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl FactIndex {
    pub fn key(
        mode: FactKeyMode,
        doc: &Document,
        head: usize,
        relation: &str,
        tail: usize,
    ) -> FactKey {
        match mode {
            FactKeyMode::Surface => (
                normalize_surface(doc.entities[head].name()),
                relation.to_string(),
                normalize_surface(doc.entities[tail].name()),
            ),
            FactKeyMode::DocEntity => (
                format!("{}#{head}", doc.doc_id),
                relation.to_string(),
                format!("{}#{tail}", doc.doc_id),
            ),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn insert(&mut self, key: FactKey) -> bool {
        self.keys.insert(key)
    }

    pub fn contains_key(&self, key: &FactKey) -> bool {
        self.keys.contains(key)
    }

    pub fn contains(&self, doc: &Document, head: usize, relation: &str, tail: usize) -> bool {
        self.keys
            .contains(&Self::key(self.mode, doc, head, relation, tail))
    }
}

/// Indexes the facts of the annotated training split.
pub fn build_fact_index(train_corpus: &[Document]) -> FactIndex {
    build_fact_index_with(train_corpus, FactKeyMode::Surface)
}

pub fn build_fact_index_with(train_corpus: &[Document], mode: FactKeyMode) -> FactIndex {
    let mut index = FactIndex {
        mode,
        keys: HashSet::new(),
    };
    for doc in train_corpus {
        for f in &doc.facts {
            index.insert(FactIndex::key(mode, doc, f.head, &f.relation, f.tail));
        }
    }
    index
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    /// Distinct relation ids among the facts.
    pub relations: usize,
    pub avg_entities_per_doc: f64,
    pub avg_mentions_per_entity: f64,
    pub avg_relations_per_doc: f64,
}

pub fn corpus_statistics(corpus: &[Document]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(
            "cannot summarize an empty corpus".into(),
        ));
    }
    let docs = corpus.len() as f64;
    let entities: usize = corpus.iter().map(Document::n_entities).sum();
    let mentions: usize = corpus
        .iter()
        .flat_map(|d| d.entities.iter())
        .map(|e| e.mentions.len())
        .sum();
    let facts: usize = corpus.iter().map(|d| d.facts.len()).sum();
    let relations: BTreeSet<&str> = corpus
        .iter()
        .flat_map(|d| d.facts.iter().map(|f| f.relation.as_str()))
        .collect();
    Ok(CorpusStats {
        documents: corpus.len(),
        relations: relations.len(),
        avg_entities_per_doc: entities as f64 / docs,
        avg_mentions_per_entity: if entities == 0 {
            0.0
        } else {
            mentions as f64 / entities as f64
        },
        avg_relations_per_doc: facts as f64 / docs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn fixture() -> serde_json::Value {
        json!({
            "title": "fixture",
            "sents": [["A", "works", "at", "B"]],
            "vertexSet": [
                [{"name": "A", "sent_id": 0, "pos": [0, 1], "type": "PER"}],
                [{"name": "B", "sent_id": 0, "pos": [3, 4], "type": "ORG"}]
            ],
            "labels": [{"h": 0, "t": 1, "r": "employer", "evidence": [0]}]
        })
    }

    fn schema() -> RelationSchema {
        RelationSchema::new(vec!["founded".into(), "employer".into()]).unwrap()
    }

    #[test]
    fn parses_fixture() {
        let doc = parse_document(&fixture()).unwrap();
        assert_eq!(doc.n_entities(), 2);
        assert_eq!(doc.facts.len(), 1);
        assert_eq!(doc.candidate_pairs().count(), 2);
        let back = serde_json::to_value(doc.to_raw()).unwrap();
        assert_eq!(parse_document(&back).unwrap(), doc);
    }

    #[test]
    fn single_entity_has_no_pairs() {
        let raw = json!({
            "title": "solo",
            "sents": [["A", "sleeps"]],
            "vertexSet": [[{"name": "A", "sent_id": 0, "pos": [0, 1], "type": "PER"}]]
        });
        let doc = parse_document(&raw).unwrap();
        assert_eq!(doc.n_entities(), 1);
        assert_eq!(doc.candidate_pairs().count(), 0);
    }

    #[test]
    fn rejects_bad_spans_and_self_facts() {
        let mut raw = fixture();
        raw["vertexSet"][1][0]["pos"] = json!([3, 3]);
        let err = parse_document(&raw).unwrap_err().to_string();
        assert!(err.contains("fixture") && err.contains("`B`"), "{err}");

        let mut raw = fixture();
        raw["vertexSet"][1][0]["pos"] = json!([3, 9]);
        assert!(matches!(parse_document(&raw), Err(Error::Schema { .. })));

        let mut raw = fixture();
        raw["labels"] = json!([{"h": 1, "t": 1, "r": "employer"}]);
        let err = parse_document(&raw).unwrap_err().to_string();
        assert!(err.contains("head == tail"), "{err}");

        let mut raw = fixture();
        raw.as_object_mut().unwrap().remove("vertexSet");
        assert!(matches!(parse_document(&raw), Err(Error::Schema { .. })));
    }

    #[test]
    fn duplicate_facts_collapse() {
        let mut raw = fixture();
        raw["labels"] = json!([
            {"h": 0, "t": 1, "r": "employer", "evidence": [0]},
            {"h": 0, "t": 1, "r": "employer", "evidence": []}
        ]);
        assert_eq!(parse_document(&raw).unwrap().facts.len(), 1);
    }

    #[test]
    fn spans_are_in_document_order() {
        let raw = json!({
            "title": "two",
            "sents": [["A", "left", "."], ["B", "stayed"]],
            "vertexSet": [
                [{"name": "A", "sent_id": 0, "pos": [0, 1], "type": "PER"}],
                [{"name": "B", "sent_id": 1, "pos": [0, 1], "type": "PER"}]
            ]
        });
        let doc = parse_document(&raw).unwrap();
        assert_eq!(
            (
                doc.entities[1].mentions[0].start,
                doc.entities[1].mentions[0].end
            ),
            (3, 4)
        );
        let back = serde_json::to_value(doc.to_raw()).unwrap();
        assert_eq!(back["vertexSet"][1][0]["pos"], json!([0, 1]));
    }

    #[test]
    fn label_tensor_of_fixture() {
        let doc = parse_document(&fixture()).unwrap();
        let t = build_label_tensor(&doc, &schema()).unwrap();
        let nonzero: Vec<usize> = t
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
            .collect();
        // [0][1][employer] with n = 2, |R| = 2
        let (s, o, r, n, nr) = (0, 1, 1, 2, 2);
        assert_eq!(nonzero, vec![(s * n + o) * nr + r]);
        assert!(!t.diagonal_mask(1, 1));
        assert_eq!(t.to_facts(&schema()), doc.facts);
    }

    #[test]
    fn label_tensor_multi_label_and_empty() {
        let mut doc = parse_document(&fixture()).unwrap();
        doc.facts.insert(Fact {
            head: 0,
            relation: "founded".into(),
            tail: 1,
        });
        let t = build_label_tensor(&doc, &schema()).unwrap();
        assert_eq!(t.positives(0, 1), vec![0, 1]);

        doc.facts.clear();
        let t = build_label_tensor(&doc, &schema()).unwrap();
        assert!(t.values().iter().all(|&v| v == 0));

        doc.facts.insert(Fact {
            head: 0,
            relation: "spouse".into(),
            tail: 1,
        });
        assert!(matches!(
            build_label_tensor(&doc, &schema()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn fact_index_set_semantics() {
        assert!(build_fact_index(&[]).is_empty());
        let doc = parse_document(&fixture()).unwrap();
        let idx = build_fact_index(std::slice::from_ref(&doc));
        assert_eq!(idx.len(), 1);
        assert!(idx.contains(&doc, 0, "employer", 1));
        let mut other = doc.clone();
        other.doc_id = "copy".into();
        assert_eq!(build_fact_index(&[doc.clone(), other.clone()]).len(), 1);
        assert_eq!(
            build_fact_index_with(&[doc, other], FactKeyMode::DocEntity).len(),
            2
        );
    }

    #[test]
    fn statistics() {
        assert!(matches!(corpus_statistics(&[]), Err(Error::EmptyCorpus(_))));
        let doc = parse_document(&fixture()).unwrap();
        let one = corpus_statistics(std::slice::from_ref(&doc)).unwrap();
        assert_eq!(one.avg_entities_per_doc, 2.0);
        assert_eq!(one.avg_relations_per_doc, 1.0);
        assert_eq!(one.avg_mentions_per_entity, 1.0);
        let two = corpus_statistics(&[doc.clone(), doc]).unwrap();
        assert_eq!(two.avg_entities_per_doc, one.avg_entities_per_doc);
        assert_eq!(two.avg_relations_per_doc, one.avg_relations_per_doc);
        assert_eq!(two.documents, 2);
    }

    #[test]
    fn schema_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        fs::write(&a, r#"["P1", "P2"]"#).unwrap();
        let b = dir.path().join("b.txt");
        fs::write(&b, "P1\nP2\n").unwrap();
        let c = dir.path().join("rel2id.json");
        fs::write(&c, r#"{"Na": 0, "P2": 2, "P1": 1}"#).unwrap();
        for p in [a, b, c] {
            let s = RelationSchema::load(&p).unwrap();
            assert_eq!(s.relation_ids, vec!["P1", "P2"]);
            assert_eq!(s.num_classes(), 3);
            assert_eq!(s.class_index("P2"), Some(2));
        }
    }

    #[test]
    fn frequent_set_by_training_count() {
        let doc = parse_document(&fixture()).unwrap();
        let s = schema().with_frequent_from(&[doc], 1);
        assert!(s.is_frequent("employer"));
        assert!(!s.is_frequent("founded"));
    }
}

//! Set-based evaluation: micro P/R/F1 and its filtered variants, plus the
//! correct / wrong / missed / more error taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FactIndex, RelationSchema};
use crate::error::{Error, Result};

/// One relation instance `relation(head, tail)` in document `doc_id`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub relation: String,
}

impl Triple {
    pub fn new(
        doc_id: impl Into<String>,
        head: usize,
        relation: impl Into<String>,
        tail: usize,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            head,
            tail,
            relation: relation.into(),
        }
    }

    pub fn pair(&self) -> (&str, usize, usize) {
        (&self.doc_id, self.head, self.tail)
    }
}

pub type PredictionSet = BTreeSet<Triple>;

/// Gold triples of a corpus.
pub fn gold_triples(docs: &[Document]) -> PredictionSet {
    docs.iter()
        .flat_map(|d| {
            d.facts
                .iter()
                .map(|f| Triple::new(d.doc_id.clone(), f.head, f.relation.clone(), f.tail))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    /// No predictions after filtering; precision is reported as 0.
    pub empty_pred: bool,
    /// No gold triples after filtering; recall is reported as 0.
    pub empty_gold: bool,
}

impl Scores {
    fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            tp as f64 / gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
            predicted,
            gold,
            empty_pred: predicted == 0,
            empty_gold: gold == 0,
        }
    }
}

pub fn micro_f1<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Scores {
    let tp = pred.intersection(gold).count();
    Scores::from_counts(tp, pred.len(), gold.len())
}

fn filtered(set: &PredictionSet, keep: impl Fn(&Triple) -> bool) -> PredictionSet {
    set.iter().filter(|t| keep(t)).cloned().collect()
}

/// Looks up documents by id for triples that need entity surfaces.
pub struct DocLookup<'a> {
    docs: BTreeMap<&'a str, &'a Document>,
}

impl<'a> DocLookup<'a> {
    pub fn new(docs: &'a [Document]) -> Self {
        Self {
            docs: docs.iter().map(|d| (d.doc_id.as_str(), d)).collect(),
        }
    }

    pub fn get(&self, doc_id: &str) -> Result<&'a Document> {
        self.docs
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no document with id `{doc_id}`")))
    }

    /// Fails on the first triple whose document or entity indices are
    /// unknown.
    pub fn check(&self, set: &PredictionSet) -> Result<()> {
        for t in set {
            let doc = self.get(&t.doc_id)?;
            let n = doc.n_entities();
            if t.head >= n || t.tail >= n || t.head == t.tail {
                return Err(Error::Contract(format!(
                    "triple ({}, {}, {}) is not a valid pair of `{}` with {n} entities",
                    t.head, t.relation, t.tail, t.doc_id
                )));
            }
        }
        Ok(())
    }
}

/// Micro scores after dropping, from both sides, every triple whose key
/// occurs in the training fact index.
pub fn ign_f1(
    pred: &PredictionSet,
    gold: &PredictionSet,
    index: &FactIndex,
    docs: &DocLookup<'_>,
) -> Result<Scores> {
    docs.check(pred)?;
    docs.check(gold)?;
    let novel = |t: &Triple| {
        let doc = docs.get(&t.doc_id).expect("checked above");
        !index.contains(doc, t.head, &t.relation, t.tail)
    };
    Ok(micro_f1(&filtered(pred, novel), &filtered(gold, novel)))
}

/// Gold triples `(s, r, o)` with a bridge entity `b` outside `{s, o}` such
/// that the same document has gold triples `(s, _, b)` and `(b, _, o)`.
pub fn two_hop_subset(gold: &PredictionSet) -> PredictionSet {
    let mut out_edges: BTreeMap<(&str, usize), BTreeSet<usize>> = BTreeMap::new();
    for t in gold {
        out_edges
            .entry((&t.doc_id, t.head))
            .or_default()
            .insert(t.tail);
    }
    gold.iter()
        .filter(|t| {
            out_edges
                .get(&(t.doc_id.as_str(), t.head))
                .is_some_and(|mids| {
                    mids.iter().any(|&b| {
                        b != t.head
                            && b != t.tail
                            && out_edges
                                .get(&(t.doc_id.as_str(), b))
                                .is_some_and(|ends| ends.contains(&t.tail))
                    })
                })
        })
        .cloned()
        .collect()
}

/// Micro scores on the two-hop gold subset, with predictions restricted to
/// the entity pairs of that subset.
pub fn infer_f1(pred: &PredictionSet, gold: &PredictionSet) -> Scores {
    let subset = two_hop_subset(gold);
    let pairs: BTreeSet<(&str, usize, usize)> = subset.iter().map(Triple::pair).collect();
    let pred = filtered(pred, |t| pairs.contains(&t.pair()));
    micro_f1(&pred, &subset)
}

/// Micro scores restricted to frequent and to long-tail relations.
pub fn split_f1(
    pred: &PredictionSet,
    gold: &PredictionSet,
    schema: &RelationSchema,
) -> (Scores, Scores) {
    let frequent = |t: &Triple| schema.is_frequent(&t.relation);
    let tail = |t: &Triple| !schema.is_frequent(&t.relation);
    (
        micro_f1(&filtered(pred, frequent), &filtered(gold, frequent)),
        micro_f1(&filtered(pred, tail), &filtered(gold, tail)),
    )
}

/// Micro scores over `(doc, head, tail)` pairs, ignoring relation labels.
pub fn binary_f1(pred: &PredictionSet, gold: &PredictionSet) -> Scores {
    let collapse = |s: &PredictionSet| -> BTreeSet<(String, usize, usize)> {
        s.iter()
            .map(|t| (t.doc_id.clone(), t.head, t.tail))
            .collect()
    };
    micro_f1(&collapse(pred), &collapse(gold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    /// Predicted triples that are gold.
    pub correct: usize,
    /// Predicted triples not in gold on a pair that has a gold relation.
    pub wrong: usize,
    /// Gold triples on pairs that received no prediction at all.
    pub missed: usize,
    /// Predicted triples on pairs without any gold relation.
    pub more: usize,
    /// Gold triples not predicted, whatever else the pair received.
    pub missed_triples: usize,
    /// Gold triples not predicted although their pair received some
    /// prediction; `missed + unmatched_on_predicted_pairs = missed_triples`.
    pub unmatched_on_predicted_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub correct: Vec<Triple>,
    pub wrong: Vec<Triple>,
    pub missed: Vec<Triple>,
    pub more: Vec<Triple>,
    pub unmatched_on_predicted_pairs: Vec<Triple>,
}

impl ErrorBreakdown {
    pub fn counts(&self) -> ErrorCounts {
        ErrorCounts {
            correct: self.correct.len(),
            wrong: self.wrong.len(),
            missed: self.missed.len(),
            more: self.more.len(),
            missed_triples: self.missed.len() + self.unmatched_on_predicted_pairs.len(),
            unmatched_on_predicted_pairs: self.unmatched_on_predicted_pairs.len(),
        }
    }
}

pub fn error_breakdown(pred: &PredictionSet, gold: &PredictionSet) -> ErrorBreakdown {
    let gold_pairs: BTreeSet<(&str, usize, usize)> = gold.iter().map(Triple::pair).collect();
    let pred_pairs: BTreeSet<(&str, usize, usize)> = pred.iter().map(Triple::pair).collect();
    let mut out = ErrorBreakdown::default();
    for t in pred {
        if gold.contains(t) {
            out.correct.push(t.clone());
        } else if gold_pairs.contains(&t.pair()) {
            out.wrong.push(t.clone());
        } else {
            out.more.push(t.clone());
        }
    }
    for t in gold.difference(pred) {
        if pred_pairs.contains(&t.pair()) {
            out.unmatched_on_predicted_pairs.push(t.clone());
        } else {
            out.missed.push(t.clone());
        }
    }
    out
}

pub fn error_categories(pred: &PredictionSet, gold: &PredictionSet) -> ErrorCounts {
    error_breakdown(pred, gold).counts()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_f1: f64,
    pub infer_f1: f64,
    pub frequent_f1: f64,
    pub longtail_f1: f64,
    pub binary_f1: Option<f64>,
    pub error_counts: ErrorCounts,
    pub overall: Scores,
    pub ign: Scores,
    pub infer: Scores,
    pub frequent: Scores,
    pub longtail: Scores,
    pub binary: Option<Scores>,
}

pub struct EvalInputs<'a> {
    pub docs: &'a [Document],
    pub fact_index: &'a FactIndex,
    pub schema: &'a RelationSchema,
    pub binary: bool,
}

pub fn evaluate(
    pred: &PredictionSet,
    gold: &PredictionSet,
    inputs: &EvalInputs<'_>,
) -> Result<EvalReport> {
    let lookup = DocLookup::new(inputs.docs);
    let overall = micro_f1(pred, gold);
    let ign = ign_f1(pred, gold, inputs.fact_index, &lookup)?;
    let infer = infer_f1(pred, gold);
    let (frequent, longtail) = split_f1(pred, gold, inputs.schema);
    let binary = inputs.binary.then(|| binary_f1(pred, gold));
    Ok(EvalReport {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        ign_f1: ign.f1,
        infer_f1: infer.f1,
        frequent_f1: frequent.f1,
        longtail_f1: longtail.f1,
        binary_f1: binary.map(|b| b.f1),
        error_counts: error_categories(pred, gold),
        overall,
        ign,
        infer,
        frequent,
        longtail,
        binary,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "metric", "P", "R", "F1", "tp", "pred", "gold"
        );
        let mut row = |name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}{}",
                name,
                s.precision,
                s.recall,
                s.f1,
                s.true_positives,
                s.predicted,
                s.gold,
                if s.empty_gold { "  (no gold)" } else { "" }
            );
        };
        row("overall", &self.overall);
        row("ign", &self.ign);
        row("infer", &self.infer);
        row("frequent", &self.frequent);
        row("long-tail", &self.longtail);
        if let Some(b) = &self.binary {
            row("binary", b);
        }
        let c = &self.error_counts;
        let _ = writeln!(
            out,
            "errors: C={} W={} MS={} MR={} (missed triples {})",
            c.correct, c.wrong, c.missed, c.more, c.missed_triples
        );
        out
    }
}

/// One line of a leaderboard-style prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub title: String,
    pub h_idx: usize,
    pub t_idx: usize,
    pub r: String,
}

pub fn to_records(set: &PredictionSet) -> Vec<PredictionRecord> {
    set.iter()
        .map(|t| PredictionRecord {
            title: t.doc_id.clone(),
            h_idx: t.head,
            t_idx: t.tail,
            r: t.relation.clone(),
        })
        .collect()
}

pub fn from_records(records: &[PredictionRecord]) -> PredictionSet {
    records
        .iter()
        .map(|r| Triple::new(r.title.clone(), r.h_idx, r.r.clone(), r.t_idx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, r: &str, o: usize) -> Triple {
        Triple::new("d", h, r, o)
    }

    fn set(ts: &[Triple]) -> PredictionSet {
        ts.iter().cloned().collect()
    }

    #[test]
    fn micro_scores() {
        let gold = set(&[t(0, "a", 1), t(0, "b", 1)]);
        let s = micro_f1(&gold, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = micro_f1(&PredictionSet::new(), &gold);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(s.empty_pred);

        let pred = set(&[t(0, "a", 1), t(0, "b", 1), t(0, "c", 1), t(1, "x", 0)]);
        let gold = set(&[
            t(0, "a", 1),
            t(0, "b", 1),
            t(0, "c", 1),
            t(2, "a", 0),
            t(2, "b", 0),
        ]);
        let s = micro_f1(&pred, &gold);
        assert_eq!((s.precision, s.recall), (0.75, 0.6));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn chain_two_hop_subset() {
        let gold = set(&[t(0, "r1", 1), t(1, "r2", 2), t(0, "r3", 2)]);
        assert_eq!(two_hop_subset(&gold), set(&[t(0, "r3", 2)]));
        let s = infer_f1(&gold, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let flat = set(&[t(0, "r1", 1), t(2, "r2", 3)]);
        assert!(infer_f1(&flat, &flat).empty_gold);
    }

    #[test]
    fn error_fixture() {
        let gold = set(&[t(0, "r1", 1), t(0, "r2", 2)]);
        let pred = set(&[t(0, "r3", 1), t(1, "r1", 2)]);
        let c = error_categories(&pred, &gold);
        assert_eq!((c.correct, c.wrong, c.more), (0, 1, 1));
        assert_eq!(c.missed, 1);
        assert_eq!(c.missed_triples, 2);
        assert_eq!(c.correct + c.wrong + c.more, pred.len());

        let c = error_categories(&gold, &gold);
        assert_eq!((c.correct, c.wrong, c.missed, c.more), (2, 0, 0, 0));
        let c = error_categories(&PredictionSet::new(), &gold);
        assert_eq!((c.correct, c.wrong, c.missed, c.more), (0, 0, 2, 0));
    }

    #[test]
    fn binary_collapses_relations() {
        let gold = set(&[t(0, "r1", 1), t(1, "r2", 0)]);
        let pred = set(&[t(0, "r9", 1), t(1, "r8", 0)]);
        assert_eq!(binary_f1(&pred, &gold).f1, 1.0);
        assert_eq!(micro_f1(&pred, &gold).f1, 0.0);
    }

    #[test]
    fn records_round_trip() {
        let s = set(&[t(0, "r1", 1), t(2, "r2", 0)]);
        let json = serde_json::to_string(&to_records(&s)).unwrap();
        let back: Vec<PredictionRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(from_records(&back), s);
        assert!(json.contains("\"h_idx\""));
    }
}

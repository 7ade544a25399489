//! Generated corpora with known labelling rules, used to exercise training
//! end to end without external data.
//!
//! Entities are single-token names drawn per document from a shared pool.
//! A stated fact `r(h, t)` is rendered as the sentence `h cue_r t .`;
//! unrelated co-mentions are rendered as `h and t .` and every document gets
//! a few filler sentences.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{from_raw, Document, RawDocument, RawLabel, RawMention, RelationSchema};
use crate::error::Result;
use crate::nn::seeded_rng;

const NAME_POOL: usize = 60;
const FILLER_POOL: usize = 12;

enum Tok {
    Word(String),
    Ent(usize),
}

struct DocBuilder {
    title: String,
    names: Vec<String>,
    sentences: Vec<Vec<Tok>>,
    labels: BTreeSet<(usize, String, usize)>,
}

impl DocBuilder {
    fn new(title: String, num_entities: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut pool: Vec<usize> = (0..NAME_POOL).collect();
        pool.shuffle(rng);
        Self {
            title,
            names: pool[..num_entities]
                .iter()
                .map(|i| format!("name{i}"))
                .collect(),
            sentences: Vec::new(),
            labels: BTreeSet::new(),
        }
    }

    fn state(&mut self, h: usize, cue: &str, t: usize) {
        self.sentences.push(vec![
            Tok::Ent(h),
            Tok::Word(cue.to_string()),
            Tok::Ent(t),
            Tok::Word(".".into()),
        ]);
    }

    fn fact(&mut self, h: usize, relation: &str, t: usize) {
        self.labels.insert((h, relation.to_string(), t));
    }

    fn filler(&mut self, rng: &mut ChaCha8Rng) {
        let len = rng.random_range(2..5);
        let mut s: Vec<Tok> = (0..len)
            .map(|_| Tok::Word(format!("w{}", rng.random_range(0..FILLER_POOL))))
            .collect();
        s.push(Tok::Word(".".into()));
        self.sentences.push(s);
    }

    /// Mentions every entity that no sentence refers to yet.
    fn cover_entities(&mut self, rng: &mut ChaCha8Rng) {
        let mentioned: BTreeSet<usize> = self
            .sentences
            .iter()
            .flatten()
            .filter_map(|t| match t {
                Tok::Ent(e) => Some(*e),
                Tok::Word(_) => None,
            })
            .collect();
        for e in 0..self.names.len() {
            if !mentioned.contains(&e) {
                let w = format!("w{}", rng.random_range(0..FILLER_POOL));
                self.sentences
                    .push(vec![Tok::Ent(e), Tok::Word(w), Tok::Word(".".into())]);
            }
        }
    }

    fn build(mut self, rng: &mut ChaCha8Rng, is_distant: bool) -> Result<Document> {
        self.cover_entities(rng);
        self.sentences.shuffle(rng);
        let mut vertex_set: Vec<Vec<RawMention>> = vec![Vec::new(); self.names.len()];
        let mut sents = Vec::with_capacity(self.sentences.len());
        for (si, sent) in self.sentences.iter().enumerate() {
            let mut words = Vec::with_capacity(sent.len());
            for (pos, tok) in sent.iter().enumerate() {
                match tok {
                    Tok::Word(w) => words.push(w.clone()),
                    Tok::Ent(e) => {
                        words.push(self.names[*e].clone());
                        vertex_set[*e].push(RawMention {
                            name: self.names[*e].clone(),
                            sent_id: si,
                            pos: [pos, pos + 1],
                            entity_type: "ENT".into(),
                        });
                    }
                }
            }
            sents.push(words);
        }
        let labels = self
            .labels
            .iter()
            .map(|(h, r, t)| RawLabel {
                h: *h,
                t: *t,
                r: r.clone(),
                evidence: Vec::new(),
            })
            .collect();
        from_raw(
            RawDocument {
                title: self.title,
                sents,
                vertex_set,
                labels: Some(labels),
            },
            is_distant,
        )
    }
}

fn cue(relation: &str) -> String {
    format!("cue_{}", relation.to_lowercase())
}

/// Documents whose facts are all stated explicitly, with relations drawn by
/// `weights`.
#[derive(Debug, Clone)]
pub struct ExplicitCorpusConfig {
    pub num_docs: usize,
    pub relations: Vec<String>,
    /// Relative sampling weight of each relation.
    pub weights: Vec<f64>,
    pub entities: (usize, usize),
    pub facts: (usize, usize),
    /// Probability that a fact's pair also receives a second relation.
    pub multi_label: f64,
    pub fillers: usize,
    pub prefix: String,
}

fn pick_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

pub fn explicit_corpus(config: &ExplicitCorpusConfig, seed: u64) -> Result<Vec<Document>> {
    let mut rng = seeded_rng(seed, &format!("synthetic/{}", config.prefix));
    let mut docs = Vec::with_capacity(config.num_docs);
    for d in 0..config.num_docs {
        let n = rng.random_range(config.entities.0..=config.entities.1);
        let mut b = DocBuilder::new(format!("{}{d}", config.prefix), n, &mut rng);
        let facts = rng.random_range(config.facts.0..=config.facts.1);
        let mut used = BTreeSet::new();
        for _ in 0..facts {
            let h = rng.random_range(0..n);
            let mut t = rng.random_range(0..n - 1);
            if t >= h {
                t += 1;
            }
            if !used.insert((h, t)) {
                continue;
            }
            let r = pick_weighted(&config.weights, &mut rng);
            let rel = &config.relations[r];
            b.state(h, &cue(rel), t);
            b.fact(h, rel, t);
            if rng.random::<f64>() < config.multi_label {
                let r2 = pick_weighted(&config.weights, &mut rng);
                if r2 != r {
                    let rel = &config.relations[r2];
                    b.state(h, &cue(rel), t);
                    b.fact(h, rel, t);
                }
            }
        }
        // One unrelated co-mention so "and" never implies a relation.
        let h = rng.random_range(0..n);
        let t = (h + 1 + rng.random_range(0..n - 1)) % n;
        if !used.contains(&(h, t)) && !used.contains(&(t, h)) {
            b.state(h, "and", t);
        }
        for _ in 0..config.fillers {
            b.filler(&mut rng);
        }
        docs.push(b.build(&mut rng, false)?);
    }
    Ok(docs)
}

fn relation_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

/// Small corpus for memorization checks: 20 documents over 5 relations.
pub fn overfit_corpus(seed: u64) -> Result<(Vec<Document>, RelationSchema)> {
    let relations = relation_names("R", 5);
    let docs = explicit_corpus(
        &ExplicitCorpusConfig {
            num_docs: 20,
            relations: relations.clone(),
            weights: vec![1.0; 5],
            entities: (3, 5),
            facts: (2, 4),
            multi_label: 0.15,
            fillers: 1,
            prefix: "overfit".into(),
        },
        seed,
    )?;
    Ok((docs, RelationSchema::new(relations)?))
}

/// Corpus with `heads` frequent and `tails` rare relations, sampled in the
/// ratio `skew : 1`.
pub fn longtail_corpus(
    num_docs: usize,
    heads: usize,
    tails: usize,
    skew: f64,
    seed: u64,
    prefix: &str,
) -> Result<(Vec<Document>, RelationSchema)> {
    let mut relations = relation_names("H", heads);
    relations.extend(relation_names("T", tails));
    let mut weights = vec![skew; heads];
    weights.extend(vec![1.0; tails]);
    let docs = explicit_corpus(
        &ExplicitCorpusConfig {
            num_docs,
            relations: relations.clone(),
            weights,
            entities: (3, 4),
            facts: (1, 3),
            multi_label: 0.3,
            fillers: 1,
            prefix: prefix.into(),
        },
        seed,
    )?;
    Ok((docs, RelationSchema::new(relations)?))
}

pub const COMPOSE_FIRST: &str = "R1";
pub const COMPOSE_SECOND: &str = "R2";
pub const COMPOSED: &str = "R3";

/// Corpus where `R3(a, c)` holds exactly when `R1(a, b)` and `R2(b, c)`
/// for some bridge `b`. Only `R1` and `R2` are stated in the text.
///
/// Each document holds one chain `a -R1-> b -R2-> c` and, with probability
/// one half, a broken chain `x -R1-> y`, `z -R2-> w` with `y != z`, so that
/// being an `R1` subject and an `R2` object is not enough for `R3`.
pub fn composition_corpus(
    num_docs: usize,
    seed: u64,
    prefix: &str,
) -> Result<(Vec<Document>, RelationSchema)> {
    let mut rng = seeded_rng(seed, &format!("synthetic/compose/{prefix}"));
    let mut docs = Vec::with_capacity(num_docs);
    for d in 0..num_docs {
        let broken = rng.random_bool(0.5);
        let extra = rng.random_range(0..2);
        let n = 3 + if broken { 4 } else { 0 } + extra;
        let mut b = DocBuilder::new(format!("{prefix}{d}"), n, &mut rng);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let (a, m, c) = (ids[0], ids[1], ids[2]);
        b.state(a, &cue(COMPOSE_FIRST), m);
        b.state(m, &cue(COMPOSE_SECOND), c);
        b.fact(a, COMPOSE_FIRST, m);
        b.fact(m, COMPOSE_SECOND, c);
        b.fact(a, COMPOSED, c);
        if broken {
            let (x, y, z, w) = (ids[3], ids[4], ids[5], ids[6]);
            b.state(x, &cue(COMPOSE_FIRST), y);
            b.state(z, &cue(COMPOSE_SECOND), w);
            b.fact(x, COMPOSE_FIRST, y);
            b.fact(z, COMPOSE_SECOND, w);
        }
        let pick: Vec<usize> = ids.choose_multiple(&mut rng, 2).copied().collect();
        b.state(pick[0], "and", pick[1]);
        b.filler(&mut rng);
        docs.push(b.build(&mut rng, false)?);
    }
    let schema = RelationSchema::new(vec![
        COMPOSE_FIRST.to_string(),
        COMPOSE_SECOND.to_string(),
        COMPOSED.to_string(),
    ])?;
    Ok((docs, schema))
}

/// Distant-supervision style copy of `docs`: every gold fact is dropped with
/// probability `flip`, and every unrelated ordered pair gains a random
/// relation with probability `spurious`. Text is unchanged.
pub fn noisy_copy(
    docs: &[Document],
    schema: &RelationSchema,
    flip: f64,
    spurious: f64,
    seed: u64,
) -> Vec<Document> {
    let mut rng = seeded_rng(seed, "synthetic/noise");
    docs.iter()
        .map(|doc| {
            let mut out = doc.clone();
            out.is_distant = true;
            out.evidence.clear();
            let related: BTreeSet<(usize, usize)> =
                doc.facts.iter().map(|f| (f.head, f.tail)).collect();
            out.facts = doc
                .facts
                .iter()
                .filter(|_| rng.random::<f64>() >= flip)
                .cloned()
                .collect();
            for (s, o) in doc.candidate_pairs() {
                if !related.contains(&(s, o)) && rng.random::<f64>() < spurious {
                    let r = rng.random_range(0..schema.num_relations());
                    out.facts.insert(crate::corpus::Fact {
                        head: s,
                        relation: schema.relation_at(r).to_string(),
                        tail: o,
                    });
                }
            }
            out
        })
        .collect()
}

/// Splits of the noisy-distant experiment, all generated from one rule set.
pub struct DistantTestbed {
    pub annotated: Vec<Document>,
    pub distant: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub schema: RelationSchema,
}

/// Document shape shared by every split of the noisy-distant testbed.
fn testbed_config(num_docs: usize, prefix: &str) -> ExplicitCorpusConfig {
    ExplicitCorpusConfig {
        num_docs,
        relations: relation_names("R", 5),
        weights: vec![1.0; 5],
        entities: (3, 4),
        facts: (1, 3),
        multi_label: 0.15,
        fillers: 1,
        prefix: prefix.into(),
    }
}

pub fn distant_testbed(
    annotated: usize,
    distant: usize,
    dev: usize,
    test: usize,
    flip: f64,
    spurious: f64,
    seed: u64,
) -> Result<DistantTestbed> {
    let schema = RelationSchema::new(relation_names("R", 5))?;
    let clean = explicit_corpus(&testbed_config(distant, "distant"), seed)?;
    Ok(DistantTestbed {
        annotated: explicit_corpus(&testbed_config(annotated, "train"), seed)?,
        distant: noisy_copy(&clean, &schema, flip, spurious, seed),
        dev: explicit_corpus(&testbed_config(dev, "dev"), seed)?,
        test: explicit_corpus(&testbed_config(test, "test"), seed)?,
        schema,
    })
}

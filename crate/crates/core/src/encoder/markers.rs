use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const MARKER: &str = "*";
pub const UNK: &str = "[UNK]";

/// Whitespace-token vocabulary. Id 0 is `[UNK]`; the entity marker is always
/// present in vocabularies built here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: BTreeMap<String, u32>,
}

#[derive(Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_tokens(r.tokens)
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, ids }
    }

    /// Collects every token of `docs` (sorted, so the result does not depend
    /// on corpus order) after `[UNK]` and the marker.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        for doc in docs {
            for tok in doc.tokens() {
                seen.insert(tok.to_string());
            }
        }
        seen.remove(UNK);
        seen.remove(MARKER);
        let mut tokens = vec![UNK.to_string(), MARKER.to_string()];
        tokens.extend(seen);
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }
}

/// Token ids with `*` inserted around every mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedSequence {
    pub ids: Vec<u32>,
    pub is_marker: Vec<bool>,
    /// Entity -> mention -> index of the opening marker.
    pub mention_markers: Vec<Vec<usize>>,
}

impl MarkedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Removes the inserted markers, recovering the original ids.
    pub fn strip_markers(&self) -> Vec<u32> {
        self.ids
            .iter()
            .zip(&self.is_marker)
            .filter(|(_, &m)| !m)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Keeps the first `cap` positions. Fails if any opening marker falls
    /// outside the kept prefix.
    pub fn truncate(&mut self, cap: usize, doc_id: &str) -> Result<()> {
        if self.ids.len() <= cap {
            return Ok(());
        }
        for (e, markers) in self.mention_markers.iter().enumerate() {
            if markers.iter().any(|&m| m >= cap) {
                return Err(Error::schema(
                    doc_id,
                    format!("entity {e} has a mention beyond the {cap}-token cap"),
                ));
            }
        }
        self.ids.truncate(cap);
        self.is_marker.truncate(cap);
        Ok(())
    }
}

struct Span {
    entity: usize,
    mention: usize,
    start: usize,
    end: usize,
}

/// Inserts `*` before and after every mention. At a shared boundary closing
/// markers come first; nested mentions open outermost first and close
/// innermost first.
pub fn insert_markers(doc: &Document, vocab: &Vocab) -> Result<MarkedSequence> {
    let marker = vocab
        .get(MARKER)
        .ok_or_else(|| Error::Config(format!("vocabulary has no `{MARKER}` marker token")))?;
    let len = doc.num_tokens();
    let mut opens: Vec<Vec<Span>> = (0..=len).map(|_| Vec::new()).collect();
    let mut closes: Vec<Vec<(usize, usize, usize)>> = (0..=len).map(|_| Vec::new()).collect();
    for (e, ent) in doc.entities.iter().enumerate() {
        for (m, mention) in ent.mentions.iter().enumerate() {
            opens[mention.start].push(Span {
                entity: e,
                mention: m,
                start: mention.start,
                end: mention.end,
            });
            closes[mention.end].push((mention.start, e, m));
        }
    }
    for o in &mut opens {
        o.sort_by(|a, b| {
            b.end
                .cmp(&a.end)
                .then(a.entity.cmp(&b.entity))
                .then(a.mention.cmp(&b.mention))
        });
    }
    for c in &mut closes {
        c.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
    }
    debug_assert!(opens.iter().flatten().all(|s| s.start < s.end));

    let total_mentions: usize = doc.entities.iter().map(|e| e.mentions.len()).sum();
    let mut ids = Vec::with_capacity(len + 2 * total_mentions);
    let mut is_marker = Vec::with_capacity(ids.capacity());
    let mut mention_markers: Vec<Vec<usize>> = doc
        .entities
        .iter()
        .map(|e| vec![0; e.mentions.len()])
        .collect();

    let mut tokens = doc.tokens();
    for p in 0..=len {
        for _ in &closes[p] {
            ids.push(marker);
            is_marker.push(true);
        }
        if p == len {
            break;
        }
        for span in &opens[p] {
            mention_markers[span.entity][span.mention] = ids.len();
            ids.push(marker);
            is_marker.push(true);
        }
        let tok = tokens.next().expect("token count matches document length");
        ids.push(vocab.id(tok));
        is_marker.push(false);
    }

    Ok(MarkedSequence {
        ids,
        is_marker,
        mention_markers,
    })
}

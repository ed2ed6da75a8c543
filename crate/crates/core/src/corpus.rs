//! Open-KB triples, gold entity annotations and the noun-phrase neighbor graph.
//!
//! Surface strings are interned in first-seen order after NFC normalization
//! and trimming. Case is preserved here; case folding is a side-information
//! concern (see [`crate::side_info::morph_normalize`]).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Dense handle of an interned noun phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhraseId(pub usize);

/// Dense handle of an interned relation phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

/// Position of a triple in [`Corpus::triples`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: PhraseId,
    pub relation: RelationId,
    pub tail: PhraseId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head: PhraseId(head),
            relation: RelationId(relation),
            tail: PhraseId(tail),
        }
    }
}

/// NFC-normalizes and trims a raw surface string.
pub fn normalize_surface(raw: &str) -> String {
    raw.trim().nfc().collect()
}

/// Bijection between distinct strings and contiguous ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    strings: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, s: &str) -> usize {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.strings.len();
        self.strings.push(s.to_owned());
        self.index.insert(s.to_owned(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn resolve(&self, id: usize) -> &str {
        &self.strings[id]
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.strings.iter().enumerate().map(|(i, s)| (i, s.as_str()))
    }
}

/// An ingested open knowledge base. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    phrases: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    triple_set: HashMap<Triple, TripleId>,
    /// External triple keys (4th TSV column) used to join sentences.
    triple_keys: BTreeMap<String, TripleId>,
    sentences: BTreeMap<TripleId, String>,
}

impl Corpus {
    /// Builds a corpus from `(head, relation, tail, key)` rows, dropping
    /// duplicate triples. Returns the corpus and the number of dropped rows.
    pub fn from_rows<'a, I>(rows: I) -> (Corpus, usize)
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str, Option<&'a str>)>,
    {
        let mut corpus = Corpus::default();
        let mut dropped = 0;
        for (h, r, t, key) in rows {
            if !corpus.push(h, r, t, key) {
                dropped += 1;
            }
        }
        (corpus, dropped)
    }

    /// Adds one triple; returns `false` when it was a duplicate.
    fn push(&mut self, head: &str, relation: &str, tail: &str, key: Option<&str>) -> bool {
        let head = PhraseId(self.phrases.intern(&normalize_surface(head)));
        let relation = RelationId(self.relations.intern(&normalize_surface(relation)));
        let tail = PhraseId(self.phrases.intern(&normalize_surface(tail)));
        let triple = Triple {
            head,
            relation,
            tail,
        };
        let next = TripleId(self.triples.len());
        let id = *self.triple_set.entry(triple).or_insert(next);
        let fresh = id == next;
        if fresh {
            self.triples.push(triple);
        }
        if let Some(key) = key {
            let key = key.trim();
            if !key.is_empty() {
                self.triple_keys.insert(key.to_owned(), id);
            }
        }
        fresh
    }

    pub fn phrases(&self) -> &Interner {
        &self.phrases
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_phrases(&self) -> usize {
        self.phrases.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn phrase(&self, id: PhraseId) -> &str {
        self.phrases.resolve(id.0)
    }

    pub fn phrase_id(&self, surface: &str) -> Option<PhraseId> {
        self.phrases.get(&normalize_surface(surface)).map(PhraseId)
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains_key(triple)
    }

    pub fn sentences(&self) -> &BTreeMap<TripleId, String> {
        &self.sentences
    }

    pub fn sentence(&self, id: TripleId) -> Option<&str> {
        self.sentences.get(&id).map(String::as_str)
    }

    /// Attaches source sentences keyed by the external triple id column.
    /// Rows naming unknown keys are skipped; returns the number skipped.
    pub fn attach_sentences(&mut self, path: &Path) -> Result<usize> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut skipped = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((key, sentence)) = line.split_once('\t') else {
                return Err(Error::Ingest {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: "expected `triple_id<TAB>sentence`".into(),
                });
            };
            match self.triple_keys.get(key.trim()) {
                Some(&id) => {
                    self.sentences.insert(id, sentence.trim().to_owned());
                }
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("{}: skipped {skipped} sentences with unknown triple ids", path.display());
        }
        Ok(skipped)
    }
}

/// Reads a UTF-8 TSV of `head, relation, tail[, triple_id]` rows.
pub fn load_triples(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::Ingest {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!("expected at least 3 tab-separated fields, found {}", fields.len()),
            });
        }
        rows.push((fields[0], fields[1], fields[2], fields.get(3).copied()));
    }
    if rows.is_empty() {
        return Err(Error::Corpus(format!("{}: no triples", path.display())));
    }
    let (corpus, dropped) = Corpus::from_rows(rows);
    if dropped > 0 {
        log::info!("{}: dropped {dropped} duplicate triples", path.display());
    }
    Ok(corpus)
}

/// Gold entity label per annotated noun phrase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldLabels {
    labels: BTreeMap<PhraseId, String>,
}

impl GoldLabels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: PhraseId, entity: impl Into<String>) {
        self.labels.insert(phrase, entity.into());
    }

    pub fn get(&self, phrase: PhraseId) -> Option<&str> {
        self.labels.get(&phrase).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PhraseId, &str)> {
        self.labels.iter().map(|(&p, e)| (p, e.as_str()))
    }

    /// Keeps only the labels whose phrase satisfies `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(PhraseId) -> bool) -> GoldLabels {
        GoldLabels {
            labels: self
                .labels
                .iter()
                .filter(|(p, _)| keep(**p))
                .map(|(p, e)| (*p, e.clone()))
                .collect(),
        }
    }
}

/// Reads `phrase<TAB>entity_id` rows. Phrases missing from the corpus are
/// skipped with a warning, or rejected when `strict` is set.
pub fn load_gold(path: &Path, corpus: &Corpus, strict: bool) -> Result<GoldLabels> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut gold = GoldLabels::new();
    let mut unknown = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((phrase, entity)) = line.split_once('\t') else {
            return Err(Error::Ingest {
                path: path.to_owned(),
                line: lineno + 1,
                message: "expected `phrase<TAB>entity_id`".into(),
            });
        };
        match corpus.phrase_id(phrase) {
            Some(id) => gold.insert(id, entity.trim()),
            None if strict => {
                return Err(Error::Ingest {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: format!("unknown noun phrase `{}`", phrase.trim()),
                })
            }
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!("{}: skipped {unknown} gold rows naming unknown phrases", path.display());
    }
    Ok(gold)
}

/// First-order neighbors of every noun phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    neighbors: Vec<Vec<PhraseId>>,
}

impl NeighborIndex {
    pub fn neighbors(&self, phrase: PhraseId) -> &[PhraseId] {
        &self.neighbors[phrase.0]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Symmetric head/tail adjacency over noun phrases; self-loops are dropped.
pub fn neighbor_index(corpus: &Corpus) -> NeighborIndex {
    let mut neighbors = vec![Vec::new(); corpus.num_phrases()];
    for t in corpus.triples() {
        if t.head != t.tail {
            neighbors[t.head.0].push(t.tail);
            neighbors[t.tail.0].push(t.head);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    NeighborIndex { neighbors }
}

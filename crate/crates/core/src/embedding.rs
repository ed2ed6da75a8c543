//! Word vectors, phrase embeddings and neighbor-augmented representations.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, NeighborIndex, PhraseId};
use crate::error::{Error, Result};

/// Pretrained token vectors of a fixed dimension.
#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    mean_norm: f64,
}

impl VectorStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Embedding("vector dimension must be positive".into()));
        }
        Ok(VectorStore {
            dim,
            vectors: HashMap::new(),
            mean_norm: 0.0,
        })
    }

    /// Inserts or replaces a token vector.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Embedding(format!(
                "vector has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Embedding("non-finite vector component".into()));
        }
        self.vectors.insert(token.into(), vector);
        self.refresh_mean_norm();
        Ok(())
    }

    fn refresh_mean_norm(&mut self) {
        let n = self.vectors.len();
        self.mean_norm = if n == 0 {
            1.0
        } else {
            // sorted for a summation order independent of hash layout
            let mut norms: Vec<f64> = self.vectors.values().map(|v| l2(v)).collect();
            norms.sort_by(f64::total_cmp);
            norms.iter().sum::<f64>() / n as f64
        };
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact lookup, falling back to the lowercased token.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors
            .get(token)
            .or_else(|| self.vectors.get(&token.to_lowercase()))
            .map(Vec::as_slice)
    }

    /// Copy keeping the first `dim` components of every vector.
    pub fn truncated(&self, dim: usize) -> Result<VectorStore> {
        if dim == 0 || dim > self.dim {
            return Err(Error::Embedding(format!(
                "cannot truncate {}-dimensional vectors to {dim}",
                self.dim
            )));
        }
        let mut out = VectorStore::new(dim)?;
        out.vectors = self.vectors.iter().map(|(k, v)| (k.clone(), v[..dim].to_vec())).collect();
        out.refresh_mean_norm();
        Ok(out)
    }

    /// Mean L2 norm of the stored vectors.
    pub fn mean_norm(&self) -> f64 {
        self.mean_norm
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Parses whitespace-separated `token x_1 .. x_d` lines.
///
/// In lenient mode malformed lines are skipped and counted; in strict mode the
/// first malformed line is an error.
pub fn load_vectors(path: &Path, expected_dim: usize, strict: bool) -> Result<VectorStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (store, skipped) = parse_vectors(&text, expected_dim, strict).map_err(|e| match e {
        Error::Ingest { line, message, .. } => Error::Ingest {
            path: path.to_owned(),
            line,
            message,
        },
        other => other,
    })?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed vector lines", path.display());
    }
    Ok(store)
}

/// Number of numeric fields on the first parsable line of a vector file.
pub fn detect_dim(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter_map(|l| {
            let mut f = l.split_whitespace();
            f.next()?;
            let n = f.map(str::parse::<f64>).collect::<std::result::Result<Vec<_>, _>>().ok()?.len();
            (n > 0).then_some(n)
        })
        .next()
        .ok_or_else(|| Error::Embedding(format!("{}: no vector lines", path.display())))
}

/// In-memory variant of [`load_vectors`]; returns the store and skip count.
pub fn parse_vectors(text: &str, expected_dim: usize, strict: bool) -> Result<(VectorStore, usize)> {
    let mut store = VectorStore::new(expected_dim)?;
    let mut skipped = 0;
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let parsed: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let problem = match &parsed {
            Err(_) => Some("unparsable component".to_string()),
            Ok(v) if v.len() != expected_dim => {
                Some(format!("{} components, expected {expected_dim}", v.len()))
            }
            Ok(v) if v.iter().any(|x| !x.is_finite()) => Some("non-finite component".into()),
            Ok(_) => None,
        };
        match problem {
            None => {
                store.vectors.insert(token.to_owned(), parsed.unwrap());
            }
            Some(message) if strict => {
                return Err(Error::Ingest {
                    path: Default::default(),
                    line: lineno + 1,
                    message,
                })
            }
            Some(_) => skipped += 1,
        }
    }
    if store.vectors.is_empty() {
        return Err(Error::Embedding("no valid vector lines".into()));
    }
    store.refresh_mean_norm();
    Ok((store, skipped))
}

/// Deterministic stand-in vector for an out-of-vocabulary token: a
/// pseudo-random unit direction seeded by the token's SHA-256, scaled to the
/// store's mean norm.
pub fn oov_vector(token: &str, store: &VectorStore) -> Vec<f64> {
    let digest = Sha256::digest(token.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..store.dim())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = l2(&v).max(f64::MIN_POSITIVE);
    let scale = store.mean_norm() / norm;
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// Mean of the in-vocabulary token vectors of a whitespace-tokenized phrase.
/// Phrases with no known token fall back to the mean of their tokens'
/// [`oov_vector`]s.
pub fn phrase_embedding(phrase: &str, store: &VectorStore) -> Vec<f64> {
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    let known: Vec<&[f64]> = tokens.iter().filter_map(|t| store.get(t)).collect();
    let mut acc = vec![0.0; store.dim()];
    if !known.is_empty() {
        for v in &known {
            acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
        }
        acc.iter_mut().for_each(|a| *a /= known.len() as f64);
        return acc;
    }
    if tokens.is_empty() {
        return oov_vector(phrase, store);
    }
    for t in &tokens {
        let v = oov_vector(t, store);
        acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= tokens.len() as f64);
    acc
}

/// Embeds every corpus phrase; row `i` is the embedding of `PhraseId(i)`.
pub fn phrase_table(corpus: &Corpus, store: &VectorStore) -> Array2<f64> {
    let n = corpus.num_phrases();
    let mut table = Array2::zeros((n, store.dim()));
    for (i, phrase) in corpus.phrases().iter() {
        let v = phrase_embedding(phrase, store);
        table.row_mut(i).assign(&ArrayView1::from(&v[..]));
    }
    table
}

/// Optional precomputed per-phrase contextual vectors keyed by the surface
/// string with spaces replaced by underscores. Phrases without an entry keep
/// their row from `fallback`.
pub fn contextual_table(path: &Path, corpus: &Corpus, fallback: &Array2<f64>) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = HashMap::new();
    let mut dim = None;
    for line in text.lines() {
        let mut fields = line.split_whitespace();
        let Some(key) = fields.next() else { continue };
        let Ok(v) = fields.map(str::parse::<f64>).collect::<std::result::Result<Vec<_>, _>>() else {
            continue;
        };
        if v.is_empty() || dim.is_some_and(|d| d != v.len()) {
            continue;
        }
        dim = Some(v.len());
        rows.insert(key.to_owned(), v);
    }
    let Some(dim) = dim else {
        return Err(Error::Embedding(format!("{}: no contextual vectors", path.display())));
    };
    let mut table = Array2::zeros((corpus.num_phrases(), dim));
    let mut missing = 0;
    for (i, phrase) in corpus.phrases().iter() {
        match rows.get(&phrase.replace(' ', "_")) {
            Some(v) => table.row_mut(i).assign(&ArrayView1::from(&v[..])),
            None if dim == fallback.ncols() => {
                missing += 1;
                table.row_mut(i).assign(&fallback.row(i));
            }
            None => {
                return Err(Error::Embedding(format!(
                    "no contextual vector for `{phrase}` and fallback dimension differs"
                )))
            }
        }
    }
    if missing > 0 {
        log::info!("{missing} phrases lack contextual vectors; using phrase embeddings");
    }
    Ok(table)
}

/// Initial (`e`) and neighbor-augmented (`h`) phrase representations.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTable {
    pub e: Array2<f64>,
    pub h: Array2<f64>,
    pub augmented: bool,
}

impl AugmentedTable {
    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn h_row(&self, phrase: PhraseId) -> ArrayView1<'_, f64> {
        self.h.row(phrase.0)
    }
}

/// Builds `h_i = [e_i ‖ mean_{j ∈ N_i} e_j]`, or `h_i = e_i` when `enabled` is
/// false. Phrases without neighbors get a zero neighbor block.
pub fn augment(e: &Array2<f64>, neighbors: &NeighborIndex, enabled: bool) -> Result<AugmentedTable> {
    if neighbors.len() != e.nrows() {
        return Err(Error::Embedding(format!(
            "{} embeddings for {} phrases",
            e.nrows(),
            neighbors.len()
        )));
    }
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Embedding("non-finite phrase embedding".into()));
    }
    if !enabled {
        return Ok(AugmentedTable {
            e: e.clone(),
            h: e.clone(),
            augmented: false,
        });
    }
    let (n, d) = e.dim();
    let mut h = Array2::zeros((n, 2 * d));
    for i in 0..n {
        h.slice_mut(s![i, ..d]).assign(&e.row(i));
        let nbrs = neighbors.neighbors(PhraseId(i));
        if nbrs.is_empty() {
            continue;
        }
        let mut mean = Array1::<f64>::zeros(d);
        for j in nbrs {
            mean += &e.row(j.0);
        }
        mean /= nbrs.len() as f64;
        h.slice_mut(s![i, d..]).assign(&mean);
    }
    Ok(AugmentedTable {
        e: e.clone(),
        h,
        augmented: true,
    })
}
